#include "grains/cli.hpp"

int main(int argc, char** argv) { return grains::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
