#pragma once

#include <stdexcept>
#include <string>

namespace grains {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the line / record context.
class ParseError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpusError : public Error {
 public:
  EmptyCorpusError() : Error("empty corpus: no scene survived filtering") {}
};

// Tree or room violates a structural requirement (arity, wall count, ...).
class StructuralError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or file header does not match what the caller expects.
class ConfigMismatchError : public Error {
 public:
  using Error::Error;
};

// Free decoding exceeded its depth / node limits.
class GenerationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Optimistic-concurrency failure: caller holds a stale revision.
class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace grains
