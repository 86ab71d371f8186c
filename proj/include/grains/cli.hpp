#pragma once

// Batch entry points. Each subcommand composes library operations and
// writes a JSON report next to its outputs.

#include <Eigen/Core>
#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "grains/analysis.hpp"
#include "grains/applications.hpp"
#include "grains/generate.hpp"
#include "grains/hierarchy.hpp"
#include "grains/service.hpp"
#include "grains/synth.hpp"
#include "grains/synthesis.hpp"
#include "grains/train.hpp"

namespace grains::cli {

inline std::string data_dir() {
  const char* d = std::getenv("GRAINS_DATA_DIR");
  return d && *d ? d : "data";
}

inline std::string data_path(const std::string& name) { return (std::filesystem::path(data_dir()) / name).string(); }

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline void write_json(const std::string& path, const json& j) {
  ensure_parent(path);
  std::ofstream os(path);
  if (!os) throw Error("cannot write report '" + path + "'");
  os << j.dump(2) << '\n';
}

inline void write_text(const std::string& path, const std::string& s) {
  ensure_parent(path);
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  os << s;
}

inline json loss_json(const LossBreakdown& l) {
  return json{{"total", l.total}, {"recon_leaf", l.recon_leaf}, {"recon_relpos", l.recon_relpos}, {"classifier", l.classifier}, {"kl", l.kl}};
}

inline Corpus parse_corpus_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read corpus file '" + path + "'");
  return parse_corpus(is).first;
}

// Placed scenes from a directory of scene files (sorted by name) or a
// single file.
inline std::vector<PlacedScene> load_placed(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.path().extension() == ".json" && e.path().filename().string().rfind("scene_", 0) == 0) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::vector<PlacedScene> out;
  for (const auto& f : files) out.push_back(import_scene(f.string()));
  if (out.empty()) throw Error("no scene files under '" + path + "'");
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string templ = "bedroom";
  std::uint64_t seed = 1;
  std::size_t count = 500;
  std::string out, catalog_out;
  std::size_t per_category = 4;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& out) {
  if (a.templ != "bedroom") throw Error("unknown template '" + a.templ + "' (available: bedroom)");
  const std::string path = a.out.empty() ? data_path("corpus.jsonl") : a.out;
  const TemplateConfig t;
  const Corpus c = synthesize_corpus(t, a.seed, a.count);
  ensure_parent(path);
  save_corpus(c, path);
  json report{{"corpus", path}, {"scenes", c.scenes.size()}, {"categories", c.vocab.object_names()}, {"seed", a.seed}};
  if (!a.catalog_out.empty()) {
    ensure_parent(a.catalog_out);
    save_catalog(synthesize_catalog(t, a.seed, a.per_category), a.catalog_out);
    report["catalog"] = a.catalog_out;
  }
  out << report.dump() << '\n';
  return 0;
}

struct IngestArgs {
  std::string corpus, out, report;
  FilterConfig filter;
};

inline int cmd_ingest(const IngestArgs& a, std::ostream& out) {
  const std::string in = a.corpus.empty() ? data_path("corpus.jsonl") : a.corpus;
  const std::string path = a.out.empty() ? data_path("corpus.filtered.jsonl") : a.out;
  a.filter.check();
  auto [c, r] = load_corpus(in, a.filter);
  ensure_parent(path);
  save_corpus(c, path);
  json report{{"input", in},
              {"output", path},
              {"scenes_read", r.scenes_read},
              {"scenes_kept", r.scenes_kept},
              {"dropped_too_few", r.dropped_too_few},
              {"dropped_too_many", r.dropped_too_many},
              {"objects_dropped", r.objects_dropped},
              {"categories_dropped", r.categories_dropped},
              {"category_count", r.category_count},
              {"matches_header", r.matches_header()}};
  write_json(a.report.empty() ? path + ".report.json" : a.report, report);
  out << report.dump() << '\n';
  return 0;
}

struct BuildTreesArgs {
  std::string corpus, out, report;
  bool support_overlap = false;
};

inline int cmd_build_trees(const BuildTreesArgs& a, std::ostream& out) {
  const std::string in = a.corpus.empty() ? data_path("corpus.jsonl") : a.corpus;
  const std::string path = a.out.empty() ? data_path("trees.jsonl") : a.out;
  const Corpus c = parse_corpus_file(in);
  RelationConfig rel;
  rel.support_as_overlap = a.support_overlap;
  TreeCorpus tc{c.room_type, c.vocab, {}};
  std::size_t nodes = 0, max_depth = 0, violations = 0, invalid = 0;
  double max_pos = 0.0, max_angle = 0.0;
  for (const auto& s : c.scenes) {
    SceneTree t = build_hierarchy(s, c.vocab, rel);
    nodes += node_count(t.root);
    max_depth = std::max(max_depth, tree_depth(t.root));
    ValidationOptions vo;
    vo.relation = rel;
    const auto rep = validate_tree(t, c.vocab, vo);
    violations += rep.violations.size();
    invalid += !rep.ok();
    // Realizing the tree without snapping must give back the input poses.
    std::map<std::string, OBB> placed;
    for (const auto& p : realize_placements(t, c.vocab, {.snap = false}).placements) placed[p.id] = p.obb;
    for (const auto& o : s.objects) {
      const auto it = placed.find(o.id);
      if (it == placed.end()) throw StructuralError("object '" + o.id + "' missing after realization");
      const OBB& b = it->second;
      max_pos = std::max({max_pos, std::hypot(b.center_x - o.obb.center_x, b.center_y - o.obb.center_y),
                          std::abs(b.elevation - o.obb.elevation)});
      max_angle = std::max(max_angle, angle_distance(b.angle, o.obb.angle));
    }
    tc.trees.push_back(std::move(t));
  }
  ensure_parent(path);
  save_tree_corpus(tc, path);
  const double n = static_cast<double>(std::max<std::size_t>(1, tc.trees.size()));
  json report{{"input", in},
              {"output", path},
              {"trees", tc.trees.size()},
              {"mean_nodes", static_cast<double>(nodes) / n},
              {"max_depth", max_depth},
              {"invalid_trees", invalid},
              {"violations", violations},
              {"placement_max_position_error", max_pos},
              {"placement_max_angle_error", max_angle}};
  write_json(a.report.empty() ? path + ".report.json" : a.report, report);
  out << report.dump() << '\n';
  return 0;
}

struct TrainArgs {
  std::string trees, out, report;
  ModelConfig model;
  std::string position_mode = "relative", wall_root_mode = "full";
  bool no_labels = false;
  TrainConfig train;
  std::size_t holdout_stride = 0;
  std::size_t log_every = 10;
};

inline int cmd_train(TrainArgs a, std::ostream& out) {
  const std::string in = a.trees.empty() ? data_path("trees.jsonl") : a.trees;
  const std::string path = a.out.empty() ? data_path("model.grains") : a.out;
  const TreeCorpus tc = load_tree_corpus(in);
  a.model.position_mode = position_mode_from_string(a.position_mode);
  a.model.wall_root_mode = wall_root_mode_from_string(a.wall_root_mode);
  a.model.labels_enabled = !a.no_labels;
  ModelParams p = init_model(a.model, tc.vocab, a.train.seed);

  std::vector<SceneTree> prepared;
  for (const auto& t : tc.trees) prepared.push_back(prepare_tree(t, p.cfg));
  std::vector<SceneTree> fit = prepared, held;
  if (a.holdout_stride > 1) std::tie(fit, held) = holdout_split(prepared, a.holdout_stride);

  ensure_parent(path);
  a.train.checkpoint_path = path;
  a.train.on_epoch = [&](const EpochStats& s) {
    if (a.log_every && (s.epoch % a.log_every == 0 || s.epoch == 1 || s.epoch == a.train.epochs)) {
      out << "epoch " << s.epoch << " loss " << s.loss.total << std::endl;
    }
  };
  const TrainResult r = train(p, fit, a.train);
  save_model(p, path);

  json curve = json::array();
  for (const auto& e : r.curve) {
    json j = loss_json(e.loss);
    j["epoch"] = e.epoch;
    j["seconds"] = e.seconds;
    curve.push_back(std::move(j));
  }
  json report{{"trees", in},
              {"checkpoint", path},
              {"config", to_json(p.cfg)},
              {"train_trees", fit.size()},
              {"epochs", a.train.epochs},
              {"batch_size", a.train.batch_size ? a.train.batch_size : default_batch_size(fit.size())},
              {"steps", r.steps},
              {"seconds", r.seconds},
              {"first_loss", r.curve.empty() ? 0.0 : r.curve.front().loss.total},
              {"final_loss", r.curve.empty() ? 0.0 : r.curve.back().loss.total},
              {"curve", std::move(curve)}};
  if (!held.empty()) {
    std::vector<const SceneTree*> hp;
    for (const auto& t : held) hp.push_back(&t);
    const TeacherEval e = evaluate_teacher(p, hp);
    report["holdout"] = {{"trees", held.size()},
                         {"loss", loss_json(e.loss)},
                         {"classifier_accuracy", static_cast<double>(e.nodes_correct) / static_cast<double>(std::max<std::size_t>(1, e.nodes))},
                         {"leaf_category_accuracy",
                          static_cast<double>(e.leaves_correct) / static_cast<double>(std::max<std::size_t>(1, e.leaves))}};
  }
  write_json(a.report.empty() ? path + ".report.json" : a.report, report);
  out << "saved " << path << '\n';
  return 0;
}

struct GenerateArgs {
  std::string model, out, catalog;
  std::size_t count = 100;
  std::uint64_t seed = 1;
  bool svg = false;
  DecodeLimits limits;
};

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const std::string model = a.model.empty() ? data_path("model.grains") : a.model;
  const ModelParams p = load_model(model);
  const std::string dir = a.out.empty() ? data_path("generated") : a.out;
  std::filesystem::create_directories(dir);
  std::optional<ModelCatalog> catalog;
  if (!a.catalog.empty()) catalog = load_catalog(a.catalog);

  const GenerationReport g = generate_trees(p, a.count, a.seed, a.limits);
  std::map<std::size_t, std::size_t> walls;
  std::size_t realized = 0, four = 0;
  json realize_failures = json::array();
  for (std::size_t i = 0; i < g.trees.size(); ++i) {
    const std::size_t w = count_walls(g.trees[i], p.vocab);
    ++walls[w];
    four += w == 4;
    try {
      PlacedScene s = realize_placements(g.trees[i], p.vocab);
      if (catalog) attach_models(s, *catalog);
      char name[32];
      std::snprintf(name, sizeof name, "scene_%04zu", realized);
      const auto base = (std::filesystem::path(dir) / name).string();
      export_scene(s, base + ".json");
      if (a.svg) write_text(base + ".svg", render_topview(s));
      ++realized;
    } catch (const Error& e) {
      realize_failures.push_back(e.what());
    }
  }
  json wall_counts = json::object();
  for (const auto& [w, n] : walls) wall_counts[std::to_string(w)] = n;
  const double n = static_cast<double>(std::max<std::size_t>(1, a.count));
  json report{{"checkpoint", model},
              {"wall_root_mode", to_string(p.cfg.wall_root_mode)},
              {"seed", a.seed},
              {"attempted", g.attempted},
              {"decoded", g.trees.size()},
              {"structurally_valid", g.structurally_valid},
              {"valid_fraction", static_cast<double>(g.structurally_valid) / n},
              {"realized", realized},
              {"decode_failures", g.failures},
              {"realize_failures", realize_failures},
              {"wall_counts", wall_counts},
              {"four_wall_fraction", static_cast<double>(four) / n},
              {"decode_seconds", g.decode_seconds},
              {"ms_per_scene", 1000.0 * g.decode_seconds / n}};
  write_json((std::filesystem::path(dir) / "generate_report.json").string(), report);
  out << "generated " << realized << " scenes into " << dir << "; four walls in " << four << " of " << a.count << '\n';
  return 0;
}

struct EvalArgs {
  std::string train, generated, out;
  std::vector<std::string> pairs = {"bed:nightstand", "desk:chair"};
  std::size_t nn_limit = 200;
  double min_support = 0.05;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Corpus train = parse_corpus_file(a.train.empty() ? data_path("corpus.jsonl") : a.train);
  const auto gen = load_placed(a.generated.empty() ? data_path("generated") : a.generated);
  const std::string dir = a.out.empty() ? data_path("eval") : a.out;
  std::filesystem::create_directories(dir);
  const auto file = [&](const std::string& name) { return (std::filesystem::path(dir) / name).string(); };

  std::vector<Scene> gen_scenes;
  for (const auto& s : gen) {
    if (s.vocab.object_names() != train.vocab.object_names()) {
      throw ConfigMismatchError("generated scenes use a different category vocabulary than the training corpus");
    }
    gen_scenes.push_back(to_scene(s));
  }

  // Co-occurrence.
  const auto sim = cooccurrence_similarity(cooccurrence_matrix(category_sets(train.scenes), train.vocab),
                                           cooccurrence_matrix(category_sets(gen), train.vocab), a.min_support);
  write_text(file("cooccurrence.txt"), similarity_table(sim));
  write_text(file("cooccurrence.svg"), similarity_svg(sim));
  json entries = json::array();
  for (const auto& e : sim.entries) {
    entries.push_back({{"c1", sim.names[e.c1]}, {"c2", sim.names[e.c2]}, {"p_train", e.p_train}, {"p_gen", e.p_gen}, {"similarity", e.similarity}});
  }

  // Nearest training scene per generated scene, by graph kernel.
  std::vector<SceneGraph> train_graphs;
  for (const auto& s : train.scenes) train_graphs.push_back(build_scene_graph(build_hierarchy(s, train.vocab), train.vocab));
  json nn = json::array();
  double nn_sum = 0.0;
  const std::size_t nq = std::min(a.nn_limit, gen_scenes.size());
  for (std::size_t i = 0; i < nq; ++i) {
    const SceneGraph g = build_scene_graph(build_hierarchy(gen_scenes[i], train.vocab), train.vocab);
    const auto top = nearest_neighbors(g, train_graphs, 1);
    if (top.empty()) continue;
    nn_sum += top[0].similarity;
    nn.push_back({{"generated", i}, {"nearest_train", top[0].index}, {"similarity", top[0].similarity}});
  }

  json relpos = json::array();
  for (const auto& pr : a.pairs) {
    const auto colon = pr.find(':');
    if (colon == std::string::npos) throw Error("pair '" + pr + "' must be ref:target");
    const std::string ref = pr.substr(0, colon), tgt = pr.substr(colon + 1);
    const auto dt = relpos_distribution(train.scenes, train.vocab, ref, tgt);
    const auto dg = relpos_distribution(gen_scenes, train.vocab, ref, tgt);
    const std::string stem = "relpos_" + ref + "_" + tgt;
    write_text(file(stem + "_train.txt"), relpos_table(dt));
    write_text(file(stem + "_generated.txt"), relpos_table(dg));
    write_text(file(stem + "_train.svg"), relpos_svg(dt));
    write_text(file(stem + "_generated.svg"), relpos_svg(dg));
    relpos.push_back({{"reference", ref}, {"target", tgt}, {"train_points", dt.points.size()}, {"generated_points", dg.points.size()},
                      {"notice", dg.notice.empty() ? dt.notice : dg.notice}});
  }

  json report{{"train_scenes", train.scenes.size()},
              {"generated_scenes", gen.size()},
              {"cooccurrence", {{"mean_similarity", sim.mean}, {"min_support", a.min_support}, {"entries", std::move(entries)}}},
              {"nearest_neighbors", {{"queries", nn.size()}, {"mean_similarity", nn.empty() ? 0.0 : nn_sum / static_cast<double>(nn.size())}, {"items", std::move(nn)}}},
              {"relpos", std::move(relpos)}};
  write_json(file("eval_report.json"), report);
  out << "co-occurrence similarity " << sim.mean << " over " << sim.entries.size() << " pairs\n";
  return 0;
}

struct LayoutArgs {
  std::string model, layout, out, mode = "sample";
  std::size_t n = 4;
  std::uint64_t seed = 1;
  bool svg = false;
};

inline int cmd_layout(const LayoutArgs& a, std::ostream& out) {
  const ModelParams p = load_model(a.model.empty() ? data_path("model.grains") : a.model);
  const Layout2D l = load_layout(a.layout);
  const std::string dir = a.out.empty() ? data_path("layout") : a.out;
  std::filesystem::create_directories(dir);
  const auto scenes = layout_to_scenes(p, l, a.n, latent_mode_from_string(a.mode), a.seed);
  json files = json::array();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    const auto base = (std::filesystem::path(dir) / name).string();
    export_scene(scenes[i], base + ".json");
    if (a.svg) write_text(base + ".svg", render_topview(scenes[i]));
    files.push_back(base + ".json");
  }
  write_json((std::filesystem::path(dir) / "layout_report.json").string(),
             json{{"layout", a.layout}, {"mode", a.mode}, {"seed", a.seed}, {"boxes", l.boxes.size()}, {"scenes", files}});
  out << "wrote " << scenes.size() << " scenes into " << dir << '\n';
  return 0;
}

inline int cmd_serve(ServiceConfig cfg, std::ostream& out) {
  if (cfg.model_path.empty()) cfg.model_path = data_path("model.grains");
  auto svc = make_service(cfg);
  httplib::Server srv;
  out << "listening on http://" << cfg.host << ':' << cfg.port << '\n' << std::flush;
  svc->serve(srv);
  return 0;
}

// ---------------------------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"grains: hierarchical indoor scene generation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (1 forces bit-determinism)")->check(CLI::NonNegativeNumber);
  std::function<int()> action;

  SynthArgs sa;
  auto* s = app.add_subcommand("synth-corpus", "write a synthetic scene corpus");
  s->add_option("--template", sa.templ);
  s->add_option("--seed", sa.seed);
  s->add_option("--count", sa.count)->check(CLI::PositiveNumber);
  s->add_option("--out", sa.out);
  s->add_option("--catalog-out", sa.catalog_out);
  s->add_option("--per-category", sa.per_category)->check(CLI::PositiveNumber);
  s->callback([&] { action = [&] { return cmd_synth(sa, out); }; });

  IngestArgs ia;
  auto* i = app.add_subcommand("ingest", "filter a corpus");
  i->add_option("--corpus", ia.corpus);
  i->add_option("--out", ia.out);
  i->add_option("--report", ia.report);
  i->add_option("--min-objects", ia.filter.min_objects);
  i->add_option("--max-objects", ia.filter.max_objects);
  i->add_option("--min-frequency", ia.filter.min_category_frequency);
  i->callback([&] { action = [&] { return cmd_ingest(ia, out); }; });

  BuildTreesArgs ba;
  auto* b = app.add_subcommand("build-trees", "build hierarchies for a corpus");
  b->add_option("--corpus", ba.corpus);
  b->add_option("--out", ba.out);
  b->add_option("--report", ba.report);
  b->add_flag("--support-overlap", ba.support_overlap, "treat footprint overlap as support");
  b->callback([&] { action = [&] { return cmd_build_trees(ba, out); }; });

  TrainArgs ta;
  auto* t = app.add_subcommand("train", "train the recursive autoencoder");
  t->add_option("--trees", ta.trees);
  t->add_option("--out", ta.out, "checkpoint path");
  t->add_option("--report", ta.report);
  t->add_option("--epochs", ta.train.epochs)->check(CLI::PositiveNumber);
  t->add_option("--batch-size", ta.train.batch_size, "0: tenth of the corpus");
  t->add_option("--lr", ta.train.adam.lr);
  t->add_option("--seed", ta.train.seed);
  t->add_option("--save-every", ta.train.save_every);
  t->add_option("--holdout-stride", ta.holdout_stride, "hold out every n-th tree");
  t->add_option("--log-every", ta.log_every);
  t->add_option("--code-dim", ta.model.code_dim);
  t->add_option("--root-code-dim", ta.model.root_code_dim);
  t->add_option("--hidden-dim", ta.model.hidden_dim);
  t->add_option("--root-hidden-dim", ta.model.root_hidden_dim);
  t->add_option("--latent-dim", ta.model.latent_dim);
  t->add_option("--kl-weight", ta.model.kl_weight);
  t->add_option("--position-mode", ta.position_mode)->check(CLI::IsMember({"relative", "absolute", "center_translation"}));
  t->add_option("--wall-root-mode", ta.wall_root_mode)->check(CLI::IsMember({"full", "wall_only", "none"}));
  t->add_flag("--no-labels", ta.no_labels);
  t->callback([&] { action = [&] { return cmd_train(ta, out); }; });

  GenerateArgs ga;
  auto* g = app.add_subcommand("generate", "sample scenes from a checkpoint");
  g->add_option("--model", ga.model);
  g->add_option("--count", ga.count)->check(CLI::PositiveNumber);
  g->add_option("--seed", ga.seed);
  g->add_option("--out", ga.out);
  g->add_option("--catalog", ga.catalog);
  g->add_option("--max-depth", ga.limits.max_depth);
  g->add_option("--max-nodes", ga.limits.max_nodes);
  g->add_flag("--svg", ga.svg);
  g->callback([&] { action = [&] { return cmd_generate(ga, out); }; });

  EvalArgs ea;
  auto* e = app.add_subcommand("eval", "compare generated scenes with a training corpus");
  e->add_option("--train", ea.train);
  e->add_option("--generated", ea.generated);
  e->add_option("--out", ea.out);
  e->add_option("--pair", ea.pairs, "ref:target category pair for relative positions");
  e->add_option("--nn-limit", ea.nn_limit);
  e->add_option("--min-support", ea.min_support);
  e->callback([&] { action = [&] { return cmd_eval(ea, out); }; });

  LayoutArgs la;
  auto* l = app.add_subcommand("layout2scene", "turn a 2D box layout into scenes");
  l->add_option("--model", la.model);
  l->add_option("--layout", la.layout)->required();
  l->add_option("--n", la.n)->check(CLI::PositiveNumber);
  l->add_option("--mode", la.mode)->check(CLI::IsMember({"mean", "sample"}));
  l->add_option("--seed", la.seed);
  l->add_option("--out", la.out);
  l->add_flag("--svg", la.svg);
  l->callback([&] { action = [&] { return cmd_layout(la, out); }; });

  ServiceConfig sc;
  auto* v = app.add_subcommand("serve", "run the HTTP service");
  v->add_option("--model", sc.model_path);
  v->add_option("--catalog", sc.catalog_path);
  v->add_option("--store", sc.store_dir);
  v->add_option("--static", sc.static_dir);
  v->add_option("--host", sc.host);
  v->add_option("--port", sc.port);
  v->callback([&] { action = [&] { return cmd_serve(sc, out); }; });

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err);
  }
  if (threads) Eigen::setNbThreads(threads);
  try {
    return action();
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
}

}  // namespace grains::cli
