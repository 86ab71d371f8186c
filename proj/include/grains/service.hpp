#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "grains/analysis.hpp"
#include "grains/applications.hpp"
#include "grains/error.hpp"
#include "grains/generate.hpp"
#include "grains/rvnn.hpp"
#include "grains/synthesis.hpp"
#include "httplib.h"

namespace grains {

struct StoredScene {
  std::string id;
  PlacedScene scene;
  std::uint64_t revision = 0;
};

inline json stored_to_json(const StoredScene& s) {
  return json{{"id", s.id}, {"revision", s.revision}, {"scene", placed_to_json(s.scene)}, {"tree", tree_to_json(s.scene.source_tree)}};
}

// Scenes keyed by id. Reads run concurrently; writes to one scene are
// serialized and checked against the caller's revision.
class SceneStore {
 public:
  explicit SceneStore(std::string dir = {}) : dir_(std::move(dir)) {
    if (dir_.empty()) return;
    namespace fs = std::filesystem;
    fs::create_directories(dir_);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir_)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream is(f);
      json j;
      try {
        j = json::parse(is);
        auto slot = std::make_shared<Slot>();
        slot->value = {j.at("id").get<std::string>(), placed_from_json(j.at("scene")), j.at("revision").get<std::uint64_t>()};
        bump_counter(slot->value.id);
        slots_[slot->value.id] = std::move(slot);
      } catch (const json::exception& e) {
        throw ParseError("scene store file '" + f.string() + "': " + e.what());
      }
    }
  }

  std::string add(PlacedScene scene) {
    std::unique_lock lock(map_mu_);
    auto slot = std::make_shared<Slot>();
    slot->value = {"s" + std::to_string(next_++), std::move(scene), 0};
    persist(slot->value);
    const std::string id = slot->value.id;
    slots_[id] = std::move(slot);
    return id;
  }

  StoredScene get(const std::string& id) const {
    auto slot = find(id);
    std::shared_lock lock(slot->mu);
    return slot->value;
  }

  std::vector<StoredScene> list() const {
    std::vector<std::shared_ptr<Slot>> slots;
    {
      std::shared_lock lock(map_mu_);
      for (const auto& [id, s] : slots_) slots.push_back(s);
    }
    std::vector<StoredScene> out;
    for (const auto& s : slots) {
      std::shared_lock lock(s->mu);
      out.push_back(s->value);
    }
    std::sort(out.begin(), out.end(), [](const StoredScene& a, const StoredScene& b) { return order_key(a.id) < order_key(b.id); });
    return out;
  }

  std::size_t size() const {
    std::shared_lock lock(map_mu_);
    return slots_.size();
  }

  // Applies `edit` under the scene's write lock. The store is unchanged when
  // the revision is stale or `edit` throws.
  template <class F>
  StoredScene update(const std::string& id, std::uint64_t expected_revision, F&& edit) {
    auto slot = find(id);
    std::unique_lock lock(slot->mu);
    if (slot->value.revision != expected_revision) {
      throw ConflictError("scene '" + id + "' is at revision " + std::to_string(slot->value.revision) + ", request has " +
                          std::to_string(expected_revision));
    }
    StoredScene next{id, edit(std::as_const(slot->value.scene)), slot->value.revision + 1};
    persist(next);
    slot->value = std::move(next);
    return slot->value;
  }

 private:
  struct Slot {
    mutable std::shared_mutex mu;
    StoredScene value;
  };

  static std::pair<std::size_t, std::string> order_key(const std::string& id) {
    if (id.size() > 1 && id[0] == 's' && id.find_first_not_of("0123456789", 1) == std::string::npos) {
      return {std::stoull(id.substr(1)), id};
    }
    return {static_cast<std::size_t>(-1), id};
  }

  void bump_counter(const std::string& id) {
    const auto k = order_key(id).first;
    if (k != static_cast<std::size_t>(-1)) next_ = std::max(next_, k + 1);
  }

  std::shared_ptr<Slot> find(const std::string& id) const {
    std::shared_lock lock(map_mu_);
    auto it = slots_.find(id);
    if (it == slots_.end()) throw NotFoundError("no scene '" + id + "'");
    return it->second;
  }

  void persist(const StoredScene& s) const {
    if (dir_.empty()) return;
    const auto path = std::filesystem::path(dir_) / (s.id + ".json");
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp);
      if (!os) throw Error("cannot write scene store file '" + tmp + "'");
      os << json{{"id", s.id}, {"revision", s.revision}, {"scene", placed_to_json(s.scene)}}.dump();
    }
    std::filesystem::rename(tmp, path);
  }

  std::string dir_;
  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
  std::size_t next_ = 1;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string model_path;
  std::string catalog_path;  // optional
  std::string store_dir;     // optional; in-memory when empty
  std::string static_dir;    // optional UI assets
  std::size_t max_generate = 1000;
};

// HTTP front end over a read-only model and a SceneStore.
class SceneService {
 public:
  SceneService(ModelParams model, std::optional<ModelCatalog> catalog, ServiceConfig cfg)
      : model_(std::move(model)), catalog_(std::move(catalog)), cfg_(std::move(cfg)), store_(cfg_.store_dir) {
    for (const auto& s : store_.list()) {
      if (s.scene.vocab != model_.vocab) {
        throw ConfigMismatchError("stored scene '" + s.id + "' uses a different category vocabulary than the model");
      }
    }
  }

  const SceneStore& store() const { return store_; }
  std::string import_scene(PlacedScene s) { return store_.add(std::move(s)); }
  const ModelParams& model() const { return model_; }

  void mount(httplib::Server& srv) {
    using Req = httplib::Request;
    using Res = httplib::Response;
    srv.Get("/api/health", wrap([](const Req&, Res& res) {
              send(res, json{{"status", "ok"}, {"model", kModelFormat}});
            }));
    srv.Post("/api/generate", wrap([this](const Req& req, Res& res) { send(res, generate(body(req))); }));
    srv.Get("/api/scenes", wrap([this](const Req&, Res& res) {
              json out = json::array();
              for (const auto& s : store_.list()) {
                out.push_back({{"id", s.id}, {"revision", s.revision}, {"room_type", to_string(s.scene.room_type)},
                               {"objects", s.scene.placements.size()}});
              }
              send(res, out);
            }));
    srv.Get(R"(/api/scenes/([^/]+))", wrap([this](const Req& req, Res& res) { send(res, stored_to_json(store_.get(req.matches[1]))); }));
    srv.Get(R"(/api/scenes/([^/]+)/render\.svg)", wrap([this](const Req& req, Res& res) {
              res.set_content(render_topview(store_.get(req.matches[1]).scene), "image/svg+xml");
            }));
    srv.Post("/api/layout2scene", wrap([this](const Req& req, Res& res) { send(res, layout2scene(body(req))); }));
    srv.Get(R"(/api/scenes/([^/]+)/subtree/([^/]+)/candidates)", wrap([this](const Req& req, Res& res) {
              const std::size_t k = req.has_param("k") ? parse_count(req.get_param_value("k"), "k") : 5;
              send(res, candidates(req.matches[1], path_from_string(std::string(req.matches[2])), k));
            }));
    srv.Post(R"(/api/scenes/([^/]+)/subtree/([^/]+)/replace)", wrap([this](const Req& req, Res& res) {
               send(res, replace(req.matches[1], path_from_string(std::string(req.matches[2])), body(req)));
             }));
    srv.Post(R"(/api/scenes/([^/]+)/subtree/([^/]+)/delete)", wrap([this](const Req& req, Res& res) {
               const json b = body(req);
               const TreePath path = path_from_string(std::string(req.matches[2]));
               send(res, edit(req.matches[1], revision_of(b), [&](const SceneTree& t) { return delete_subtree(t, path, model_.vocab); }));
             }));
    srv.Post(R"(/api/scenes/([^/]+)/subtree/([^/]+)/move)", wrap([this](const Req& req, Res& res) {
               const json b = body(req);
               const TreePath path = path_from_string(std::string(req.matches[2]));
               const RelVec rp = relvec_of(b);
               send(res, edit(req.matches[1], revision_of(b), [&](const SceneTree& t) { return move_subtree(t, path, rp, model_.vocab); }));
             }));
    srv.Get("/api/metrics/cooccurrence", wrap([this](const Req&, Res& res) { send(res, cooccurrence()); }));

    if (!cfg_.static_dir.empty() && std::filesystem::is_directory(cfg_.static_dir)) {
      srv.set_mount_point("/", cfg_.static_dir);
    } else {
      srv.Get("/", [](const Req&, Res& res) {
        res.set_content("<!doctype html><title>grains</title><p>UI assets not installed. API under <code>/api</code>.</p>",
                        "text/html");
      });
    }
  }

  // Binds and blocks until `stop()`.
  void serve(httplib::Server& srv) {
    mount(srv);
    if (!srv.listen(cfg_.host, cfg_.port)) {
      throw Error("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
    }
  }

  json generate(const json& b) {
    const std::size_t count = b.at("count").get<std::size_t>();
    if (count == 0 || count > cfg_.max_generate) {
      throw Error("count must be in [1, " + std::to_string(cfg_.max_generate) + "]");
    }
    const std::uint64_t seed = b.contains("seed") ? b.at("seed").get<std::uint64_t>() : store_.size();
    const RoomType type = b.contains("room_type") ? room_type_from_string(b.at("room_type").get<std::string>()) : RoomType::bedroom;
    auto scenes = generate_scenes(model_, count, seed, {}, 10, type);
    return add_all(std::move(scenes));
  }

  json layout2scene(const json& b) {
    const Layout2D layout = layout_from_json(b.at("layout"));
    const std::size_t n = b.value("n_samples", std::size_t{1});
    const LatentMode mode = latent_mode_from_string(b.value("mode", std::string("sample")));
    const std::uint64_t seed = b.contains("seed") ? b.at("seed").get<std::uint64_t>() : store_.size();
    return add_all(layout_to_scenes(model_, layout, n, mode, seed));
  }

  json candidates(const std::string& id, const TreePath& path, std::size_t k) const {
    const auto target = store_.get(id);
    const auto all = store_.list();
    std::vector<SceneTree> pool;
    for (const auto& s : all) pool.push_back(s.scene.source_tree);
    json out = json::array();
    for (const auto& c : candidate_subtrees(pool, target.scene.source_tree, path, k, model_.vocab)) {
      json cats = json::array();
      for (const auto* o : leaf_objects(c.subtree)) cats.push_back(model_.vocab.name(o->category));
      out.push_back({{"scene_id", all[c.pool_index].id},
                     {"path", path_to_string(c.path)},
                     {"score", c.score},
                     {"kind", to_string(c.subtree.kind)},
                     {"categories", std::move(cats)}});
    }
    return out;
  }

  json replace(const std::string& id, const TreePath& path, const json& b) {
    const auto donor_scene = store_.get(b.at("donor_scene_id").get<std::string>());
    const TreePath donor_path = path_from_string(b.at("donor_path").get<std::string>());
    const SceneNode donor = node_at(donor_scene.scene.source_tree.root, donor_path);
    return edit(id, revision_of(b), [&](const SceneTree& t) { return replace_subtree(t, path, donor, model_.vocab); });
  }

  template <class F>
  json edit(const std::string& id, std::uint64_t revision, F&& op) {
    return stored_to_json(store_.update(id, revision, [&](const PlacedScene& cur) {
      PlacedScene next = realize_placements(op(cur.source_tree), model_.vocab);
      next.room_type = cur.room_type;
      if (catalog_) attach_models(next, *catalog_);
      return next;
    }));
  }

  json cooccurrence() const {
    std::vector<PlacedScene> scenes;
    for (auto& s : store_.list()) scenes.push_back(std::move(s.scene));
    const auto m = cooccurrence_matrix(category_sets(scenes), model_.vocab);
    json p = json::array();
    for (std::size_t a = 0; a < m.size(); ++a) {
      json row = json::array();
      for (std::size_t c = 0; c < m.size(); ++c) {
        const auto v = m.p(a, c);
        row.push_back(v ? json(*v) : json(nullptr));
      }
      p.push_back(std::move(row));
    }
    return json{{"names", m.names}, {"scenes", m.scenes}, {"single", m.single}, {"p", std::move(p)}};
  }

 private:
  json add_all(std::vector<PlacedScene> scenes) {
    json ids = json::array(), out = json::array();
    for (auto& s : scenes) {
      if (catalog_) attach_models(s, *catalog_);
      const std::string id = store_.add(std::move(s));
      ids.push_back(id);
      out.push_back(stored_to_json(store_.get(id)));
    }
    return json{{"ids", std::move(ids)}, {"scenes", std::move(out)}};
  }

  static json body(const httplib::Request& req) {
    try {
      return json::parse(req.body.empty() ? std::string("{}") : req.body);
    } catch (const json::exception& e) {
      throw ParseError(std::string("request body: ") + e.what());
    }
  }

  static std::uint64_t revision_of(const json& b) {
    if (!b.contains("revision")) throw ParseError("request body needs 'revision'");
    return b.at("revision").get<std::uint64_t>();
  }

  static RelVec relvec_of(const json& b) {
    const auto v = b.at("relpos").get<std::vector<double>>();
    if (v.size() != kRelPosDim) throw ParseError("relpos needs " + std::to_string(kRelPosDim) + " components");
    RelVec r;
    std::copy(v.begin(), v.end(), r.begin());
    return r;
  }

  static std::size_t parse_count(const std::string& s, const char* name) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) throw ParseError(std::string(name) + " must be a count");
    return std::stoul(s);
  }

  static void send(httplib::Response& res, const json& j) { res.set_content(j.dump(), "application/json"); }

  static void fail(httplib::Response& res, int status, const std::string& msg) {
    res.status = status;
    send(res, json{{"error", msg}});
  }

  template <class H>
  static httplib::Server::Handler wrap(H h) {
    return [h](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const NotFoundError& e) {
        fail(res, 404, e.what());
      } catch (const ConflictError& e) {
        fail(res, 409, e.what());
      } catch (const ParseError& e) {
        fail(res, 400, e.what());
      } catch (const json::exception& e) {
        fail(res, 400, e.what());
      } catch (const Error& e) {
        fail(res, 422, e.what());
      }
    };
  }

  const ModelParams model_;
  const std::optional<ModelCatalog> catalog_;
  const ServiceConfig cfg_;
  SceneStore store_;
};

// Loads the checkpoint and catalog named in `cfg`; failures surface before
// any socket is opened.
inline std::unique_ptr<SceneService> make_service(const ServiceConfig& cfg) {
  if (cfg.model_path.empty()) throw Error("service needs a model checkpoint");
  ModelParams p = load_model(cfg.model_path);
  std::optional<ModelCatalog> catalog;
  if (!cfg.catalog_path.empty()) catalog = load_catalog(cfg.catalog_path);
  return std::make_unique<SceneService>(std::move(p), std::move(catalog), cfg);
}

}  // namespace grains
