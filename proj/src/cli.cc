/*
 * Copyright 2026 The GRASP Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "grasp/cli.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "grasp/dataset.h"
#include "grasp/embedstore.h"
#include "grasp/eval.h"
#include "grasp/hae.h"
#include "grasp/model.h"
#include "grasp/trainer.h"

namespace grasp::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kUserCache = "users.gnbc";
constexpr const char* kItemCache = "items.gnbc";
constexpr const char* kRunConfig = "config.txt";

struct RunConfig {
  // Data.
  std::string data_dir;
  std::string data;
  std::string users;
  std::string items;
  std::string db_dir;
  std::string user_map;
  std::string item_map;
  std::size_t min_user_len = 3;
  std::size_t min_item_freq = 3;
  std::size_t k_neighbors = 0;  // 0: whatever the cache holds
  // Model.
  std::string encoder = "hae";
  std::string backbone = "sasrec";
  std::size_t d_sem = 0;  // 0: the embedding width
  std::size_t h = 64;
  std::size_t h_hidden = 0;  // 0: 2 * h
  std::size_t max_seq_len = 100;
  std::size_t n_layers = 2;
  std::size_t n_heads = 1;
  double dropout = 0.2;
  bool no_attention = false;
  bool no_similar = false;
  bool no_global = false;
  bool softmax_variant = false;
  bool add_id_embedding = false;
  // Training.
  double lr = 0.001;
  std::size_t batch_size = 128;
  std::size_t patience = 20;
  std::size_t max_epochs = 200;
  std::size_t negatives = 1;
  std::size_t eval_negatives = 100;
  std::vector<std::uint64_t> seeds = {42, 43, 44};
  double head_ratio = 0.2;
};

// Effective configuration as flat key=value lines, readable by --config.
std::string config_text(const RunConfig& c) {
  std::ostringstream o;
  auto str = [&](const char* k, const std::string& v) { o << k << "=\"" << v << "\"\n"; };
  auto num = [&](const char* k, auto v) { o << k << "=" << v << "\n"; };
  auto flag = [&](const char* k, bool v) { o << k << "=" << (v ? "true" : "false") << "\n"; };
  auto real = [&](const char* k, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    o << k << "=" << std::string(buf, res.ptr) << "\n";
  };
  str("data", c.data);
  str("users", c.users);
  str("items", c.items);
  str("db-dir", c.db_dir);
  str("user-map", c.user_map);
  str("item-map", c.item_map);
  num("min-user-len", c.min_user_len);
  num("min-item-freq", c.min_item_freq);
  num("k", c.k_neighbors);
  str("encoder", c.encoder);
  str("backbone", c.backbone);
  num("d-sem", c.d_sem);
  num("h", c.h);
  num("h-hidden", c.h_hidden);
  num("max-seq-len", c.max_seq_len);
  num("layers", c.n_layers);
  num("heads", c.n_heads);
  real("dropout", c.dropout);
  flag("no-attention", c.no_attention);
  flag("no-similar", c.no_similar);
  flag("no-global", c.no_global);
  flag("softmax-variant", c.softmax_variant);
  flag("add-id-embedding", c.add_id_embedding);
  real("lr", c.lr);
  num("batch-size", c.batch_size);
  num("patience", c.patience);
  num("max-epochs", c.max_epochs);
  num("negatives", c.negatives);
  num("eval-negatives", c.eval_negatives);
  std::string seeds;
  for (auto s : c.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
  str("seeds", seeds);
  real("head-ratio", c.head_ratio);
  return o.str();
}

ordered_json config_json(const RunConfig& c) {
  ordered_json j;
  j["data"] = c.data;
  j["users"] = c.users;
  j["items"] = c.items;
  j["db_dir"] = c.db_dir;
  j["user_map"] = c.user_map;
  j["item_map"] = c.item_map;
  j["min_user_len"] = c.min_user_len;
  j["min_item_freq"] = c.min_item_freq;
  j["k_neighbors"] = c.k_neighbors;
  j["encoder"] = c.encoder;
  j["backbone"] = c.backbone;
  j["d_sem"] = c.d_sem;
  j["h"] = c.h;
  j["h_hidden"] = c.h_hidden;
  j["max_seq_len"] = c.max_seq_len;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["dropout"] = c.dropout;
  j["no_attention"] = c.no_attention;
  j["no_similar"] = c.no_similar;
  j["no_global"] = c.no_global;
  j["softmax_variant"] = c.softmax_variant;
  j["add_id_embedding"] = c.add_id_embedding;
  j["lr"] = c.lr;
  j["batch_size"] = c.batch_size;
  j["patience"] = c.patience;
  j["max_epochs"] = c.max_epochs;
  j["negatives_per_positive"] = c.negatives;
  j["eval_negatives"] = c.eval_negatives;
  j["seeds"] = c.seeds;
  j["head_ratio"] = c.head_ratio;
  return j;
}

void add_data_options(CLI::App* app, RunConfig& c) {
  app->add_option("--data-dir", c.data_dir,
                  "Directory written by `synth`; supplies defaults for --data, --users, "
                  "--items and --db-dir");
  app->add_option("--data", c.data, "Interaction log (user<TAB>item<TAB>timestamp)");
  app->add_option("--users", c.users, "User embedding file (GEMB or TSV)");
  app->add_option("--items", c.items, "Item embedding file (GEMB or TSV)");
  app->add_option("--db-dir", c.db_dir, "Directory holding users.gnbc and items.gnbc");
  app->add_option("--user-map", c.user_map, "raw_id<TAB>row map into the user embeddings");
  app->add_option("--item-map", c.item_map, "raw_id<TAB>row map into the item embeddings");
  app->add_option("--min-user-len", c.min_user_len)->capture_default_str();
  app->add_option("--min-item-freq", c.min_item_freq)->capture_default_str();
  app->add_option("--k", c.k_neighbors, "Expected neighbor count of the caches (0: any)")
      ->capture_default_str();
}

void add_model_options(CLI::App* app, RunConfig& c) {
  app->add_option("--encoder", c.encoder, "Item encoder")
      ->check(CLI::IsMember({"hae", "id"}))
      ->capture_default_str();
  app->add_option("--backbone", c.backbone)
      ->check(CLI::IsMember({"sasrec", "gru4rec"}))
      ->capture_default_str();
  app->add_option("--d-sem", c.d_sem, "Semantic dim (0: embedding width)")->capture_default_str();
  app->add_option("--h", c.h, "Backbone hidden dim")->capture_default_str();
  app->add_option("--h-hidden", c.h_hidden, "Fusion MLP width (0: 2*h)")->capture_default_str();
  app->add_option("--max-seq-len", c.max_seq_len)->capture_default_str();
  app->add_option("--layers", c.n_layers)->capture_default_str();
  app->add_option("--heads", c.n_heads)->capture_default_str();
  app->add_option("--dropout", c.dropout)->capture_default_str();
  app->add_flag("--no-attention", c.no_attention, "Fix every gate at 1");
  app->add_flag("--no-similar", c.no_similar, "Zero-fill the similar branch");
  app->add_flag("--no-global", c.no_global, "Zero-fill the global branch");
  app->add_flag("--softmax-variant", c.softmax_variant, "Softmax gates over the sequence");
  app->add_flag("--add-id-embedding", c.add_id_embedding,
                "Add a trainable item vector to the fused output (experimental)");
  app->add_option("--head-ratio", c.head_ratio)->capture_default_str();
}

void add_train_options(CLI::App* app, RunConfig& c) {
  app->add_option("--lr", c.lr)->capture_default_str();
  app->add_option("--batch-size", c.batch_size)->capture_default_str();
  app->add_option("--patience", c.patience)->capture_default_str();
  app->add_option("--max-epochs", c.max_epochs)->capture_default_str();
  app->add_option("--negatives", c.negatives, "Negatives per training position")
      ->capture_default_str();
  app->add_option("--eval-negatives", c.eval_negatives)->capture_default_str();
}

void resolve_paths(RunConfig& c) {
  if (!c.data_dir.empty()) {
    const fs::path d(c.data_dir);
    if (c.data.empty()) c.data = (d / "interactions.tsv").string();
    if (c.users.empty()) c.users = (d / "users.gemb").string();
    if (c.items.empty()) c.items = (d / "items.gemb").string();
    if (c.db_dir.empty()) c.db_dir = (d / "db").string();
  }
  if (c.data.empty()) throw ArgumentError("no interaction log: pass --data or --data-dir");
  for (auto* p : {&c.data, &c.users, &c.items, &c.db_dir, &c.user_map, &c.item_map}) {
    if (!p->empty()) *p = fs::absolute(*p).lexically_normal().string();
  }
  if (c.encoder == "hae" && (c.users.empty() || c.items.empty() || c.db_dir.empty())) {
    throw ArgumentError("the hae encoder needs --users, --items and --db-dir (or --data-dir)");
  }
}

void require_file(const std::string& path, const std::string& what, const std::string& hint) {
  if (!fs::exists(path)) {
    throw DataError(what + " not found: " + path + (hint.empty() ? "" : " (" + hint + ")"));
  }
}

// Row of each dense id in an embedding file: via an explicit raw-id map, or
// the raw id itself when it is an integer.
std::vector<std::uint32_t> row_mapping(const InteractionDataset& ds, bool users,
                                       const std::string& map_path, std::size_t rows) {
  const std::size_t count = users ? ds.user_count : ds.item_count;
  const char* what = users ? "user" : "item";
  std::unordered_map<std::string, std::uint32_t> by_raw;
  if (!map_path.empty()) {
    const auto raw = load_id_map(map_path);
    for (std::size_t r = 0; r < raw.size(); ++r) by_raw.emplace(raw[r], static_cast<std::uint32_t>(r));
  }
  std::vector<std::uint32_t> out(count);
  for (std::size_t id = 0; id < count; ++id) {
    const std::string raw = users ? ds.user_raw_id(static_cast<UserId>(id))
                                  : ds.item_raw_id(static_cast<ItemId>(id));
    std::uint64_t row = 0;
    if (!map_path.empty()) {
      const auto it = by_raw.find(raw);
      if (it == by_raw.end()) {
        throw DataError(std::string(what) + " '" + raw + "' is missing from " + map_path);
      }
      row = it->second;
    } else {
      const auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), row);
      if (ec != std::errc() || p != raw.data() + raw.size()) {
        throw DataError(std::string(what) + " id '" + raw +
                        "' is not an embedding row; pass --" + what + "-map");
      }
    }
    if (row >= rows) {
      throw DataError(std::string(what) + " '" + raw + "' maps to row " + std::to_string(row) +
                      " but the embeddings have " + std::to_string(rows) + " rows");
    }
    out[id] = static_cast<std::uint32_t>(row);
  }
  return out;
}

struct Workspace {
  InteractionDataset ds;
  LeaveOneOutSplit split;
  std::shared_ptr<const SemanticStores> stores;
  std::shared_ptr<const EmbeddingMatrix> user_emb;
  std::shared_ptr<const EmbeddingMatrix> item_emb;
};

std::shared_ptr<const NeighborCache> load_cache(const RunConfig& c, const char* name) {
  const std::string path = (fs::path(c.db_dir) / name).string();
  require_file(path, "neighbor cache",
               "run `grasp build-db --users " + c.users + " --items " + c.items +
                   " --out-dir " + c.db_dir + "` first");
  auto cache = std::make_shared<NeighborCache>(load_neighbor_cache(path));
  if (c.k_neighbors != 0 && cache->k() != c.k_neighbors) {
    throw ArgumentError(path + " holds k=" + std::to_string(cache->k()) + " neighbors, --k is " +
                        std::to_string(c.k_neighbors));
  }
  return cache;
}

// Stores whose caches are rebuilt in memory with k neighbors.
std::shared_ptr<const SemanticStores> stores_with_k(const Workspace& w, const RunConfig& c,
                                                    std::size_t k) {
  auto s = std::make_shared<SemanticStores>();
  s->users = SemanticTable(w.user_emb, std::make_shared<NeighborCache>(build_neighbor_cache(*w.user_emb, k)),
                           row_mapping(w.ds, true, c.user_map, w.user_emb->rows()));
  s->items = SemanticTable(w.item_emb, std::make_shared<NeighborCache>(build_neighbor_cache(*w.item_emb, k)),
                           row_mapping(w.ds, false, c.item_map, w.item_emb->rows()));
  return s;
}

Workspace load_workspace(RunConfig& c, bool load_caches) {
  resolve_paths(c);
  require_file(c.data, "interaction log", "");
  Workspace w;
  w.ds = load_interactions(c.data, {c.min_user_len, c.min_item_freq});
  w.split = split_leave_one_out(w.ds);
  if (c.encoder != "hae") return w;
  require_file(c.users, "user embeddings", "");
  require_file(c.items, "item embeddings", "");
  w.user_emb = std::make_shared<EmbeddingMatrix>(load_embedding_matrix(c.users));
  w.item_emb = std::make_shared<EmbeddingMatrix>(load_embedding_matrix(c.items));
  if (w.user_emb->dim() != w.item_emb->dim()) {
    throw DataError("user embeddings have dim " + std::to_string(w.user_emb->dim()) +
                    ", item embeddings " + std::to_string(w.item_emb->dim()));
  }
  if (c.d_sem == 0) c.d_sem = w.item_emb->dim();
  if (c.d_sem != w.item_emb->dim()) {
    throw ArgumentError("--d-sem " + std::to_string(c.d_sem) + " differs from the embedding dim " +
                        std::to_string(w.item_emb->dim()));
  }
  if (!load_caches) return w;
  auto s = std::make_shared<SemanticStores>();
  s->users = SemanticTable(w.user_emb, load_cache(c, kUserCache),
                           row_mapping(w.ds, true, c.user_map, w.user_emb->rows()));
  s->items = SemanticTable(w.item_emb, load_cache(c, kItemCache),
                           row_mapping(w.ds, false, c.item_map, w.item_emb->rows()));
  if (c.k_neighbors == 0) c.k_neighbors = s->items.cache().k();
  w.stores = s;
  return w;
}

ModelConfig model_config(const RunConfig& c, const InteractionDataset& ds) {
  ModelConfig m;
  m.encoder = parse_encoder_kind(c.encoder);
  m.hae.d_sem = c.d_sem;
  m.hae.h = c.h;
  m.hae.h_hidden = c.h_hidden ? c.h_hidden : 2 * c.h;
  m.hae.no_attention = c.no_attention;
  m.hae.drop_similar = c.no_similar;
  m.hae.drop_global = c.no_global;
  m.hae.softmax_variant = c.softmax_variant;
  m.backbone.kind = parse_backbone_kind(c.backbone);
  m.backbone.h = c.h;
  m.backbone.max_seq_len = c.max_seq_len;
  m.backbone.n_layers = c.n_layers;
  m.backbone.n_heads = c.n_heads;
  m.backbone.dropout = c.dropout;
  m.add_id_embedding = c.add_id_embedding;
  m.item_count = ds.item_count;
  m.validate();
  return m;
}

TrainConfig train_config(const RunConfig& c, std::uint64_t seed) {
  TrainConfig t;
  t.lr = c.lr;
  t.batch_size = c.batch_size;
  t.patience = c.patience;
  t.max_epochs = c.max_epochs;
  t.negatives_per_positive = c.negatives;
  t.eval_negatives = c.eval_negatives;
  t.seed = seed;
  t.validate();
  return t;
}

// Exclusive claim on an output directory for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const std::string& dir) : path_((fs::path(dir) / ".grasp.lock").string()) {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw IoError("output directory is in use (lock file " + path_ +
                    " exists; remove it if no other grasp process is running)");
    }
  }
  ~DirLock() {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

void claim_output(const std::string& dir, bool force) {
  if (dir.empty()) throw ArgumentError("an output directory is required (--out)");
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ArgumentError(dir + " is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw ArgumentError("output directory " + dir + " already exists; pass --force to overwrite");
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string seed_dir(const std::string& run, std::uint64_t seed) {
  return (fs::path(run) / ("seed_" + std::to_string(seed))).string();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  SynthOptions opts;
  std::string out;
  bool force = false;
};

void cmd_synth(const SynthArgs& a) {
  claim_output(a.out, a.force);
  DirLock lock(a.out);
  const SynthCorpus c = synth_corpus(a.opts);
  const fs::path d(a.out);
  save_interactions(c.dataset, (d / "interactions.tsv").string());
  save_embedding_matrix(c.users, (d / "users.gemb").string());
  save_embedding_matrix(c.items, (d / "items.gemb").string());
  ordered_json m;
  m["generator"] = "synth";
  m["n_users"] = a.opts.n_users;
  m["m_items"] = a.opts.m_items;
  m["n_clusters"] = a.opts.n_clusters;
  m["dim"] = a.opts.dim;
  m["noise"] = a.opts.noise;
  m["seed"] = a.opts.seed;
  m["in_cluster_rate"] = a.opts.in_cluster_rate;
  m["mean_length"] = a.opts.mean_length;
  m["min_length"] = a.opts.min_length;
  m["max_length"] = a.opts.max_length;
  m["popularity_skew"] = a.opts.popularity_skew;
  m["exact_cluster_mode"] = a.opts.noise == 0.0;
  m["interactions"] = c.dataset.interaction_count();
  m["files"] = {{"interactions", "interactions.tsv"}, {"users", "users.gemb"}, {"items", "items.gemb"}};
  write_text((d / "manifest.json").string(), m.dump(2) + "\n");
  std::cout << "synth: " << a.opts.n_users << " users, " << a.opts.m_items << " items, "
            << c.dataset.interaction_count() << " interactions -> " << a.out << "\n";
}

// ---- build-db -------------------------------------------------------------

struct BuildDbArgs {
  std::string users;
  std::string items;
  std::size_t k = 10;
  std::string out;
  bool force = false;
};

void cmd_build_db(const BuildDbArgs& a) {
  require_file(a.users, "user embeddings", "");
  require_file(a.items, "item embeddings", "");
  const EmbeddingMatrix users = load_embedding_matrix(a.users);
  const EmbeddingMatrix items = load_embedding_matrix(a.items);
  for (const auto* m : {&users, &items}) {
    if (a.k == 0 || a.k >= m->rows()) {
      throw ArgumentError("--k " + std::to_string(a.k) + " must satisfy 1 <= k < rows (" +
                          std::to_string(m->rows()) + ")");
    }
  }
  claim_output(a.out, a.force);
  DirLock lock(a.out);
  const NeighborCache uc = build_neighbor_cache(users, a.k);
  const NeighborCache ic = build_neighbor_cache(items, a.k);
  const fs::path d(a.out);
  save_neighbor_cache(uc, (d / kUserCache).string());
  save_neighbor_cache(ic, (d / kItemCache).string());
  ordered_json m;
  m["k"] = a.k;
  m["users"] = {{"source", a.users}, {"rows", users.rows()}, {"dim", users.dim()},
                {"zero_rows", normalize_rows(users).zero_rows()}, {"checksum", users.checksum()}};
  m["items"] = {{"source", a.items}, {"rows", items.rows()}, {"dim", items.dim()},
                {"zero_rows", normalize_rows(items).zero_rows()}, {"checksum", items.checksum()}};
  write_text((d / "db_manifest.json").string(), m.dump(2) + "\n");
  std::cout << "build-db: k=" << a.k << ", " << users.rows() << " users, " << items.rows()
            << " items -> " << a.out << "\n";
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  RunConfig run;
  std::string out;
  bool force = false;
};

void cmd_train(TrainArgs a) {
  if (a.run.seeds.empty()) throw ArgumentError("--seeds must list at least one seed");
  claim_output(a.out, a.force);
  const auto t0 = std::chrono::steady_clock::now();
  Workspace w = load_workspace(a.run, a.run.encoder == "hae");
  const ModelConfig mc = model_config(a.run, w.ds);
  DirLock lock(a.out);
  write_text((fs::path(a.out) / kRunConfig).string(), config_text(a.run));

  ordered_json summary;
  summary["config"] = config_json(a.run);
  summary["dataset"] = {{"users", w.ds.user_count},
                        {"items", w.ds.item_count},
                        {"interactions", w.ds.interaction_count()},
                        {"split_users", w.split.entries.size()},
                        {"excluded_users", w.split.excluded_users}};
  ordered_json runs = ordered_json::array();
  double val_sum = 0.0;
  for (std::uint64_t seed : a.run.seeds) {
    const TrainConfig tc = train_config(a.run, seed);
    const std::string dir = seed_dir(a.out, seed);
    fs::create_directories(dir);
    std::ofstream log(fs::path(dir) / "train.log", std::ios::trunc);
    if (!log) throw IoError("cannot open " + dir + "/train.log");
    Model model(mc, w.stores, ModelParams::init(mc, seed));
    const FitResult r = fit(model, w.split, w.ds, tc, [&](const EpochLog& e) {
      log << e.epoch << '\t' << fmt("%.6f", e.mean_loss) << '\t' << fmt("%.6f", e.val_ndcg10)
          << '\n';
      log.flush();
    });
    ModelParams best = r.best_params;
    best.round_to_f32();
    save_model_checkpoint(best, mc, (fs::path(dir) / "checkpoint").string());
    // The stored checkpoint is 32-bit; its validation score is the one eval replays.
    const Model stored(mc, w.stores, best);
    const double ckpt_val = evaluate(model_scorer(stored), w.split, w.ds, SplitPart::kValid,
                                     tc.eval_negatives, seed)
                                .overall.ndcg_at(10);
    ordered_json s;
    s["seed"] = seed;
    s["epochs"] = r.state.epoch;
    s["best_epoch"] = r.state.best_epoch;
    s["best_val_ndcg10"] = r.state.best_val_ndcg10;
    s["checkpoint_val_ndcg10"] = ckpt_val;
    s["seconds"] = r.seconds;
    s["checkpoint"] = "seed_" + std::to_string(seed) + "/checkpoint";
    runs.push_back(s);
    val_sum += r.state.best_val_ndcg10;
    std::cout << "seed " << seed << ": best epoch " << r.state.best_epoch << "/" << r.state.epoch
              << ", val NDCG@10 " << fmt("%.4f", r.state.best_val_ndcg10) << " ("
              << fmt("%.1f", r.seconds) << " s)\n";
  }
  summary["seeds"] = runs;
  summary["mean_best_val_ndcg10"] = val_sum / static_cast<double>(a.run.seeds.size());
  summary["wall_clock_seconds"] = seconds_since(t0);
  write_text((fs::path(a.out) / "summary.json").string(), summary.dump(2) + "\n");
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  RunConfig run;
  std::string run_dir;
  std::uint64_t seed = 0;
  std::string split = "test";
  std::string groups = "on";
  std::string out;
  bool force = false;
};

void cmd_eval(EvalArgs a) {
  require_file((fs::path(a.run_dir) / kRunConfig).string(), "run configuration",
               "is --run a directory written by `grasp train`?");
  const std::uint64_t seed = a.seed ? a.seed : a.run.seeds.at(0);
  const std::string ckpt = (fs::path(seed_dir(a.run_dir, seed)) / "checkpoint").string();
  require_file(ckpt, "checkpoint", "was seed " + std::to_string(seed) + " trained?");
  if (a.out.empty()) a.out = (fs::path(a.run_dir) / ("eval_" + a.split + "_seed" + std::to_string(seed))).string();
  claim_output(a.out, a.force);

  Workspace w = load_workspace(a.run, a.run.encoder == "hae");
  const ModelConfig mc = model_config(a.run, w.ds);
  ModelParams params;
  try {
    params = load_model_checkpoint(mc, ckpt);
  } catch (const ArgumentError& e) {
    throw DataError(std::string("compatibility error: ") + e.what());
  }
  const Model model(mc, w.stores, std::move(params));
  const SplitPart part = parse_split_part(a.split);
  const EvalResult r =
      evaluate(model_scorer(model), w.split, w.ds, part, a.run.eval_negatives, seed);
  std::vector<MetricReport> reports = {r.overall};
  if (a.groups == "on") {
    const auto g = group_report(r.records, partition_head_tail(w.ds, a.run.head_ratio));
    reports.insert(reports.end(), g.begin(), g.end());
  }
  DirLock lock(a.out);
  emit_report(reports, a.out);
  std::cout << format_metrics_table(reports);
  if (r.skipped) std::cout << r.skipped << " users skipped (too few candidate items)\n";
}

// ---- sweep ----------------------------------------------------------------

struct SweepArgs {
  RunConfig run;
  std::string param;
  std::vector<std::size_t> values;
  std::uint64_t seed = 42;
  std::string out;
  bool force = false;
};

void cmd_sweep(SweepArgs a) {
  if (a.values.empty()) throw ArgumentError("empty sweep grid: pass --values");
  std::sort(a.values.begin(), a.values.end());
  a.values.erase(std::unique(a.values.begin(), a.values.end()), a.values.end());
  claim_output(a.out, a.force);
  Workspace w = load_workspace(a.run, false);
  if (a.param == "k" && a.run.encoder != "hae") throw ArgumentError("sweeping k needs --encoder hae");
  DirLock lock(a.out);

  std::string table = "param\tvalue\tndcg10\thr10\n";
  for (std::size_t v : a.values) {
    RunConfig rc = a.run;
    std::shared_ptr<const SemanticStores> stores;
    if (a.param == "k") {
      rc.k_neighbors = v;
      stores = stores_with_k(w, rc, v);
    } else {
      rc.h = v;
      if (rc.encoder == "hae") stores = stores_with_k(w, rc, rc.k_neighbors ? rc.k_neighbors : 10);
    }
    const ModelConfig mc = model_config(rc, w.ds);
    const TrainConfig tc = train_config(rc, a.seed);
    Model model(mc, stores, ModelParams::init(mc, a.seed));
    const FitResult f = fit(model, w.split, w.ds, tc);
    const Model best(mc, stores, f.best_params);
    const EvalResult r =
        evaluate(model_scorer(best), w.split, w.ds, SplitPart::kTest, tc.eval_negatives, a.seed);
    const std::string row = a.param + "\t" + std::to_string(v) + "\t" +
                            fmt("%.17g", r.overall.ndcg_at(10)) + "\t" +
                            fmt("%.17g", r.overall.hr_at(10)) + "\n";
    table += row;
    std::cout << row << std::flush;
  }
  write_text((fs::path(a.out) / "sweep.tsv").string(), table);
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

void cmd_report(const ReportArgs& a) {
  std::ostringstream text;
  for (const auto& in : a.inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) {
      const fs::path summary = p / "summary.json";
      if (fs::exists(summary)) {
        std::ifstream f(summary);
        const auto j = ordered_json::parse(f, nullptr, false);
        if (j.is_discarded()) throw FormatError(summary.string() + ": not valid JSON");
        text << "== " << in << " (training) ==\n";
        for (const auto& s : j.at("seeds")) {
          text << "seed " << s.at("seed").get<std::uint64_t>() << "\tbest_epoch "
               << s.at("best_epoch").get<std::size_t>() << "\tval_ndcg10 "
               << fmt("%.4f", s.at("best_val_ndcg10").get<double>()) << "\n";
        }
        text << "mean\tval_ndcg10 " << fmt("%.4f", j.at("mean_best_val_ndcg10").get<double>())
             << "\n\n";
      }
      p /= "metrics.tsv";
      if (!fs::exists(p)) {
        if (fs::exists(summary)) continue;
        throw DataError("no metrics.tsv or summary.json in " + in);
      }
    }
    require_file(p.string(), "metrics file", "");
    const auto reports = parse_metrics_tsv(p.string());
    text << "== " << in << " ==\n" << format_metrics_table(reports, false) << "\n";
  }
  std::cout << text.str();
  if (!a.out.empty()) write_text(a.out, text.str());
}

int fail(const char* kind, const std::exception& e, int code) {
  std::cerr << "grasp: " << kind << ": " << e.what() << "\n";
  return code;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool has_flag(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

// Appends `--key value` for each config entry whose flag is not already on
// the command line. `eval` falls back to <run>/config.txt and ignores keys
// it does not know.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
  if (args.size() < 2) return args;
  CLI::App* sub = app.get_subcommand_no_throw(args[1]);
  if (sub == nullptr) return args;
  const bool is_eval = args[1] == "eval";
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() && is_eval) {
    for (std::size_t i = 2; i + 1 < args.size(); ++i) {
      if (args[i] == "--run") path = (fs::path(args[i + 1]) / kRunConfig).string();
    }
    if (!path.empty() && !fs::exists(path)) return args;
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    const std::string flag = "--" + key;
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    if (opt == nullptr) {
      if (is_eval) continue;
      throw ArgumentError(path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (has_flag(args, flag) || value.empty()) continue;
    if (opt->get_expected_min() == 0) {
      if (value == "true") args.push_back(flag);
      else if (value != "false") {
        throw ArgumentError(path + ":" + std::to_string(line_no) + ": " + key +
                            " expects true or false");
      }
      continue;
    }
    args.push_back(flag);
    args.push_back(value);
  }
  return args;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"GRASP: retrieval-augmented embedding enhancement for sequential recommenders"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_help_all_flag("--help-all");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a cluster-structured synthetic corpus");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--n-users", synth.opts.n_users)->capture_default_str();
  s->add_option("--m-items", synth.opts.m_items)->capture_default_str();
  s->add_option("--n-clusters", synth.opts.n_clusters)->capture_default_str();
  s->add_option("--dim", synth.opts.dim, "Embedding dim (d_sem)")->capture_default_str();
  s->add_option("--noise", synth.opts.noise)->capture_default_str();
  s->add_option("--seed", synth.opts.seed)->capture_default_str();
  s->add_option("--in-cluster-rate", synth.opts.in_cluster_rate)->capture_default_str();
  s->add_option("--mean-length", synth.opts.mean_length)->capture_default_str();
  s->add_option("--popularity-skew", synth.opts.popularity_skew)->capture_default_str();
  s->add_flag("--force", synth.force, "Overwrite an existing output directory");

  BuildDbArgs db;
  auto* b = app.add_subcommand("build-db", "Build neighbor caches for user and item embeddings");
  b->add_option("--users", db.users, "User embedding file")->required();
  b->add_option("--items", db.items, "Item embedding file")->required();
  b->add_option("--k", db.k, "Neighbors per row")->capture_default_str();
  b->add_option("--out-dir,--out", db.out, "Output directory")->required();
  b->add_flag("--force", db.force, "Overwrite an existing output directory");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train one model per seed with early stopping");
  add_data_options(t, train.run);
  add_model_options(t, train.run);
  add_train_options(t, train.run);
  t->add_option("--seeds", train.run.seeds, "Comma-separated seeds")->delimiter(',')->capture_default_str();
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_flag("--force", train.force, "Overwrite an existing run directory");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  e->add_option("--run", ev.run_dir, "Run directory written by train")->required();
  add_data_options(e, ev.run);
  add_model_options(e, ev.run);
  e->add_option("--eval-negatives", ev.run.eval_negatives)->capture_default_str();
  e->add_option("--seeds", ev.run.seeds)->delimiter(',')->group("");
  e->add_option("--seed", ev.seed, "Checkpoint seed (default: the run's first seed)");
  e->add_option("--split", ev.split)->check(CLI::IsMember({"test", "valid"}))->capture_default_str();
  e->add_option("--groups", ev.groups, "Head/tail group tables")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  e->add_option("--out", ev.out, "Output directory (default: <run>/eval_<split>_seed<seed>)");
  e->add_flag("--force", ev.force, "Overwrite an existing output directory");

  SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "Train and test one model per grid value");
  add_data_options(w, sw.run);
  add_model_options(w, sw.run);
  add_train_options(w, sw.run);
  w->add_option("--param", sw.param, "Swept parameter")
      ->check(CLI::IsMember({"k", "h"}))
      ->required();
  w->add_option("--values", sw.values, "Comma-separated grid")->delimiter(',');
  w->add_option("--seed", sw.seed)->capture_default_str();
  w->add_option("--out", sw.out, "Output directory")->required();
  w->add_flag("--force", sw.force, "Overwrite an existing output directory");

  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Print metric tables from eval or train outputs");
  r->add_option("inputs", rep.inputs, "metrics.tsv files or run/eval directories")->required();
  r->add_option("--out", rep.out, "Also write the report to this file");

  std::string config_path;
  for (auto* sub : {s, b, t, e, w}) {
    sub->add_option("--config", config_path, "Flat key=value file; flags take precedence");
  }

  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(app, std::move(args));
  } catch (const Error& ex) {
    return fail("usage error", ex, kExitUsage);
  }
  std::vector<const char*> ptrs;
  for (const auto& a : args) ptrs.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (s->parsed()) cmd_synth(synth);
    if (b->parsed()) cmd_build_db(db);
    if (t->parsed()) cmd_train(train);
    if (e->parsed()) cmd_eval(ev);
    if (w->parsed()) cmd_sweep(sw);
    if (r->parsed()) cmd_report(rep);
  } catch (const ArgumentError& ex) {
    return fail("usage error", ex, kExitUsage);
  } catch (const NumericError& ex) {
    return fail("numeric failure", ex, kExitNumeric);
  } catch (const FormatError& ex) {
    return fail("format error", ex, kExitData);
  } catch (const DataError& ex) {
    return fail("data error", ex, kExitData);
  } catch (const IoError& ex) {
    return fail("i/o error", ex, kExitData);
  } catch (const fs::filesystem_error& ex) {
    return fail("i/o error", ex, kExitData);
  } catch (const std::exception& ex) {
    return fail("error", ex, 1);
  }
  return kExitOk;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> ptrs;
  for (const auto& a : args) ptrs.push_back(a.c_str());
  return run(static_cast<int>(ptrs.size()), ptrs.data());
}

}  // namespace grasp::cli
