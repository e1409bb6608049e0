#pragma once

// Flat key=value run configuration shared by every CLI subcommand.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "tape/tasks/train.hpp"

namespace tape::cli {

using model::ModelConfig;

/// Every key has a default; see README for the list.
struct RunConfig {
  ModelConfig model = default_model();
  tasks::TrainConfig train;
  std::uint64_t seed = 1;
  std::string out_dir = ".";

  // props
  std::size_t props_trials = 50;
  double props_tol = 1e-8;
  std::size_t props_tokens = 8;
  std::vector<double> props_shift_deltas = {1, 3, 17, 100};
  std::size_t props_bos_count = 3;

  // nc1
  std::size_t nc1_min_n = 8;
  std::size_t nc1_max_n = 512;
  std::size_t nc1_instances = 100;
  bool nc1_corrupted = false;

  // train / eval
  std::string checkpoint = "tape.ckpt";
  std::string baseline_checkpoint = "rope.ckpt";
  bool baseline = true;
  bool resume = false;
  std::string dataset_cache;  // empty: regenerate
  double max_seconds = 0.0;
  std::size_t eval_max_len = 15;
  std::size_t eval_samples_per_cell = 20;

  // dump-pe
  std::vector<std::size_t> dump_layers = {0, 1};
  std::size_t dump_length = 32;
  bool dump_from_checkpoint = false;

  /// Desk-scale addition model.
  static ModelConfig default_model() {
    ModelConfig c;
    c.N = 64;
    c.C = 64;
    c.H = 2;
    c.M = 16;
    c.depth = 2;
    c.vocab = tasks::kAdditionVocab;
    return c;
  }

  void validate() const {
    model.validate();
    train.validate();
    auto need = [](bool ok, const std::string& m) {
      if (!ok) throw ConfigError(m);
    };
    need(props_trials > 0, "props.trials must be >= 1");
    need(props_tol > 0.0, "props.tol must be positive");
    need(props_tokens > 0 && props_tokens <= model.N, "props.tokens must lie in [1, model.N]");
    need(nc1_min_n >= 1 && nc1_min_n <= nc1_max_n, "nc1.min_n must lie in [1, nc1.max_n]");
    need(nc1_instances > 0, "nc1.instances must be >= 1");
    need(eval_max_len > 0, "eval.max_len must be >= 1");
    need(eval_samples_per_cell > 0, "eval.samples_per_cell must be >= 1");
    need(dump_length > 0 && dump_length <= model.N, "dump_pe.length must lie in [1, model.N]");
    need(!dump_layers.empty(), "dump_pe.layers must list at least one layer");
    for (std::size_t l : dump_layers)
      need(l <= model.depth, "dump_pe.layers entry " + std::to_string(l) + " exceeds model.depth");
    need(max_seconds >= 0.0, "train_max_seconds must be >= 0");
  }
};

namespace detail {

template <class T, class F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F parse_one) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ConfigError("empty list entry in " + key);
    out.push_back(parse_one(key, item));
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) s += model::detail::fmt_double(v[i]);
    else s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace detail

/// Keys that do not influence results; excluded from the config hash.
inline bool is_volatile_key(const std::string& k) {
  return k == "out_dir" || k == "train.jobs" || k == "train.log_every" || k == "train_max_seconds";
}

inline std::map<std::string, std::string> to_kv(const RunConfig& r) {
  using model::detail::fmt_double;
  auto kv = model::to_kv(r.model);
  for (auto& [k, v] : tasks::to_kv(r.train))
    if (k != "train.seed") kv[k] = v;
  auto b = [](bool x) { return std::string(x ? "true" : "false"); };
  kv["seed"] = std::to_string(r.seed);
  kv["out_dir"] = r.out_dir;
  kv["props.trials"] = std::to_string(r.props_trials);
  kv["props.tol"] = fmt_double(r.props_tol);
  kv["props.tokens"] = std::to_string(r.props_tokens);
  kv["props.shift_deltas"] = detail::join(r.props_shift_deltas);
  kv["props.bos_count"] = std::to_string(r.props_bos_count);
  kv["nc1.min_n"] = std::to_string(r.nc1_min_n);
  kv["nc1.max_n"] = std::to_string(r.nc1_max_n);
  kv["nc1.instances"] = std::to_string(r.nc1_instances);
  kv["nc1.corrupted"] = b(r.nc1_corrupted);
  kv["checkpoint"] = r.checkpoint;
  kv["baseline_checkpoint"] = r.baseline_checkpoint;
  kv["baseline"] = b(r.baseline);
  kv["resume"] = b(r.resume);
  kv["dataset_cache"] = r.dataset_cache;
  kv["train_max_seconds"] = fmt_double(r.max_seconds);
  kv["eval.max_len"] = std::to_string(r.eval_max_len);
  kv["eval.samples_per_cell"] = std::to_string(r.eval_samples_per_cell);
  kv["dump_pe.layers"] = detail::join(r.dump_layers);
  kv["dump_pe.length"] = std::to_string(r.dump_length);
  kv["dump_pe.from_checkpoint"] = b(r.dump_from_checkpoint);
  return kv;
}

/// Applies one key; unknown keys are errors.
inline void apply_kv(RunConfig& r, const std::string& k, const std::string& v) {
  using namespace model;
  if (model::apply_kv(r.model, k, v)) return;
  if (k == "train.seed") throw ConfigError("train.seed is not a key; use seed");
  if (tasks::apply_kv(r.train, k, v)) return;
  if (k == "seed") r.seed = parse_u64(k, v);
  else if (k == "out_dir") r.out_dir = v;
  else if (k == "props.trials") r.props_trials = parse_size(k, v);
  else if (k == "props.tol") r.props_tol = parse_double(k, v);
  else if (k == "props.tokens") r.props_tokens = parse_size(k, v);
  else if (k == "props.shift_deltas") r.props_shift_deltas = detail::parse_list<double>(k, v, parse_double);
  else if (k == "props.bos_count") r.props_bos_count = parse_size(k, v);
  else if (k == "nc1.min_n") r.nc1_min_n = parse_size(k, v);
  else if (k == "nc1.max_n") r.nc1_max_n = parse_size(k, v);
  else if (k == "nc1.instances") r.nc1_instances = parse_size(k, v);
  else if (k == "nc1.corrupted") r.nc1_corrupted = parse_bool(k, v);
  else if (k == "checkpoint") r.checkpoint = v;
  else if (k == "baseline_checkpoint") r.baseline_checkpoint = v;
  else if (k == "baseline") r.baseline = parse_bool(k, v);
  else if (k == "resume") r.resume = parse_bool(k, v);
  else if (k == "dataset_cache") r.dataset_cache = v;
  else if (k == "train_max_seconds") r.max_seconds = parse_double(k, v);
  else if (k == "eval.max_len") r.eval_max_len = parse_size(k, v);
  else if (k == "eval.samples_per_cell") r.eval_samples_per_cell = parse_size(k, v);
  else if (k == "dump_pe.layers") r.dump_layers = detail::parse_list<std::size_t>(k, v, parse_size);
  else if (k == "dump_pe.length") r.dump_length = parse_size(k, v);
  else if (k == "dump_pe.from_checkpoint") r.dump_from_checkpoint = parse_bool(k, v);
  else throw ConfigError("unknown key: " + k);
}

inline std::string serialize(const RunConfig& r) { return model::serialize_kv(to_kv(r)); }

/// Parses config text. Relative paths are resolved against `base_dir`.
inline RunConfig parse(const std::string& text, const std::filesystem::path& base_dir = {}) {
  RunConfig r;
  for (const auto& [k, v] : model::parse_kv_text(text)) apply_kv(r, k, v);
  r.train.seed = r.seed;
  if (!base_dir.empty()) {
    auto resolve = [&](std::string& p) {
      if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base_dir / p).lexically_normal().string();
    };
    resolve(r.out_dir);
    resolve(r.checkpoint);
    resolve(r.baseline_checkpoint);
    resolve(r.dataset_cache);
  }
  return r;
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), std::filesystem::absolute(path).parent_path());
}

/// 64-bit FNV-1a over the serialized result-relevant keys.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const RunConfig& r) {
  auto kv = to_kv(r);
  for (auto it = kv.begin(); it != kv.end();) it = is_volatile_key(it->first) ? kv.erase(it) : std::next(it);
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a(model::serialize_kv(kv));
  return os.str();
}

/// Seed precedence: explicit flag, then TAPE_SEED, then the config file.
inline void apply_seed_override(RunConfig& r, std::optional<std::uint64_t> flag) {
  if (flag) r.seed = *flag;
  else if (const char* env = std::getenv("TAPE_SEED"); env && *env) r.seed = model::parse_u64("TAPE_SEED", env);
  r.train.seed = r.seed;
}

}  // namespace tape::cli
