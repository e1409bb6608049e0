// tape_cli: symmetry suites, the word-problem construction, addition training
// and evaluation, and positional-encoding dumps.
//
// Exit codes: 0 success, 1 check failed, 2 usage or config error, 3 I/O error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tape/cli/run_config.hpp"
#include "tape/equivariance/equivariance.hpp"
#include "tape/tasks/eval.hpp"

namespace fs = std::filesystem;
using namespace tape;
using nlohmann::json;
using model::ModelConfig;

namespace {

enum Exit { kOk = 0, kFail = 1, kUsage = 2, kIo = 3 };

struct Common {
  std::string config;
  std::string out;
  std::size_t jobs = 0;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
};

struct Ctx {
  cli::RunConfig rc;
  std::string hash;

  std::string provenance() const { return "config_hash=" + hash + ",seed=" + std::to_string(rc.seed); }

  json stamp(json j) const {
    j["config_hash"] = hash;
    j["seed"] = rc.seed;
    return j;
  }

  fs::path out(const std::string& name) const { return fs::path(rc.out_dir) / name; }

  std::ofstream open(const std::string& name) const {
    std::ofstream os(out(name));
    if (!os) throw FileError("cannot write " + out(name).string());
    return os;
  }
};

Ctx load(const Common& o) {
  Ctx c;
  c.rc = cli::load(o.config);
  if (!o.out.empty()) c.rc.out_dir = o.out;
  if (o.jobs) c.rc.train.jobs = o.jobs;
  if (o.trials) {
    if (*o.trials == 0) throw ConfigError("--trials must be >= 1");
    c.rc.props_trials = *o.trials;
    c.rc.nc1_instances = *o.trials;
  }
  cli::apply_seed_override(c.rc, o.seed);
  c.rc.validate();
  c.hash = cli::config_hash(c.rc);
  std::error_code ec;
  fs::create_directories(c.rc.out_dir, ec);
  if (ec) throw FileError("cannot create " + c.rc.out_dir + ": " + ec.message());
  std::ofstream(c.out("run_config.txt")) << "# " << c.provenance() << "\n" << cli::serialize(c.rc);
  return c;
}

// ---------------------------------------------------------------------------

int cmd_props(const Ctx& c, bool break_equivariance) {
  ModelConfig base = eq::suite_config();
  if (break_equivariance) base.mutation = model::Mutation::FlattenedPe;
  if (c.rc.props_tokens > base.N) throw ConfigError("props.tokens exceeds the suite context");
  const eq::SuiteOptions so{c.rc.props_trials, c.rc.props_tol, c.rc.seed, c.rc.props_tokens};
  const auto suite = eq::run_symmetry_suite(base, so);

  Rng r(c.rc.seed, 7);
  std::vector<std::size_t> toks(c.rc.props_tokens);
  for (auto& t : toks) t = 1 + r.uniform_int(base.vocab - 1);
  auto w = model::init_weights(base, c.rc.seed);
  const auto shift = eq::check_shift_invariance(w, base, toks, c.rc.props_shift_deltas, c.rc.props_tol, 0,
                                                c.rc.props_bos_count);

  auto os = c.open("props.jsonl");
  bool ok = true;
  auto emit = [&](json j) {
    j = c.stamp(std::move(j));
    os << j.dump() << "\n";
    std::cout << j.dump() << "\n";
  };
  for (const auto& rep : suite.reports) {
    json j = rep.to_json();
    j["expect"] = "pass";
    emit(j);
    if (!rep.pass()) {
      ok = false;
      std::cerr << "FAIL " << rep.check << "/" << rep.layer << ": reproduce with seed " << rep.worst_seed() << "\n";
    }
  }
  for (const auto& rep : suite.mutants) {
    json j = rep.to_json();
    j["expect"] = "fail";
    j["pass"] = !rep.pass();
    emit(j);
    if (rep.pass()) {
      ok = false;
      std::cerr << "FAIL mutant " << rep.layer << " passed " << rep.check << " (seed " << rep.seed << ")\n";
    }
  }
  for (const json& j : shift.to_json()) emit(j);
  if (!shift.pass()) {
    ok = false;
    std::cerr << "FAIL shift invariance (seed " << c.rc.seed << ")\n";
  }
  emit({{"check", "summary"}, {"pass", ok}});
  return ok ? kOk : kFail;
}

// ---------------------------------------------------------------------------

int cmd_nc1(const Ctx& c) {
  const auto net = c.rc.nc1_corrupted ? nc1::corrupted_construction() : nc1::build_construction();
  const auto rep = nc1::precision_sweep(net, nc1::doubling_lengths(c.rc.nc1_min_n, c.rc.nc1_max_n),
                                        c.rc.nc1_instances, c.rc.seed);
  auto csv = c.open("nc1_sweep.csv");
  auto jl = c.open("nc1.jsonl");
  csv << "# " << c.provenance() << "\n";
  csv << "n,instances,instance_accuracy,position_accuracy,min_identity_score,max_nonidentity_score,"
         "min_scaled_margin\n";
  csv.precision(17);
  auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  for (const auto& row : rep.rows) {
    csv << row.n << "," << row.instances << "," << row.instance_accuracy() << "," << row.position_accuracy() << ","
        << row.min_identity_score << "," << row.max_nonidentity_score << "," << row.min_scaled_margin << "\n";
    json j{{"check", "nc1"},
           {"n", row.n},
           {"instances", row.instances},
           {"instance_accuracy", row.instance_accuracy()},
           {"position_accuracy", row.position_accuracy()},
           {"min_identity_score", finite_or_null(row.min_identity_score)},
           {"max_nonidentity_score", row.max_nonidentity_score},
           {"min_scaled_margin", finite_or_null(row.min_scaled_margin)},
           {"pass", row.perfect()}};
    if (row.has_bad) j["first_bad_seed"] = row.first_bad_seed;
    j = c.stamp(j);
    jl << j.dump() << "\n";
    std::cout << j.dump() << "\n";
  }
  json s{{"check", "summary"}, {"pass", rep.pass()}, {"corrupted", c.rc.nc1_corrupted}};
  if (auto f = rep.first_failing_n()) s["first_failing_n"] = *f;
  else s["first_failing_n"] = nullptr;
  s = c.stamp(s);
  jl << s.dump() << "\n";
  std::cout << s.dump() << "\n";
  if (!rep.pass()) std::cerr << "FAIL construction disagrees with the oracle; see first_bad_seed\n";
  return rep.pass() ? kOk : kFail;
}

// ---------------------------------------------------------------------------

tasks::AdditionDataset dataset_for(const Ctx& c) {
  const auto& path = c.rc.dataset_cache;
  if (!path.empty() && fs::exists(path)) {
    auto d = tasks::dataset_from_archive(io::load_archive(path));
    if (d.max_len != c.rc.train.max_len || d.seed != c.rc.seed || d.samples.size() != c.rc.train.train_size) {
      throw ConfigError("dataset cache " + path + " does not match train.max_len / seed / train.train_size");
    }
    return d;
  }
  auto d = tasks::make_dataset(c.rc.train);
  if (!path.empty()) io::save_archive(path, tasks::dataset_to_archive(d));
  return d;
}

json train_one(const Ctx& c, const tasks::AdditionDataset& data, const ModelConfig& mc, const std::string& ckpt,
               const std::string& tag) {
  tasks::TrainState st;
  ModelConfig use = mc;
  if (c.rc.resume && fs::exists(ckpt)) {
    ModelConfig stored;
    st = tasks::load_checkpoint(ckpt, stored);
    if (model::to_kv(stored) != model::to_kv(mc)) throw ConfigError("checkpoint " + ckpt + " has a different model");
  } else {
    st = tasks::fresh_state(mc, c.rc.seed);
  }
  tasks::TrainIo io;
  io.checkpoint_path = ckpt;
  io.loss_csv_path = c.out("loss_" + tag + ".csv").string();
  io.provenance = c.provenance();
  io.max_seconds = c.rc.max_seconds;
  io.on_log = [&](std::size_t step, double loss) {
    std::cerr << tag << " step " << step << " loss " << loss << "\n";
  };
  const std::size_t start = st.step;
  const auto res = tasks::train(use, data, c.rc.train, std::move(st), io);
  json j{{"check", "train"},
         {"model", tag},
         {"start_step", start},
         {"end_step", res.state.step},
         {"final_loss", res.curve.empty() ? json(nullptr) : json(res.curve.back().loss)},
         {"seconds", res.seconds},
         {"stopped_by_time", res.stopped_by_time},
         {"params", model::count_params(mc)},
         {"checkpoint", ckpt}};
  return c.stamp(j);
}

int cmd_train(const Ctx& c) {
  const auto data = dataset_for(c);
  auto jl = c.open("train.jsonl");
  auto emit = [&](const json& j) {
    jl << j.dump() << "\n";
    std::cout << j.dump() << "\n";
  };
  emit(train_one(c, data, c.rc.model, c.rc.checkpoint, "tape"));
  if (c.rc.baseline)
    emit(train_one(c, data, model::without_contextualization(c.rc.model), c.rc.baseline_checkpoint, "rope"));
  return kOk;
}

// ---------------------------------------------------------------------------

json eval_one(const Ctx& c, const std::string& ckpt, const std::string& tag) {
  if (!fs::exists(ckpt)) throw FileError("checkpoint not found: " + ckpt);
  ModelConfig mc;
  tasks::TrainConfig tc;
  auto st = tasks::load_checkpoint(ckpt, mc, &tc);
  tasks::EvalOptions o;
  o.max_len = c.rc.eval_max_len;
  o.train_max_len = tc.max_len;
  o.samples_per_cell = c.rc.eval_samples_per_cell;
  o.seed = c.rc.seed;
  o.order = tc.order;
  const auto g = tasks::evaluate_grid(st.w, mc, o);
  auto os = c.open("grid_" + tag + ".csv");
  tasks::write_grid_csv(os, g, {c.provenance(), "model=" + tag});
  json j{{"check", "eval"},
         {"model", tag},
         {"mean", g.mean()},
         {"in_distribution_mean", g.in_distribution_mean()},
         {"extrapolation_mean", g.extrapolation_mean()},
         {"train_max_len", g.train_max_len},
         {"max_len", g.max_len},
         {"samples_per_cell", g.samples_per_cell}};
  return c.stamp(j);
}

int cmd_eval(const Ctx& c) {
  auto jl = c.open("eval.jsonl");
  auto emit = [&](const json& j) {
    jl << j.dump() << "\n";
    std::cout << j.dump() << "\n";
  };
  emit(eval_one(c, c.rc.checkpoint, "tape"));
  if (c.rc.baseline) emit(eval_one(c, c.rc.baseline_checkpoint, "rope"));
  return kOk;
}

// ---------------------------------------------------------------------------

/// Largest |g(i, j) - g(i+1, j+1)|; zero for a Toeplitz grid.
double toeplitz_deviation(const Tensor& g) {
  double d = 0.0;
  for (std::size_t i = 0; i + 1 < g.dim(0); ++i)
    for (std::size_t j = 0; j + 1 < g.dim(1); ++j) d = std::max(d, std::abs(g(i, j) - g(i + 1, j + 1)));
  return d;
}

int cmd_dump_pe(const Ctx& c) {
  ModelConfig mc = c.rc.model;
  model::Weights w;
  if (c.rc.dump_from_checkpoint) {
    if (!fs::exists(c.rc.checkpoint)) throw FileError("checkpoint not found: " + c.rc.checkpoint);
    w = tasks::load_checkpoint(c.rc.checkpoint, mc).w;
  } else {
    w = model::init_weights(mc, c.rc.seed);
  }
  for (std::size_t l : c.rc.dump_layers)
    if (l > mc.depth) throw ConfigError("dump_pe.layers entry " + std::to_string(l) + " exceeds the model depth");
  const std::size_t n = c.rc.dump_length;
  Rng r(c.rc.seed, 11);
  std::vector<std::size_t> toks(n);
  for (auto& t : toks) t = r.uniform_int(mc.vocab);
  const auto positions = pe::arange_positions(n);
  std::vector<Tensor> trace;
  model::logits(w, mc, model::TokenBatch::single(toks), positions, &trace);

  auto jl = c.open("dump_pe.jsonl");
  for (std::size_t l : c.rc.dump_layers) {
    pe::PosTensor e = model::initial_pe(w, mc, positions);
    if (l > 0) e = pe::PosTensor(trace[l - 1].reshape({n, mc.H, mc.M, mc.L, mc.R}), {n, mc.H, mc.M, mc.L, mc.R});
    const Tensor grid = pe::pe_dot_product_grid(e);
    const std::string name = "pe_layer" + std::to_string(l) + ".csv";
    auto os = c.open(name);
    pe::write_pe_dot_products(os, grid, positions, {c.provenance(), "layer=" + std::to_string(l)});
    const double dev = toeplitz_deviation(grid);
    json j = c.stamp({{"check", "dump_pe"},
                      {"layer", l},
                      {"file", name},
                      {"toeplitz_deviation", dev},
                      {"toeplitz", dev <= 1e-9}});
    jl << j.dump() << "\n";
    std::cout << j.dump() << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* sub, Common& o) {
  sub->add_option("--config", o.config, "run configuration (key=value)")->required();
  sub->add_option("--out", o.out, "output directory (overrides out_dir)");
  sub->add_option("--jobs", o.jobs, "worker threads for training");
  sub->add_option("--trials", o.trials, "trials per symmetry check / instances per length");
  sub->add_option("--seed", o.seed, "seed (overrides TAPE_SEED and the config)");
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FileError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const tasks::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contextualized equivariant positional encoding: checks and experiments"};
  app.require_subcommand(1);
  Common o;
  bool break_eq = false;

  auto* props = app.add_subcommand("props", "equivariance, mutation and shift-invariance suites");
  add_common(props, o);
  props->add_flag("--break-equivariance", break_eq, "run the suite on a non-equivariant variant");
  auto* nc1c = app.add_subcommand("nc1", "word-problem construction sweep against the oracle");
  add_common(nc1c, o);
  auto* train = app.add_subcommand("train", "train the addition model and its rotary baseline");
  add_common(train, o);
  auto* eval = app.add_subcommand("eval", "exact-match grids for the trained checkpoints");
  add_common(eval, o);
  auto* dump = app.add_subcommand("dump-pe", "positional-encoding dot-product grids per layer");
  add_common(dump, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  return guarded([&] {
    const Ctx c = load(o);
    if (props->parsed()) return cmd_props(c, break_eq);
    if (nc1c->parsed()) return cmd_nc1(c);
    if (train->parsed()) return cmd_train(c);
    if (eval->parsed()) return cmd_eval(c);
    return cmd_dump_pe(c);
  });
}
