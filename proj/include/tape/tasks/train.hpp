#pragma once

// AdamW and the deterministic training loop.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <thread>

#include "tape/tasks/addition.hpp"

namespace tape::tasks {

using model::ModelConfig;
using model::Weights;

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::size_t warmup = 0;
  bool cosine = false;       // cosine decay to lr * min_lr_ratio at `steps`
  double min_lr_ratio = 0.1;
  std::size_t batch = 32;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::size_t max_len = 10;
  std::size_t train_size = 100000;
  DigitOrder order = DigitOrder::Lsd;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  std::size_t log_every = 1;
  // >1 splits each batch over threads; gradients are then summed in shard
  // order, so results can differ from jobs = 1 in the last bits.
  std::size_t jobs = 1;

  void validate() const {
    auto need = [](bool ok, const std::string& m) {
      if (!ok) throw ConfigError(m);
    };
    need(lr > 0.0 && std::isfinite(lr), "train.lr must be positive");
    need(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train betas must lie in [0, 1)");
    need(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    need(eps > 0.0, "train.eps must be positive");
    need(grad_clip >= 0.0, "train.grad_clip must be >= 0");
    need(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0, "train.min_lr_ratio must lie in (0, 1]");
    need(batch > 0, "train.batch must be positive");
    need(max_len > 0, "train.max_len must be positive");
    need(train_size > 0, "train.train_size must be positive");
    need(jobs > 0, "train.jobs must be positive");
    need(log_every > 0, "train.log_every must be positive");
  }

  double lr_at(std::size_t step) const {
    double f = 1.0;
    if (warmup && step < warmup) f = double(step + 1) / double(warmup);
    else if (cosine && steps > warmup) {
      const double t = double(step - warmup) / double(steps - warmup);
      f = min_lr_ratio + (1.0 - min_lr_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(t, 1.0)));
    }
    return lr * f;
  }
};

inline std::map<std::string, std::string> to_kv(const TrainConfig& t) {
  using model::detail::fmt_double;
  return {
      {"train.lr", fmt_double(t.lr)},
      {"train.beta1", fmt_double(t.beta1)},
      {"train.beta2", fmt_double(t.beta2)},
      {"train.weight_decay", fmt_double(t.weight_decay)},
      {"train.eps", fmt_double(t.eps)},
      {"train.grad_clip", fmt_double(t.grad_clip)},
      {"train.warmup", std::to_string(t.warmup)},
      {"train.cosine", t.cosine ? "true" : "false"},
      {"train.min_lr_ratio", fmt_double(t.min_lr_ratio)},
      {"train.batch", std::to_string(t.batch)},
      {"train.steps", std::to_string(t.steps)},
      {"train.seed", std::to_string(t.seed)},
      {"train.max_len", std::to_string(t.max_len)},
      {"train.train_size", std::to_string(t.train_size)},
      {"train.order", to_string(t.order)},
      {"train.checkpoint_every", std::to_string(t.checkpoint_every)},
      {"train.log_every", std::to_string(t.log_every)},
      {"train.jobs", std::to_string(t.jobs)},
  };
}

/// Applies one "train.*" key; false if the key is not a train key.
inline bool apply_kv(TrainConfig& t, const std::string& key, const std::string& v) {
  using namespace model;
  if (key.rfind("train.", 0) != 0) return false;
  const std::string k = key.substr(6);
  if (k == "lr") t.lr = parse_double(key, v);
  else if (k == "beta1") t.beta1 = parse_double(key, v);
  else if (k == "beta2") t.beta2 = parse_double(key, v);
  else if (k == "weight_decay") t.weight_decay = parse_double(key, v);
  else if (k == "eps") t.eps = parse_double(key, v);
  else if (k == "grad_clip") t.grad_clip = parse_double(key, v);
  else if (k == "warmup") t.warmup = parse_size(key, v);
  else if (k == "cosine") t.cosine = parse_bool(key, v);
  else if (k == "min_lr_ratio") t.min_lr_ratio = parse_double(key, v);
  else if (k == "batch") t.batch = parse_size(key, v);
  else if (k == "steps") t.steps = parse_size(key, v);
  else if (k == "seed") t.seed = parse_u64(key, v);
  else if (k == "max_len") t.max_len = parse_size(key, v);
  else if (k == "train_size") t.train_size = parse_size(key, v);
  else if (k == "order") t.order = parse_digit_order(v);
  else if (k == "checkpoint_every") t.checkpoint_every = parse_size(key, v);
  else if (k == "log_every") t.log_every = parse_size(key, v);
  else if (k == "jobs") t.jobs = parse_size(key, v);
  else throw ConfigError("unknown key: " + key);
  return true;
}

// ---------------------------------------------------------------------------
// AdamW

struct AdamState {
  std::size_t t = 0;  // updates applied
  std::map<std::string, Tensor> m, v;
};

/// Decoupled weight decay on tensors of rank >= 2; biases, gains and the
/// fixed Fourier schedule are not decayed.
inline void adamw_update(Weights& w, const ModelConfig& c, const std::map<std::string, Tensor>& grads, AdamState& st,
                         const TrainConfig& tc, double lr) {
  st.t += 1;
  const double bc1 = 1.0 - std::pow(tc.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(tc.beta2, double(st.t));
  model::for_each_param(w, c, [&](const std::string& name, Tensor& p, bool trainable) {
    if (!trainable) return;
    const Tensor& g = grads.at(name);
    auto& m = st.m[name];
    auto& v = st.v[name];
    if (m.size() == 0) m = Tensor::zeros(p.shape());
    if (v.size() == 0) v = Tensor::zeros(p.shape());
    const bool decay = p.rank() >= 2 && tc.weight_decay > 0.0;
    auto pd = p.data_mut();
    auto md = m.data_mut();
    auto vd = v.data_mut();
    const auto gd = g.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = tc.beta1 * md[i] + (1.0 - tc.beta1) * gd[i];
      vd[i] = tc.beta2 * vd[i] + (1.0 - tc.beta2) * gd[i] * gd[i];
      const double mh = md[i] / bc1;
      const double vh = vd[i] / bc2;
      if (decay) pd[i] -= lr * tc.weight_decay * pd[i];
      pd[i] -= lr * mh / (std::sqrt(vh) + tc.eps);
    }
  });
}

// ---------------------------------------------------------------------------
// Loss and gradients

struct LossAndGrad {
  double loss = 0.0;
  std::map<std::string, Tensor> grads;
};

inline LossAndGrad loss_and_grad(Weights& w, const ModelConfig& c, const TrainBatch& b) {
  ad::Graph g;
  const auto bw = model::bind(g, w, c, true);
  const auto f = model::model_forward(g, bw, w, c, b.input);
  const ad::Var loss = ad::cross_entropy(f.logits, b.targets, b.weights);
  g.backward(loss);
  LossAndGrad out{loss.value().item(), {}};
  model::BoundWeights bwc = bw;
  model::for_each_param(bwc, c, [&](const std::string& name, ad::Var& v, bool trainable) {
    if (trainable) out.grads[name] = g.grad(v);
  });
  return out;
}

namespace detail {

inline double weight_sum(const TrainBatch& b) {
  double s = 0.0;
  for (double x : b.weights) s += x;
  return s;
}

inline TrainBatch slice_rows(const TrainBatch& b, std::size_t r0, std::size_t r1) {
  const std::size_t cols = b.input.cols;
  TrainBatch out;
  out.input.rows = r1 - r0;
  out.input.cols = cols;
  out.input.ids.assign(b.input.ids.begin() + r0 * cols, b.input.ids.begin() + r1 * cols);
  out.targets.assign(b.targets.begin() + r0 * cols, b.targets.begin() + r1 * cols);
  out.weights.assign(b.weights.begin() + r0 * cols, b.weights.begin() + r1 * cols);
  return out;
}

}  // namespace detail

/// Same value as loss_and_grad, computed over `jobs` row shards in parallel.
inline LossAndGrad loss_and_grad_sharded(Weights& w, const ModelConfig& c, const TrainBatch& b, std::size_t jobs) {
  jobs = std::min(jobs, b.input.rows);
  if (jobs <= 1) return loss_and_grad(w, c, b);
  std::vector<TrainBatch> shards;
  for (std::size_t k = 0; k < jobs; ++k)
    shards.push_back(detail::slice_rows(b, k * b.input.rows / jobs, (k + 1) * b.input.rows / jobs));
  std::vector<LossAndGrad> parts(jobs);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t k = 0; k < jobs; ++k) {
    pool.emplace_back([&, k] {
      try {
        Weights local = w;
        parts[k] = loss_and_grad(local, c, shards[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  const double total = detail::weight_sum(b);
  LossAndGrad out;
  for (std::size_t k = 0; k < jobs; ++k) {
    const double share = total > 0.0 ? detail::weight_sum(shards[k]) / total : 0.0;
    out.loss += share * parts[k].loss;
    for (auto& [name, g] : parts[k].grads) {
      auto it = out.grads.find(name);
      if (it == out.grads.end()) out.grads[name] = scale(g, share);
      else it->second = add(it->second, scale(g, share));
    }
  }
  return out;
}

inline double clip_global_norm(std::map<std::string, Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (auto& [_, g] : grads)
    for (double v : g.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data_mut()) v *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training loop

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t step) : NumericError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct TrainState {
  Weights w;
  AdamState opt;
  std::size_t step = 0;  // steps completed
};

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainIo {
  std::string checkpoint_path;  // empty: no checkpoint files
  std::string loss_csv_path;    // empty: no CSV
  std::string provenance;       // written as a leading '#' line in the CSV and checkpoint header
  double max_seconds = 0.0;     // 0: no wall-clock limit
  std::function<void(std::size_t, double)> on_log;
};

struct TrainResult {
  TrainState state;
  std::vector<LossPoint> curve;
  bool stopped_by_time = false;
  double seconds = 0.0;
};

inline io::Archive checkpoint_archive(TrainState& s, const ModelConfig& c, const TrainConfig& tc,
                                      const std::string& provenance = "") {
  std::string extra = model::serialize_kv(to_kv(tc)) + "state.step=" + std::to_string(s.step) +
                      "\nstate.adam_t=" + std::to_string(s.opt.t) + "\n";
  if (!provenance.empty()) extra += "# " + provenance + "\n";
  io::Archive ar = model::to_archive(s.w, c, extra);
  for (const auto& [name, t] : s.opt.m) ar.entries["adam.m." + name] = t;
  for (const auto& [name, t] : s.opt.v) ar.entries["adam.v." + name] = t;
  return ar;
}

inline void save_checkpoint(const std::string& path, TrainState& s, const ModelConfig& c, const TrainConfig& tc,
                            const std::string& provenance = "") {
  io::save_archive(path, checkpoint_archive(s, c, tc, provenance));
}

/// Loads weights, optimizer state, step counter and the stored configs.
inline TrainState load_checkpoint(const std::string& path, ModelConfig& c, TrainConfig* tc = nullptr) {
  const io::Archive ar = io::load_archive(path);
  std::string rest;
  TrainState s;
  s.w = model::from_archive(ar, c, &rest);
  TrainConfig t;
  for (const auto& [k, v] : model::parse_kv_text(rest)) {
    if (apply_kv(t, k, v)) continue;
    if (k == "state.step") s.step = model::parse_size(k, v);
    else if (k == "state.adam_t") s.opt.t = model::parse_size(k, v);
  }
  for (const auto& [name, tensor] : ar.entries) {
    if (name.rfind("adam.m.", 0) == 0) s.opt.m[name.substr(7)] = tensor;
    else if (name.rfind("adam.v.", 0) == 0) s.opt.v[name.substr(7)] = tensor;
  }
  if (tc) *tc = t;
  return s;
}

/// Training examples are drawn from `data`: batch k uses Rng(seed, k + 1),
/// so a resumed run sees the same batches as an uninterrupted one.
inline TrainBatch batch_for_step(const AdditionDataset& data, const TrainConfig& tc, std::size_t step) {
  if (data.samples.empty()) throw ConfigError("training dataset is empty");
  Rng r(tc.seed, step + 1);
  std::vector<Encoded> seqs;
  seqs.reserve(tc.batch);
  for (std::size_t k = 0; k < tc.batch; ++k) seqs.push_back(tokenize(data.samples[r.uniform_int(data.samples.size())], tc.order));
  return make_batch(seqs);
}

inline AdditionDataset make_dataset(const TrainConfig& tc) {
  Rng r(tc.seed, 0);
  return {tc.max_len, tc.seed, gen_addition(tc.max_len, tc.train_size, r)};
}

/// Runs steps [state.step, tc.steps). On a non-finite loss or gradient the
/// last good state is written to the checkpoint path and DivergenceError is
/// thrown.
inline TrainResult train(const ModelConfig& c, const AdditionDataset& data, const TrainConfig& tc, TrainState state,
                         const TrainIo& io = {}) {
  c.validate();
  tc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::ofstream csv;
  if (!io.loss_csv_path.empty()) {
    csv.open(io.loss_csv_path, state.step ? std::ios::app : std::ios::trunc);
    if (!csv) throw FileError("cannot open " + io.loss_csv_path);
    csv.precision(17);
    if (!state.step) {
      if (!io.provenance.empty()) csv << "# " << io.provenance << "\n";
      csv << "step,loss\n";
    }
  }
  TrainResult res;
  for (; state.step < tc.steps; ++state.step) {
    if (io.max_seconds > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > io.max_seconds) {
      res.stopped_by_time = true;
      break;
    }
    const TrainBatch b = batch_for_step(data, tc, state.step);
    LossAndGrad lg;
    bool bad = false;
    try {
      lg = loss_and_grad_sharded(state.w, c, b, tc.jobs);
      bad = !std::isfinite(lg.loss);
    } catch (const NumericError&) {
      bad = true;
    }
    if (bad) {
      if (!io.checkpoint_path.empty()) save_checkpoint(io.checkpoint_path, state, c, tc, io.provenance);
      throw DivergenceError("training diverged at step " + std::to_string(state.step), state.step);
    }
    clip_global_norm(lg.grads, tc.grad_clip);
    adamw_update(state.w, c, lg.grads, state.opt, tc, tc.lr_at(state.step));
    res.curve.push_back({state.step, lg.loss});
    if (csv.is_open()) csv << state.step << "," << lg.loss << "\n";
    if (io.on_log && state.step % tc.log_every == 0) io.on_log(state.step, lg.loss);
    if (!io.checkpoint_path.empty() && tc.checkpoint_every && (state.step + 1) % tc.checkpoint_every == 0) {
      TrainState snap{state.w, state.opt, state.step + 1};
      save_checkpoint(io.checkpoint_path, snap, c, tc, io.provenance);
    }
  }
  if (!io.checkpoint_path.empty()) save_checkpoint(io.checkpoint_path, state, c, tc, io.provenance);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.state = std::move(state);
  return res;
}

inline TrainState fresh_state(const ModelConfig& c, std::uint64_t seed) { return {model::init_weights(c, seed), {}, 0}; }

}  // namespace tape::tasks
