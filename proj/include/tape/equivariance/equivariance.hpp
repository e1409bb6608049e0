#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tape/model/model.hpp"

namespace tape::eq {

using model::AttnMask;
using model::ModelConfig;

/// Output of a layer under test. `logits` is optional (empty when absent).
struct LayerOut {
  Tensor x;       // (N, C)
  Tensor e;       // (N, H, M, L, R)
  Tensor logits;  // (H, M, N, N)
};

/// A layer (X (N, C), E (N, H, M, L, R), mask) -> (f, g).
using LayerFn = std::function<LayerOut(const Tensor&, const Tensor&, const AttnMask&)>;

struct Dims {
  std::size_t N = 8, C = 24, H = 2, M = 3, L = 3, R = 4;

  static Dims of(const ModelConfig& c, std::size_t n) { return {n, c.C, c.H, c.M, c.L, c.R}; }
};

inline LayerOut identity_layer(const Tensor& x, const Tensor& e, const AttnMask&) { return {x, e, {}}; }

/// The block stack of a model (no embedding or head), single sample. The
/// logits reported are those of the first block.
inline LayerFn tape_layer(model::Weights w, ModelConfig c) {
  return [w = std::move(w), c](const Tensor& x, const Tensor& e, const AttnMask& mask) mutable {
    ad::Graph g;
    g.set_recording(false);
    const auto bw = model::bind(g, w, c, false);
    Shape xs = x.shape(), es = e.shape();
    xs.insert(xs.begin(), 1);
    es.insert(es.begin(), 1);
    ad::Var xv = g.constant(x.reshape(xs)), ev = g.constant(e.reshape(es));
    Tensor first_logits;
    for (std::size_t l = 0; l < bw.blocks.size(); ++l) {
      const auto r = model::tape_block(xv, ev, mask, bw.blocks[l], c);
      if (l == 0) first_logits = r.alpha.value();
      xv = r.x;
      ev = r.e;
    }
    LayerOut out{xv.value().reshape(x.shape()), ev.value().reshape(e.shape()), {}};
    if (first_logits.size()) {
      Shape ls(first_logits.shape().begin() + 1, first_logits.shape().end());
      out.logits = std::move(first_logits).reshape(ls);
    }
    return out;
  };
}

/// Random mask with nonempty rows: either a causal mask under a random
/// relabelling of tokens, or a random sprinkle that always keeps the diagonal.
inline AttnMask sample_mask(std::size_t n, Rng& rng) {
  Tensor m({n, n});
  if (rng.uniform() < 0.5) {
    const Permutation p = random_permutation(n, rng);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (p.map[j] <= p.map[i]) m(i, j) = 1.0;
  } else {
    const double density = rng.uniform(0.2, 0.8);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) = (i == j || rng.uniform() < density) ? 1.0 : 0.0;
  }
  return AttnMask::from(std::move(m));
}

// Token reordering along axis 0: out[i] = t[p(i)].
inline Tensor permute_tokens(const Tensor& t, const Permutation& p) { return p.apply_rows(t); }

inline Tensor conjugate_mask(const Tensor& m, const Permutation& p) { return p.conjugate(m); }

struct Trial {
  std::uint64_t seed = 0;
  double dev_f = 0.0;
  double dev_g = 0.0;
  double dev_logits = 0.0;
};

struct EquivarianceReport {
  std::string check;
  std::string layer;
  double tol = 0.0;
  std::uint64_t seed = 0;
  std::vector<Trial> trials;

  double max_f() const { return max_of(&Trial::dev_f); }
  double max_g() const { return max_of(&Trial::dev_g); }
  double max_logits() const { return max_of(&Trial::dev_logits); }
  double max_dev() const { return std::max({max_f(), max_g(), max_logits()}); }
  bool pass() const { return !trials.empty() && max_dev() <= tol; }

  // Reproducer seed of the worst trial.
  std::uint64_t worst_seed() const {
    std::uint64_t s = seed;
    double worst = -1.0;
    for (const Trial& t : trials) {
      const double d = std::max({t.dev_f, t.dev_g, t.dev_logits});
      if (d > worst) {
        worst = d;
        s = t.seed;
      }
    }
    return s;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["check"] = check;
    j["layer"] = layer;
    j["trials"] = trials.size();
    j["tol"] = tol;
    j["seed"] = seed;
    j["max_dev_f"] = max_f();
    j["max_dev_g"] = max_g();
    j["max_dev_logits"] = max_logits();
    j["pass"] = pass();
    j["worst_trial_seed"] = worst_seed();
    return j;
  }

 private:
  double max_of(double Trial::*field) const {
    double m = 0.0;
    for (const Trial& t : trials) m = std::max(m, t.*field);
    return m;
  }
};

inline void write_jsonl(std::ostream& os, const nlohmann::json& j) { os << j.dump() << '\n'; }

namespace detail {

struct Sample {
  Tensor x, e, o;
  AttnMask mask;
  Permutation p;
};

inline Sample draw(const Dims& d, Rng& r) {
  Sample s;
  s.x = r.normal_tensor({d.N, d.C});
  s.e = r.normal_tensor({d.N, d.H, d.M, d.L, d.R});
  s.o = random_orthogonal(d.R, r);
  s.mask = sample_mask(d.N, r);
  s.p = random_permutation(d.N, r);
  return s;
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t t) { return seed * 1000003ull + t; }

}  // namespace detail

/// f(PX, P E O, P M P^T) == P f(X, E, M) and g(PX, P E O, P M P^T) == P g(X, E, M) O.
inline EquivarianceReport check_perm_equivariance(const LayerFn& layer, const Dims& d, std::size_t trials, double tol,
                                                  std::uint64_t seed, const std::string& name = "layer") {
  EquivarianceReport rep{"perm_equivariance", name, tol, seed, {}};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t ts = detail::trial_seed(seed, t);
    Rng r(ts);
    const auto s = detail::draw(d, r);
    const LayerOut base = layer(s.x, s.e, s.mask);
    const LayerOut moved = layer(permute_tokens(s.x, s.p), right_multiply_last(permute_tokens(s.e, s.p), s.o),
                                 AttnMask::from(conjugate_mask(s.mask.m, s.p)));
    Trial tr{ts};
    tr.dev_f = max_abs_diff(moved.x, permute_tokens(base.x, s.p));
    tr.dev_g = max_abs_diff(moved.e, right_multiply_last(permute_tokens(base.e, s.p), s.o));
    rep.trials.push_back(tr);
  }
  return rep;
}

/// g(X, E O, M) == g(X, E, M) O, f(X, E O, M) == f(X, E, M), and the logits
/// are unchanged.
inline EquivarianceReport check_ortho_equivariance(const LayerFn& layer, const Dims& d, std::size_t trials,
                                                   double tol, std::uint64_t seed,
                                                   const std::string& name = "layer") {
  EquivarianceReport rep{"ortho_equivariance", name, tol, seed, {}};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t ts = detail::trial_seed(seed, t);
    Rng r(ts);
    const auto s = detail::draw(d, r);
    const LayerOut base = layer(s.x, s.e, s.mask);
    const LayerOut rot = layer(s.x, right_multiply_last(s.e, s.o), s.mask);
    Trial tr{ts};
    tr.dev_f = max_abs_diff(rot.x, base.x);
    tr.dev_g = max_abs_diff(rot.e, right_multiply_last(base.e, s.o));
    if (base.logits.size()) tr.dev_logits = max_abs_diff(rot.logits, base.logits);
    rep.trials.push_back(tr);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Shift invariance

struct ShiftRow {
  std::string protocol;  // "shift_ids" or "add_tokens"
  double delta = 0.0;
  double max_logit_dev = 0.0;
  std::vector<double> layer_grid_dev;  // per layer, max |grid - grid_base|
};

struct ShiftReport {
  double tol = 0.0;
  std::vector<ShiftRow> rows;

  // Only the index-shift protocol is asserted.
  bool pass() const {
    for (const auto& r : rows)
      if (r.protocol == "shift_ids" && !(r.max_logit_dev <= tol)) return false;
    return !rows.empty();
  }

  std::vector<nlohmann::json> to_json() const {
    std::vector<nlohmann::json> out;
    for (const auto& r : rows) {
      nlohmann::json j;
      j["check"] = "shift_invariance";
      j["protocol"] = r.protocol;
      j["delta"] = r.delta;
      j["max_logit_dev"] = r.max_logit_dev;
      j["layer_grid_dev"] = r.layer_grid_dev;
      j["asserted"] = r.protocol == "shift_ids";
      j["pass"] = r.protocol != "shift_ids" || r.max_logit_dev <= tol;
      out.push_back(std::move(j));
    }
    return out;
  }
};

namespace detail {

inline std::vector<Tensor> layer_grids(const std::vector<Tensor>& trace, const ModelConfig& c, std::size_t skip = 0) {
  std::vector<Tensor> grids;
  for (const Tensor& e : trace) {
    // e is (1, N, H, M, L, R); drop the batch axis and the first `skip` tokens.
    const std::size_t n = e.dim(1) - skip;
    const std::size_t per = c.H * c.M * c.L * c.R;
    std::vector<double> v(e.data().begin() + skip * per, e.data().end());
    grids.push_back(pe::pe_dot_product_grid(
        pe::PosTensor(Tensor::from_raw({n, c.H, c.M, c.L, c.R}, std::move(v)), {n, c.H, c.M, c.L, c.R})));
  }
  return grids;
}

}  // namespace detail

/// Runs the model on `tokens` at positions 0.. and at positions shifted by
/// each delta ("shift_ids", asserted), plus with `bos_count` copies of `bos`
/// prepended ("add_tokens", reported only).
inline ShiftReport check_shift_invariance(model::Weights& w, const ModelConfig& c, const std::vector<std::size_t>& tokens,
                                          const std::vector<double>& deltas, double tol, std::size_t bos,
                                          std::size_t bos_count = 3) {
  ShiftReport rep{tol, {}};
  const auto batch = model::TokenBatch::single(tokens);
  const std::size_t n = tokens.size();
  std::vector<Tensor> trace0;
  const Tensor base = model::logits(w, c, batch, pe::arange_positions(n), &trace0);
  const auto grids0 = detail::layer_grids(trace0, c);
  for (double d : deltas) {
    std::vector<Tensor> trace;
    const Tensor got = model::logits(w, c, batch, pe::arange_positions(n, d), &trace);
    ShiftRow row{"shift_ids", d, max_abs_diff(got, base), {}};
    const auto grids = detail::layer_grids(trace, c);
    for (std::size_t l = 0; l < grids.size(); ++l) row.layer_grid_dev.push_back(max_abs_diff(grids[l], grids0[l]));
    rep.rows.push_back(std::move(row));
  }
  if (bos_count > 0) {
    std::vector<std::size_t> longer(bos_count, bos);
    longer.insert(longer.end(), tokens.begin(), tokens.end());
    std::vector<Tensor> trace;
    const Tensor got = model::logits(w, c, model::TokenBatch::single(longer), {}, &trace);
    const std::size_t V = c.vocab;
    double dev = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t v = 0; v < V; ++v) dev = std::max(dev, std::abs(got(0, i + bos_count, v) - base(0, i, v)));
    ShiftRow row{"add_tokens", static_cast<double>(bos_count), dev, {}};
    const auto grids = detail::layer_grids(trace, c, bos_count);
    for (std::size_t l = 0; l < grids.size(); ++l) row.layer_grid_dev.push_back(max_abs_diff(grids[l], grids0[l]));
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Suite

struct SuiteOptions {
  std::size_t trials = 50;
  double tol = 1e-8;
  std::uint64_t seed = 1;
  std::size_t tokens = 8;
};

/// Config used by the symmetry suite: depth 2, general L and R via bilinear phi.
inline ModelConfig suite_config() {
  ModelConfig c;
  c.N = 32;
  c.C = 24;
  c.H = 2;
  c.M = 3;
  c.L = 3;
  c.R = 4;
  c.I = 8;
  c.depth = 2;
  c.vocab = 16;
  c.phi = model::PhiMode::Bilinear;
  c.pe = model::PeInit::Fourier;
  // Larger weights so the checked maps are far from trivial.
  c.init_std = 0.2;
  return c;
}

struct SuiteResult {
  std::vector<EquivarianceReport> reports;  // expected to pass
  std::vector<EquivarianceReport> mutants;  // expected to fail
  bool pass() const {
    for (const auto& r : reports)
      if (!r.pass()) return false;
    for (const auto& r : mutants)
      if (r.pass()) return false;
    return !reports.empty();
  }
};

/// Perm and ortho checks on the TAPE stack, and the same checks on each
/// designated mutant, which must fail.
inline SuiteResult run_symmetry_suite(const ModelConfig& base, const SuiteOptions& o) {
  SuiteResult res;
  const Dims d = Dims::of(base, o.tokens);
  const LayerFn tape = tape_layer(model::init_weights(base, o.seed), base);
  res.reports.push_back(check_perm_equivariance(tape, d, o.trials, o.tol, o.seed, "tape"));
  res.reports.push_back(check_ortho_equivariance(tape, d, o.trials, o.tol, o.seed + 1, "tape"));

  ModelConfig flat = base;
  flat.mutation = model::Mutation::FlattenedPe;
  const LayerFn flat_layer = tape_layer(model::init_weights(flat, o.seed), flat);
  res.mutants.push_back(check_perm_equivariance(flat_layer, d, o.trials, o.tol, o.seed, "flattened_pe"));

  ModelConfig raxis = base;
  raxis.mutation = model::Mutation::RAxisMlp;
  const LayerFn raxis_layer = tape_layer(model::init_weights(raxis, o.seed), raxis);
  res.mutants.push_back(check_ortho_equivariance(raxis_layer, d, o.trials, o.tol, o.seed + 1, "r_axis_mlp"));
  return res;
}

}  // namespace tape::eq
