#pragma once

// Pi(5) word problem: generator, oracles, the WY identity and the explicit
// four-layer construction that decides it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tape/model/model.hpp"
#include "tape/numcore/linalg.hpp"

namespace tape::nc1 {

using model::AttnMask;

inline constexpr int kBos = 11;
inline constexpr std::size_t kVocab = 11;  // ids 1..11
inline constexpr std::size_t kR = 6;

// ---------------------------------------------------------------------------
// Swap table

struct Swap {
  int src = 0, dst = 0;  // 1-based, src < dst
};

/// Canonical enumeration of the transpositions of [5]: ids 1..10 in
/// lexicographic (src, dst) order.
struct SwapTable {
  std::array<Swap, 10> swaps{};

  static const SwapTable& canonical() {
    static const SwapTable t = [] {
      SwapTable s;
      std::size_t n = 0;
      for (int a = 1; a <= 5; ++a)
        for (int b = a + 1; b <= 5; ++b) s.swaps[n++] = {a, b};
      return s;
    }();
    return t;
  }

  const Swap& at(int id) const {
    if (id < 1 || id > 10) throw ContractError("swap id out of range: " + std::to_string(id));
    return swaps[static_cast<std::size_t>(id - 1)];
  }
};

/// S = I - (d_src - d_dst)(d_src - d_dst)^T.
inline Tensor swap_matrix(int id) {
  const Swap s = SwapTable::canonical().at(id);
  Tensor m = Tensor::identity(5);
  const std::size_t a = s.src - 1, b = s.dst - 1;
  m(a, a) = 0.0;
  m(b, b) = 0.0;
  m(a, b) = 1.0;
  m(b, a) = 1.0;
  return m;
}

/// Xi (11 x 6): row n-1 = d_src(n) - d_dst(n), row 10 (BOS) = 0.
inline Tensor xi_table() {
  Tensor xi({kVocab, kR});
  for (int id = 1; id <= 10; ++id) {
    const Swap s = SwapTable::canonical().at(id);
    xi(id - 1, s.src - 1) = 1.0;
    xi(id - 1, s.dst - 1) = -1.0;
  }
  return xi;
}

// ---------------------------------------------------------------------------
// Instances and oracles

struct WordProblemInstance {
  std::vector<int> u;  // u[0] == BOS, u[i] in 1..10 after

  std::size_t size() const { return u.size(); }

  void validate() const {
    if (u.empty() || u[0] != kBos) throw ContractError("instance must start with BOS");
    for (std::size_t i = 1; i < u.size(); ++i)
      if (u[i] < 1 || u[i] > 10) throw ContractError("bad token id at position " + std::to_string(i));
  }
};

/// Matrix-product oracle: y[i] = [prod_{j<=i} S_u[j] == I], S_BOS = I, exact
/// integer arithmetic.
inline std::vector<int> oracle_labels(const WordProblemInstance& inst) {
  inst.validate();
  using Mat = std::array<int, 25>;
  Mat p{};
  for (int k = 0; k < 5; ++k) p[k * 5 + k] = 1;
  const Mat id = p;
  std::vector<int> y(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (inst.u[i] != kBos) {
      const Swap s = SwapTable::canonical().at(inst.u[i]);
      Mat sm{};
      for (int k = 0; k < 5; ++k) sm[k * 5 + k] = 1;
      const int a = s.src - 1, b = s.dst - 1;
      sm[a * 5 + a] = sm[b * 5 + b] = 0;
      sm[a * 5 + b] = sm[b * 5 + a] = 1;
      Mat q{};
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
          for (int k = 0; k < 5; ++k) q[r * 5 + c] += p[r * 5 + k] * sm[k * 5 + c];
      p = q;
    }
    y[i] = p == id ? 1 : 0;
  }
  return y;
}

/// Second oracle: composes permutation maps directly.
inline std::vector<int> oracle_labels_by_map(const WordProblemInstance& inst) {
  inst.validate();
  std::array<int, 5> pi = {0, 1, 2, 3, 4};
  std::vector<int> y(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (inst.u[i] != kBos) {
      const Swap s = SwapTable::canonical().at(inst.u[i]);
      std::swap(pi[s.src - 1], pi[s.dst - 1]);
    }
    bool ident = true;
    for (int k = 0; k < 5; ++k) ident = ident && pi[k] == k;
    y[i] = ident;
  }
  return y;
}

/// sum_v v * pi_i(v) for each prefix, via the permutation map.
inline std::vector<int> prefix_weighted_sums(const WordProblemInstance& inst) {
  std::array<int, 5> pi = {0, 1, 2, 3, 4};
  std::vector<int> out(inst.size());
  for (std::size_t i = 0; i < inst.size(); ++i) {
    if (inst.u[i] != kBos) {
      const Swap s = SwapTable::canonical().at(inst.u[i]);
      std::swap(pi[s.src - 1], pi[s.dst - 1]);
    }
    int acc = 0;
    for (int v = 0; v < 5; ++v) acc += (v + 1) * (pi[v] + 1);
    out[i] = acc;
  }
  return out;
}

struct LabeledInstance {
  WordProblemInstance instance;
  std::vector<int> labels;
};

/// BOS followed by n-1 uniform transposition ids.
inline LabeledInstance gen_word_problem(std::size_t n, Rng& rng) {
  if (n == 0) throw ContractError("gen_word_problem: n must be >= 1");
  WordProblemInstance inst;
  inst.u.reserve(n);
  inst.u.push_back(kBos);
  for (std::size_t i = 1; i < n; ++i) inst.u.push_back(1 + static_cast<int>(rng.uniform_int(10)));
  auto labels = oracle_labels(inst);
  return {std::move(inst), std::move(labels)};
}

// ---------------------------------------------------------------------------
// WY representation

enum class WyMask { StrictLower, InclusiveLower };

/// LHS: P_i = prod_{j<=i} (I - xi_j xi_j^T) for every i, stacked (N, R, R).
inline Tensor householder_prefix_products(const Tensor& xi) {
  const std::size_t n = xi.dim(0), r = xi.dim(1);
  Tensor out({n, r, r});
  Tensor p = Tensor::identity(r);
  for (std::size_t i = 0; i < n; ++i) {
    // p <- p (I - x x^T) = p - (p x) x^T
    std::vector<double> px(r, 0.0);
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b) px[a] += p(a, b) * xi(i, b);
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b) p(a, b) -= px[a] * xi(i, b);
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b) out(i, a, b) = p(a, b);
  }
  return out;
}

/// W = (I + M . Xi Xi^T)^{-1} Xi.
inline Tensor wy_vectors(const Tensor& xi, WyMask mask = WyMask::StrictLower) {
  const std::size_t n = xi.dim(0);
  Tensor a = matmul(xi, transpose(xi));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool keep = mask == WyMask::StrictLower ? j < i : j <= i;
      if (!keep) a(i, j) = 0.0;
      if (i == j) a(i, j) += 1.0;
    }
  return unit_lower_solve(a, xi);
}

/// RHS: I - sum_{j<=i} w_j xi_j^T for every i, stacked (N, R, R).
inline Tensor wy_prefix_products(const Tensor& xi, WyMask mask = WyMask::StrictLower) {
  const std::size_t n = xi.dim(0), r = xi.dim(1);
  const Tensor w = wy_vectors(xi, mask);
  Tensor out({n, r, r});
  Tensor p = Tensor::identity(r);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b) p(a, b) -= w(i, a) * xi(i, b);
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b) out(i, a, b) = p(a, b);
  }
  return out;
}

/// max_i || LHS_i - RHS_i ||_inf (entrywise max).
inline double wy_check(const Tensor& xi, WyMask mask = WyMask::StrictLower) {
  if (xi.rank() != 2 || xi.dim(0) == 0) throw DimensionError("wy_check: expected nonempty (N, R) matrix");
  return max_abs_diff(householder_prefix_products(xi), wy_prefix_products(xi, mask));
}

/// Xi rows for the tokens of an instance.
inline Tensor xi_rows(const WordProblemInstance& inst) {
  const Tensor table = xi_table();
  Tensor out({inst.size(), kR});
  for (std::size_t i = 0; i < inst.size(); ++i)
    for (std::size_t k = 0; k < kR; ++k) out(i, k) = table(inst.u[i] - 1, k);
  return out;
}

// ---------------------------------------------------------------------------
// Construction

struct ConstructionOptions {
  double threshold = 54.5;
  // Scale on the layer-4 value vector. At 1 the BOS position scores exactly
  // 0; any gain in (1, 1.3] keeps every non-identity position at 0.
  double value_gain = 1.25;
};

/// Fixed weights of the four-layer network. Token features X are (N, C_l);
/// positional features E are (N, L_l, 6) with L = 17, 8, 12, 6 entering
/// layers 1..4.
struct ConstructedNet {
  ConstructionOptions opts;
  Tensor xi;  // (11, 6)
  // layer 2
  Tensor ffn2_w1, ffn2_w2;  // (11, 11), (12, 11)
  Tensor uq2, uk2, uv2;     // (1, 8), (1, 8), (8, 8)
  // layer 3
  Tensor wv3, uv3;  // (12, 12), (12, 12)
  // layer 4
  Tensor wq4, wk4, wv4;  // (6, 12), (6, 12), (12, 12)
  Tensor head_w1;        // (1, 12)

  static constexpr std::array<std::size_t, 5> kL = {17, 8, 12, 6, 6};
  static constexpr std::array<std::size_t, 5> kC = {11, 11, 12, 12, 1};
};

inline ConstructedNet build_construction(const ConstructionOptions& o = {}) {
  ConstructedNet net;
  net.opts = o;
  net.xi = xi_table();
  constexpr std::size_t C = kVocab;

  net.ffn2_w1 = Tensor::identity(C);
  net.ffn2_w2 = Tensor({C + 1, C});
  for (std::size_t k = 0; k < C; ++k) net.ffn2_w2(k + 1, k) = 1.0;

  net.uq2 = Tensor({1, 8});
  net.uq2(0, 0) = 1.0;
  net.uk2 = net.uq2;
  net.uv2 = Tensor({8, 8});
  net.uv2(1, 0) = 1.0;

  net.wv3 = Tensor({C + 1, C + 1});
  net.wv3(0, C) = 1.0;  // BOS indicator into the new leading channel
  net.uv3 = Tensor::identity(12);

  const double ramp[6] = {1, 2, 3, 4, 5, 0};
  net.wq4 = Tensor({kR, C + 1});
  net.wk4 = Tensor({kR, C + 1});
  for (std::size_t a = 0; a < kR; ++a) {
    const double qa = a < 5 ? ramp[a] : o.threshold;
    for (std::size_t k = 1; k <= C; ++k) net.wq4(a, k) = qa;
    net.wk4(a, C) = a < 5 ? ramp[a] : -1.0;
  }
  net.wv4 = Tensor({C + 1, C + 1});
  net.wv4(0, C) = -o.value_gain;

  net.head_w1 = Tensor({1, C + 1});
  net.head_w1(0, 0) = -1.0;
  return net;
}

/// The construction with the layer-4 threshold moved above the identity sum
/// of 55, so identity prefixes are misclassified.
inline ConstructedNet corrupted_construction() {
  ConstructionOptions o;
  o.threshold = 55.5;
  return build_construction(o);
}

struct Nc1LayerOut {
  Tensor x;       // (N, C_out)
  Tensor e;       // (N, L_out, 6)
  Tensor logits;  // token-mixing pre-softmax logits (N, N); empty if unused
};

namespace detail {

inline double hard_sigmoid(double v) { return std::min(1.0, std::max(0.0, v)); }

// Row-wise mean over allowed keys.
inline Tensor mask_mean_weights(const AttnMask& mask) {
  const std::size_t n = mask.size();
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += mask.m(i, j);
    for (std::size_t j = 0; j < n; ++j) a(i, j) = mask.m(i, j) / s;
  }
  return a;
}

// (N, C) rows times w^T: out_i = w x_i.
inline Tensor rows_times(const Tensor& x, const Tensor& w) { return matmul(x, transpose(w)); }

// Left-multiplies every slice: out_i = psi_i e_i, psi (N, L', L), e (N, L, R).
inline Tensor left_multiply(const Tensor& psi, const Tensor& e) { return bmm(psi, e); }

// out_i = u e_i for a shared u (L', L).
inline Tensor shared_left(const Tensor& u, const Tensor& e) {
  const std::size_t n = e.dim(0), l = e.dim(1), r = e.dim(2);
  const std::size_t lo = u.dim(0);
  Tensor out({n, lo, r});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < lo; ++a)
      for (std::size_t b = 0; b < l; ++b) {
        const double w = u(a, b);
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < r; ++c) out(i, a, c) += w * e(i, b, c);
      }
  return out;
}

// out_i = sum_j a_ij v_j for (N, ...) stacked v.
inline Tensor mix(const Tensor& a, const Tensor& v) {
  const std::size_t n = v.dim(0);
  const std::size_t per = v.size() / n;
  return matmul(a, v.reshape({n, per})).reshape(v.shape());
}

inline void check_shapes(const Tensor& x, const Tensor& e, const AttnMask& m, std::size_t layer) {
  const std::size_t n = m.size();
  if (x.rank() != 2 || x.dim(0) != n || x.dim(1) != ConstructedNet::kC[layer - 1] || e.rank() != 3 ||
      e.dim(0) != n || e.dim(1) != ConstructedNet::kL[layer - 1]) {
    throw DimensionError("nc1 layer " + std::to_string(layer) + ": unexpected input shapes " + shape_str(x.shape()) +
                         ", " + shape_str(e.shape()));
  }
}

}  // namespace detail

/// Layer 1. Tokens: identity mixer (W_V = 0 plus residual) and identity FFN.
/// Positions: no cross-token term; psi(x) = [[x^T, 0], [0, 0], [0, I6]].
inline Nc1LayerOut layer1(const ConstructedNet&, const Tensor& x, const Tensor& e, const AttnMask& mask) {
  detail::check_shapes(x, e, mask, 1);
  const std::size_t n = x.dim(0), C = kVocab;
  Tensor psi({n, 8, C + kR});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < C; ++k) psi(i, 0, k) = x(i, k);
    for (std::size_t k = 0; k < kR; ++k) psi(i, 2 + k, C + k) = 1.0;
  }
  return {x, detail::left_multiply(psi, e), {}};
}

/// Layer 2. Tokens: identity mixer, FFN prepends a zero channel.
/// Positions: B = (I + M' . E_q E_k^T)^{-1} with M' the mask off its
/// diagonal, value U_V moving row 1 into row 2, residual; then
/// psi(x) = [(Xi^T x)_k d2^T ; d3^T..d8^T].
inline Nc1LayerOut layer2(const ConstructedNet& net, const Tensor& x, const Tensor& e, const AttnMask& mask) {
  detail::check_shapes(x, e, mask, 2);
  const std::size_t n = x.dim(0);
  // FFN: w2 relu(w1 x), no residual (the width changes).
  Tensor h = detail::rows_times(x, net.ffn2_w1);
  for (double& v : h.data_mut()) v = std::max(v, 0.0);
  Tensor x2 = detail::rows_times(h, net.ffn2_w2);

  const Tensor q = detail::shared_left(net.uq2, e).reshape({n, kR});
  const Tensor k = detail::shared_left(net.uk2, e).reshape({n, kR});
  Tensor a = matmul(q, transpose(k));
  bool lower = true;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || mask.m(i, j) == 0.0) a(i, j) = 0.0;
      if (i == j) a(i, j) = 1.0;
      if (j > i && a(i, j) != 0.0) lower = false;
    }
  const Tensor v = detail::shared_left(net.uv2, e);
  const Tensor rhs = v.reshape({n, 8 * kR});
  const Tensor mixed = (lower ? unit_lower_solve(a, rhs) : lu_solve(a, rhs)).reshape({n, 8, kR});
  const Tensor et = add(mixed, e);

  const Tensor s = detail::rows_times(x, transpose(net.xi));  // (N, 6) = Xi^T x_i
  Tensor psi({n, 12, 8});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < kR; ++r) psi(i, r, 1) = s(i, r);
    for (std::size_t r = 0; r < kR; ++r) psi(i, kR + r, 2 + r) = 1.0;
  }
  return {std::move(x2), detail::left_multiply(psi, et), {}};
}

/// Layer 3. Tokens: neighbourhood mean (W_Q = W_K = 0) with value W_V and
/// residual; identity FFN. Positions: the same mean weights, U_V = I, no
/// residual; then psi(x) = [-(x_1)^{-1} I6 | I6].
inline Nc1LayerOut layer3(const ConstructedNet& net, const Tensor& x, const Tensor& e, const AttnMask& mask) {
  detail::check_shapes(x, e, mask, 3);
  const std::size_t n = x.dim(0);
  const Tensor a = detail::mask_mean_weights(mask);
  Tensor xt = add(detail::mix(a, detail::rows_times(x, net.wv3)), x);
  const Tensor et = detail::mix(a, detail::shared_left(net.uv3, e));
  Tensor psi({n, kR, 2 * kR});
  for (std::size_t i = 0; i < n; ++i) {
    const double inv = -1.0 / xt(i, 0);
    for (std::size_t r = 0; r < kR; ++r) {
      psi(i, r, r) = inv;
      psi(i, r, kR + r) = 1.0;
    }
  }
  Tensor e3 = detail::left_multiply(psi, et);
  require_finite(e3, "nc1 layer 3");
  return {std::move(xt), std::move(e3), {}};
}

/// Layer 4. Attention with phi(e_i, e_j) = e_j e_i^T, value W_V and
/// residual; head hard_sigmoid(-x_1). Positions pass through.
inline Nc1LayerOut layer4(const ConstructedNet& net, const Tensor& x, const Tensor& e, const AttnMask& mask,
                          Tensor* pre_score = nullptr) {
  detail::check_shapes(x, e, mask, 4);
  const std::size_t n = x.dim(0);
  const Tensor q = detail::rows_times(x, net.wq4);  // (N, 6)
  const Tensor k = detail::rows_times(x, net.wk4);
  // e_i^T k_j and e_j^T q_i: logit_ij = (e_j^T q_i) . (e_i^T k_j)
  Tensor logits({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < kR; ++c) {
        double ek = 0.0, eq = 0.0;
        for (std::size_t a = 0; a < kR; ++a) {
          ek += e(i, a, c) * k(j, a);
          eq += e(j, a, c) * q(i, a);
        }
        acc += eq * ek;
      }
      logits(i, j) = acc;
    }
  const Tensor attn = masked_softmax(logits, mask.m, 1);
  const Tensor xt = add(detail::mix(attn, detail::rows_times(x, net.wv4)), x);
  Tensor h = detail::rows_times(xt, net.head_w1);  // (N, 1)
  if (pre_score) *pre_score = h;
  for (double& v : h.data_mut()) v = detail::hard_sigmoid(v);
  require_finite(h, "nc1 layer 4");
  return {std::move(h), e, std::move(logits)};
}

/// Embedding: one-hot tokens and E0_i = [Xi; I6] for every position.
inline std::pair<Tensor, Tensor> embed(const ConstructedNet& net, const WordProblemInstance& inst) {
  inst.validate();
  const std::size_t n = inst.size();
  Tensor x({n, kVocab});
  Tensor e({n, kVocab + kR, kR});
  for (std::size_t i = 0; i < n; ++i) {
    x(i, inst.u[i] - 1) = 1.0;
    for (std::size_t a = 0; a < kVocab; ++a)
      for (std::size_t c = 0; c < kR; ++c) e(i, a, c) = net.xi(a, c);
    for (std::size_t c = 0; c < kR; ++c) e(i, kVocab + c, c) = 1.0;
  }
  return {std::move(x), std::move(e)};
}

struct RunResult {
  std::vector<double> scores;     // hard-sigmoid outputs in [0, 1]
  std::vector<double> pre_score;  // -x_1 before the hard sigmoid
  std::vector<double> bos_logit;  // layer-4 logit against position 1
  std::vector<int> decisions;
  std::vector<Nc1LayerOut> layers;  // outputs of layers 1..4
};

inline constexpr double kDecisionEps = 1e-9;

inline RunResult run_construction(const ConstructedNet& net, const WordProblemInstance& inst, double eps = kDecisionEps) {
  auto [x, e] = embed(net, inst);
  const AttnMask mask = AttnMask::causal(inst.size());
  RunResult res;
  res.layers.push_back(layer1(net, x, e, mask));
  res.layers.push_back(layer2(net, res.layers[0].x, res.layers[0].e, mask));
  res.layers.push_back(layer3(net, res.layers[1].x, res.layers[1].e, mask));
  Tensor pre;
  res.layers.push_back(layer4(net, res.layers[2].x, res.layers[2].e, mask, &pre));
  const std::size_t n = inst.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double s = res.layers[3].x(i, 0);
    res.scores.push_back(s);
    res.pre_score.push_back(pre(i, 0));
    res.bos_logit.push_back(res.layers[3].logits(i, 0));
    res.decisions.push_back(s > eps ? 1 : 0);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  std::size_t n = 0;
  std::size_t instances = 0;
  std::size_t instances_correct = 0;
  std::size_t positions = 0;
  std::size_t positions_correct = 0;
  double min_identity_score = std::numeric_limits<double>::infinity();
  double max_nonidentity_score = 0.0;
  // min over identity positions i of pre_score * i: stays bounded away from
  // 0 when the margin decays like 1/i.
  double min_scaled_margin = std::numeric_limits<double>::infinity();
  std::uint64_t first_bad_seed = 0;
  bool has_bad = false;

  double instance_accuracy() const { return instances ? double(instances_correct) / double(instances) : 0.0; }
  double position_accuracy() const { return positions ? double(positions_correct) / double(positions) : 0.0; }
  bool perfect() const { return instances > 0 && instances_correct == instances; }
};

inline std::uint64_t instance_seed(std::uint64_t seed, std::size_t n, std::size_t k) {
  return seed * 1000003ull + n * 7919ull + k;
}

inline SweepRow sweep_length(const ConstructedNet& net, std::size_t n, std::size_t instances, std::uint64_t seed) {
  SweepRow row;
  row.n = n;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::uint64_t s = instance_seed(seed, n, k);
    Rng rng(s);
    const auto li = gen_word_problem(n, rng);
    const auto res = run_construction(net, li.instance);
    bool all = true;
    for (std::size_t i = 0; i < n; ++i) {
      const bool ok = res.decisions[i] == li.labels[i];
      all = all && ok;
      row.positions_correct += ok;
      if (li.labels[i]) {
        row.min_identity_score = std::min(row.min_identity_score, res.scores[i]);
        row.min_scaled_margin = std::min(row.min_scaled_margin, res.pre_score[i] * double(i + 1));
      } else {
        row.max_nonidentity_score = std::max(row.max_nonidentity_score, res.scores[i]);
      }
    }
    row.positions += n;
    row.instances += 1;
    row.instances_correct += all;
    if (!all && !row.has_bad) {
      row.has_bad = true;
      row.first_bad_seed = s;
    }
  }
  return row;
}

/// Lengths 8, 16, ..., up to max_n.
inline std::vector<std::size_t> doubling_lengths(std::size_t lo, std::size_t max_n) {
  std::vector<std::size_t> out;
  for (std::size_t n = lo; n <= max_n; n *= 2) out.push_back(n);
  return out;
}

struct SweepReport {
  std::vector<SweepRow> rows;

  std::optional<std::size_t> first_failing_n() const {
    for (const auto& r : rows)
      if (!r.perfect()) return r.n;
    return std::nullopt;
  }
  bool pass() const { return !rows.empty() && !first_failing_n(); }
};

inline SweepReport precision_sweep(const ConstructedNet& net, const std::vector<std::size_t>& lengths,
                                   std::size_t instances, std::uint64_t seed) {
  SweepReport rep;
  for (std::size_t n : lengths) rep.rows.push_back(sweep_length(net, n, instances, seed));
  return rep;
}

}  // namespace tape::nc1
