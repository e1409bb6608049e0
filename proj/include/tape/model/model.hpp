#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tape/model/config.hpp"
#include "tape/numcore/autodiff.hpp"
#include "tape/numcore/rng.hpp"
#include "tape/numcore/serialize.hpp"
#include "tape/posenc/posenc.hpp"

namespace tape::model {

using ad::Graph;
using ad::Var;

/// N x N binary mask; row i marks the keys token i may attend to.
struct AttnMask {
  Tensor m;

  static AttnMask causal(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) t(i, j) = 1.0;
    return AttnMask{std::move(t)};
  }

  static AttnMask from(Tensor t) {
    if (t.rank() != 2 || t.dim(0) != t.dim(1)) throw DimensionError("mask must be square, got " + shape_str(t.shape()));
    const std::size_t n = t.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = t(i, j);
        if (v != 0.0 && v != 1.0) throw ContractError("mask entries must be 0 or 1");
        any = any || v == 1.0;
      }
      if (!any) throw DegenerateRowError("mask row " + std::to_string(i) + " has no allowed key");
    }
    return AttnMask{std::move(t)};
  }

  std::size_t size() const { return m.dim(0); }
};

// ---------------------------------------------------------------------------
// Weights

/// One block. T is Tensor for storage and Var once bound to a graph.
template <class T>
struct BlockWeights {
  T ln1_g, ln1_b, wq, wk, wv, wo;
  T ln2_g, ln2_b, ff_w1, ff_b1, ff_w2, ff_b2;
  T phi;                               // (B, L), bilinear phi only
  T psi_w1, psi_b1, psi_w2, psi_b2;    // C -> I -> I
  T pm_w1, pm_w2;                      // (H, I) shared, (H*M*L, I) full, (R, I) r-axis mutation
  T pe_proj;                           // (H*M*L*R, C), flattened-PE mutation only
};

template <class T>
struct ModelWeights {
  T embed;  // (vocab, C), tied with the output head
  std::vector<BlockWeights<T>> blocks;
  T lnf_g, lnf_b;
  T ff_freqs, ff_weights;  // fixed Fourier schedule, fourier init only
};

/// Visits every tensor of one block the config uses as f(name, field, trainable).
template <class T, class F>
void for_each_block_param(BlockWeights<T>& b, const ModelConfig& c, const std::string& p, F&& f) {
  f(p + "ln1_g", b.ln1_g, true);
  f(p + "ln1_b", b.ln1_b, true);
  f(p + "wq", b.wq, true);
  f(p + "wk", b.wk, true);
  f(p + "wv", b.wv, true);
  f(p + "wo", b.wo, true);
  f(p + "ln2_g", b.ln2_g, true);
  f(p + "ln2_b", b.ln2_b, true);
  f(p + "ff_w1", b.ff_w1, true);
  f(p + "ff_b1", b.ff_b1, true);
  f(p + "ff_w2", b.ff_w2, true);
  f(p + "ff_b2", b.ff_b2, true);
  if (c.phi == PhiMode::Bilinear) f(p + "phi", b.phi, true);
  if (c.mlp_path) {
    f(p + "psi_w1", b.psi_w1, true);
    f(p + "psi_b1", b.psi_b1, true);
    f(p + "psi_w2", b.psi_w2, true);
    f(p + "psi_b2", b.psi_b2, true);
    f(p + "pm_w1", b.pm_w1, true);
    f(p + "pm_w2", b.pm_w2, true);
  }
  if (c.mutation == Mutation::FlattenedPe) f(p + "pe_proj", b.pe_proj, true);
}

/// Visits every tensor the config uses as f(name, field, trainable), in a
/// fixed order.
template <class T, class F>
void for_each_param(ModelWeights<T>& w, const ModelConfig& c, F&& f) {
  f(std::string("embed"), w.embed, true);
  for (std::size_t l = 0; l < w.blocks.size(); ++l) {
    for_each_block_param(w.blocks[l], c, "block" + std::to_string(l) + ".", f);
  }
  f(std::string("final.ln_g"), w.lnf_g, true);
  f(std::string("final.ln_b"), w.lnf_b, true);
  if (c.pe == PeInit::Fourier) {
    f(std::string("pe.freqs"), w.ff_freqs, false);
    f(std::string("pe.weights"), w.ff_weights, false);
  }
}

using Weights = ModelWeights<Tensor>;
using BoundWeights = ModelWeights<Var>;

/// Position-MLP mixing matrix shape for the configured parameterization.
inline Shape pm_shape(const ModelConfig& c) {
  if (c.mutation == Mutation::RAxisMlp) return {c.R, c.width()};
  if (c.mlp_param == MlpParam::Full) return {c.H * c.M * c.L, c.width()};
  return {c.H, c.width()};
}

/// Gaussian init with std `init_std`; output projections scaled by
/// 1/sqrt(2 depth); LayerNorm gains 1; the final psi bias is 1 so psi starts
/// near the identity scaling.
inline Weights init_weights(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  Rng root(seed, 0x7a9e);
  const double s = c.init_std;
  const double s_out = s / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(c.depth, 1)));
  const std::size_t C = c.C, I = c.width(), F = c.ffn_mult * C;
  Weights w;
  Rng re = root.fork(0);
  w.embed = re.normal_tensor({c.vocab, C}, s);
  for (std::size_t l = 0; l < c.depth; ++l) {
    Rng r = root.fork(1 + l);
    BlockWeights<Tensor> b;
    b.ln1_g = Tensor::ones({C});
    b.ln1_b = Tensor::zeros({C});
    b.wq = r.normal_tensor({C, C}, s);
    b.wk = r.normal_tensor({C, C}, s);
    b.wv = r.normal_tensor({C, C}, s);
    b.wo = r.normal_tensor({C, C}, s_out);
    b.ln2_g = Tensor::ones({C});
    b.ln2_b = Tensor::zeros({C});
    b.ff_w1 = r.normal_tensor({C, F}, s);
    b.ff_b1 = Tensor::zeros({F});
    b.ff_w2 = r.normal_tensor({F, C}, s_out);
    b.ff_b2 = Tensor::zeros({C});
    // Rectangular identity plus noise, so logits start close to the identity-phi case.
    b.phi = r.normal_tensor({c.B(), c.L}, s);
    for (std::size_t k = 0; k < std::min(c.B(), c.L); ++k) b.phi(k, k) += 1.0;
    b.psi_w1 = r.normal_tensor({C, I}, s);
    b.psi_b1 = Tensor::zeros({I});
    b.psi_w2 = r.normal_tensor({I, I}, s);
    b.psi_b2 = Tensor::ones({I});
    const Shape pm = pm_shape(c);
    b.pm_w1 = r.normal_tensor(pm, s);
    b.pm_w2 = c.w2_zero_init ? Tensor::zeros(pm) : r.normal_tensor(pm, s);
    b.pe_proj = r.normal_tensor({c.H * c.M * c.L * c.R, C}, s);
    w.blocks.push_back(std::move(b));
  }
  w.lnf_g = Tensor::ones({C});
  w.lnf_b = Tensor::zeros({C});
  if (c.pe == PeInit::Fourier) {
    Rng rf = root.fork(1000);
    auto sched = pe::FourierSchedule::sample(c.M, c.L, c.R, rf, c.fourier_freq_std);
    w.ff_freqs = std::move(sched.freqs);
    w.ff_weights = std::move(sched.weights);
  }
  return w;
}

/// Zeroes every pm_w2, the zero-init contract for parameter-efficient fine-tuning.
inline void zero_w2(Weights& w) {
  for (auto& b : w.blocks)
    if (b.pm_w2.size()) b.pm_w2 = Tensor::zeros(b.pm_w2.shape());
}

inline std::size_t count_params(const ModelConfig& c) {
  Weights w = init_weights(c, 0);
  std::size_t n = 0;
  for_each_param(w, c, [&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) n += t.size();
  });
  return n;
}

/// Parameters that exist only because E is contextualized: the position MLP
/// (W1, W2 and psi) and the bilinear phi. Closed form, per layer:
/// 2 |W| + (C I + I + I I + I) [+ B L].
inline std::size_t contextualization_params(const ModelConfig& c) {
  std::size_t per = 0;
  if (c.mlp_path) {
    const Shape pm = pm_shape(c);
    const std::size_t I = c.width();
    per += 2 * pm[0] * pm[1] + c.C * I + I + I * I + I;
  }
  if (c.phi == PhiMode::Bilinear) per += c.B() * c.L;
  return per * c.depth;
}

/// The same architecture with contextualization switched off (E threaded unchanged).
inline ModelConfig without_contextualization(ModelConfig c) {
  c.attn_path = false;
  c.mlp_path = false;
  return c;
}

inline BoundWeights bind(Graph& g, Weights& w, const ModelConfig& c, bool requires_grad) {
  BoundWeights out;
  out.blocks.resize(w.blocks.size());
  std::vector<Var*> dst;
  for_each_param(out, c, [&](const std::string&, Var& v, bool) { dst.push_back(&v); });
  std::size_t k = 0;
  for_each_param(w, c, [&](const std::string&, Tensor& t, bool trainable) {
    *dst[k++] = g.leaf(t, requires_grad && trainable);
  });
  return out;
}

/// Binds one block's tensors into `g`.
inline BlockWeights<Var> bind_block(Graph& g, BlockWeights<Tensor>& b, const ModelConfig& c, bool requires_grad) {
  BlockWeights<Var> out;
  std::vector<Var*> dst;
  for_each_block_param(out, c, "", [&](const std::string&, Var& v, bool) { dst.push_back(&v); });
  std::size_t k = 0;
  for_each_block_param(b, c, "", [&](const std::string&, Tensor& t, bool trainable) {
    *dst[k++] = g.leaf(t, requires_grad && trainable);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline io::Archive to_archive(Weights& w, const ModelConfig& c, const std::string& extra_header = "") {
  io::Archive ar;
  ar.header = serialize_kv(to_kv(c)) + extra_header;
  for_each_param(w, c, [&](const std::string& name, Tensor& t, bool) { ar.entries[name] = t; });
  return ar;
}

/// Rebuilds weights from an archive whose header holds the model config.
/// Header lines outside "model.*" are returned in `rest`.
inline Weights from_archive(const io::Archive& ar, ModelConfig& c, std::string* rest = nullptr) {
  const auto kv = parse_kv_text(ar.header);
  c = ModelConfig{};
  std::string other;
  for (const auto& [k, v] : kv) {
    if (!apply_kv(c, k, v)) other += k + "=" + v + "\n";
  }
  c.validate();
  if (rest) *rest = other;
  Weights w = init_weights(c, 0);
  for_each_param(w, c, [&](const std::string& name, Tensor& t, bool) {
    const Tensor& src = ar.at(name);
    if (src.shape() != t.shape()) {
      throw FileError("checkpoint entry " + name + " has shape " + shape_str(src.shape()) + ", expected " +
                      shape_str(t.shape()));
    }
    t = src;
  });
  return w;
}

// ---------------------------------------------------------------------------
// Layers. Shapes: X (Bt, N, C), E (Bt, N, H, M, L, R), logits (Bt, H, M, N, N).

inline void require_e_shape(Var e, const ModelConfig& c, std::size_t bt, std::size_t n, const char* op) {
  if (e.shape() != Shape{bt, n, c.H, c.M, c.L, c.R}) {
    throw DimensionError(std::string(op) + ": E has shape " + shape_str(e.shape()) + ", expected " +
                         shape_str({bt, n, c.H, c.M, c.L, c.R}));
  }
}

/// alpha[b,h,m,i,j] = (W_Q x_i)_m^T phi(e_im e_jm^T) (W_K x_j)_m / sqrt(B), with
/// phi(G) = P G P^T for bilinear phi and phi(G) = G for identity phi.
/// `h` is the (already normalized) feature input.
inline Var block_logits(Var h, Var e, const BlockWeights<Var>& w, const ModelConfig& c) {
  if (c.phi == PhiMode::Identity && c.B() != c.L) throw ConfigError("identity phi needs B == L");
  const std::size_t bt = h.dim(0), n = h.dim(1);
  require_e_shape(e, c, bt, n, "block_logits");
  auto project = [&](Var wt) {
    Var q = ad::reshape(ad::linear(h, wt), {bt, n, c.H, c.M, c.B()});
    if (c.phi == PhiMode::Bilinear) q = ad::linear(q, w.phi);
    return ad::permute(ad::vecmat(q, e), {0, 2, 3, 1, 4});
  };
  const Var q = project(w.wq);
  const Var k = project(w.wk);
  return ad::scale(ad::bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(c.B())));
}

/// Sums the block logits over m (scaled per `mix_scale`), softmaxes over
/// keys, mixes W_V h and adds the W_O projection to the residual stream x.
inline Var token_mix(Var x, Var h, Var alpha, const AttnMask& mask, const BlockWeights<Var>& w,
                     const ModelConfig& c) {
  const std::size_t bt = x.dim(0), n = x.dim(1), hd = c.head_dim();
  Var s = ad::sum_axis(alpha, 2);
  if (c.mix_scale == MixScale::Head && c.M > 1) s = ad::scale(s, 1.0 / std::sqrt(static_cast<double>(c.M)));
  const Var a = ad::masked_softmax(s, mask.m);
  const Var v = ad::permute(ad::reshape(ad::linear(h, w.wv), {bt, n, c.H, hd}), {0, 2, 1, 3});
  const Var o = ad::reshape(ad::permute(ad::bmm(a, v), {0, 2, 1, 3}), {bt, n, c.C});
  return ad::add(x, ad::linear(o, w.wo));
}

/// e~_{i,m} = sum_j softmax_j(alpha_{i,j,m}) e_{j,m}, per head and block.
inline Var position_attend(Var alpha, Var e, const AttnMask& mask) {
  const Shape& es = e.shape();
  const Shape& as = alpha.shape();
  if (es.size() != 6 || as.size() != 5 || as[0] != es[0] || as[1] != es[2] || as[2] != es[3] ||
      as[3] != es[1] || as[4] != es[1]) {
    throw ContractError("position_attend: logits " + shape_str(as) + " were not computed for E " + shape_str(es));
  }
  const std::size_t bt = es[0], n = es[1], H = es[2], M = es[3], L = es[4], R = es[5];
  const Var a = ad::masked_softmax(alpha, mask.m);
  const Var ep = ad::reshape(ad::permute(e, {0, 2, 3, 1, 4, 5}), {bt, H, M, n, L * R});
  const Var mixed = ad::reshape(ad::bmm(a, ep), {bt, H, M, n, L, R});
  return ad::permute(mixed, {0, 3, 1, 2, 4, 5});
}

/// psi(x~): the I-vector whose diagonal scales the position MLP.
inline Var psi(Var xt, const BlockWeights<Var>& w) {
  const Var hidden = ad::gelu(ad::add(ad::linear(xt, w.psi_w1), w.psi_b1));
  return ad::add(ad::linear(hidden, w.psi_w2), w.psi_b2);
}

/// U(e~) = W2 diag(psi(x~)) W1^T flatten(e~), acting from the left on the
/// flattened (H, M, L) axes: on H only, channel-wise in (M, L), for the shared
/// parameterization, on all of H*M*L for the full one. The r-axis mutation
/// acts on R from the right instead. Returns `e_res + U(e~)`.
inline Var position_mlp(Var xt, Var et, Var e_res, const BlockWeights<Var>& w, const ModelConfig& c) {
  const Shape es = et.shape();
  const std::size_t bt = es[0], n = es[1];
  const std::size_t I = c.width();
  if (w.pm_w1.shape() != pm_shape(c) || w.pm_w2.shape() != pm_shape(c)) {
    throw ConfigError("position_mlp: weights " + shape_str(w.pm_w1.shape()) + " do not match the configured " +
                      "parameterization " + shape_str(pm_shape(c)));
  }
  const Var p = psi(xt, w);
  Var u;
  if (c.mutation == Mutation::RAxisMlp) {
    const Var er = ad::reshape(et, {bt * n, c.H * c.M * c.L, c.R});
    const Var t = ad::mul(ad::bmm(er, w.pm_w1), ad::reshape(p, {bt * n, 1, I}));
    u = ad::bmm(t, w.pm_w2, false, true);
  } else {
    const Shape flat = c.mlp_param == MlpParam::Shared ? Shape{bt * n, c.H, c.M * c.L * c.R}
                                                       : Shape{bt * n, c.H * c.M * c.L, c.R};
    const Var er = ad::reshape(et, flat);
    const Var t = ad::mul(ad::bmm(w.pm_w1, er, true, false), ad::reshape(p, {bt * n, I, 1}));
    u = ad::bmm(w.pm_w2, t);
  }
  return ad::add(e_res, ad::reshape(u, es));
}

struct BlockOut {
  Var x, e, alpha;
};

/// One TAPE layer: pre-norm token mixing and FFN for X, position attention and
/// position MLP for E.
inline BlockOut tape_block(Var x, Var e, const AttnMask& mask, const BlockWeights<Var>& w, const ModelConfig& c) {
  const std::size_t bt = x.dim(0), n = x.dim(1);
  require_e_shape(e, c, bt, n, "tape_block");
  if (mask.size() != n) throw DimensionError("tape_block: mask size does not match sequence length");
  if (c.mutation == Mutation::FlattenedPe) {
    x = ad::add(x, ad::linear(ad::reshape(e, {bt, n, c.H * c.M * c.L * c.R}), w.pe_proj));
  }
  const Var h = ad::layer_norm(x, w.ln1_g, w.ln1_b);
  const Var alpha = block_logits(h, e, w, c);
  const Var x1 = token_mix(x, h, alpha, mask, w, c);
  const Var xt = ad::layer_norm(x1, w.ln2_g, w.ln2_b);
  const Var ff = ad::linear(ad::gelu(ad::add(ad::linear(xt, w.ff_w1), w.ff_b1)), w.ff_w2);
  const Var x2 = ad::add(x1, ad::add(ff, w.ff_b2));
  const Var et = c.attn_path ? position_attend(alpha, e, mask) : e;
  Var e2 = et;
  if (c.mlp_path) e2 = position_mlp(xt, et, c.e_residual == EResidual::Outer ? e : et, w, c);
  return {x2, e2, alpha};
}

struct StackOut {
  Var x, e;
  std::vector<Var> e_trace;  // E after each layer
};

inline StackOut stack_forward(Var x, Var e, const AttnMask& mask, const BoundWeights& w, const ModelConfig& c) {
  StackOut out{x, e, {}};
  for (const auto& b : w.blocks) {
    const BlockOut r = tape_block(out.x, out.e, mask, b, c);
    out.x = r.x;
    out.e = r.e;
    out.e_trace.push_back(r.e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full model

struct TokenBatch {
  std::size_t rows = 0, cols = 0;
  std::vector<std::size_t> ids;  // row-major (rows, cols)

  static TokenBatch single(std::vector<std::size_t> seq) {
    TokenBatch b;
    b.rows = 1;
    b.cols = seq.size();
    b.ids = std::move(seq);
    return b;
  }
};

/// Initial positional encoding for the given positions, shape (N, H, M, L, R).
inline pe::PosTensor initial_pe(const Weights& w, const ModelConfig& c, const std::vector<double>& positions) {
  if (c.pe == PeInit::Rope) {
    return pe::rope_init(positions, c.H, pe::RopeSchedule::standard(c.M, c.rope_base, c.theta_sign));
  }
  pe::FourierSchedule s{w.ff_freqs, w.ff_weights};
  return pe::fourier_init(positions, c.H, s);
}

inline pe::Schedule schedule_of(const Weights& w, const ModelConfig& c) {
  if (c.pe == PeInit::Rope) return pe::RopeSchedule::standard(c.M, c.rope_base, c.theta_sign);
  return pe::FourierSchedule{w.ff_freqs, w.ff_weights};
}

/// Broadcasts a (N, H, M, L, R) encoding over a batch of `rows`.
inline Tensor batch_pe(const pe::PosTensor& e, std::size_t rows) {
  return expand_axis(e.values, 0, rows);
}

struct ForwardOut {
  Var logits;  // (rows, cols, vocab)
  std::vector<Var> e_trace;
};

/// embed -> depth x tape_block -> final LayerNorm -> tied head. `positions`
/// defaults to 0..cols-1; `mask` defaults to causal.
inline ForwardOut model_forward(Graph& g, const BoundWeights& w, const Weights& raw, const ModelConfig& c,
                                const TokenBatch& tokens, std::vector<double> positions = {},
                                const AttnMask* mask = nullptr) {
  if (tokens.cols == 0 || tokens.rows == 0) throw DimensionError("model_forward: empty batch");
  if (tokens.cols > c.N) {
    throw ContextError("input of length " + std::to_string(tokens.cols) + " exceeds context " + std::to_string(c.N));
  }
  if (tokens.ids.size() != tokens.rows * tokens.cols) throw DimensionError("model_forward: ragged token batch");
  for (std::size_t id : tokens.ids)
    if (id >= c.vocab) throw ContractError("token id " + std::to_string(id) + " out of vocabulary");
  if (positions.empty()) positions = pe::arange_positions(tokens.cols);
  if (positions.size() != tokens.cols) throw DimensionError("model_forward: positions do not match input length");
  const AttnMask causal = mask ? AttnMask{} : AttnMask::causal(tokens.cols);
  const AttnMask& m = mask ? *mask : causal;

  Var x = ad::gather_rows(w.embed, tokens.ids, {tokens.rows, tokens.cols});
  Var e = g.constant(batch_pe(initial_pe(raw, c, positions), tokens.rows));
  const StackOut s = stack_forward(x, e, m, w, c);
  const Var out = ad::linear(ad::layer_norm(s.x, w.lnf_g, w.lnf_b), w.embed, true);
  return {out, s.e_trace};
}

/// Inference-only forward; returns logits (rows, cols, vocab).
inline Tensor logits(Weights& w, const ModelConfig& c, const TokenBatch& tokens, std::vector<double> positions = {},
                     std::vector<Tensor>* e_trace = nullptr) {
  Graph g;
  g.set_recording(false);
  const BoundWeights bw = bind(g, w, c, false);
  const ForwardOut f = model_forward(g, bw, w, c, tokens, std::move(positions));
  if (e_trace) {
    e_trace->clear();
    for (const Var& v : f.e_trace) e_trace->push_back(v.value());
  }
  return f.logits.value();
}

// ---------------------------------------------------------------------------
// Classical rotary attention

/// Per-head rotary logits (H, N, N): for each 2-channel pair m of head h,
/// (R(theta_m p_i) q_im)^T (R(theta_m p_j) k_jm), summed over m and scaled by
/// `scale` (default 1/sqrt(head dim)). q = X W_Q, k = X W_K with X (N, C);
/// pair m of head h occupies channels h*2M + 2m, h*2M + 2m + 1.
inline Tensor rope_attention_baseline(const Tensor& X, const Tensor& Wq, const Tensor& Wk,
                                      const pe::RopeSchedule& s, std::size_t H,
                                      const std::vector<double>& positions, double scale = 0.0) {
  const std::size_t n = X.dim(0), C = X.dim(1), M = s.thetas.size();
  if (C != H * 2 * M) throw DimensionError("rope_attention_baseline: C must equal H * 2M");
  if (positions.size() != n) throw DimensionError("rope_attention_baseline: positions do not match X");
  if (scale == 0.0) scale = 1.0 / std::sqrt(static_cast<double>(2 * M));
  auto rotate = [&](Tensor t) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t m = 0; m < M; ++m) {
          const double a = s.thetas[m] * positions[i];
          const double cs = std::cos(a), sn = std::sin(a);
          const std::size_t ch = h * 2 * M + 2 * m;
          const double u = t(i, ch), v = t(i, ch + 1);
          t(i, ch) = cs * u - sn * v;
          t(i, ch + 1) = sn * u + cs * v;
        }
    return t;
  };
  const Tensor q = rotate(matmul(X, Wq));
  const Tensor k = rotate(matmul(X, Wk));
  Tensor out({H, n, n});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t ch = h * 2 * M; ch < (h + 1) * 2 * M; ++ch) acc += q(i, ch) * k(j, ch);
        out(h, i, j) = acc * scale;
      }
  return out;
}

}  // namespace tape::model
