// Rotary attention as a special case of the tensorial encoding.
//
// With L = R = 2, identity phi and no contextualization, the block logits of
// a TAPE layer summed over blocks reproduce classical rotary attention. The
// rotary slices hold R(theta i), so the sign of theta flips between the two
// conventions. Prints the deviation for a few random instances, then shows
// that a contextualized layer changes the encoding while a zero W2 leaves it
// untouched.

#include <cstdio>

#include "tape/model/model.hpp"

using namespace tape;
using namespace tape::model;

int main() {
  ModelConfig c;
  c.N = 32;
  c.C = 32;
  c.H = 2;
  c.M = 8;
  c.depth = 1;
  c.vocab = 16;
  c.attn_path = c.mlp_path = false;

  Rng r(2024);
  const std::size_t n = 12;
  const auto pos = pe::arange_positions(n);
  std::printf("instance  max |tape - rotary|\n");
  for (int t = 0; t < 5; ++t) {
    auto w = init_weights(c, 100 + t);
    auto& b = w.blocks[0];
    const Tensor x = r.normal_tensor({1, n, c.C});
    const auto e = pe::rope_init(pos, c.H, pe::RopeSchedule::standard(c.M, c.rope_base, c.theta_sign));
    ad::Graph g;
    g.set_recording(false);
    const auto bw = bind_block(g, b, c, false);
    const Tensor a = block_logits(g.constant(x), g.constant(batch_pe(e, 1)), bw, c).value();
    const Tensor tape_logits = sum_axis(a, 2).reshape({c.H, n, n});
    const Tensor rotary = rope_attention_baseline(x.reshape({n, c.C}), b.wq, b.wk,
                                                  pe::RopeSchedule::standard(c.M, c.rope_base, -c.theta_sign), c.H,
                                                  pos, 1.0 / std::sqrt(2.0));
    std::printf("%8d  %.3e\n", t, max_abs_diff(tape_logits, rotary));
  }

  // Contextualization moves the encoding away from the rotary grid; a zero
  // W2 makes it an exact no-op.
  ModelConfig ctx = c;
  ctx.attn_path = ctx.mlp_path = true;
  ctx.init_std = 0.2;
  std::vector<std::size_t> toks(n);
  for (auto& id : toks) id = r.uniform_int(c.vocab);
  const auto batch = TokenBatch::single(toks);
  auto w_ctx = init_weights(ctx, 7);
  auto w_zero = w_ctx;
  zero_w2(w_zero);
  const ModelConfig plain = without_contextualization(ctx);
  std::vector<Tensor> tr_plain, tr_ctx, tr_zero;
  const Tensor l_plain = logits(w_zero, plain, batch, {}, &tr_plain);
  logits(w_ctx, ctx, batch, {}, &tr_ctx);
  const Tensor l_zero = logits(w_zero, ctx, batch, {}, &tr_zero);
  std::printf("\nE after layer 1, contextualized vs rotary: %.3e\n", max_abs_diff(tr_ctx[0], tr_plain[0]));
  std::printf("E after layer 1, zero W2 vs rotary:        %.3e\n", max_abs_diff(tr_zero[0], tr_plain[0]));
  std::printf("logits, zero W2 vs rotary:                 %.3e\n", max_abs_diff(l_zero, l_plain));
  return 0;
}
