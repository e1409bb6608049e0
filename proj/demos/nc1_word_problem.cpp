// The hand-built four-layer network that decides the S5 word problem.
//
// Usage: demo_nc1_word_problem [N] [seed]
//
// Draws one random transposition sequence of length N, runs it through the
// construction and prints, per prefix, the composed permutation, the
// oracle's identity label, the network's score and its decision. Ends with a
// short accuracy sweep.

#include <cstdio>
#include <cstdlib>
#include <string>

#include "tape/nc1/nc1.hpp"

using namespace tape;
using namespace tape::nc1;

int main(int argc, char** argv) {
  const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 16;
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 3;
  if (n == 0) {
    std::fprintf(stderr, "N must be >= 1\n");
    return 2;
  }

  Rng r(seed);
  const auto li = gen_word_problem(n, r);
  const auto net = build_construction();
  const auto res = run_construction(net, li.instance);
  const auto& table = SwapTable::canonical();

  std::printf("pos  token     permutation  label  score      decision\n");
  std::array<int, 5> perm = {1, 2, 3, 4, 5};
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int u = li.instance.u[i];
    std::string tok = "BOS";
    if (u != kBos) {
      const auto s = table.at(u);
      std::swap(perm[s.src - 1], perm[s.dst - 1]);
      tok = "(" + std::to_string(s.src) + " " + std::to_string(s.dst) + ")";
    }
    std::string p;
    for (int v : perm) p += std::to_string(v);
    agree += res.decisions[i] == li.labels[i];
    std::printf("%3zu  %-8s  %-11s  %5d  %.3e  %d%s\n", i + 1, tok.c_str(), p.c_str(), li.labels[i], res.scores[i],
                res.decisions[i], res.decisions[i] == li.labels[i] ? "" : "  <-- mismatch");
  }
  std::printf("agreement %zu/%zu\n\n", agree, n);

  std::printf("     N  instances  accuracy  min identity score\n");
  const auto sweep = precision_sweep(net, doubling_lengths(8, 256), 50, seed);
  for (const auto& row : sweep.rows)
    std::printf("%6zu  %9zu  %8.4f  %.3e\n", row.n, row.instances, row.position_accuracy(), row.min_identity_score);
  return sweep.pass() && agree == n ? 0 : 1;
}
