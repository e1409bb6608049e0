#pragma once

// Greedy decoding, exact-match accuracy grids, and word-problem token streams.

#include <optional>
#include <ostream>

#include "tape/nc1/nc1.hpp"
#include "tape/tasks/train.hpp"

namespace tape::tasks {

/// Greedy continuation of equal-length prompts until every row has emitted
/// EOS or `max_new` tokens were produced. Returns the generated ids per row,
/// EOS included when produced.
inline std::vector<std::vector<std::size_t>> greedy_decode(Weights& w, const ModelConfig& c,
                                                           const std::vector<std::vector<std::size_t>>& prompts,
                                                           std::size_t max_new) {
  const std::size_t rows = prompts.size();
  std::vector<std::vector<std::size_t>> out(rows);
  if (rows == 0) return out;
  const std::size_t plen = prompts[0].size();
  for (const auto& p : prompts)
    if (p.size() != plen) throw ContractError("greedy_decode: prompts must share one length");
  std::vector<std::vector<std::size_t>> seq = prompts;
  std::vector<bool> done(rows, false);
  for (std::size_t step = 0; step < max_new; ++step) {
    model::TokenBatch b;
    b.rows = rows;
    b.cols = plen + step;
    for (const auto& s : seq) b.ids.insert(b.ids.end(), s.begin(), s.end());
    const Tensor lg = model::logits(w, c, b);
    const std::size_t V = c.vocab;
    bool all = true;
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < V; ++v)
        if (lg(r, b.cols - 1, v) > lg(r, b.cols - 1, best)) best = v;
      seq[r].push_back(best);
      if (!done[r]) {
        out[r].push_back(best);
        done[r] = best == kEos;
      }
      all = all && done[r];
    }
    if (all) break;
  }
  return out;
}

/// Exact match: the generated tokens equal the target (answer digits + EOS).
inline bool exact_match(const std::vector<std::size_t>& generated, const std::vector<std::size_t>& target) {
  return generated == target;
}

/// Accuracy per (len_a, len_b), both 1-based up to `max_len`.
struct AccuracyGrid {
  std::size_t max_len = 0;
  std::size_t train_max_len = 0;  // boundary of the training region
  std::size_t samples_per_cell = 0;
  Tensor acc;  // (max_len, max_len), acc(la-1, lb-1)

  double at(std::size_t la, std::size_t lb) const { return acc(la - 1, lb - 1); }

  /// Unweighted mean over all cells.
  double mean() const { return region_mean(1, max_len); }

  /// Mean over cells with max(la, lb) in [lo, hi].
  double region_mean(std::size_t lo, std::size_t hi) const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t a = 1; a <= max_len; ++a)
      for (std::size_t b = 1; b <= max_len; ++b) {
        const std::size_t m = std::max(a, b);
        if (m < lo || m > hi) continue;
        s += at(a, b);
        ++n;
      }
    return n ? s / double(n) : 0.0;
  }

  double in_distribution_mean() const { return region_mean(1, train_max_len); }
  double extrapolation_mean() const { return region_mean(train_max_len + 1, max_len); }
};

struct EvalOptions {
  std::size_t max_len = 15;
  std::size_t train_max_len = 10;
  std::size_t samples_per_cell = 20;
  std::uint64_t seed = 1;
  DigitOrder order = DigitOrder::Lsd;
};

/// Greedy exact-match grid. Cell (la, lb) draws its samples from
/// Rng(seed, la * 1000 + lb), so cells are independent of evaluation order.
inline AccuracyGrid evaluate_grid(Weights& w, const ModelConfig& c, const EvalOptions& o) {
  if (o.samples_per_cell == 0) throw ConfigError("samples_per_cell must be >= 1");
  if (o.max_len == 0) throw ConfigError("eval max_len must be >= 1");
  AccuracyGrid g{o.max_len, o.train_max_len, o.samples_per_cell, Tensor({o.max_len, o.max_len})};
  for (std::size_t la = 1; la <= o.max_len; ++la)
    for (std::size_t lb = 1; lb <= o.max_len; ++lb) {
      Rng r(o.seed, la * 1000 + lb);
      std::vector<std::vector<std::size_t>> prompts, targets;
      for (std::size_t k = 0; k < o.samples_per_cell; ++k) {
        const Encoded e = tokenize(sample_with_lengths(la, lb, r), o.order);
        prompts.push_back(e.prompt());
        targets.push_back(e.target());
      }
      const std::size_t max_new = std::max(la, lb) + 2;
      if (prompts[0].size() + max_new - 1 > c.N) {
        throw ContextError("cell (" + std::to_string(la) + "," + std::to_string(lb) + ") exceeds the model context");
      }
      const auto gen = greedy_decode(w, c, prompts, max_new);
      std::size_t hits = 0;
      for (std::size_t k = 0; k < gen.size(); ++k) hits += exact_match(gen[k], targets[k]);
      g.acc(la - 1, lb - 1) = double(hits) / double(o.samples_per_cell);
    }
  return g;
}

/// CSV: optional '#' comment lines, then a header row "len_a\len_b,1,..,n"
/// and one row per len_a.
inline void write_grid_csv(std::ostream& os, const AccuracyGrid& g, const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) os << "# " << c << "\n";
  os << "# train_max_len=" << g.train_max_len << ",samples_per_cell=" << g.samples_per_cell << ",mean=" << g.mean()
     << "\n";
  os << "len_a\\len_b";
  for (std::size_t b = 1; b <= g.max_len; ++b) os << "," << b;
  os << "\n";
  os.precision(6);
  for (std::size_t a = 1; a <= g.max_len; ++a) {
    os << a;
    for (std::size_t b = 1; b <= g.max_len; ++b) os << "," << g.at(a, b);
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Word problem as a labelling task

/// Token ids shifted to start at 0 (transpositions 0..9, BOS 10) and the
/// per-position identity labels.
struct WordProblemStream {
  std::vector<std::size_t> ids;
  std::vector<int> labels;
};

inline WordProblemStream gen_word_problem_lm(std::size_t n, Rng& rng) {
  const auto li = nc1::gen_word_problem(n, rng);
  WordProblemStream s;
  for (int u : li.instance.u) s.ids.push_back(static_cast<std::size_t>(u - 1));
  s.labels = li.labels;
  return s;
}

}  // namespace tape::tasks
