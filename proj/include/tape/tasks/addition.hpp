#pragma once

// Multi-digit addition: sample generation, token layout and batching.

#include <algorithm>
#include <string>
#include <vector>

#include "tape/model/model.hpp"
#include "tape/numcore/serialize.hpp"

namespace tape::tasks {

// Token ids. Digits map to themselves.
inline constexpr std::size_t kPlus = 10;
inline constexpr std::size_t kEq = 11;
inline constexpr std::size_t kBosTok = 12;
inline constexpr std::size_t kEos = 13;
inline constexpr std::size_t kPad = 14;
inline constexpr std::size_t kAdditionVocab = 15;

enum class DigitOrder { Lsd, Msd };

inline const char* to_string(DigitOrder o) { return o == DigitOrder::Lsd ? "lsd" : "msd"; }

inline DigitOrder parse_digit_order(const std::string& s) {
  if (s == "lsd") return DigitOrder::Lsd;
  if (s == "msd") return DigitOrder::Msd;
  throw ConfigError("bad digit order '" + s + "'");
}

/// Operands and sum as ordinary (most significant first) digit strings.
struct AdditionSample {
  std::string a, b;

  std::size_t len_a() const { return a.size(); }
  std::size_t len_b() const { return b.size(); }

  std::string sum() const {
    std::string out;
    int carry = 0;
    for (std::size_t k = 0; k < std::max(a.size(), b.size()); ++k) {
      const int da = k < a.size() ? a[a.size() - 1 - k] - '0' : 0;
      const int db = k < b.size() ? b[b.size() - 1 - k] - '0' : 0;
      const int s = da + db + carry;
      out.push_back(char('0' + s % 10));
      carry = s / 10;
    }
    if (carry) out.push_back('1');
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::string text() const { return a + "+" + b + "=" + sum(); }
};

/// Uniform digit string of exactly `len` digits; leading digit nonzero
/// unless len == 1.
inline std::string random_number(std::size_t len, Rng& rng) {
  std::string s;
  s.reserve(len);
  for (std::size_t k = 0; k < len; ++k) {
    const bool lead = k == 0 && len > 1;
    s.push_back(char('0' + (lead ? 1 + rng.uniform_int(9) : rng.uniform_int(10))));
  }
  return s;
}

inline AdditionSample sample_with_lengths(std::size_t la, std::size_t lb, Rng& rng) {
  return {random_number(la, rng), random_number(lb, rng)};
}

/// `count` samples with each operand length uniform in [1, max_len].
inline std::vector<AdditionSample> gen_addition(std::size_t max_len, std::size_t count, Rng& rng) {
  if (max_len == 0) throw ConfigError("gen_addition: max_len must be >= 1");
  std::vector<AdditionSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t la = 1 + rng.uniform_int(max_len);
    const std::size_t lb = 1 + rng.uniform_int(max_len);
    out.push_back(sample_with_lengths(la, lb, rng));
  }
  return out;
}

/// Token stream BOS a + b = s EOS with digits in `order`. `prompt_len`
/// counts BOS through '='; the target is the answer digits and EOS.
struct Encoded {
  std::vector<std::size_t> ids;
  std::size_t prompt_len = 0;

  std::vector<std::size_t> prompt() const { return {ids.begin(), ids.begin() + prompt_len}; }
  std::vector<std::size_t> target() const { return {ids.begin() + prompt_len, ids.end()}; }
};

namespace detail {

inline void push_digits(std::vector<std::size_t>& out, const std::string& s, DigitOrder order) {
  auto put = [&](char ch) {
    if (ch < '0' || ch > '9') throw ContractError(std::string("unknown symbol '") + ch + "'");
    out.push_back(static_cast<std::size_t>(ch - '0'));
  };
  if (order == DigitOrder::Lsd) {
    for (auto it = s.rbegin(); it != s.rend(); ++it) put(*it);
  } else {
    for (char ch : s) put(ch);
  }
}

}  // namespace detail

inline Encoded tokenize(const AdditionSample& s, DigitOrder order = DigitOrder::Lsd) {
  Encoded e;
  e.ids.push_back(kBosTok);
  detail::push_digits(e.ids, s.a, order);
  e.ids.push_back(kPlus);
  detail::push_digits(e.ids, s.b, order);
  e.ids.push_back(kEq);
  e.prompt_len = e.ids.size();
  detail::push_digits(e.ids, s.sum(), order);
  e.ids.push_back(kEos);
  return e;
}

/// Parses "a+b=s" text; the sum must be the true sum.
inline AdditionSample parse_text(const std::string& text) {
  const auto plus = text.find('+');
  const auto eq = text.find('=');
  if (plus == std::string::npos || eq == std::string::npos || eq < plus) {
    throw ContractError("expected a+b=s, got '" + text + "'");
  }
  AdditionSample s{text.substr(0, plus), text.substr(plus + 1, eq - plus - 1)};
  for (const std::string* p : {&s.a, &s.b})
    if (p->empty() || p->find_first_not_of("0123456789") != std::string::npos) {
      throw ContractError("unknown symbol in '" + text + "'");
    }
  if (s.sum() != text.substr(eq + 1)) throw ContractError("wrong sum in '" + text + "'");
  return s;
}

inline std::string symbol(std::size_t id) {
  if (id < 10) return std::string(1, char('0' + id));
  switch (id) {
    case kPlus: return "+";
    case kEq: return "=";
    case kBosTok: return "<bos>";
    case kEos: return "<eos>";
    case kPad: return "<pad>";
  }
  throw ContractError("unknown token id " + std::to_string(id));
}

/// Inverse of tokenize: token ids back to "a+b=s" text (MSD first).
inline std::string detokenize(const std::vector<std::size_t>& ids, DigitOrder order = DigitOrder::Lsd) {
  std::vector<std::string> fields(1);
  std::size_t k = 0;
  if (k < ids.size() && ids[k] == kBosTok) ++k;
  std::string seps;
  for (; k < ids.size(); ++k) {
    const std::size_t id = ids[k];
    if (id == kEos) break;
    if (id < 10) fields.back().push_back(char('0' + id));
    else if (id == kPlus || id == kEq) {
      seps += symbol(id);
      fields.emplace_back();
    } else {
      throw ContractError("unexpected token " + symbol(id) + " in addition stream");
    }
  }
  if (order == DigitOrder::Lsd)
    for (auto& f : fields) std::reverse(f.begin(), f.end());
  std::string out = fields[0];
  for (std::size_t i = 0; i < seps.size(); ++i) out += seps[i] + fields[i + 1];
  return out;
}

/// Teacher-forced batch: input ids[:-1], targets ids[1:], right-padded with
/// PAD. Loss weight 1 on answer digits and EOS, 0 elsewhere (PAD included).
struct TrainBatch {
  model::TokenBatch input;
  std::vector<std::size_t> targets;
  std::vector<double> weights;
};

inline TrainBatch make_batch(const std::vector<Encoded>& seqs) {
  if (seqs.empty()) throw ContractError("make_batch: empty batch");
  std::size_t cols = 0;
  for (const auto& s : seqs) cols = std::max(cols, s.ids.size() - 1);
  TrainBatch b;
  b.input.rows = seqs.size();
  b.input.cols = cols;
  b.input.ids.assign(seqs.size() * cols, kPad);
  b.targets.assign(seqs.size() * cols, kPad);
  b.weights.assign(seqs.size() * cols, 0.0);
  for (std::size_t r = 0; r < seqs.size(); ++r) {
    const auto& s = seqs[r];
    for (std::size_t t = 0; t + 1 < s.ids.size(); ++t) {
      b.input.ids[r * cols + t] = s.ids[t];
      b.targets[r * cols + t] = s.ids[t + 1];
      // target index t+1 is in the answer iff t+1 >= prompt_len
      if (t + 1 >= s.prompt_len) b.weights[r * cols + t] = 1.0;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Dataset cache

struct AdditionDataset {
  std::size_t max_len = 0;
  std::uint64_t seed = 0;
  std::vector<AdditionSample> samples;
};

/// Stored as a named container: header with max_len and seed, one tensor per
/// operand side holding digits row-padded with -1.
inline io::Archive dataset_to_archive(const AdditionDataset& d) {
  io::Archive ar;
  ar.header = "task=addition\nmax_len=" + std::to_string(d.max_len) + "\nseed=" + std::to_string(d.seed) + "\n";
  std::size_t width = 1;
  for (const auto& s : d.samples) width = std::max({width, s.a.size(), s.b.size()});
  for (const char* side : {"a", "b"}) {
    Tensor t({d.samples.size(), width}, -1.0);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      const std::string& v = side[0] == 'a' ? d.samples[i].a : d.samples[i].b;
      for (std::size_t k = 0; k < v.size(); ++k) t(i, k) = v[k] - '0';
    }
    ar.entries[side] = std::move(t);
  }
  return ar;
}

inline AdditionDataset dataset_from_archive(const io::Archive& ar) {
  const auto kv = model::parse_kv_text(ar.header);
  if (!kv.count("task") || kv.at("task") != "addition") throw FileError("not an addition dataset");
  AdditionDataset d;
  d.max_len = model::parse_size("max_len", kv.at("max_len"));
  d.seed = model::parse_u64("seed", kv.at("seed"));
  const Tensor& a = ar.at("a");
  const Tensor& b = ar.at("b");
  if (a.rank() != 2 || b.shape() != a.shape()) throw FileError("dataset tensors have inconsistent shapes");
  auto row = [](const Tensor& t, std::size_t i) {
    std::string s;
    for (std::size_t k = 0; k < t.dim(1) && t(i, k) >= 0.0; ++k) {
      const double v = t(i, k);
      if (v > 9.0 || v != std::floor(v)) throw FileError("dataset holds a non-digit value");
      s.push_back(char('0' + int(v)));
    }
    if (s.empty()) throw FileError("dataset holds an empty operand");
    return s;
  };
  for (std::size_t i = 0; i < a.dim(0); ++i) d.samples.push_back({row(a, i), row(b, i)});
  return d;
}

}  // namespace tape::tasks
