#pragma once

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "tape/numcore/linalg.hpp"
#include "tape/numcore/rng.hpp"
#include "tape/numcore/serialize.hpp"
#include "tape/numcore/tensor.hpp"

namespace tape::pe {

struct PosMeta {
  std::size_t N = 1, H = 1, M = 1, L = 2, R = 2;

  Shape shape() const { return {N, H, M, L, R}; }
  // Flattened per-token size D = H * M * L * R.
  std::size_t per_token() const { return H * M * L * R; }
  void validate() const {
    if (!N || !H || !M || !L || !R) throw DimensionError("positional meta: every extent must be >= 1");
  }
  friend bool operator==(const PosMeta&, const PosMeta&) = default;
};

/// Tensorial positional encoding with logical shape (N, H, M, L, R).
struct PosTensor {
  Tensor values;
  PosMeta meta;

  PosTensor() = default;
  PosTensor(Tensor v, PosMeta m) : values(std::move(v)), meta(m) {
    meta.validate();
    if (values.shape() != meta.shape()) {
      throw DimensionError("PosTensor values " + shape_str(values.shape()) + " do not match meta " +
                           shape_str(meta.shape()));
    }
    require_finite(values, "PosTensor");
  }

  double operator()(std::size_t i, std::size_t h, std::size_t m, std::size_t l, std::size_t r) const {
    return values(i, h, m, l, r);
  }

  // The (M, L, R) slice of token i, head h.
  Tensor slice(std::size_t i, std::size_t h = 0) const {
    const std::size_t block = meta.M * meta.L * meta.R;
    const std::size_t off = (i * meta.H + h) * block;
    std::vector<double> out(values.data().begin() + off, values.data().begin() + off + block);
    return Tensor::from_raw({meta.M, meta.L, meta.R}, std::move(out));
  }
};

/// RoPE angles theta_m = sign * base^(-m / M), m = 0..M-1: the usual
/// base^(-2m/d) schedule with per-head rotary width d = 2M.
struct RopeSchedule {
  std::vector<double> thetas;
  double base = 10000.0;
  double sign = 1.0;

  static RopeSchedule standard(std::size_t M, double base = 10000.0, double sign = 1.0) {
    if (M == 0) throw DimensionError("rope schedule needs M >= 1");
    if (!(base > 1.0)) throw ConfigError("rope base must be > 1");
    if (sign != 1.0 && sign != -1.0) throw ConfigError("rope sign must be +1 or -1");
    RopeSchedule s;
    s.base = base;
    s.sign = sign;
    for (std::size_t m = 0; m < M; ++m) {
      s.thetas.push_back(sign * std::pow(base, -static_cast<double>(m) / static_cast<double>(M)));
    }
    return s;
  }
};

/// Reweighted random Fourier features: frequencies theta_{m,r} (M x R/2) and
/// weights w_{m,l,r} (M x L x R/2), scaled by sqrt(2/R).
struct FourierSchedule {
  Tensor freqs;    // (M, R/2)
  Tensor weights;  // (M, L, R/2)

  std::size_t M() const { return freqs.dim(0); }
  std::size_t L() const { return weights.dim(1); }
  std::size_t R() const { return 2 * freqs.dim(1); }

  static FourierSchedule sample(std::size_t M, std::size_t L, std::size_t R, Rng& rng,
                                double freq_std = 1.0) {
    if (R % 2 != 0) throw DimensionError("fourier features need even R, got " + std::to_string(R));
    FourierSchedule s;
    s.freqs = rng.normal_tensor({M, R / 2}, freq_std);
    s.weights = rng.normal_tensor({M, L, R / 2});
    return s;
  }
};

using Schedule = std::variant<std::monostate, RopeSchedule, FourierSchedule>;

/// e_{i,m} = [[cos(theta_m i), -sin(theta_m i)], [sin(theta_m i), cos(theta_m i)]]
/// (rows are the two L-vectors), identical across heads.
inline PosTensor rope_init(const std::vector<double>& positions, std::size_t H, const RopeSchedule& s) {
  if (positions.empty()) throw DimensionError("rope_init: no positions");
  const PosMeta meta{positions.size(), H, s.thetas.size(), 2, 2};
  meta.validate();
  Tensor v(meta.shape());
  for (std::size_t i = 0; i < meta.N; ++i)
    for (std::size_t m = 0; m < meta.M; ++m) {
      const double a = s.thetas[m] * positions[i];
      const double c = std::cos(a), sn = std::sin(a);
      for (std::size_t h = 0; h < H; ++h) {
        v(i, h, m, 0, 0) = c;
        v(i, h, m, 0, 1) = 0.0 - sn;  // keeps +0 at angle 0
        v(i, h, m, 1, 0) = sn;
        v(i, h, m, 1, 1) = c;
      }
    }
  return PosTensor(std::move(v), meta);
}

inline std::vector<double> arange_positions(std::size_t n, double start = 0.0) {
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = start + static_cast<double>(i);
  return p;
}

/// e_{i,m,l} = sqrt(2/R) [.., w_{m,l,r} cos(theta_{m,r} i), w_{m,l,r} sin(theta_{m,r} i), ..]
inline PosTensor fourier_init(const std::vector<double>& positions, std::size_t H, const FourierSchedule& s) {
  if (positions.empty()) throw DimensionError("fourier_init: no positions");
  const std::size_t R = s.R();
  if (R % 2 != 0) throw DimensionError("fourier_init: odd R");
  const PosMeta meta{positions.size(), H, s.M(), s.L(), R};
  Tensor v(meta.shape());
  const double k = std::sqrt(2.0 / static_cast<double>(R));
  for (std::size_t i = 0; i < meta.N; ++i)
    for (std::size_t m = 0; m < meta.M; ++m)
      for (std::size_t r = 0; r < R / 2; ++r) {
        const double a = s.freqs(m, r) * positions[i];
        const double c = std::cos(a), sn = std::sin(a);
        for (std::size_t l = 0; l < meta.L; ++l) {
          const double w = k * s.weights(m, l, r);
          for (std::size_t h = 0; h < H; ++h) {
            v(i, h, m, l, 2 * r) = w * c;
            v(i, h, m, l, 2 * r + 1) = w * sn;
          }
        }
      }
  return PosTensor(std::move(v), meta);
}

/// Per-block orthogonal O_m (shape (M, R, R)) with
/// init(positions + delta) == init(positions) * O_m.
inline Tensor phase_shift(const Schedule& schedule, double delta) {
  if (const auto* rope = std::get_if<RopeSchedule>(&schedule)) {
    const std::size_t M = rope->thetas.size();
    Tensor o({M, 2, 2});
    for (std::size_t m = 0; m < M; ++m) {
      const double a = rope->thetas[m] * delta;
      o(m, 0, 0) = std::cos(a);
      o(m, 0, 1) = -std::sin(a);
      o(m, 1, 0) = std::sin(a);
      o(m, 1, 1) = std::cos(a);
    }
    return o;
  }
  if (const auto* ff = std::get_if<FourierSchedule>(&schedule)) {
    const std::size_t M = ff->M(), R = ff->R();
    Tensor o({M, R, R});
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t r = 0; r < R / 2; ++r) {
        // A row vector [cos a, sin a] times this block is [cos(a+b), sin(a+b)].
        const double b = ff->freqs(m, r) * delta;
        o(m, 2 * r, 2 * r) = std::cos(b);
        o(m, 2 * r, 2 * r + 1) = std::sin(b);
        o(m, 2 * r + 1, 2 * r) = -std::sin(b);
        o(m, 2 * r + 1, 2 * r + 1) = std::cos(b);
      }
    return o;
  }
  throw ContractError("phase_shift: schedule has no closed-form shift");
}

/// Right-multiplies every e_{i,h,m} by o[m] (o has shape (M, R, R)).
inline PosTensor apply_blockwise(const PosTensor& e, const Tensor& o) {
  const PosMeta& mt = e.meta;
  if (o.shape() != Shape{mt.M, mt.R, mt.R}) {
    throw DimensionError("apply_blockwise: expected (M, R, R) = " + shape_str({mt.M, mt.R, mt.R}) +
                         ", got " + shape_str(o.shape()));
  }
  Tensor v(mt.shape());
  for (std::size_t i = 0; i < mt.N; ++i)
    for (std::size_t h = 0; h < mt.H; ++h)
      for (std::size_t m = 0; m < mt.M; ++m)
        for (std::size_t l = 0; l < mt.L; ++l)
          for (std::size_t c = 0; c < mt.R; ++c) {
            double s = 0.0;
            for (std::size_t r = 0; r < mt.R; ++r) s += e(i, h, m, l, r) * o(m, r, c);
            v(i, h, m, l, c) = s;
          }
  return PosTensor(std::move(v), mt);
}

/// Per-block L x L matrices e_{i,m} e_{j,m}^T for (M, L, R) slices.
inline Tensor gram(const Tensor& ei, const Tensor& ej) {
  if (ei.rank() != 3 || ei.shape() != ej.shape()) {
    throw DimensionError("gram: slices must share an (M, L, R) shape, got " + shape_str(ei.shape()) +
                         " and " + shape_str(ej.shape()));
  }
  return bmm(ei, ej, false, true);
}

/// N x N grid of mean over (h, m) of trace(e_{i,h,m} e_{j,h,m}^T).
inline Tensor pe_dot_product_grid(const PosTensor& e) {
  const PosMeta& mt = e.meta;
  const std::size_t per = mt.per_token();
  const auto v = e.values.data();
  Tensor g({mt.N, mt.N});
  const double inv = 1.0 / static_cast<double>(mt.H * mt.M);
  // trace(A B^T) is the flat inner product of A and B.
  for (std::size_t i = 0; i < mt.N; ++i)
    for (std::size_t j = 0; j < mt.N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < per; ++k) s += v[i * per + k] * v[j * per + k];
      g(i, j) = s * inv;
    }
  return g;
}

/// CSV with a header row and column of positions. `comment` lines (if any)
/// are emitted first, each prefixed by "# ".
inline void write_pe_dot_products(std::ostream& os, const Tensor& grid, const std::vector<double>& positions,
                                  const std::vector<std::string>& comment = {}) {
  const std::size_t n = grid.dim(0);
  if (grid.rank() != 2 || grid.dim(1) != n || positions.size() != n) {
    throw DimensionError("write_pe_dot_products: grid " + shape_str(grid.shape()) + " vs " +
                         std::to_string(positions.size()) + " positions");
  }
  for (const auto& c : comment) os << "# " << c << '\n';
  os.precision(17);
  os << "pos";
  for (double p : positions) os << ',' << p;
  os << '\n';
  for (std::size_t i = 0; i < n; ++i) {
    os << positions[i];
    for (std::size_t j = 0; j < n; ++j) os << ',' << grid(i, j);
    os << '\n';
  }
  if (!os) throw FileError("write_pe_dot_products: stream failure");
}

inline void export_pe_dot_products(const PosTensor& e, const std::vector<double>& positions,
                                   const std::string& path, const std::vector<std::string>& comment = {}) {
  std::ofstream os(path);
  if (!os) throw FileError("cannot open for writing: " + path);
  write_pe_dot_products(os, pe_dot_product_grid(e), positions, comment);
}

}  // namespace tape::pe
