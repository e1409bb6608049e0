#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "tape/numcore/ops.hpp"
#include "tape/numcore/rng.hpp"
#include "tape/numcore/tensor.hpp"

namespace tape {

namespace kernel {

// C[m x n] += op(A) * op(B), row-major with leading dimensions.
// Every C entry accumulates its k products in increasing k order regardless
// of the transpose flags, so results do not depend on the code path taken.
inline void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                     const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc) {
  std::vector<double> tmp;
  if (trans_b) {
    tmp.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) tmp[p * n + j] = b[j * ldb + p];
    b = tmp.data();
    ldb = n;
  }
  if (!trans_a) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      double* c0 = c + i * ldc;
      double* c1 = c0 + ldc;
      double* c2 = c1 + ldc;
      double* c3 = c2 + ldc;
      const double* a0 = a + i * lda;
      for (std::size_t p = 0; p < k; ++p) {
        const double x0 = a0[p], x1 = a0[lda + p], x2 = a0[2 * lda + p], x3 = a0[3 * lda + p];
        const double* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) {
          const double bj = brow[j];
          c0[j] += x0 * bj;
          c1[j] += x1 * bj;
          c2[j] += x2 * bj;
          c3[j] += x3 * bj;
        }
      }
    }
    for (; i < m; ++i) {
      double* ci = c + i * ldc;
      const double* ai = a + i * lda;
      for (std::size_t p = 0; p < k; ++p) {
        const double x = ai[p];
        const double* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) ci[j] += x * brow[j];
      }
    }
  } else {
    // op(A)[i, p] = a[p * lda + i]
    for (std::size_t i = 0; i < m; ++i) {
      double* ci = c + i * ldc;
      for (std::size_t p = 0; p < k; ++p) {
        const double x = a[p * lda + i];
        const double* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) ci[j] += x * brow[j];
      }
    }
  }
}

}  // namespace kernel

/// Rank-2 matrix product.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  kernel::gemm_acc(false, false, m, n, k, a.data().data(), k, b.data().data(), n, out.data(), n);
  return Tensor::from_raw({m, n}, std::move(out));
}

/// Batched product over the last two axes with broadcasting of the leading
/// axes. With trans_a/trans_b the corresponding operand's last two axes are
/// read transposed.
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("bmm: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  if (trans_b) {
    // One up-front transpose instead of one per batch element.
    std::vector<std::size_t> axes(b.rank());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return bmm(a, permute(b, axes), trans_a, false);
  }
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t ra = sa.size(), rb = sb.size();
  const std::size_t m = trans_a ? sa[ra - 1] : sa[ra - 2];
  const std::size_t ka = trans_a ? sa[ra - 2] : sa[ra - 1];
  const std::size_t kb = sb[rb - 2];
  const std::size_t n = sb[rb - 1];
  if (ka != kb) {
    throw DimensionError("bmm: inner dimensions differ for " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const Shape ba(sa.begin(), sa.end() - 2);
  const Shape bb(sb.begin(), sb.end() - 2);
  Shape batch;
  try {
    batch = detail::broadcast_shapes(ba, bb);
  } catch (const DimensionError&) {
    throw DimensionError("bmm: batch axes do not broadcast for " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t nb = shape_numel(batch);
  const auto ia = detail::broadcast_index(ba, batch);
  const auto ib = detail::broadcast_index(bb, batch);
  const std::size_t a_mat = sa[ra - 2] * sa[ra - 1];
  const std::size_t b_mat = sb[rb - 2] * sb[rb - 1];
  const std::size_t lda = sa[ra - 1], ldb = sb[rb - 1];
  std::vector<double> out(nb * m * n, 0.0);
  for (std::size_t t = 0; t < nb; ++t) {
    kernel::gemm_acc(trans_a, false, m, n, ka, a.data().data() + ia[t] * a_mat, lda,
                     b.data().data() + ib[t] * b_mat, ldb, out.data() + t * m * n, n);
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  return Tensor::from_raw(out_shape, std::move(out));
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

/// Softmax along `axis` restricted to entries where the broadcast mask is
/// nonzero. Masked entries are exactly 0. A row with no unmasked entry
/// throws DegenerateRowError unless `allow_empty_rows`, in which case the
/// row is all zeros.
inline Tensor masked_softmax(const Tensor& logits, const Tensor& mask, std::size_t axis,
                             bool allow_empty_rows = false) {
  const Shape& s = logits.shape();
  if (axis >= s.size()) throw DimensionError("masked_softmax: axis out of range for " + shape_str(s));
  if (detail::broadcast_shapes(mask.shape(), s) != s) {
    throw DimensionError("masked_softmax: mask " + shape_str(mask.shape()) +
                         " not broadcastable to logits " + shape_str(s));
  }
  const auto mi = detail::broadcast_index(mask.shape(), s);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<double> out(logits.size(), 0.0);
  const auto x = logits.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t f = base + l * inner;
        if (mask[mi[f]] != 0.0) {
          any = true;
          mx = std::max(mx, x[f]);
        }
      }
      if (!any) {
        if (allow_empty_rows) continue;
        throw DegenerateRowError("masked_softmax: row with every entry masked");
      }
      double z = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t f = base + l * inner;
        if (mask[mi[f]] != 0.0) {
          out[f] = std::exp(x[f] - mx);
          z += out[f];
        }
      }
      const double inv = 1.0 / z;
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  }
  return Tensor::from_raw(s, std::move(out));
}

/// Solves a * x = b for lower-triangular `a` by forward substitution.
/// `b` may be a vector (n) or a matrix (n x k).
inline Tensor unit_lower_solve(const Tensor& a, const Tensor& b, double min_pivot = 1e-12) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError("unit_lower_solve: expected square matrix, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0);
  if ((b.rank() != 1 && b.rank() != 2) || b.dim(0) != n) {
    throw DimensionError("unit_lower_solve: rhs " + shape_str(b.shape()) +
                         " incompatible with " + shape_str(a.shape()));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (a(i, j) != 0.0) throw ContractError("unit_lower_solve: matrix is not lower triangular");
  const std::size_t k = b.rank() == 2 ? b.dim(1) : 1;
  std::vector<double> x(b.data().begin(), b.data().end());
  const auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double piv = ad[i * n + i];
    if (!(std::abs(piv) >= min_pivot)) {
      throw SingularityError("unit_lower_solve: near-zero diagonal at row " + std::to_string(i), i);
    }
    double* xi = x.data() + i * k;
    for (std::size_t j = 0; j < i; ++j) {
      const double lij = ad[i * n + j];
      if (lij == 0.0) continue;
      const double* xj = x.data() + j * k;
      for (std::size_t c = 0; c < k; ++c) xi[c] -= lij * xj[c];
    }
    for (std::size_t c = 0; c < k; ++c) xi[c] /= piv;
  }
  return Tensor::from_raw(b.shape(), std::move(x));
}

/// LU factorization with partial pivoting, packed in place.
struct LuFactors {
  Tensor lu;
  std::vector<std::size_t> pivots;
  int sign = 1;
};

inline LuFactors lu_factor(const Tensor& a, double min_pivot = 1e-300) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw DimensionError("lu_factor: expected square matrix, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(0);
  LuFactors f{a, std::vector<std::size_t>(n), 1};
  auto d = f.lu.data_mut();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t p = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(d[r * n + col]) > std::abs(d[p * n + col])) p = r;
    f.pivots[col] = p;
    if (p != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(d[p * n + c], d[col * n + c]);
      f.sign = -f.sign;
    }
    const double piv = d[col * n + col];
    if (!(std::abs(piv) > min_pivot)) {
      throw SingularityError("lu_factor: singular matrix at column " + std::to_string(col), col);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double l = d[r * n + col] / piv;
      d[r * n + col] = l;
      if (l == 0.0) continue;
      for (std::size_t c = col + 1; c < n; ++c) d[r * n + c] -= l * d[col * n + c];
    }
  }
  return f;
}

/// General dense solve a * x = b (b vector or matrix).
inline Tensor lu_solve(const Tensor& a, const Tensor& b) {
  const LuFactors f = lu_factor(a);
  const std::size_t n = a.dim(0);
  if ((b.rank() != 1 && b.rank() != 2) || b.dim(0) != n) {
    throw DimensionError("lu_solve: rhs " + shape_str(b.shape()) + " incompatible with " +
                         shape_str(a.shape()));
  }
  const std::size_t k = b.rank() == 2 ? b.dim(1) : 1;
  std::vector<double> x(b.data().begin(), b.data().end());
  for (std::size_t i = 0; i < n; ++i)
    if (f.pivots[i] != i)
      for (std::size_t c = 0; c < k; ++c) std::swap(x[i * k + c], x[f.pivots[i] * k + c]);
  const auto d = f.lu.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      for (std::size_t c = 0; c < k; ++c) x[i * k + c] -= d[i * n + j] * x[j * k + c];
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t c = 0; c < k; ++c) x[i * k + c] -= d[i * n + j] * x[j * k + c];
    for (std::size_t c = 0; c < k; ++c) x[i * k + c] /= d[i * n + i];
  }
  return Tensor::from_raw(b.shape(), std::move(x));
}

inline double determinant(const Tensor& a) {
  LuFactors f;
  try {
    f = lu_factor(a);
  } catch (const SingularityError&) {
    return 0.0;
  }
  double det = f.sign;
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i) det *= f.lu(i, i);
  return det;
}

/// Haar-distributed orthogonal matrix: Householder QR of a Gaussian matrix
/// with the signs of R's diagonal folded into Q.
inline Tensor random_orthogonal(std::size_t r, Rng& rng) {
  if (r < 1) throw ContractError("random_orthogonal: dimension must be >= 1");
  Tensor a = rng.normal_tensor({r, r});
  Tensor q = Tensor::identity(r);
  std::vector<std::vector<double>> reflectors;
  std::vector<double> diag_sign(r, 1.0);
  for (std::size_t k = 0; k < r; ++k) {
    std::vector<double> v(r - k);
    double norm2 = 0.0;
    for (std::size_t i = k; i < r; ++i) {
      v[i - k] = a(i, k);
      norm2 += v[i - k] * v[i - k];
    }
    const double norm = std::sqrt(norm2);
    const double alpha = v[0] >= 0.0 ? -norm : norm;  // R_kk after reflection
    diag_sign[k] = alpha >= 0.0 ? 1.0 : -1.0;
    v[0] -= alpha;
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(vnorm2);
      for (double& x : v) x *= inv;
      for (std::size_t c = k; c < r; ++c) {
        double dot = 0.0;
        for (std::size_t i = k; i < r; ++i) dot += v[i - k] * a(i, c);
        for (std::size_t i = k; i < r; ++i) a(i, c) -= 2.0 * v[i - k] * dot;
      }
    }
    reflectors.push_back(std::move(v));
  }
  // Q = H_0 H_1 ... H_{r-1}, applied right-to-left onto the identity.
  for (std::size_t k = r; k-- > 0;) {
    const auto& v = reflectors[k];
    for (std::size_t c = 0; c < r; ++c) {
      double dot = 0.0;
      for (std::size_t i = k; i < r; ++i) dot += v[i - k] * q(i, c);
      for (std::size_t i = k; i < r; ++i) q(i, c) -= 2.0 * v[i - k] * dot;
    }
  }
  for (std::size_t c = 0; c < r; ++c)
    for (std::size_t i = 0; i < r; ++i) q(i, c) *= diag_sign[c];
  return q;
}

/// Permutation of {0..n-1}. Row i of the matrix form is e_{map[i]}, so the
/// matrix applied on the left gathers rows: (P X)_i = X_{map[i]}.
struct Permutation {
  std::vector<std::size_t> map;

  std::size_t size() const noexcept { return map.size(); }

  static Permutation identity(std::size_t n) {
    Permutation p;
    p.map.resize(n);
    for (std::size_t i = 0; i < n; ++i) p.map[i] = i;
    return p;
  }

  Permutation inverse() const {
    Permutation p;
    p.map.resize(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) p.map[map[i]] = i;
    return p;
  }

  // (this ∘ other)(i) = this(other(i))
  Permutation compose(const Permutation& other) const {
    if (other.size() != size()) throw DimensionError("Permutation::compose size mismatch");
    Permutation p;
    p.map.resize(map.size());
    for (std::size_t i = 0; i < map.size(); ++i) p.map[i] = map[other.map[i]];
    return p;
  }

  bool is_identity() const {
    for (std::size_t i = 0; i < map.size(); ++i)
      if (map[i] != i) return false;
    return true;
  }

  Tensor matrix() const {
    const std::size_t n = map.size();
    Tensor p({n, n});
    for (std::size_t i = 0; i < n; ++i) p(i, map[i]) = 1.0;
    return p;
  }

  // Permutes axis 0 of any tensor: out[i, ...] = t[map[i], ...].
  Tensor apply_rows(const Tensor& t) const {
    if (t.rank() < 1 || t.dim(0) != map.size()) {
      throw DimensionError("Permutation::apply_rows: leading axis of " + shape_str(t.shape()) +
                           " != " + std::to_string(map.size()));
    }
    const std::size_t row = t.size() / map.size();
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < map.size(); ++i)
      std::copy_n(t.data().data() + map[i] * row, row, out.data() + i * row);
    return Tensor::from_raw(t.shape(), std::move(out));
  }

  // P M P^T for a square matrix.
  Tensor conjugate(const Tensor& m) const {
    const std::size_t n = map.size();
    if (m.rank() != 2 || m.dim(0) != n || m.dim(1) != n) {
      throw DimensionError("Permutation::conjugate: expected " + std::to_string(n) + "x" +
                           std::to_string(n) + ", got " + shape_str(m.shape()));
    }
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) = m(map[i], map[j]);
    return out;
  }
};

/// Uniform permutation by Fisher-Yates.
inline Permutation random_permutation(std::size_t n, Rng& rng) {
  Permutation p = Permutation::identity(n);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_int(i);
    std::swap(p.map[i - 1], p.map[j]);
  }
  return p;
}

// Right-multiplies the last axis of `t` (size R) by the R x R matrix `o`.
inline Tensor right_multiply_last(const Tensor& t, const Tensor& o) {
  const std::size_t r = o.dim(0);
  if (o.rank() != 2 || o.dim(1) != r || t.rank() < 1 || t.shape().back() != r) {
    throw DimensionError("right_multiply_last: " + shape_str(t.shape()) + " times " +
                         shape_str(o.shape()));
  }
  const std::size_t rows = t.size() / r;
  std::vector<double> out(t.size(), 0.0);
  kernel::gemm_acc(false, false, rows, r, r, t.data().data(), r, o.data().data(), r, out.data(), r);
  return Tensor::from_raw(t.shape(), std::move(out));
}

}  // namespace tape
