#pragma once

#include <cmath>
#include <vector>

#include "tape/numcore/tensor.hpp"

// Value-level (non-recording) tensor operations: elementwise arithmetic with
// numpy-style broadcasting, axis permutation, and reductions.
namespace tape {

namespace detail {

// Right-aligned broadcast of two shapes; throws naming both on mismatch.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For every flat index of `dst`, the flat index of the broadcast source.
inline std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& dst) {
  const std::size_t r = dst.size();
  const std::size_t n = shape_numel(dst);
  std::vector<std::size_t> out(n);
  if (src == dst) {
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  // Suffix fast path: src equals the trailing dims of dst.
  if (src.size() <= r && std::equal(src.begin(), src.end(), dst.end() - src.size())) {
    const std::size_t m = shape_numel(src);
    for (std::size_t i = 0; i < n; ++i) out[i] = i % m;
    return out;
  }
  Shape sstr(r, 0);
  {
    const Shape s = row_major_strides(src);
    for (std::size_t i = 0; i < src.size(); ++i) {
      const std::size_t ax = i + (r - src.size());
      sstr[ax] = src[i] == 1 ? 0 : s[i];
    }
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    out[flat] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      off += sstr[ax];
      if (idx[ax] < dst[ax]) break;
      off -= sstr[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

template <class Op>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
    return Tensor::from_raw(a.shape(), std::move(out));
  }
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  const auto ia = broadcast_index(a.shape(), shape);
  const auto ib = broadcast_index(b.shape(), shape);
  std::vector<double> out(ia.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(a[ia[i]], b[ib[i]]);
  return Tensor::from_raw(shape, std::move(out));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, [](double x, double y) { return x * y; });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return Tensor::from_raw(a.shape(), std::move(out));
}

template <class F>
Tensor map(const Tensor& a, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return Tensor::from_raw(a.shape(), std::move(out));
}

// Sum `a` down to `target` shape (inverse of broadcasting).
inline Tensor sum_to_shape(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  const auto idx = detail::broadcast_index(target, a.shape());
  std::vector<double> out(shape_numel(target), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) out[idx[i]] += a[i];
  return Tensor::from_raw(target, std::move(out));
}

// Output axis k is input axis axes[k].
inline Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw DimensionError("permute: axes rank mismatch for " + shape_str(a.shape()));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t k = 0; k < r; ++k) {
    if (axes[k] >= r || seen[axes[k]]) throw DimensionError("permute: invalid axes");
    seen[axes[k]] = true;
    out_shape[k] = a.shape()[axes[k]];
  }
  const Shape in_str = a.strides();
  Shape str(r);
  for (std::size_t k = 0; k < r; ++k) str[k] = in_str[axes[k]];
  std::vector<double> out(a.size());
  std::vector<std::size_t> idx(r, 0);
  std::size_t off = 0;
  const auto src = a.data();
  if (r == 0) {
    out[0] = src[0];
    return Tensor::from_raw(out_shape, std::move(out));
  }
  // Innermost loop peeled for speed.
  const std::size_t inner = out_shape[r - 1];
  const std::size_t inner_str = str[r - 1];
  for (std::size_t flat = 0; flat < out.size(); flat += inner) {
    for (std::size_t j = 0; j < inner; ++j) out[flat + j] = src[off + j * inner_str];
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      off += str[ax];
      if (idx[ax] < out_shape[ax]) break;
      off -= str[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return Tensor::from_raw(out_shape, std::move(out));
}

inline std::vector<std::size_t> inverse_axes(const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t k = 0; k < axes.size(); ++k) inv[axes[k]] = k;
  return inv;
}

// Sum over one axis; the axis is removed from the shape.
inline Tensor sum_axis(const Tensor& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) throw DimensionError("sum_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  std::vector<double> out(outer * inner, 0.0);
  const auto src = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* row = src.data() + (o * len + l) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += row[i];
    }
  }
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  return Tensor::from_raw(out_shape, std::move(out));
}

inline double sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return acc;
}

// Repeat along a new axis inserted at `axis`.
inline Tensor expand_axis(const Tensor& a, std::size_t axis, std::size_t count) {
  const Shape& s = a.shape();
  if (axis > s.size()) throw DimensionError("expand_axis: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  std::vector<double> out(outer * count * inner);
  const auto src = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(src.data() + o * inner, inner, out.data() + (o * count + c) * inner);
  Shape out_shape = s;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  return Tensor::from_raw(out_shape, std::move(out));
}

}  // namespace tape
