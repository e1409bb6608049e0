#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tape/numcore/autodiff.hpp"

namespace tape::ad {

/// A scalar function of a list of leaf variables, recorded on `g`.
using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

struct ValueAndGrad {
  double value = 0.0;
  std::vector<Tensor> grads;
};

/// Evaluates f at `leaves` and returns its value and gradient per leaf.
inline ValueAndGrad value_and_grad(const ScalarFn& f, const std::vector<Tensor>& leaves) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const Tensor& t : leaves) vars.push_back(g.leaf(t));
  const Var out = f(g, vars);
  g.backward(out);
  ValueAndGrad r;
  r.value = out.value().item();
  for (const Var& v : vars) r.grads.push_back(g.grad(v));
  return r;
}

struct GradCheckReport {
  double tol = 0.0;
  double step = 0.0;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  // Coordinates of the worst entry.
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // Elementwise relative error, one tensor per leaf.
  std::vector<Tensor> rel_errors;

  bool pass() const { return max_rel_error <= tol; }
};

/// |a - b| / max(|a|, |b|, 1e-8)
inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Compares `analytic` gradients against central differences of `eval`
/// with step h, coordinate by coordinate over every leaf. `eval` may be an
/// independent (for example higher-precision) implementation of the same
/// function.
inline GradCheckReport compare_with_central_differences(
    const std::vector<Tensor>& analytic, const std::function<double(const std::vector<Tensor>&)>& eval,
    std::vector<Tensor> leaves, double h = 1e-5, double tol = 1e-4) {
  if (analytic.size() != leaves.size()) throw ContractError("gradient count does not match leaf count");
  GradCheckReport rep;
  rep.tol = tol;
  rep.step = h;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    if (analytic[li].shape() != leaves[li].shape()) {
      throw DimensionError("gradient shape " + shape_str(analytic[li].shape()) + " does not match leaf " +
                           shape_str(leaves[li].shape()));
    }
    Tensor errs(leaves[li].shape());
    for (std::size_t k = 0; k < leaves[li].size(); ++k) {
      const double x0 = leaves[li][k];
      leaves[li][k] = x0 + h;
      const double fp = eval(leaves);
      leaves[li][k] = x0 - h;
      const double fm = eval(leaves);
      leaves[li][k] = x0;
      const double num = (fp - fm) / (2.0 * h);
      const double an = analytic[li][k];
      const double e = relative_error(an, num);
      errs[k] = e;
      if (rep.checked == 0 || e > rep.max_rel_error) {
        rep.max_rel_error = e;
        rep.worst_leaf = li;
        rep.worst_index = k;
        rep.worst_analytic = an;
        rep.worst_numeric = num;
      }
      ++rep.checked;
    }
    rep.rel_errors.push_back(std::move(errs));
  }
  return rep;
}

/// Reverse-mode gradients of f against central differences of f itself.
inline GradCheckReport finite_diff_check(const ScalarFn& f, std::vector<Tensor> leaves, double h = 1e-5,
                                         double tol = 1e-4) {
  const auto eval = [&](const std::vector<Tensor>& at) {
    Graph g;
    g.set_recording(false);
    std::vector<Var> vars;
    vars.reserve(at.size());
    for (const Tensor& t : at) vars.push_back(g.leaf(t, false));
    return f(g, vars).value().item();
  };
  const ValueAndGrad ad = value_and_grad(f, leaves);
  return compare_with_central_differences(ad.grads, eval, std::move(leaves), h, tol);
}

}  // namespace tape::ad
