#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fdy/autodiff.hpp"

namespace fdy {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  Index worst_index = 0;
  double analytic = 0.0;  // at the worst coordinate
  double numeric = 0.0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate. Relative error per coordinate is
/// |a - n| / max(|a|, |n|, floor). `f` must be deterministic.
template <class Scalar>
GradCheckResult finite_diff_check(const std::function<Var<Scalar>(const std::vector<Var<Scalar>>&)>& f,
                                  const std::vector<Tensor4<Scalar>>& points, Scalar step, double floor = 1e-8) {
  std::vector<Var<Scalar>> leaves;
  for (const auto& p : points) leaves.push_back(Var<Scalar>::leaf(p, true));
  const Var<Scalar> loss = f(leaves);
  reverse_sweep(loss);

  auto evaluate = [&](std::size_t which, Index index, Scalar delta) {
    NoGradGuard guard;
    std::vector<Var<Scalar>> probe;
    for (std::size_t i = 0; i < points.size(); ++i) {
      Tensor4<Scalar> t = points[i];
      if (i == which) t[index] += delta;
      probe.push_back(Var<Scalar>::constant(std::move(t)));
    }
    return static_cast<double>(f(probe).value()[0]);
  };

  GradCheckResult result;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const bool has_grad = leaves[i].grad().size() == points[i].size();
    for (Index j = 0; j < points[i].size(); ++j) {
      const double numeric = (evaluate(i, j, step) - evaluate(i, j, -step)) / (2.0 * static_cast<double>(step));
      const double analytic = has_grad ? static_cast<double>(leaves[i].grad()[j]) : 0.0;
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double err = std::abs(analytic - numeric) / denom;
      if (err > result.max_rel_error) {
        result = GradCheckResult{err, i, j, analytic, numeric};
      }
    }
  }
  return result;
}

/// Same comparison for a function that closes over existing leaves (for
/// example a layer's parameters): values are perturbed in place and restored.
template <class Scalar>
GradCheckResult finite_diff_check_inplace(const std::function<Var<Scalar>()>& f, std::vector<Var<Scalar>> leaves,
                                          Scalar step, double floor = 1e-8) {
  reverse_sweep(f());
  std::vector<Tensor4<Scalar>> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad().size() == l.value().size() ? l.grad() : Tensor4<Scalar>(l.shape()));
  GradCheckResult result;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto& value = leaves[i].mutable_value();
    for (Index j = 0; j < value.size(); ++j) {
      const Scalar saved = value[j];
      double plus, minus;
      {
        NoGradGuard guard;
        value[j] = saved + step;
        plus = static_cast<double>(f().value()[0]);
        value[j] = saved - step;
        minus = static_cast<double>(f().value()[0]);
        value[j] = saved;
      }
      const double numeric = (plus - minus) / (2.0 * static_cast<double>(step));
      const double a = static_cast<double>(analytic[i][j]);
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err > result.max_rel_error) result = GradCheckResult{err, i, j, a, numeric};
    }
  }
  return result;
}

/// Single-tensor convenience overload.
template <class Scalar>
double finite_diff_check(const std::function<Var<Scalar>(const Var<Scalar>&)>& f, const Tensor4<Scalar>& point,
                         Scalar step, double floor = 1e-8) {
  std::function<Var<Scalar>(const std::vector<Var<Scalar>>&)> wrapped =
      [&f](const std::vector<Var<Scalar>>& v) { return f(v[0]); };
  return finite_diff_check<Scalar>(wrapped, {point}, step, floor).max_rel_error;
}

}  // namespace fdy
