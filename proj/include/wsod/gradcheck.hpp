#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "wsod/error.hpp"

namespace wsod {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

/// Central-difference gradient check. For each coordinate k the numeric
/// derivative (f(x + eps e_k) - f(x - eps e_k)) / 2 eps is compared against
/// analytic[k]; the relative error is |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& loss_fn,
                                         std::vector<double> point, std::span<const double> analytic,
                                         double eps = 1e-5) {
  if (analytic.size() != point.size()) throw ShapeError("finite_diff_check: gradient length mismatch");
  GradCheckResult res;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const double saved = point[k];
    point[k] = saved + eps;
    const double up = loss_fn(point);
    point[k] = saved - eps;
    const double down = loss_fn(point);
    point[k] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[k]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[k] - numeric) / denom;
    if (rel > res.max_rel_error) res = {rel, k};
  }
  return res;
}

}  // namespace wsod
