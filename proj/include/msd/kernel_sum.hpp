#pragma once

#include <cstddef>

namespace msd {

struct WeightedSum {
  double weight = 0.0;
  double x = 0.0;
  double y = 0.0;

  WeightedSum& operator+=(const WeightedSum& o) {
    weight += o.weight;
    x += o.x;
    y += o.y;
    return *this;
  }
};

/// Sums w_i, w_i x_i, w_i y_i over n points with
/// w_i = exp(-(|p_i - z|^2 - shift) * inv_two_var).
WeightedSum gaussian_weighted_sum(const double* xs, const double* ys, std::size_t n, double zx, double zy,
                                  double shift, double inv_two_var);

}  // namespace msd
