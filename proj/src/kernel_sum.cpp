#include "msd/kernel_sum.hpp"

#include <cmath>

namespace msd {

WeightedSum gaussian_weighted_sum(const double* xs, const double* ys, std::size_t n, double zx, double zy,
                                  double shift, double inv_two_var) {
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - zx;
    const double dy = ys[i] - zy;
    const double w = std::exp(-(dx * dx + dy * dy - shift) * inv_two_var);
    sw += w;
    sx += w * xs[i];
    sy += w * ys[i];
  }
  return {sw, sx, sy};
}

}  // namespace msd
