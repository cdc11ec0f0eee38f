#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "attrinet/layers.hpp"
#include "attrinet/tensor.hpp"

namespace attrinet::testing {

/// Central difference of f with respect to one scalar, restored afterwards.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-6) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2 * h);
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), the norm-wise relative error of an analytic
/// gradient against its numeric estimate.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale > 0 ? std::sqrt(diff) / scale : std::sqrt(diff);
}

/// Compares analytic gradients of a parameter list with central differences
/// on up to `per_tensor` evenly spaced entries of each tensor.
inline double check_params(const std::function<double()>& f, const std::vector<Mat<double>*>& params,
                           const std::vector<Mat<double>*>& grads, int per_tensor = 6) {
  std::vector<double> a, n;
  for (std::size_t t = 0; t < params.size(); ++t) {
    const Eigen::Index size = params[t]->size();
    if (size == 0) continue;
    const Eigen::Index step = std::max<Eigen::Index>(1, size / per_tensor);
    for (Eigen::Index i = 0; i < size; i += step) {
      a.push_back(grads[t]->data()[i]);
      n.push_back(central_difference(f, params[t]->data()[i]));
    }
  }
  return relative_error(a, n);
}

inline Mat<double> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat<double> m(r, c);
  fill_normal(m, scale, rng);
  return m;
}

/// Uniform entries in (-bound, bound).
inline Mat<double> random_image(Eigen::Index r, Eigen::Index c, Rng& rng, double bound = 0.9) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace attrinet::testing
