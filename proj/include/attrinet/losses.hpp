#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "attrinet/tensor.hpp"

namespace attrinet {

/// L_adv = mean(−score) over counterfactuals of class-positive inputs.
inline double adversarial_loss(const std::vector<double>& fake_scores) {
  if (fake_scores.empty()) throw std::invalid_argument("adversarial_loss: empty batch");
  double s = 0;
  for (double v : fake_scores) s -= v;
  return s / static_cast<double>(fake_scores.size());
}

/// dL_adv/dscore_i.
inline double adversarial_loss_grad(std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("adversarial_loss: empty batch");
  return -1.0 / static_cast<double>(batch_size);
}

/// How ‖M‖₁ is reduced over pixels.
enum class L1Reduction {
  Sum,        ///< sum of |M| over pixels
  PixelMean,  ///< sum divided by the pixel count
};

template <typename T>
T l1_norm(const Mat<T>& m, L1Reduction r) {
  const T s = m.cwiseAbs().sum();
  return r == L1Reduction::Sum ? s : s / T(m.size());
}

/// α₀·mean‖M‖₁ over class-negative maps + α₁·mean‖M‖₁ over class-positive maps.
/// Optional outputs receive dL/dM (subgradient 0 at M = 0).
template <typename T>
T regularization_loss(const std::vector<Mat<T>>& neg_maps, const std::vector<Mat<T>>& pos_maps, double alpha_0,
                      double alpha_1, L1Reduction reduction = L1Reduction::Sum, std::vector<Mat<T>>* dneg = nullptr,
                      std::vector<Mat<T>>* dpos = nullptr) {
  if (neg_maps.empty() && pos_maps.empty()) throw std::invalid_argument("regularization_loss: both groups empty");
  auto group = [&](const std::vector<Mat<T>>& maps, double alpha, std::vector<Mat<T>>* dmaps) {
    if (dmaps) dmaps->clear();
    if (maps.empty()) return T(0);
    T total = T(0);
    const T inv = T(1) / T(maps.size());
    for (const Mat<T>& m : maps) {
      total += l1_norm(m, reduction);
      if (dmaps) {
        const T scale = T(alpha) * inv / (reduction == L1Reduction::Sum ? T(1) : T(m.size()));
        dmaps->push_back(m.unaryExpr([scale](const T& v) { return v > T(0) ? scale : (v < T(0) ? -scale : T(0)); }));
      }
    }
    return T(alpha) * total * inv;
  };
  return group(neg_maps, alpha_0, dneg) + group(pos_maps, alpha_1, dpos);
}

inline constexpr double kBceEpsilon = 1e-7;

/// Per sample Σ_c BCE(p_c, y_c), averaged over the batch. Probabilities are
/// clamped to [ε, 1−ε].
inline double classification_loss(const Mat<double>& probs, const Mat<double>& labels) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols()) {
    throw std::invalid_argument("classification_loss: probs and labels shapes differ");
  }
  if (probs.rows() == 0) throw std::invalid_argument("classification_loss: empty batch");
  double total = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = std::clamp(probs(i, c), kBceEpsilon, 1.0 - kBceEpsilon);
      const double y = labels(i, c);
      total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
  }
  return total / static_cast<double>(probs.rows());
}

/// dL/dp for classification_loss; zero where the clamp is active.
inline Mat<double> classification_loss_grad(const Mat<double>& probs, const Mat<double>& labels) {
  Mat<double> g(probs.rows(), probs.cols());
  const double inv = 1.0 / static_cast<double>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      const double y = labels(i, c);
      g(i, c) = (p < kBceEpsilon || p > 1.0 - kBceEpsilon) ? 0.0 : (-y / p + (1.0 - y) / (1.0 - p)) * inv;
    }
  }
  return g;
}

/// d BCE / d logit for a single (sample, class) term, divided by the batch size.
/// Equals classification_loss_grad · σ'(z) inside the clamp.
inline double bce_logit_grad(double prob, double label, std::size_t batch_size) {
  if (prob < kBceEpsilon || prob > 1.0 - kBceEpsilon) return 0.0;
  return (prob - label) / static_cast<double>(batch_size);
}

struct LossComponents {
  double cls = 0;
  double adv = 0;
  double reg = 0;
  double ctr = 0;
};

struct LossWeights {
  double lambda_cls = 100.0;
  double lambda_adv = 1.0;
  double lambda_reg = 100.0;
  double lambda_ctr = 0.01;
  bool use_cls = true;
  bool use_adv = true;
  bool use_reg = true;
  bool use_ctr = true;

  double cls() const { return use_cls ? lambda_cls : 0.0; }
  double adv() const { return use_adv ? lambda_adv : 0.0; }
  double reg() const { return use_reg ? lambda_reg : 0.0; }
  double ctr() const { return use_ctr ? lambda_ctr : 0.0; }
};

/// λ_cls·L_cls + λ_adv·L_adv + λ_reg·L_reg + λ_ctr·L_ctr; disabled terms contribute 0.
inline double total_generator_loss(const LossComponents& l, const LossWeights& w) {
  double total = 0;
  if (w.use_cls) total += w.lambda_cls * l.cls;
  if (w.use_adv) total += w.lambda_adv * l.adv;
  if (w.use_reg) total += w.lambda_reg * l.reg;
  if (w.use_ctr) total += w.lambda_ctr * l.ctr;
  return total;
}

}  // namespace attrinet
