#pragma once

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attrinet/taskgen.hpp"

namespace attrinet {

inline constexpr int kDefaultPoolFactor = 32;

/// Per-class logistic regression over the γ-average-pooled attribution map.
/// No intercept: a zero map always predicts exactly 0.5.
template <typename T>
struct ClassifierHead {
  int gamma = kDefaultPoolFactor;
  std::vector<Mat<T>> weights;  // one (h/γ)×(w/γ) grid per class

  int num_classes() const { return static_cast<int>(weights.size()); }

  std::vector<Mat<T>*> params() {
    std::vector<Mat<T>*> out;
    for (auto& w : weights) out.push_back(&w);
    return out;
  }

  static ClassifierHead zeros(int num_classes, int height, int width, int gamma) {
    if (gamma <= 0 || height % gamma != 0 || width % gamma != 0) {
      throw std::invalid_argument("ClassifierHead: image " + std::to_string(height) + "x" + std::to_string(width) +
                                  " not divisible by pooling factor " + std::to_string(gamma));
    }
    ClassifierHead h;
    h.gamma = gamma;
    h.weights.assign(num_classes, Mat<T>::Zero(height / gamma, width / gamma));
    return h;
  }
};

template <typename T>
Mat<T> average_pool(const Mat<T>& map, int gamma) {
  if (gamma <= 0 || map.rows() % gamma != 0 || map.cols() % gamma != 0) {
    throw std::invalid_argument("average_pool: map not divisible by pooling factor");
  }
  Mat<T> out(map.rows() / gamma, map.cols() / gamma);
  const T inv = T(1) / T(gamma * gamma);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = map.block(i * gamma, j * gamma, gamma, gamma).sum() * inv;
    }
  }
  return out;
}

template <typename T>
T sigmoid(const T& z) {
  using std::exp;
  return z >= T(0) ? T(1) / (T(1) + exp(-z)) : exp(z) / (T(1) + exp(z));
}

template <typename T>
T head_logit(const Mat<T>& map, int c, const ClassifierHead<T>& head) {
  if (c < 0 || c >= head.num_classes()) throw std::out_of_range("predict_class: class index out of range");
  const Mat<T> pooled = average_pool(map, head.gamma);
  const Mat<T>& w = head.weights[c];
  if (pooled.rows() != w.rows() || pooled.cols() != w.cols()) {
    throw std::invalid_argument("predict_class: map shape does not match stored head weights");
  }
  return (pooled.array() * w.array()).sum();
}

/// Accumulates dL/dw for class c and returns dL/dmap.
template <typename T>
Mat<T> head_logit_backward(const Mat<T>& map, int c, const ClassifierHead<T>& head, const T& dlogit,
                           ClassifierHead<T>& grad) {
  const int g = head.gamma;
  grad.weights[c] += dlogit * average_pool(map, g);
  Mat<T> dmap(map.rows(), map.cols());
  const T inv = dlogit / T(g * g);
  for (Eigen::Index i = 0; i < map.rows(); ++i) {
    for (Eigen::Index j = 0; j < map.cols(); ++j) dmap(i, j) = head.weights[c](i / g, j / g) * inv;
  }
  return dmap;
}

template <typename T>
T predict_class(const Mat<T>& map, int c, const ClassifierHead<T>& head) {
  return sigmoid(head_logit(map, c, head));
}

/// Probabilities for every class via one generator pass per task.
template <typename T>
Vec<T> predict_all(const Mat<T>& x, const Generator<T>& g, const ClassifierHead<T>& head) {
  Vec<T> probs(head.num_classes());
  for (int c = 0; c < head.num_classes(); ++c) probs(c) = predict_class(generate_attribution(x, c, g), c, head);
  return probs;
}

/// Learnable prototype maps for class-negative and class-positive samples.
template <typename T>
struct ClassCenters {
  std::vector<Mat<T>> negative;
  std::vector<Mat<T>> positive;

  std::vector<Mat<T>*> params() {
    std::vector<Mat<T>*> out;
    for (auto& m : negative) out.push_back(&m);
    for (auto& m : positive) out.push_back(&m);
    return out;
  }

  const Mat<T>& center(int c, bool positive_side) const { return positive_side ? positive[c] : negative[c]; }

  static ClassCenters zeros(int num_classes, int height, int width) {
    ClassCenters cc;
    cc.negative.assign(num_classes, Mat<T>::Zero(height, width));
    cc.positive.assign(num_classes, Mat<T>::Zero(height, width));
    return cc;
  }
};

/// ½(mean over negatives of ‖M − v₀‖² + mean over positives of ‖M − v₁‖²).
/// An empty polarity group contributes 0. When `dmaps` is given it receives
/// dL/dM per map.
template <typename T>
T center_loss(const std::vector<Mat<T>>& maps, const std::vector<bool>& positive, const ClassCenters<T>& centers, int c,
              std::vector<Mat<T>>* dmaps = nullptr) {
  if (maps.size() != positive.size()) throw std::invalid_argument("center_loss: maps and labels differ in length");
  std::size_t n_pos = 0;
  for (bool p : positive) n_pos += p;
  const std::size_t n_neg = maps.size() - n_pos;
  if (!maps.empty() && (n_pos == 0 || n_neg == 0)) {
    std::cerr << "warning: center_loss: class " << c << " batch has an empty " << (n_pos == 0 ? "positive" : "negative")
              << " group\n";
  }
  T loss = T(0);
  if (dmaps) dmaps->clear();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Mat<T> diff = maps[i] - centers.center(c, positive[i]);
    const T inv = T(1) / T(positive[i] ? n_pos : n_neg);
    loss += T(0.5) * diff.squaredNorm() * inv;
    if (dmaps) dmaps->push_back(diff * inv);
  }
  return loss;
}

/// Center-loss update: v ← v + α·Σ(m − v)/(1 + n) per polarity group; an
/// empty group leaves its center unchanged.
template <typename T>
ClassCenters<T> update_centers(const std::vector<Mat<T>>& maps, const std::vector<bool>& positive,
                               ClassCenters<T> centers, int c, double alpha) {
  if (maps.size() != positive.size()) throw std::invalid_argument("update_centers: maps and labels differ in length");
  for (bool side : {false, true}) {
    Mat<T>& v = side ? centers.positive[c] : centers.negative[c];
    Mat<T> delta = Mat<T>::Zero(v.rows(), v.cols());
    int count = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      if (positive[i] != side) continue;
      delta += maps[i] - v;
      ++count;
    }
    if (count > 0) v += T(alpha) * delta / T(1 + count);
  }
  return centers;
}

}  // namespace attrinet
