#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "attrinet/tensor.hpp"

namespace attrinet {

/// Adaptive-moment optimizer over a fixed list of parameter matrices.
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps = 1e-8) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  template <typename T>
  void step(const std::vector<Mat<T>*>& params, const std::vector<Mat<T>*>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads length mismatch");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Mat<double>::Zero(p->rows(), p->cols()));
        v_.push_back(Mat<double>::Zero(p->rows(), p->cols()));
      }
    }
    if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat<double> g = grads[i]->template cast<double>();
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      const Mat<double> update = (lr_ / c1) * m_[i].array() / ((v_[i].array() / c2).sqrt() + eps_);
      *params[i] -= update.template cast<T>();
    }
  }

  long steps() const { return t_; }

 private:
  double lr_ = 1e-4;
  double beta1_ = 0.5;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  std::vector<Mat<double>> m_;
  std::vector<Mat<double>> v_;
};

}  // namespace attrinet
