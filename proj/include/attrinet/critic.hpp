#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "attrinet/taskgen.hpp"

namespace attrinet {

inline constexpr double kDefaultGradientPenaltyWeight = 10.0;

struct CriticShape {
  int num_classes = 5;
  int width = 64;   ///< channels of the first layer; doubles each layer
  int layers = 6;   ///< stride-2 AdaIN conv layers
};

/// Task-conditioned Wasserstein critic: stride-2 4×4 AdaIN convs followed by
/// a 3×3 single-channel read-out whose mean is the score.
template <typename T>
struct Critic {
  CriticShape shape;
  EmbeddingNet<T> embed;
  std::vector<Conv<T>> convs;   // hidden layers, then the read-out last
  std::vector<AdaIn<T>> norms;  // one per hidden layer

  int readout() const { return shape.layers; }

  std::vector<Mat<T>*> params() {
    std::vector<Mat<T>*> out;
    append_params(out, embed);
    for (auto& c : convs) append_params(out, c);
    for (auto& n : norms) append_params(out, n);
    return out;
  }

  static std::vector<ConvSpec> layer_specs(const CriticShape& s) {
    std::vector<ConvSpec> specs;
    int in = 1;
    for (int l = 0; l < s.layers; ++l) {
      const int out = s.width << l;
      specs.push_back({in, out, 4, 2, 1});
      in = out;
    }
    specs.push_back({in, 1, 3, 1, 1});
    return specs;
  }

  static Critic zeros(const CriticShape& s) {
    Critic c;
    c.shape = s;
    const int e = kTaskCodeRepeat * s.num_classes;
    c.embed = EmbeddingNet<T>::zeros(e, kEmbeddingDepth);
    for (const ConvSpec& spec : layer_specs(s)) c.convs.push_back(Conv<T>::zeros(spec));
    for (int l = 0; l < s.layers; ++l) c.norms.push_back(AdaIn<T>::zeros(c.convs[l].spec.out_channels, e));
    return c;
  }
};

template <typename T>
Critic<T> init_critic(const CriticShape& s, Rng& rng) {
  Critic<T> c = Critic<T>::zeros(s);
  const int e = kTaskCodeRepeat * s.num_classes;
  c.embed = init_embedding<T>(e, kEmbeddingDepth, rng);
  for (std::size_t i = 0; i < c.convs.size(); ++i) {
    c.convs[i] = init_conv<T>(c.convs[i].spec, i + 1 == c.convs.size() ? 1.0 : 2.0, rng);
  }
  for (auto& n : c.norms) n = init_adain<T>(n.channels(), e, rng);
  return c;
}

template <typename T>
struct CriticTape {
  std::vector<ConvCache<T>> conv;
  std::vector<AdaInCache<T>> norm;
  std::vector<Mat<T>> activated;
  int out_height = 0;
  int out_width = 0;
};

template <typename T>
T critic_forward(const Critic<T>& critic, const TaskStyles<T>& task, const Mat<T>& x, CriticTape<T>* tape = nullptr) {
  const int layers = critic.shape.layers;
  if (tape) {
    tape->conv.assign(layers + 1, {});
    tape->norm.assign(layers, {});
    tape->activated.assign(layers, {});
  }
  FeatureMap<T> h = as_feature_map(x);
  for (int l = 0; l < layers; ++l) {
    h = conv_forward(critic.convs[l], h, tape ? &tape->conv[l] : nullptr);
    h = adain_apply(h, task.styles[l], tape ? &tape->norm[l] : nullptr);
    relu_inplace(h);
    if (tape) tape->activated[l] = h.data;
  }
  const FeatureMap<T> out = conv_forward(critic.convs[layers], h, tape ? &tape->conv[layers] : nullptr);
  if (tape) {
    tape->out_height = out.height;
    tape->out_width = out.width;
  }
  return out.data.sum() / T(out.pixels());
}

/// Given dL/dscore, accumulates parameter and style gradients and returns dL/dx.
template <typename T>
Mat<T> critic_backward(const Critic<T>& critic, const TaskStyles<T>& task, const CriticTape<T>& tape, const T& dscore,
                       Critic<T>& grad, std::vector<Vec<T>>& dstyles) {
  const int layers = critic.shape.layers;
  FeatureMap<T> d{tape.out_height, tape.out_width, Mat<T>(1, tape.out_height * tape.out_width)};
  d.data.setConstant(dscore / T(d.pixels()));
  d = conv_backward(critic.convs[layers], d, tape.conv[layers], grad.convs[layers]);
  for (int l = layers - 1; l >= 0; --l) {
    relu_backward_inplace(d, tape.activated[l]);
    d = adain_apply_backward(d, task.styles[l], tape.norm[l], dstyles[l]);
    d = conv_backward(critic.convs[l], d, tape.conv[l], grad.convs[l]);
  }
  return as_image(d);
}

inline void check_critic_input(const CriticShape& s, Eigen::Index h, Eigen::Index w) {
  const Eigen::Index f = Eigen::Index(1) << s.layers;
  if (h < f || w < f || h % f != 0 || w % f != 0) {
    throw std::invalid_argument("critic_score: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " incompatible with " + std::to_string(s.layers) + " stride-2 layers");
  }
}

template <typename T>
T critic_score(const Mat<T>& x, int c, const Critic<T>& critic) {
  check_critic_input(critic.shape, x.rows(), x.cols());
  return critic_forward(critic, prepare_task<T>(critic, c), x);
}

/// Score and ∇_x score for one input (parameter gradients discarded).
template <typename T>
std::pair<T, Mat<T>> critic_input_gradient(const Critic<T>& critic, const TaskStyles<T>& task, const Mat<T>& x) {
  CriticTape<T> tape;
  const T score = critic_forward(critic, task, x, &tape);
  Critic<T> scratch = Critic<T>::zeros(critic.shape);
  auto ds = zero_style_grads(task);
  return {score, critic_backward(critic, task, tape, T(1), scratch, ds)};
}

/// Mean over points of (‖∇_x D(x)‖₂ − 1)². When `grad` is given, adds the exact
/// parameter gradient of that mean: with g = ∇_x D, ∂‖g‖/∂θ = ∇_θ(g·v)/‖g‖ for
/// v = g held fixed, and ∇_θ(g·v) is the tangent of ∇_θ D evaluated at the dual
/// input x + εv.
template <typename T>
T gradient_penalty_at(const Critic<T>& critic, const std::vector<Mat<T>>& points, int c, Critic<T>* grad = nullptr) {
  if (points.empty()) return T(0);
  using D = Dual<T>;
  const TaskStyles<T> task = prepare_task<T>(critic, c);
  Critic<D> dual_critic;
  TaskStyles<D> dual_task;
  Critic<D> dual_grad;
  std::vector<Vec<D>> dual_dstyles;
  if (grad) {
    dual_critic = Critic<D>::zeros(critic.shape);
    copy_params(dual_critic, critic);
    dual_task = prepare_task<D>(dual_critic, c);
    dual_grad = Critic<D>::zeros(critic.shape);
    dual_dstyles = zero_style_grads(dual_task);
  }

  const T inv_n = T(1) / T(points.size());
  T penalty = T(0);
  for (const Mat<T>& p : points) {
    const auto [score, g] = critic_input_gradient(critic, task, p);
    const T norm = std::sqrt(g.squaredNorm());
    penalty += (norm - T(1)) * (norm - T(1)) * inv_n;
    if (!grad || !(norm > T(0))) continue;

    const T coeff = T(2) * (norm - T(1)) / norm * inv_n;
    CriticTape<D> tape;
    critic_forward(dual_critic, dual_task, make_dual<T>(p, g), &tape);
    critic_backward(dual_critic, dual_task, tape, D(T(1), T(0)), dual_grad, dual_dstyles);
    task_backward(dual_critic, dual_task, dual_dstyles, dual_grad);
    // Tangent parts now hold ∇_θ(g·v).
    auto gp = dual_grad.params();
    auto tp = grad->params();
    for (std::size_t i = 0; i < gp.size(); ++i) {
      *tp[i] += coeff * tangents_of(*gp[i]);
      gp[i]->setZero();
    }
    for (auto& s : dual_dstyles) s.setZero();
  }
  return penalty;
}

/// Interpolates x̃ = t·real + (1−t)·fake with t ~ U[0,1] per pair.
template <typename T>
std::vector<Mat<T>> interpolate_pairs(const std::vector<Mat<T>>& real, const std::vector<Mat<T>>& fake, Rng& rng) {
  if (real.size() != fake.size()) throw std::invalid_argument("gradient_penalty: batch sizes differ");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Mat<T>> out;
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real[i].rows() != fake[i].rows() || real[i].cols() != fake[i].cols()) {
      throw std::invalid_argument("gradient_penalty: image shapes differ");
    }
    const T t = T(unit(rng));
    out.push_back(t * real[i] + (T(1) - t) * fake[i]);
  }
  return out;
}

template <typename T>
T gradient_penalty(const std::vector<Mat<T>>& real, const std::vector<Mat<T>>& fake, int c, const Critic<T>& critic,
                   Rng& rng, Critic<T>* grad = nullptr) {
  return gradient_penalty_at(critic, interpolate_pairs(real, fake, rng), c, grad);
}

/// mean(fake scores) − mean(real scores) + λ_gp·penalty. Minimizing it raises
/// real-negative scores above counterfactual scores.
inline double critic_objective(const std::vector<double>& fake_scores, const std::vector<double>& real_scores,
                               double penalty, double lambda_gp) {
  if (fake_scores.empty() || real_scores.empty()) throw std::invalid_argument("critic_loss: empty batch");
  double f = 0, r = 0;
  for (double s : fake_scores) f += s;
  for (double s : real_scores) r += s;
  return f / fake_scores.size() - r / real_scores.size() + lambda_gp * penalty;
}

struct CriticLossTerms {
  double loss = 0;
  double penalty = 0;
  double mean_real = 0;
  double mean_fake = 0;
};

/// Critic objective on (real class-negative, counterfactual) batches for class c,
/// accumulating its parameter gradient into `grad` when given.
template <typename T>
CriticLossTerms critic_loss(const std::vector<Mat<T>>& real_neg, const std::vector<Mat<T>>& fake, int c,
                            const Critic<T>& critic, double lambda_gp, Rng& rng, Critic<T>* grad = nullptr) {
  if (real_neg.empty() || fake.empty()) throw std::invalid_argument("critic_loss: empty batch");
  const TaskStyles<T> task = prepare_task<T>(critic, c);
  std::vector<Vec<T>> dstyles = zero_style_grads(task);
  std::vector<double> real_scores, fake_scores;
  auto score_batch = [&](const std::vector<Mat<T>>& batch, std::vector<double>& scores, T sign) {
    const T seed = sign / T(batch.size());
    for (const Mat<T>& x : batch) {
      check_critic_input(critic.shape, x.rows(), x.cols());
      CriticTape<T> tape;
      const T s = critic_forward(critic, task, x, grad ? &tape : nullptr);
      scores.push_back(static_cast<double>(value_of(s)));
      if (grad) critic_backward(critic, task, tape, seed, *grad, dstyles);
    }
  };
  score_batch(fake, fake_scores, T(1));
  score_batch(real_neg, real_scores, T(-1));
  if (grad) task_backward(critic, task, dstyles, *grad);

  CriticLossTerms terms;
  if (lambda_gp > 0) {
    Critic<T> gp_grad;
    if (grad) gp_grad = Critic<T>::zeros(critic.shape);
    terms.penalty = static_cast<double>(gradient_penalty(real_neg, fake, c, critic, rng, grad ? &gp_grad : nullptr));
    if (grad) {
      auto g = grad->params();
      auto p = gp_grad.params();
      for (std::size_t i = 0; i < g.size(); ++i) *g[i] += T(lambda_gp) * *p[i];
    }
  }
  terms.loss = critic_objective(fake_scores, real_scores, terms.penalty, lambda_gp);
  for (double s : real_scores) terms.mean_real += s / real_scores.size();
  for (double s : fake_scores) terms.mean_fake += s / fake_scores.size();
  return terms;
}

}  // namespace attrinet
