#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "attrinet/layers.hpp"

namespace attrinet {

/// Each one-hot entry of a task code is repeated this many times.
inline constexpr int kTaskCodeRepeat = 20;
inline constexpr int kEmbeddingDepth = 8;
inline constexpr double kReadoutInitScale = 0.1;

template <typename T = float>
Vec<T> make_task_code(int c, int num_classes) {
  if (num_classes <= 0) throw std::invalid_argument("make_task_code: class count must be positive");
  if (c < 0 || c >= num_classes) {
    throw std::out_of_range("make_task_code: class " + std::to_string(c) + " outside [0, " +
                            std::to_string(num_classes) + ")");
  }
  Vec<T> code = Vec<T>::Zero(kTaskCodeRepeat * num_classes);
  code.segment(kTaskCodeRepeat * c, kTaskCodeRepeat).setConstant(T(1));
  return code;
}

template <typename T>
Vec<T> embed_task(const Vec<T>& code, const EmbeddingNet<T>& net) {
  return embed_forward(net, code);
}

struct GeneratorShape {
  int num_classes = 5;
  int width = 64;       ///< channels after the first conv; doubles at each downsampling
  int res_blocks = 6;
};

/// Encoder (7×7, two stride-2 4×4), AdaIN residual bottleneck, decoder (two
/// stride-2 4×4 deconvs, 7×7 read-out). Every conv except the read-out is
/// followed by AdaIN driven by the task embedding.
template <typename T>
struct Generator {
  GeneratorShape shape;
  EmbeddingNet<T> embed;
  std::vector<Conv<T>> convs;
  std::vector<AdaIn<T>> norms;  // norms[i] follows convs[i]; the read-out conv has none

  int first_res() const { return 3; }
  int first_up() const { return 3 + 2 * shape.res_blocks; }
  int readout() const { return first_up() + 2; }

  std::vector<Mat<T>*> params() {
    std::vector<Mat<T>*> out;
    append_params(out, embed);
    for (auto& c : convs) append_params(out, c);
    for (auto& n : norms) append_params(out, n);
    return out;
  }

  static Generator zeros(const GeneratorShape& s) {
    Generator g;
    g.shape = s;
    const int e = kTaskCodeRepeat * s.num_classes;
    g.embed = EmbeddingNet<T>::zeros(e, kEmbeddingDepth);
    for (const ConvSpec& spec : layer_specs(s)) {
      g.convs.push_back(Conv<T>::zeros(spec));
    }
    for (std::size_t i = 0; i + 1 < g.convs.size(); ++i) {
      g.norms.push_back(AdaIn<T>::zeros(g.convs[i].spec.out_channels, e));
    }
    return g;
  }

  static std::vector<ConvSpec> layer_specs(const GeneratorShape& s) {
    const int w = s.width;
    std::vector<ConvSpec> specs{{1, w, 7, 1, 3}, {w, 2 * w, 4, 2, 1}, {2 * w, 4 * w, 4, 2, 1}};
    for (int r = 0; r < 2 * s.res_blocks; ++r) specs.push_back({4 * w, 4 * w, 3, 1, 1});
    specs.push_back({4 * w, 2 * w, 4, 2, 1, true});
    specs.push_back({2 * w, w, 4, 2, 1, true});
    specs.push_back({w, 1, 7, 1, 3});
    return specs;
  }
};

template <typename T>
Generator<T> init_generator(const GeneratorShape& s, Rng& rng) {
  Generator<T> g = Generator<T>::zeros(s);
  const int e = kTaskCodeRepeat * s.num_classes;
  g.embed = init_embedding<T>(e, kEmbeddingDepth, rng);
  for (std::size_t i = 0; i < g.convs.size(); ++i) {
    const bool readout = i + 1 == g.convs.size();
    g.convs[i] = init_conv<T>(g.convs[i].spec, readout ? 1.0 : 2.0, rng);
  }
  // Small read-out so training starts close to the identity counterfactual.
  g.convs[g.readout()].weight *= T(kReadoutInitScale);
  for (auto& n : g.norms) n = init_adain<T>(n.channels(), e, rng);
  return g;
}

/// Per-task conditioning: embedding plus every AdaIN layer's style vector.
template <typename T>
struct TaskStyles {
  int task = 0;
  Vec<T> embedding;
  EmbeddingCache<T> embed_cache;
  std::vector<Vec<T>> styles;
};

template <typename T, typename Net>
TaskStyles<T> prepare_task(const Net& net, int c) {
  TaskStyles<T> t;
  t.task = c;
  t.embedding = embed_forward(net.embed, make_task_code<T>(c, net.shape.num_classes), &t.embed_cache);
  for (const auto& n : net.norms) t.styles.push_back(adain_style(n, t.embedding));
  return t;
}

/// Zero-initialized style gradients matching `t`.
template <typename T>
std::vector<Vec<T>> zero_style_grads(const TaskStyles<T>& t) {
  std::vector<Vec<T>> out;
  for (const auto& s : t.styles) out.push_back(Vec<T>::Zero(s.size()));
  return out;
}

/// Pushes accumulated style gradients through the AdaIN projections and the
/// embedding network.
template <typename T, typename Net>
void task_backward(const Net& net, const TaskStyles<T>& t, const std::vector<Vec<T>>& dstyles, Net& grad) {
  Vec<T> dembed = Vec<T>::Zero(t.embedding.size());
  for (std::size_t i = 0; i < net.norms.size(); ++i) {
    dembed += adain_style_backward(net.norms[i], t.embedding, dstyles[i], grad.norms[i]);
  }
  embed_backward(net.embed, t.embed_cache, std::move(dembed), grad.embed);
}

template <typename T>
struct GeneratorTape {
  Mat<T> input;
  Mat<T> counterfactual;  // tanh(x + u)
  std::vector<ConvCache<T>> conv;
  std::vector<AdaInCache<T>> norm;
  std::vector<Mat<T>> activated;  // post-ReLU maps; empty where no ReLU follows
};

inline void check_generator_input(Eigen::Index h, Eigen::Index w) {
  if (h <= 0 || w <= 0 || h % 4 != 0 || w % 4 != 0) {
    throw std::invalid_argument("generate_attribution: image " + std::to_string(h) + "x" + std::to_string(w) +
                                " must have both sides divisible by 4");
  }
}

/// M_c(x) = tanh(x + u) − x with u the read-out of the task-conditioned network.
template <typename T>
Mat<T> generator_forward(const Generator<T>& g, const TaskStyles<T>& task, const Mat<T>& x,
                         GeneratorTape<T>* tape = nullptr) {
  check_generator_input(x.rows(), x.cols());
  const std::size_t n = g.convs.size();
  std::vector<ConvCache<T>> cc(tape ? n : 0);
  std::vector<AdaInCache<T>> nc(tape ? n - 1 : 0);
  std::vector<Mat<T>> act(tape ? n - 1 : 0);

  auto conv_norm = [&](std::size_t i, const FeatureMap<T>& in, bool relu) {
    FeatureMap<T> h = conv_forward(g.convs[i], in, tape ? &cc[i] : nullptr);
    h = adain_apply(h, task.styles[i], tape ? &nc[i] : nullptr);
    if (relu) {
      relu_inplace(h);
      if (tape) act[i] = h.data;
    }
    return h;
  };

  FeatureMap<T> h = as_feature_map(x);
  for (int i = 0; i < 3; ++i) h = conv_norm(i, h, true);
  for (int r = 0; r < g.shape.res_blocks; ++r) {
    const std::size_t a = g.first_res() + 2 * r;
    FeatureMap<T> b = conv_norm(a, h, true);
    b = conv_norm(a + 1, b, false);
    h.data += b.data;
  }
  for (int i = 0; i < 2; ++i) h = conv_norm(g.first_up() + i, h, true);
  const FeatureMap<T> u = conv_forward(g.convs[g.readout()], h, tape ? &cc[g.readout()] : nullptr);

  Mat<T> cf(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    using std::tanh;
    cf.data()[i] = tanh(x.data()[i] + u.data.data()[i]);
  }
  Mat<T> map = cf - x;
  if (tape) {
    tape->input = x;
    tape->counterfactual = std::move(cf);
    tape->conv = std::move(cc);
    tape->norm = std::move(nc);
    tape->activated = std::move(act);
  }
  return map;
}

/// Accumulates parameter gradients (except the embedding path, see
/// task_backward) and style gradients from dL/dM.
template <typename T>
void generator_backward(const Generator<T>& g, const TaskStyles<T>& task, const GeneratorTape<T>& tape,
                        const Mat<T>& dmap, Generator<T>& grad, std::vector<Vec<T>>& dstyles) {
  // M = tanh(x+u) − x, so dM/du = 1 − tanh².
  FeatureMap<T> dh;
  dh.height = static_cast<int>(dmap.rows());
  dh.width = static_cast<int>(dmap.cols());
  dh.data.resize(1, dmap.size());
  for (Eigen::Index i = 0; i < dmap.size(); ++i) {
    const T t = tape.counterfactual.data()[i];
    dh.data.data()[i] = dmap.data()[i] * (T(1) - t * t);
  }

  auto conv_norm_back = [&](std::size_t i, FeatureMap<T> d, bool relu, bool need_dx) {
    if (relu) relu_backward_inplace(d, tape.activated[i]);
    d = adain_apply_backward(d, task.styles[i], tape.norm[i], dstyles[i]);
    return conv_backward(g.convs[i], d, tape.conv[i], grad.convs[i], need_dx);
  };

  dh = conv_backward(g.convs[g.readout()], dh, tape.conv[g.readout()], grad.convs[g.readout()]);
  for (int i = 1; i >= 0; --i) dh = conv_norm_back(g.first_up() + i, std::move(dh), true, true);
  for (int r = g.shape.res_blocks - 1; r >= 0; --r) {
    const std::size_t a = g.first_res() + 2 * r;
    FeatureMap<T> db = conv_norm_back(a + 1, dh, false, true);
    db = conv_norm_back(a, std::move(db), true, true);
    dh.data += db.data;
  }
  for (int i = 2; i >= 0; --i) dh = conv_norm_back(i, std::move(dh), true, i > 0);
}

/// One-shot attribution for class c (embeds the task each call).
template <typename T>
Mat<T> generate_attribution(const Mat<T>& x, int c, const Generator<T>& g) {
  return generator_forward(g, prepare_task<T>(g, c), x);
}

/// x̂ = x + M_c(x).
template <typename T>
Mat<T> counterfactual(const Mat<T>& x, const Mat<T>& map) {
  if (x.rows() != map.rows() || x.cols() != map.cols()) {
    throw std::invalid_argument("counterfactual: image and attribution map shapes differ");
  }
  return x + map;
}

}  // namespace attrinet
