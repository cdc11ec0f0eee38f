#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "attrinet/tensor.hpp"

namespace attrinet {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Convolution / transposed convolution (no bias; every conv here is either
// followed by AdaIN or is a linear read-out).

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  bool transposed = false;

  int out_height(int h) const { return transposed ? (h - 1) * stride - 2 * pad + kernel : (h + 2 * pad - kernel) / stride + 1; }
  int out_width(int w) const { return out_height(w); }
  int fan_in() const { return in_channels * kernel * kernel; }
};

template <typename T>
struct Conv {
  ConvSpec spec;
  /// conv: out×(in·k·k); transposed: in×(out·k·k).
  Mat<T> weight;

  static Conv zeros(const ConvSpec& s) {
    Conv c;
    c.spec = s;
    c.weight = s.transposed ? Mat<T>::Zero(s.in_channels, s.out_channels * s.kernel * s.kernel)
                            : Mat<T>::Zero(s.out_channels, s.in_channels * s.kernel * s.kernel);
    return c;
  }
};

template <typename T>
struct ConvCache {
  int in_height = 0;
  int in_width = 0;
  Mat<T> saved;  // im2col(x) for conv, x itself for transposed conv
};

template <typename T>
FeatureMap<T> conv_forward(const Conv<T>& conv, const FeatureMap<T>& x, ConvCache<T>* cache = nullptr) {
  const ConvSpec& s = conv.spec;
  if (x.channels() != s.in_channels) {
    throw std::invalid_argument("conv_forward: expected " + std::to_string(s.in_channels) + " channels, got " +
                                std::to_string(x.channels()));
  }
  FeatureMap<T> y;
  y.height = s.out_height(x.height);
  y.width = s.out_width(x.width);
  if (y.height <= 0 || y.width <= 0) throw std::invalid_argument("conv_forward: input too small for kernel");
  if (!s.transposed) {
    const PatchGeometry g{s.in_channels, x.height, x.width, s.kernel, s.stride, s.pad};
    Mat<T> cols = im2col(x.data, g);
    y.data = matmul(conv.weight, cols);
    if (cache) cache->saved = std::move(cols);
  } else {
    const PatchGeometry g{s.out_channels, y.height, y.width, s.kernel, s.stride, s.pad};
    y.data = col2im(matmul(conv.weight, x.data, Transpose::Yes), g);
    if (cache) cache->saved = x.data;
  }
  if (cache) {
    cache->in_height = x.height;
    cache->in_width = x.width;
  }
  return y;
}

/// Accumulates the weight gradient into `grad` and returns dL/dx (empty
/// when `need_input_grad` is false).
template <typename T>
FeatureMap<T> conv_backward(const Conv<T>& conv, const FeatureMap<T>& dy, const ConvCache<T>& cache, Conv<T>& grad,
                            bool need_input_grad = true) {
  const ConvSpec& s = conv.spec;
  FeatureMap<T> dx;
  dx.height = cache.in_height;
  dx.width = cache.in_width;
  if (!s.transposed) {
    grad.weight += matmul(dy.data, cache.saved, Transpose::No, Transpose::Yes);
    if (need_input_grad) {
      const PatchGeometry g{s.in_channels, cache.in_height, cache.in_width, s.kernel, s.stride, s.pad};
      dx.data = col2im(matmul(conv.weight, dy.data, Transpose::Yes), g);
    }
  } else {
    const PatchGeometry g{s.out_channels, dy.height, dy.width, s.kernel, s.stride, s.pad};
    const Mat<T> dcols = im2col(dy.data, g);
    grad.weight += matmul(cache.saved, dcols, Transpose::No, Transpose::Yes);
    if (need_input_grad) dx.data = matmul(conv.weight, dcols);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Adaptive instance normalization

inline constexpr double kAdaInEpsilon = 1e-5;

/// Maps the shared task embedding to per-channel (scale, shift).
template <typename T>
struct AdaIn {
  Mat<T> projection;  // 2C × L
  Mat<T> bias;        // 2C × 1

  int channels() const { return static_cast<int>(projection.rows() / 2); }

  static AdaIn zeros(int channels, int embed_dim) {
    return {Mat<T>::Zero(2 * channels, embed_dim), Mat<T>::Zero(2 * channels, 1)};
  }
};

/// Stacked [scale; shift] for one AdaIN layer.
template <typename T>
Vec<T> adain_style(const AdaIn<T>& layer, const Vec<T>& embedding) {
  if (embedding.size() != layer.projection.cols()) throw std::invalid_argument("adain_style: embedding width mismatch");
  Vec<T> style = matmul<T>(layer.projection, embedding);
  style += Eigen::Map<const Vec<T>>(layer.bias.data(), layer.bias.size());
  return style;
}

template <typename T>
struct AdaInCache {
  Mat<T> normalized;
  Vec<T> inv_std;
};

/// Instance-normalizes each channel over its pixels and applies the
/// style's per-channel scale and shift.
template <typename T>
FeatureMap<T> adain_apply(const FeatureMap<T>& x, const Vec<T>& style, AdaInCache<T>* cache = nullptr) {
  const int c = x.channels();
  if (style.size() != 2 * c) throw std::invalid_argument("adain_apply: style has wrong channel count");
  const T n = T(x.pixels());
  const T eps = T(kAdaInEpsilon);
  FeatureMap<T> y{x.height, x.width, Mat<T>(c, x.pixels())};
  Mat<T> normalized(c, x.pixels());
  Vec<T> inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    const auto row = x.data.row(ch);
    const T mean = row.sum() / n;
    T var = T(0);
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      const T dlt = row(i) - mean;
      var += dlt * dlt;
    }
    var = var / n;
    using std::sqrt;
    const T is = T(1) / sqrt(var + eps);
    inv_std(ch) = is;
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      const T z = (row(i) - mean) * is;
      normalized(ch, i) = z;
      y.data(ch, i) = style(ch) * z + style(c + ch);
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

/// Returns dL/dx and accumulates dL/dstyle.
template <typename T>
FeatureMap<T> adain_apply_backward(const FeatureMap<T>& dy, const Vec<T>& style, const AdaInCache<T>& cache,
                                   Vec<T>& dstyle) {
  const int c = dy.channels();
  const T n = T(dy.pixels());
  FeatureMap<T> dx{dy.height, dy.width, Mat<T>(c, dy.pixels())};
  for (int ch = 0; ch < c; ++ch) {
    T sum_dz = T(0), sum_dz_z = T(0), dscale = T(0), dshift = T(0);
    for (Eigen::Index i = 0; i < dy.data.cols(); ++i) {
      const T g = dy.data(ch, i);
      const T z = cache.normalized(ch, i);
      dscale += g * z;
      dshift += g;
      const T dz = g * style(ch);
      sum_dz += dz;
      sum_dz_z += dz * z;
    }
    dstyle(ch) += dscale;
    dstyle(c + ch) += dshift;
    const T k = cache.inv_std(ch) / n;
    for (Eigen::Index i = 0; i < dy.data.cols(); ++i) {
      const T dz = dy.data(ch, i) * style(ch);
      dx.data(ch, i) = k * (n * dz - sum_dz - cache.normalized(ch, i) * sum_dz_z);
    }
  }
  return dx;
}

/// Accumulates projection gradients and returns dL/dembedding.
template <typename T>
Vec<T> adain_style_backward(const AdaIn<T>& layer, const Vec<T>& embedding, const Vec<T>& dstyle, AdaIn<T>& grad) {
  grad.projection += matmul<T>(dstyle, embedding, Transpose::No, Transpose::Yes);
  grad.bias += dstyle;
  return matmul<T>(layer.projection, dstyle, Transpose::Yes);
}

/// adain(features, embedding, layer): normalize per channel, then scale/shift
/// from the projected embedding.
template <typename T>
FeatureMap<T> adain(const FeatureMap<T>& x, const Vec<T>& embedding, const AdaIn<T>& layer) {
  return adain_apply(x, adain_style(layer, embedding));
}

// ---------------------------------------------------------------------------
// Rectified linear unit, in place. The mask is the post-activation map.

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    if (!(x.data.data()[i] > T(0))) x.data.data()[i] = T(0);
  }
}

template <typename T>
void relu_backward_inplace(FeatureMap<T>& dy, const Mat<T>& activated) {
  for (Eigen::Index i = 0; i < dy.data.size(); ++i) {
    if (!(activated.data()[i] > T(0))) dy.data.data()[i] = T(0);
  }
}

// ---------------------------------------------------------------------------
// Task embedding network: stacked fully connected layers, ReLU in between.

template <typename T>
struct Linear {
  Mat<T> weight;  // out × in
  Mat<T> bias;    // out × 1
};

template <typename T>
struct EmbeddingNet {
  std::vector<Linear<T>> layers;

  int width() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }

  static EmbeddingNet zeros(int width, int depth) {
    EmbeddingNet net;
    for (int i = 0; i < depth; ++i) net.layers.push_back({Mat<T>::Zero(width, width), Mat<T>::Zero(width, 1)});
    return net;
  }
};

template <typename T>
struct EmbeddingCache {
  std::vector<Vec<T>> inputs;  // input of each layer (post-ReLU of the previous one)
};

template <typename T>
Vec<T> embed_forward(const EmbeddingNet<T>& net, const Vec<T>& code, EmbeddingCache<T>* cache = nullptr) {
  if (code.size() != net.width()) {
    throw std::invalid_argument("embed_task: code length " + std::to_string(code.size()) +
                                " does not match embedding width " + std::to_string(net.width()));
  }
  Vec<T> h = code;
  if (cache) cache->inputs.clear();
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (cache) cache->inputs.push_back(h);
    Vec<T> z = matmul<T>(net.layers[l].weight, h);
    z += Eigen::Map<const Vec<T>>(net.layers[l].bias.data(), z.size());
    if (l + 1 < net.layers.size()) {
      for (Eigen::Index i = 0; i < z.size(); ++i) {
        if (!(z(i) > T(0))) z(i) = T(0);
      }
    }
    h = std::move(z);
  }
  return h;
}

template <typename T>
void embed_backward(const EmbeddingNet<T>& net, const EmbeddingCache<T>& cache, Vec<T> dout, EmbeddingNet<T>& grad) {
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const Vec<T>& in = cache.inputs[l];
    grad.layers[l].weight += matmul<T>(dout, in, Transpose::No, Transpose::Yes);
    grad.layers[l].bias += dout;
    if (l == 0) break;
    Vec<T> din = matmul<T>(net.layers[l].weight, dout, Transpose::Yes);
    // `in` is the post-ReLU output of layer l-1.
    for (Eigen::Index i = 0; i < din.size(); ++i) {
      if (!(in(i) > T(0))) din(i) = T(0);
    }
    dout = std::move(din);
  }
}

// ---------------------------------------------------------------------------
// Initialization helpers

template <typename T>
void fill_normal(Mat<T>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(dist(rng));
}

template <typename T>
Conv<T> init_conv(const ConvSpec& s, double gain, Rng& rng) {
  Conv<T> c = Conv<T>::zeros(s);
  fill_normal(c.weight, std::sqrt(gain / s.fan_in()), rng);
  return c;
}

/// Small random projection with bias (scale=1, shift=0) so every layer starts
/// near plain instance normalization while tasks remain distinguishable.
template <typename T>
AdaIn<T> init_adain(int channels, int embed_dim, Rng& rng) {
  AdaIn<T> a = AdaIn<T>::zeros(channels, embed_dim);
  fill_normal(a.projection, 0.02, rng);
  a.bias.topRows(channels).setConstant(T(1));
  return a;
}

template <typename T>
EmbeddingNet<T> init_embedding(int width, int depth, Rng& rng) {
  EmbeddingNet<T> net = EmbeddingNet<T>::zeros(width, depth);
  for (auto& l : net.layers) fill_normal(l.weight, std::sqrt(2.0 / width), rng);
  return net;
}

// ---------------------------------------------------------------------------
// Parameter visitation: every network exposes params() in a fixed order so
// optimizers, serialization and scalar casts can zip them.

template <typename T>
void append_params(std::vector<Mat<T>*>& out, EmbeddingNet<T>& net) {
  for (auto& l : net.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

template <typename T>
void append_params(std::vector<Mat<T>*>& out, AdaIn<T>& a) {
  out.push_back(&a.projection);
  out.push_back(&a.bias);
}

template <typename T>
void append_params(std::vector<Mat<T>*>& out, Conv<T>& c) {
  out.push_back(&c.weight);
}

/// Copies `src` parameters into `dst` (same architecture, different scalar).
template <typename Dst, typename Src>
void copy_params(Dst& dst, const Src& src) {
  auto d = dst.params();
  auto s = const_cast<Src&>(src).params();
  if (d.size() != s.size()) throw std::invalid_argument("copy_params: architecture mismatch");
  for (std::size_t i = 0; i < d.size(); ++i) {
    using Scalar = typename std::remove_pointer_t<std::decay_t<decltype(d[i])>>::Scalar;
    *d[i] = s[i]->unaryExpr([](const auto& x) { return Scalar(value_of(x)); });
  }
}

template <typename Net>
void set_zero(Net& net) {
  for (auto* p : net.params()) p->setZero();
}

}  // namespace attrinet
