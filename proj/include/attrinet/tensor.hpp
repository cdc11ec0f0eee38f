#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <type_traits>
#include <utility>

#include <Eigen/Core>

namespace attrinet {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Single-channel image, row-major h×w.
using Image = Mat<float>;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Forward-mode dual number. Running reverse-mode backprop over Dual scalars
/// yields Hessian-vector products (forward-over-reverse).
template <typename T>
struct Dual {
  T v{0};
  T d{0};

  constexpr Dual() = default;
  constexpr Dual(T value) : v(value) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}
  template <typename U, typename = std::enable_if_t<std::is_arithmetic_v<U> && !std::is_same_v<U, T>>>
  constexpr Dual(U value) : v(static_cast<T>(value)) {}  // NOLINT(google-explicit-constructor)

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) {
    d = (d * o.v - v * o.d) / (o.v * o.v);
    v /= o.v;
    return *this;
  }
};

template <typename T> Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T> Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T> Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T> Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <typename T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <typename T> Dual<T> operator+(const Dual<T>& a) { return a; }
template <typename T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.v < b.v; }
template <typename T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.v > b.v; }
template <typename T> bool operator<=(const Dual<T>& a, const Dual<T>& b) { return a.v <= b.v; }
template <typename T> bool operator>=(const Dual<T>& a, const Dual<T>& b) { return a.v >= b.v; }
template <typename T> bool operator==(const Dual<T>& a, const Dual<T>& b) { return a.v == b.v && a.d == b.d; }
template <typename T> bool operator!=(const Dual<T>& a, const Dual<T>& b) { return !(a == b); }

template <typename T> Dual<T> sqrt(const Dual<T>& a) {
  const T s = std::sqrt(a.v);
  return {s, a.d / (T(2) * s)};
}
template <typename T> Dual<T> tanh(const Dual<T>& a) {
  const T t = std::tanh(a.v);
  return {t, a.d * (T(1) - t * t)};
}
template <typename T> Dual<T> exp(const Dual<T>& a) {
  const T e = std::exp(a.v);
  return {e, a.d * e};
}
template <typename T> Dual<T> log(const Dual<T>& a) { return {std::log(a.v), a.d / a.v}; }
template <typename T> Dual<T> abs(const Dual<T>& a) { return a.v < T(0) ? -a : a; }
template <typename T> bool isfinite(const Dual<T>& a) { return std::isfinite(a.v) && std::isfinite(a.d); }

template <typename T> struct is_dual : std::false_type {};
template <typename T> struct is_dual<Dual<T>> : std::true_type {};
template <typename T> inline constexpr bool is_dual_v = is_dual<T>::value;

template <typename T> struct real_of { using type = T; };
template <typename T> struct real_of<Dual<T>> { using type = T; };
template <typename T> using real_t = typename real_of<T>::type;

template <typename T> real_t<T> value_of(const T& x) {
  if constexpr (is_dual_v<T>) return x.v; else return x;
}
template <typename T> real_t<T> tangent_of(const T& x) {
  if constexpr (is_dual_v<T>) return x.d; else return real_t<T>(0);
}

}  // namespace attrinet

namespace Eigen {
template <typename T>
struct NumTraits<attrinet::Dual<T>> : NumTraits<T> {
  using Real = attrinet::Dual<T>;
  using NonInteger = attrinet::Dual<T>;
  using Nested = attrinet::Dual<T>;
  using Literal = attrinet::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2,
    AddCost = 2,
    MulCost = 4
  };
};
}  // namespace Eigen

namespace attrinet {

/// Multi-channel activation: channels × (height·width), row-major pixels.
template <typename T>
struct FeatureMap {
  int height = 0;
  int width = 0;
  Mat<T> data;

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }
};

template <typename T>
FeatureMap<T> as_feature_map(const Mat<T>& image) {
  FeatureMap<T> f;
  f.height = static_cast<int>(image.rows());
  f.width = static_cast<int>(image.cols());
  f.data = Eigen::Map<const Mat<T>>(image.data(), 1, image.size());
  return f;
}

template <typename T>
Mat<T> as_image(const FeatureMap<T>& f) {
  if (f.channels() != 1) throw std::invalid_argument("as_image: feature map must have one channel");
  return Eigen::Map<const Mat<T>>(f.data.data(), f.height, f.width);
}

template <typename T>
Mat<real_t<T>> values_of(const Mat<T>& m) {
  if constexpr (is_dual_v<T>) {
    return m.unaryExpr([](const T& x) { return x.v; });
  } else {
    return m;
  }
}

template <typename T>
Mat<real_t<T>> tangents_of(const Mat<T>& m) {
  if constexpr (is_dual_v<T>) {
    return m.unaryExpr([](const T& x) { return x.d; });
  } else {
    return Mat<T>::Zero(m.rows(), m.cols());
  }
}

template <typename T>
Mat<Dual<T>> make_dual(const Mat<T>& value, const Mat<T>& tangent) {
  Mat<Dual<T>> out(value.rows(), value.cols());
  for (Eigen::Index i = 0; i < value.size(); ++i) out.data()[i] = Dual<T>(value.data()[i], tangent.data()[i]);
  return out;
}

enum class Transpose { No, Yes };

/// op(a)·op(b). Dual operands are split into three real products so the
/// heavy lifting stays on Eigen's vectorized kernels.
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b, Transpose ta = Transpose::No, Transpose tb = Transpose::No) {
  if constexpr (is_dual_v<T>) {
    using R = real_t<T>;
    const Mat<R> av = values_of(a), ad = tangents_of(a);
    const Mat<R> bv = values_of(b), bd = tangents_of(b);
    const Mat<R> v = matmul<R>(av, bv, ta, tb);
    Mat<R> d = matmul<R>(av, bd, ta, tb);
    d += matmul<R>(ad, bv, ta, tb);
    return make_dual<R>(v, d);
  } else {
    Mat<T> out;
    if (ta == Transpose::No && tb == Transpose::No) {
      out.noalias() = a * b;
    } else if (ta == Transpose::Yes && tb == Transpose::No) {
      out.noalias() = a.transpose() * b;
    } else if (ta == Transpose::No && tb == Transpose::Yes) {
      out.noalias() = a * b.transpose();
    } else {
      out.noalias() = a.transpose() * b.transpose();
    }
    return out;
  }
}

struct PatchGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
};

/// Unfolds patches into columns: (channels·k·k) × (out_h·out_w).
namespace detail {
// Output columns [lo, hi) whose input column ox*stride + offset lies in [0, width).
inline std::pair<int, int> valid_range(int out_width, int stride, int offset, int width) {
  int lo = 0;
  while (lo < out_width && lo * stride + offset < 0) ++lo;
  int hi = out_width;
  while (hi > lo && (hi - 1) * stride + offset >= width) --hi;
  return {lo, hi};
}
}  // namespace detail

template <typename T>
Mat<T> im2col(const Mat<T>& data, const PatchGeometry& g) {
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, st = g.stride;
  Mat<T> cols = Mat<T>::Zero(static_cast<Eigen::Index>(g.channels) * k * k, static_cast<Eigen::Index>(oh) * ow);
  for (int c = 0; c < g.channels; ++c) {
    const T* src = data.data() + static_cast<Eigen::Index>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = cols.data() + ((static_cast<Eigen::Index>(c) * k + ki) * k + kj) * oh * ow;
        const auto [lo, hi] = detail::valid_range(ow, st, kj - g.pad, g.width);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * st - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          const T* row = src + static_cast<Eigen::Index>(iy) * g.width + (kj - g.pad);
          T* out = dst + static_cast<Eigen::Index>(oy) * ow;
          if (st == 1) {
            std::copy(row + lo, row + hi, out + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) out[ox] = row[ox * st];
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters columns back, summing overlaps.
template <typename T>
Mat<T> col2im(const Mat<T>& cols, const PatchGeometry& g) {
  const int oh = g.out_height(), ow = g.out_width(), k = g.kernel, st = g.stride;
  Mat<T> data = Mat<T>::Zero(g.channels, static_cast<Eigen::Index>(g.height) * g.width);
  for (int c = 0; c < g.channels; ++c) {
    T* dst = data.data() + static_cast<Eigen::Index>(c) * g.height * g.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = cols.data() + ((static_cast<Eigen::Index>(c) * k + ki) * k + kj) * oh * ow;
        const auto [lo, hi] = detail::valid_range(ow, st, kj - g.pad, g.width);
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * st - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          T* row = dst + static_cast<Eigen::Index>(iy) * g.width + (kj - g.pad);
          const T* in = src + static_cast<Eigen::Index>(oy) * ow;
          for (int ox = lo; ox < hi; ++ox) row[ox * st] += in[ox];
        }
      }
    }
  }
  return data;
}

}  // namespace attrinet
