#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowiid {

// Exit-code families used by the CLI; library code throws these directly.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Dense rank-3 tensor (channels x height x width), channel-major storage.
/// Images, albedo/shading planes, latents, and network features all use this
/// one type; free functions below stay expression-friendly via .data.
template <typename Scalar>
struct Tensor {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatMap =
      Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using PlaneMap = Eigen::Map<Array>;
  using ConstPlaneMap = Eigen::Map<const Array>;

  int c = 0, h = 0, w = 0;
  Array data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(Array::Zero(Eigen::Index(c_) * h_ * w_)) {
    check(c_ >= 0 && h_ >= 0 && w_ >= 0, "Tensor: negative dimension");
  }

  static Tensor zeros(int c, int h, int w) { return Tensor(c, h, w); }
  static Tensor constant(int c, int h, int w, Scalar v) {
    Tensor t(c, h, w);
    t.data.setConstant(v);
    return t;
  }

  Eigen::Index size() const { return Eigen::Index(c) * h * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const {
    return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }

  Scalar& at(int ci, int yi, int xi) { return data[(Eigen::Index(ci) * h + yi) * w + xi]; }
  Scalar at(int ci, int yi, int xi) const { return data[(Eigen::Index(ci) * h + yi) * w + xi]; }

  PlaneMap plane(int ci) { return PlaneMap(data.data() + Eigen::Index(ci) * h * w, Eigen::Index(h) * w); }
  ConstPlaneMap plane(int ci) const {
    return ConstPlaneMap(data.data() + Eigen::Index(ci) * h * w, Eigen::Index(h) * w);
  }

  // Channels-as-rows matrix view, c x (h*w).
  MatMap mat() { return MatMap(data.data(), c, Eigen::Index(h) * w); }
  ConstMatMap mat() const { return ConstMatMap(data.data(), c, Eigen::Index(h) * w); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.c = c;
    out.h = h;
    out.w = w;
    out.data = data.template cast<Other>();
    return out;
  }

  bool all_finite() const { return data.isFinite().all(); }
};

template <typename Scalar>
inline void check_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* where) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

template <typename Scalar>
inline Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same_shape(a, b, "operator+");
  Tensor<Scalar> r = a;
  r.data += b.data;
  return r;
}

template <typename Scalar>
inline Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same_shape(a, b, "operator-");
  Tensor<Scalar> r = a;
  r.data -= b.data;
  return r;
}

template <typename Scalar>
inline Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) {
  Tensor<Scalar> r = a;
  r.data *= s;
  return r;
}

template <typename Scalar>
inline Tensor<Scalar>& operator+=(Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same_shape(a, b, "operator+=");
  a.data += b.data;
  return a;
}

/// Mean of squared elementwise differences, accumulated in double.
template <typename Scalar>
inline double mean_squared_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  check_same_shape(a, b, "mean_squared_diff");
  check(a.size() > 0, "mean_squared_diff: empty tensor");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = double(a.data[i]) - double(b.data[i]);
    acc += d * d;
  }
  return acc / double(a.size());
}

template <typename Scalar>
using Batch = std::vector<Tensor<Scalar>>;

}  // namespace flowiid
