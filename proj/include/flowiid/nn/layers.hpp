#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "flowiid/rng.hpp"
#include "flowiid/tensor.hpp"

namespace flowiid::nn {

using flowiid::Batch;
using flowiid::Rng;
using flowiid::Tensor;

template <typename Scalar>
using ArrX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// One learnable tensor with its gradient accumulator.
template <typename Scalar>
struct Param {
  std::string name;
  std::vector<int> shape;
  ArrX<Scalar> value;
  ArrX<Scalar> grad;

  Eigen::Index size() const { return value.size(); }

  void init(std::string n, std::vector<int> s) {
    name = std::move(n);
    shape = std::move(s);
    Eigen::Index total = 1;
    for (int d : shape) total *= d;
    value = ArrX<Scalar>::Zero(total);
    grad = ArrX<Scalar>::Zero(total);
  }

  void fill_fan_in_uniform(Rng& rng, Eigen::Index fan_in) {
    const double limit = std::sqrt(3.0 / double(fan_in));
    for (Eigen::Index i = 0; i < value.size(); ++i) value[i] = Scalar(rng.uniform(-limit, limit));
  }

  void zero_grad() { grad.setZero(); }
};

template <typename Scalar>
using ParamRefs = std::vector<Param<Scalar>*>;

template <typename Scalar>
inline long long param_count(const ParamRefs<Scalar>& ps) {
  long long n = 0;
  for (auto* p : ps) n += p->size();
  return n;
}

/// 2-D convolution, floor output arithmetic, zero padding. Forward is
/// im2col + GEMM per sample; backward rebuilds the column matrix from the
/// cached input.
template <typename Scalar>
struct Conv2d {
  int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;
  Param<Scalar> weight;  // (out_ch, in_ch*k*k)
  Param<Scalar> bias;    // (out_ch)
  Batch<Scalar> cache_x;

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride_, int pad_, Rng& rng,
         bool zero_init = false)
      : in_ch(in), out_ch(out), k(kernel), stride(stride_), pad(pad_) {
    weight.init(name + ".weight", {out, in, k, k});
    bias.init(name + ".bias", {out});
    if (!zero_init) weight.fill_fan_in_uniform(rng, Eigen::Index(in) * k * k);
  }

  void collect(ParamRefs<Scalar>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  int out_extent(int in_extent) const { return (in_extent + 2 * pad - k) / stride + 1; }

  void im2col(const Tensor<Scalar>& x, MatX<Scalar>& cols) const {
    const int oh = out_extent(x.h), ow = out_extent(x.w);
    cols.setZero(Eigen::Index(in_ch) * k * k, Eigen::Index(oh) * ow);
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index col = Eigen::Index(oy) * ow + ox;
        Scalar* dst = cols.data() + col * cols.rows();
        for (int ci = 0; ci < in_ch; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int y = oy * stride + ky - pad;
            if (y < 0 || y >= x.h) {
              dst += k;
              continue;
            }
            for (int kx = 0; kx < k; ++kx, ++dst) {
              const int xx = ox * stride + kx - pad;
              if (xx >= 0 && xx < x.w) *dst = x.at(ci, y, xx);
            }
          }
        }
      }
    }
  }

  Batch<Scalar> forward(const Batch<Scalar>& xs) {
    check(!xs.empty() && xs[0].c == in_ch, "Conv2d: channel mismatch");
    cache_x = xs;
    const int oh = out_extent(xs[0].h), ow = out_extent(xs[0].w);
    ConstRowMajorMap<Scalar> W(weight.value.data(), out_ch, Eigen::Index(in_ch) * k * k);
    Eigen::Map<const VecX<Scalar>> b(bias.value.data(), out_ch);
    Batch<Scalar> out;
    out.reserve(xs.size());
    MatX<Scalar> cols;
    for (const auto& x : xs) {
      check(x.c == in_ch, "Conv2d: channel mismatch");
      im2col(x, cols);
      Tensor<Scalar> y(out_ch, oh, ow);
      y.mat().noalias() = W * cols;
      y.mat().colwise() += b;
      out.push_back(std::move(y));
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys) {
    check(dys.size() == cache_x.size(), "Conv2d::backward: batch mismatch");
    ConstRowMajorMap<Scalar> W(weight.value.data(), out_ch, Eigen::Index(in_ch) * k * k);
    RowMajorMap<Scalar> dW(weight.grad.data(), out_ch, Eigen::Index(in_ch) * k * k);
    Eigen::Map<VecX<Scalar>> db(bias.grad.data(), out_ch);
    Batch<Scalar> dxs;
    dxs.reserve(dys.size());
    MatX<Scalar> cols, dcols;
    for (std::size_t i = 0; i < dys.size(); ++i) {
      const Tensor<Scalar>& x = cache_x[i];
      const Tensor<Scalar>& dy = dys[i];
      im2col(x, cols);
      dW.noalias() += dy.mat() * cols.transpose();
      db.noalias() += dy.mat().rowwise().sum();
      dcols.noalias() = W.transpose() * dy.mat();
      // col2im scatter
      Tensor<Scalar> dx(x.c, x.h, x.w);
      const int oh = dy.h, ow = dy.w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index col = Eigen::Index(oy) * ow + ox;
          const Scalar* src = dcols.data() + col * dcols.rows();
          for (int ci = 0; ci < in_ch; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              const int y = oy * stride + ky - pad;
              for (int kx = 0; kx < k; ++kx, ++src) {
                const int xx = ox * stride + kx - pad;
                if (y >= 0 && y < x.h && xx >= 0 && xx < x.w) dx.at(ci, y, xx) += *src;
              }
            }
          }
        }
      }
      dxs.push_back(std::move(dx));
    }
    return dxs;
  }
};

inline int norm_groups_for(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

/// Group normalization with per-channel affine. Statistics are per sample
/// and per group over (C/G, H, W); biased variance.
template <typename Scalar>
struct GroupNorm {
  int channels = 0, groups = 1;
  Scalar eps = Scalar(1e-5);
  Param<Scalar> gamma, beta;
  Batch<Scalar> cache_xhat;
  std::vector<std::vector<Scalar>> cache_inv_std;  // [sample][group]

  GroupNorm() = default;
  GroupNorm(const std::string& name, int ch) : channels(ch), groups(norm_groups_for(ch)) {
    gamma.init(name + ".gamma", {ch});
    beta.init(name + ".beta", {ch});
    gamma.value.setOnes();
  }

  void collect(ParamRefs<Scalar>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  Batch<Scalar> forward(const Batch<Scalar>& xs) {
    check(!xs.empty() && xs[0].c == channels, "GroupNorm: channel mismatch");
    const int cg = channels / groups;
    cache_xhat.clear();
    cache_inv_std.assign(xs.size(), std::vector<Scalar>(groups));
    Batch<Scalar> out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto& x = xs[i];
      const Eigen::Index plane = Eigen::Index(x.h) * x.w;
      Tensor<Scalar> xhat(x.c, x.h, x.w);
      for (int g = 0; g < groups; ++g) {
        const Eigen::Index off = Eigen::Index(g) * cg * plane;
        const Eigen::Index n = Eigen::Index(cg) * plane;
        auto seg = x.data.segment(off, n);
        const Scalar mu = seg.mean();
        const Scalar var = (seg - mu).square().mean();
        const Scalar inv_std = Scalar(1) / std::sqrt(var + eps);
        cache_inv_std[i][g] = inv_std;
        xhat.data.segment(off, n) = (seg - mu) * inv_std;
      }
      Tensor<Scalar> y(x.c, x.h, x.w);
      for (int c = 0; c < channels; ++c)
        y.plane(c) = gamma.value[c] * xhat.plane(c) + beta.value[c];
      cache_xhat.push_back(std::move(xhat));
      out.push_back(std::move(y));
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys) {
    const int cg = channels / groups;
    Batch<Scalar> dxs;
    dxs.reserve(dys.size());
    for (std::size_t i = 0; i < dys.size(); ++i) {
      const auto& dy = dys[i];
      const auto& xhat = cache_xhat[i];
      const Eigen::Index plane = Eigen::Index(dy.h) * dy.w;
      for (int c = 0; c < channels; ++c) {
        gamma.grad[c] += (dy.plane(c) * xhat.plane(c)).sum();
        beta.grad[c] += dy.plane(c).sum();
      }
      Tensor<Scalar> dxhat(dy.c, dy.h, dy.w);
      for (int c = 0; c < channels; ++c) dxhat.plane(c) = dy.plane(c) * gamma.value[c];
      Tensor<Scalar> dx(dy.c, dy.h, dy.w);
      for (int g = 0; g < groups; ++g) {
        const Eigen::Index off = Eigen::Index(g) * cg * plane;
        const Eigen::Index n = Eigen::Index(cg) * plane;
        auto dxh = dxhat.data.segment(off, n);
        auto xh = xhat.data.segment(off, n);
        const Scalar m1 = dxh.mean();
        const Scalar m2 = (dxh * xh).mean();
        dx.data.segment(off, n) = cache_inv_std[i][g] * (dxh - m1 - xh * m2);
      }
      dxs.push_back(std::move(dx));
    }
    return dxs;
  }
};

/// x * sigmoid(x); smooth, so finite-difference checks stay clean.
template <typename Scalar>
struct SiLU {
  Batch<Scalar> cache_x;

  Batch<Scalar> forward(const Batch<Scalar>& xs) {
    cache_x = xs;
    Batch<Scalar> out = xs;
    for (auto& t : out) t.data = t.data / (Scalar(1) + (-t.data).exp());
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys) {
    Batch<Scalar> dxs = dys;
    for (std::size_t i = 0; i < dys.size(); ++i) {
      const auto s = (Scalar(1) / (Scalar(1) + (-cache_x[i].data).exp())).eval();
      dxs[i].data = dys[i].data * s * (Scalar(1) + cache_x[i].data * (Scalar(1) - s));
    }
    return dxs;
  }
};

template <typename Scalar>
struct Sigmoid {
  Batch<Scalar> cache_y;

  Batch<Scalar> forward(const Batch<Scalar>& xs) {
    Batch<Scalar> out = xs;
    for (auto& t : out) t.data = Scalar(1) / (Scalar(1) + (-t.data).exp());
    cache_y = out;
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys) {
    Batch<Scalar> dxs = dys;
    for (std::size_t i = 0; i < dys.size(); ++i)
      dxs[i].data = dys[i].data * cache_y[i].data * (Scalar(1) - cache_y[i].data);
    return dxs;
  }
};

template <typename Scalar>
struct LeakyReLU {
  Scalar slope = Scalar(0.2);
  Batch<Scalar> cache_x;

  Batch<Scalar> forward(const Batch<Scalar>& xs) {
    cache_x = xs;
    Batch<Scalar> out = xs;
    for (auto& t : out) t.data = (t.data > Scalar(0)).select(t.data, slope * t.data);
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys) {
    Batch<Scalar> dxs = dys;
    for (std::size_t i = 0; i < dys.size(); ++i)
      dxs[i].data =
          (cache_x[i].data > Scalar(0)).select(dys[i].data, slope * dys[i].data);
    return dxs;
  }
};

/// Fully connected layer on vectors (time embeddings and projections).
template <typename Scalar>
struct Linear {
  int in_dim = 0, out_dim = 0;
  Param<Scalar> weight;  // (out, in)
  Param<Scalar> bias;    // (out)
  std::vector<VecX<Scalar>> cache_x;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng) : in_dim(in), out_dim(out) {
    weight.init(name + ".weight", {out, in});
    bias.init(name + ".bias", {out});
    weight.fill_fan_in_uniform(rng, in);
  }

  void collect(ParamRefs<Scalar>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  VecX<Scalar> forward_one(const VecX<Scalar>& x) {
    ConstRowMajorMap<Scalar> W(weight.value.data(), out_dim, in_dim);
    return W * x + Eigen::Map<const VecX<Scalar>>(bias.value.data(), out_dim);
  }

  std::vector<VecX<Scalar>> forward(const std::vector<VecX<Scalar>>& xs) {
    cache_x = xs;
    std::vector<VecX<Scalar>> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(forward_one(x));
    return out;
  }

  std::vector<VecX<Scalar>> backward(const std::vector<VecX<Scalar>>& dys) {
    ConstRowMajorMap<Scalar> W(weight.value.data(), out_dim, in_dim);
    RowMajorMap<Scalar> dW(weight.grad.data(), out_dim, in_dim);
    Eigen::Map<VecX<Scalar>> db(bias.grad.data(), out_dim);
    std::vector<VecX<Scalar>> dxs;
    dxs.reserve(dys.size());
    for (std::size_t i = 0; i < dys.size(); ++i) {
      dW.noalias() += dys[i] * cache_x[i].transpose();
      db.noalias() += dys[i];
      dxs.push_back(W.transpose() * dys[i]);
    }
    return dxs;
  }
};

/// Nearest-neighbour 2x upsampling.
template <typename Scalar>
struct Upsample2x {
  Batch<Scalar> forward(const Batch<Scalar>& xs) {
    Batch<Scalar> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
      Tensor<Scalar> y(x.c, x.h * 2, x.w * 2);
      for (int c = 0; c < x.c; ++c)
        for (int yy = 0; yy < y.h; ++yy)
          for (int xx = 0; xx < y.w; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
      out.push_back(std::move(y));
    }
    return out;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys) {
    Batch<Scalar> dxs;
    dxs.reserve(dys.size());
    for (const auto& dy : dys) {
      Tensor<Scalar> dx(dy.c, dy.h / 2, dy.w / 2);
      for (int c = 0; c < dy.c; ++c)
        for (int yy = 0; yy < dy.h; ++yy)
          for (int xx = 0; xx < dy.w; ++xx) dx.at(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
      dxs.push_back(std::move(dx));
    }
    return dxs;
  }
};

}  // namespace flowiid::nn
