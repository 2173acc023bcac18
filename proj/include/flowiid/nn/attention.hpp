#pragma once

#include <cmath>
#include <vector>

#include "flowiid/nn/layers.hpp"

namespace flowiid::nn {

/// Multi-head self-attention over flattened spatial positions with
/// pre-normalization and a residual connection. Head size is capped by the
/// channel count; channels must split evenly into heads.
template <typename Scalar>
struct SelfAttention {
  int channels = 0, head_dim = 0, heads = 0;
  GroupNorm<Scalar> norm;
  Conv2d<Scalar> qkv;   // 1x1, channels -> 3*channels
  Conv2d<Scalar> proj;  // 1x1, channels -> channels

  struct HeadCache {
    MatX<Scalar> q, k, v;  // d x N
    MatX<Scalar> p;        // N x N, softmax rows indexed by query
  };
  std::vector<std::vector<HeadCache>> cache_;  // [sample][head]

  SelfAttention() = default;
  SelfAttention(const std::string& name, int ch, int head_dim_pref, Rng& rng)
      : channels(ch),
        head_dim(std::min(head_dim_pref, ch)),
        norm(name + ".norm", ch),
        qkv(name + ".qkv", ch, 3 * ch, 1, 1, 0, rng),
        proj(name + ".proj", ch, ch, 1, 1, 0, rng) {
    check(channels % head_dim == 0, "SelfAttention: channels not divisible by head_dim");
    heads = channels / head_dim;
  }

  void collect(ParamRefs<Scalar>& out) {
    norm.collect(out);
    qkv.collect(out);
    proj.collect(out);
  }

  Batch<Scalar> forward(const Batch<Scalar>& xs) {
    Batch<Scalar> h = norm.forward(xs);
    Batch<Scalar> qkv_out = qkv.forward(h);
    const int H = xs[0].h, W = xs[0].w;
    const Eigen::Index N = Eigen::Index(H) * W;
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(head_dim));

    cache_.assign(xs.size(), {});
    Batch<Scalar> attn;
    attn.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
      cache_[i].resize(heads);
      Tensor<Scalar> out(channels, H, W);
      for (int hd = 0; hd < heads; ++hd) {
        HeadCache& hc = cache_[i][hd];
        hc.q = qkv_out[i].mat().middleRows(Eigen::Index(hd) * head_dim, head_dim);
        hc.k = qkv_out[i].mat().middleRows(Eigen::Index(channels + hd * head_dim), head_dim);
        hc.v = qkv_out[i].mat().middleRows(Eigen::Index(2 * channels + hd * head_dim), head_dim);
        MatX<Scalar> scores = (hc.q.transpose() * hc.k) * inv_sqrt_d;  // N x N
        hc.p.resize(N, N);
        for (Eigen::Index r = 0; r < N; ++r) {
          const Scalar m = scores.row(r).maxCoeff();
          hc.p.row(r) = (scores.row(r).array() - m).exp();
          hc.p.row(r) /= hc.p.row(r).sum();
        }
        out.mat().middleRows(Eigen::Index(hd) * head_dim, head_dim).noalias() =
            hc.v * hc.p.transpose();
      }
      attn.push_back(std::move(out));
    }
    Batch<Scalar> y = proj.forward(attn);
    for (std::size_t i = 0; i < xs.size(); ++i) y[i].data += xs[i].data;
    return y;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys) {
    Batch<Scalar> dattn = proj.backward(dys);
    const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(Scalar(head_dim));
    Batch<Scalar> dqkv;
    dqkv.reserve(dys.size());
    for (std::size_t i = 0; i < dys.size(); ++i) {
      const int H = dys[i].h, W = dys[i].w;
      const Eigen::Index N = Eigen::Index(H) * W;
      Tensor<Scalar> dq(3 * channels, H, W);
      for (int hd = 0; hd < heads; ++hd) {
        const HeadCache& hc = cache_[i][hd];
        auto dout = dattn[i].mat().middleRows(Eigen::Index(hd) * head_dim, head_dim);
        MatX<Scalar> dv = dout * hc.p;              // d x N
        MatX<Scalar> dp = dout.transpose() * hc.v;  // N x N (query rows)
        MatX<Scalar> dscores(N, N);
        for (Eigen::Index r = 0; r < N; ++r) {
          const Scalar dot = (dp.row(r).array() * hc.p.row(r).array()).sum();
          dscores.row(r) = (dp.row(r).array() - dot) * hc.p.row(r).array();
        }
        dscores *= inv_sqrt_d;
        dq.mat().middleRows(Eigen::Index(hd) * head_dim, head_dim).noalias() =
            hc.k * dscores.transpose();
        dq.mat().middleRows(Eigen::Index(channels + hd * head_dim), head_dim).noalias() =
            hc.q * dscores;
        dq.mat().middleRows(Eigen::Index(2 * channels + hd * head_dim), head_dim) = dv;
      }
      dqkv.push_back(std::move(dq));
    }
    Batch<Scalar> dh = qkv.backward(dqkv);
    Batch<Scalar> dx = norm.backward(dh);
    for (std::size_t i = 0; i < dys.size(); ++i) dx[i].data += dys[i].data;  // residual
    return dx;
  }
};

}  // namespace flowiid::nn
