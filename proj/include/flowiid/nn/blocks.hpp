#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "flowiid/nn/layers.hpp"

namespace flowiid::nn {

/// Sinusoidal embedding of t in [0, 1] (scaled by 1000 internally so the
/// frequency bands resolve the unit interval) followed by a two-layer MLP
/// with SiLU. The resulting feature vector is shared by all residual blocks
/// of one forward pass.
template <typename Scalar>
struct TimeEmbed {
  int embed_dim = 0;  // sinusoidal width, even, >= 4
  int feat_dim = 0;
  Linear<Scalar> fc1, fc2;
  std::vector<VecX<Scalar>> cache_h1;  // fc1 output, pre-SiLU

  TimeEmbed() = default;
  TimeEmbed(const std::string& name, int embed, int feat, Rng& rng)
      : embed_dim(embed),
        feat_dim(feat),
        fc1(name + ".fc1", embed, feat, rng),
        fc2(name + ".fc2", feat, feat, rng) {
    check(embed >= 4 && embed % 2 == 0, "TimeEmbed: embed_dim must be even and >= 4");
  }

  void collect(ParamRefs<Scalar>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }

  VecX<Scalar> sinusoid(Scalar t) const {
    const int half = embed_dim / 2;
    VecX<Scalar> e(embed_dim);
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * double(i) / double(half - 1));
      const double arg = 1000.0 * double(t) * freq;
      e[i] = Scalar(std::sin(arg));
      e[half + i] = Scalar(std::cos(arg));
    }
    return e;
  }

  std::vector<VecX<Scalar>> forward(const std::vector<Scalar>& ts) {
    std::vector<VecX<Scalar>> embs;
    embs.reserve(ts.size());
    for (Scalar t : ts) embs.push_back(sinusoid(t));
    cache_h1 = fc1.forward(embs);
    std::vector<VecX<Scalar>> acts;
    acts.reserve(ts.size());
    for (const auto& h : cache_h1)
      acts.push_back((h.array() / (Scalar(1) + (-h.array()).exp())).matrix());
    return fc2.forward(acts);
  }

  void backward(const std::vector<VecX<Scalar>>& dfeats) {
    std::vector<VecX<Scalar>> dacts = fc2.backward(dfeats);
    for (std::size_t i = 0; i < dacts.size(); ++i) {
      const auto s = (Scalar(1) / (Scalar(1) + (-cache_h1[i].array()).exp())).eval();
      dacts[i] =
          (dacts[i].array() * s * (Scalar(1) + cache_h1[i].array() * (Scalar(1) - s))).matrix();
    }
    fc1.backward(dacts);  // sinusoid input carries no gradient
  }
};

/// Modified residual block: norm -> SiLU -> 3x3 conv -> (+ projected time
/// embedding) -> norm -> SiLU -> 3x3 conv, with an identity or 1x1 skip.
/// Spatial size is preserved; down/upsampling lives outside the block.
template <typename Scalar>
struct ResidualBlock {
  int in_ch = 0, out_ch = 0;
  bool time_conditioned = false;
  GroupNorm<Scalar> n1, n2;
  SiLU<Scalar> a1, a2;
  Conv2d<Scalar> conv1, conv2;
  Linear<Scalar> time_proj;
  std::optional<Conv2d<Scalar>> skip;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int in, int out, int time_feat_dim, Rng& rng)
      : in_ch(in),
        out_ch(out),
        time_conditioned(time_feat_dim > 0),
        n1(name + ".n1", in),
        n2(name + ".n2", out),
        conv1(name + ".conv1", in, out, 3, 1, 1, rng),
        conv2(name + ".conv2", out, out, 3, 1, 1, rng) {
    if (time_conditioned) time_proj = Linear<Scalar>(name + ".time_proj", time_feat_dim, out, rng);
    if (in != out) skip.emplace(name + ".skip", in, out, 1, 1, 0, rng);
  }

  void collect(ParamRefs<Scalar>& out) {
    n1.collect(out);
    conv1.collect(out);
    if (time_conditioned) time_proj.collect(out);
    n2.collect(out);
    conv2.collect(out);
    if (skip) skip->collect(out);
  }

  Batch<Scalar> forward(const Batch<Scalar>& xs, const std::vector<VecX<Scalar>>* tfeat = nullptr) {
    check(time_conditioned == (tfeat != nullptr), "ResidualBlock: time feature mismatch");
    Batch<Scalar> h = conv1.forward(a1.forward(n1.forward(xs)));
    if (time_conditioned) {
      const auto tp = time_proj.forward(*tfeat);
      for (std::size_t i = 0; i < h.size(); ++i)
        for (int c = 0; c < out_ch; ++c) h[i].plane(c) += tp[i][c];
    }
    Batch<Scalar> y = conv2.forward(a2.forward(n2.forward(h)));
    if (skip) {
      Batch<Scalar> s = skip->forward(xs);
      for (std::size_t i = 0; i < y.size(); ++i) y[i].data += s[i].data;
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) y[i].data += xs[i].data;
    }
    return y;
  }

  Batch<Scalar> backward(const Batch<Scalar>& dys, std::vector<VecX<Scalar>>* dtfeat = nullptr) {
    Batch<Scalar> dh = n2.backward(a2.backward(conv2.backward(dys)));
    if (time_conditioned) {
      std::vector<VecX<Scalar>> dtp;
      dtp.reserve(dh.size());
      for (const auto& g : dh) {
        VecX<Scalar> v(out_ch);
        for (int c = 0; c < out_ch; ++c) v[c] = g.plane(c).sum();
        dtp.push_back(std::move(v));
      }
      auto dtf = time_proj.backward(dtp);
      if (dtfeat) {
        check(dtfeat->size() == dtf.size(), "ResidualBlock: dtfeat batch mismatch");
        for (std::size_t i = 0; i < dtf.size(); ++i) (*dtfeat)[i] += dtf[i];
      }
    }
    Batch<Scalar> dx = n1.backward(a1.backward(conv1.backward(dh)));
    if (skip) {
      Batch<Scalar> ds = skip->backward(dys);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i].data += ds[i].data;
    } else {
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i].data += dys[i].data;
    }
    return dx;
  }
};

}  // namespace flowiid::nn
