#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "flowiid/backbone.hpp"
#include "flowiid/nn/blocks.hpp"

namespace flowiid {

/// Diagonal Gaussian over latents, as produced by the VAE encoder.
template <typename Scalar>
struct LatentDistribution {
  Tensor<Scalar> mean;
  Tensor<Scalar> logvar;  // clamped to [-30, 20]
};

template <typename Scalar>
struct LatentDistributionBatch {
  Batch<Scalar> mean;
  Batch<Scalar> logvar;
  std::size_t size() const { return mean.size(); }
  LatentDistribution<Scalar> sample_dist(std::size_t i) const { return {mean[i], logvar[i]}; }
};

inline constexpr double kLogvarMin = -30.0, kLogvarMax = 20.0;

template <typename Scalar>
Tensor<Scalar> reparameterize(const LatentDistribution<Scalar>& d, Rng& rng,
                              Tensor<Scalar>* eps_out = nullptr) {
  check_same_shape(d.mean, d.logvar, "reparameterize");
  Tensor<Scalar> eps(d.mean.c, d.mean.h, d.mean.w);
  rng.fill_normal(eps);
  Tensor<Scalar> z = d.mean;
  z.data += (Scalar(0.5) * d.logvar.data).exp() * eps.data;
  if (eps_out) *eps_out = eps;
  return z;
}

/// Mean over elements of -0.5 (1 + logvar - mean^2 - exp(logvar)).
template <typename Scalar>
double kl_loss(const LatentDistribution<Scalar>& d) {
  check_same_shape(d.mean, d.logvar, "kl_loss");
  check(d.mean.all_finite() && d.logvar.all_finite(), "kl_loss: non-finite input");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.mean.size(); ++i) {
    const double m = double(d.mean.data[i]);
    const double lv = double(d.logvar.data[i]);
    acc += -0.5 * (1.0 + lv - m * m - std::exp(lv));
  }
  return acc / double(d.mean.size());
}

/// d kl / d mean and d kl / d logvar for the closed form above.
template <typename Scalar>
void kl_loss_backward(const LatentDistribution<Scalar>& d, double weight, Tensor<Scalar>& dmean,
                      Tensor<Scalar>& dlogvar) {
  const Scalar inv_n = Scalar(1.0 / double(d.mean.size()));
  dmean.data += Scalar(weight) * inv_n * d.mean.data;
  dlogvar.data += Scalar(weight) * inv_n * Scalar(-0.5) *
                  (Scalar(1) - d.logvar.data.exp());
}

/// Reconstruction loss: plain MSE.
template <typename Scalar>
double rec_loss(const Tensor<Scalar>& s_hat, const Tensor<Scalar>& s0) {
  return mean_squared_diff(s_hat, s0);
}

struct VaeLossWeights {
  double kl_weight = 0.005;
  double perc_weight = 1.0;
  double adv_weight = 0.1;
  int adv_start_epoch = 90;

  void validate() const {
    check(kl_weight >= 0 && perc_weight >= 0 && adv_weight >= 0,
          "VaeLossWeights: weights must be >= 0");
    check(adv_start_epoch >= 0, "VaeLossWeights: adv_start_epoch must be >= 0");
  }
};

/// Shading VAE encoder: 1 x H x W -> diagonal Gaussian over
/// latent_channels x H/8 x W/8.
template <typename Scalar>
class VaeEncoder {
 public:
  VaeEncoder(const ModelConfig& cfg, Rng& rng)
      : latent_channels_(cfg.latent_channels),
        in_conv_("vae.enc.in", 1, cfg.vae_width, 3, 1, 1, rng) {
    const int v = cfg.vae_width;
    const int widths[4] = {v, std::min(512, 2 * v), std::min(512, 4 * v), std::min(512, 4 * v)};
    for (int i = 0; i < 3; ++i) {
      norms_.emplace_back("vae.enc.n" + std::to_string(i), widths[i]);
      downs_.emplace_back("vae.enc.d" + std::to_string(i), widths[i], widths[i + 1], 3, 2, 1, rng);
    }
    out_norm_ = nn::GroupNorm<Scalar>("vae.enc.on", widths[3]);
    out_conv_ = nn::Conv2d<Scalar>("vae.enc.out", widths[3], 2 * latent_channels_, 3, 1, 1, rng);
  }

  void collect(ParamRefs<Scalar>& out) {
    in_conv_.collect(out);
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      norms_[i].collect(out);
      downs_[i].collect(out);
    }
    out_norm_.collect(out);
    out_conv_.collect(out);
  }

  LatentDistributionBatch<Scalar> forward(const Batch<Scalar>& s0) {
    for (const auto& s : s0)
      check(s.c == 1 && s.h % 8 == 0 && s.w % 8 == 0,
            "vae_encode: expected 1xHxW with H, W divisible by 8, got " + s.shape_str());
    Batch<Scalar> h = in_conv_.forward(s0);
    for (std::size_t i = 0; i < downs_.size(); ++i)
      h = downs_[i].forward(acts_[i].forward(norms_[i].forward(h)));
    h = out_conv_.forward(out_act_.forward(out_norm_.forward(h)));
    LatentDistributionBatch<Scalar> out;
    clamp_mask_.clear();
    for (auto& t : h) {
      Tensor<Scalar> mean(latent_channels_, t.h, t.w), logvar(latent_channels_, t.h, t.w);
      mean.data = t.data.head(mean.size());
      logvar.data = t.data.tail(logvar.size());
      Tensor<Scalar> mask(latent_channels_, t.h, t.w);
      mask.data = ((logvar.data > Scalar(kLogvarMin)) && (logvar.data < Scalar(kLogvarMax)))
                      .template cast<Scalar>();
      logvar.data = logvar.data.max(Scalar(kLogvarMin)).min(Scalar(kLogvarMax));
      clamp_mask_.push_back(std::move(mask));
      out.mean.push_back(std::move(mean));
      out.logvar.push_back(std::move(logvar));
    }
    return out;
  }

  void backward(const Batch<Scalar>& dmean, const Batch<Scalar>& dlogvar) {
    Batch<Scalar> dh;
    dh.reserve(dmean.size());
    for (std::size_t i = 0; i < dmean.size(); ++i) {
      Tensor<Scalar> g(2 * latent_channels_, dmean[i].h, dmean[i].w);
      g.data.head(dmean[i].size()) = dmean[i].data;
      g.data.tail(dlogvar[i].size()) = dlogvar[i].data * clamp_mask_[i].data;
      dh.push_back(std::move(g));
    }
    Batch<Scalar> g = out_norm_.backward(out_act_.backward(out_conv_.backward(dh)));
    for (int i = int(downs_.size()) - 1; i >= 0; --i)
      g = norms_[i].backward(acts_[i].backward(downs_[i].backward(g)));
    in_conv_.backward(g);
  }

 private:
  int latent_channels_;
  nn::Conv2d<Scalar> in_conv_;
  std::vector<nn::GroupNorm<Scalar>> norms_;
  std::vector<nn::Conv2d<Scalar>> downs_;
  std::array<nn::SiLU<Scalar>, 3> acts_;
  nn::GroupNorm<Scalar> out_norm_;
  nn::SiLU<Scalar> out_act_;
  nn::Conv2d<Scalar> out_conv_;
  Batch<Scalar> clamp_mask_;
};

/// Shading VAE decoder: latent -> 1 x H x W in [0, 1] via a final sigmoid.
template <typename Scalar>
class VaeDecoder {
 public:
  VaeDecoder(const ModelConfig& cfg, Rng& rng)
      : latent_channels_(cfg.latent_channels),
        in_conv_("vae.dec.in", cfg.latent_channels, std::min(512, 4 * cfg.vae_width), 3, 1, 1,
                 rng) {
    const int v = cfg.vae_width;
    const int widths[4] = {std::min(512, 4 * v), std::min(512, 2 * v), v, v};
    for (int i = 0; i < 3; ++i) {
      norms_.emplace_back("vae.dec.n" + std::to_string(i), widths[i]);
      convs_.emplace_back("vae.dec.c" + std::to_string(i), widths[i], widths[i + 1], 3, 1, 1, rng);
    }
    out_norm_ = nn::GroupNorm<Scalar>("vae.dec.on", widths[3]);
    out_conv_ = nn::Conv2d<Scalar>("vae.dec.out", widths[3], 1, 3, 1, 1, rng);
  }

  void collect(ParamRefs<Scalar>& out) {
    in_conv_.collect(out);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      norms_[i].collect(out);
      convs_[i].collect(out);
    }
    out_norm_.collect(out);
    out_conv_.collect(out);
  }

  Batch<Scalar> forward(const Batch<Scalar>& z) {
    for (const auto& t : z)
      check(t.c == latent_channels_, "vae_decode: latent channel mismatch, got " + t.shape_str());
    Batch<Scalar> h = in_conv_.forward(z);
    for (std::size_t i = 0; i < convs_.size(); ++i)
      h = convs_[i].forward(ups_[i].forward(acts_[i].forward(norms_[i].forward(h))));
    h = out_conv_.forward(out_act_.forward(out_norm_.forward(h)));
    return squash_.forward(h);
  }

  Batch<Scalar> backward(const Batch<Scalar>& ds_hat) {
    Batch<Scalar> g = out_norm_.backward(out_act_.backward(out_conv_.backward(squash_.backward(ds_hat))));
    for (int i = int(convs_.size()) - 1; i >= 0; --i)
      g = norms_[i].backward(acts_[i].backward(ups_[i].backward(convs_[i].backward(g))));
    return in_conv_.backward(g);
  }

 private:
  int latent_channels_;
  nn::Conv2d<Scalar> in_conv_;
  std::vector<nn::GroupNorm<Scalar>> norms_;
  std::vector<nn::Conv2d<Scalar>> convs_;
  std::array<nn::SiLU<Scalar>, 3> acts_;
  std::array<nn::Upsample2x<Scalar>, 3> ups_;
  nn::GroupNorm<Scalar> out_norm_;
  nn::SiLU<Scalar> out_act_;
  nn::Conv2d<Scalar> out_conv_;
  nn::Sigmoid<Scalar> squash_;
};

/// Patch-level convolutional critic over shading images; outputs a logit map.
template <typename Scalar>
class Discriminator {
 public:
  Discriminator(const ModelConfig& cfg, Rng& rng)
      : c0_("disc.c0", 1, cfg.disc_width, 4, 2, 1, rng),
        c1_("disc.c1", cfg.disc_width, 2 * cfg.disc_width, 4, 2, 1, rng),
        n1_("disc.n1", 2 * cfg.disc_width),
        c2_("disc.c2", 2 * cfg.disc_width, 4 * cfg.disc_width, 4, 2, 1, rng),
        n2_("disc.n2", 4 * cfg.disc_width),
        out_("disc.out", 4 * cfg.disc_width, 1, 3, 1, 1, rng) {}

  void collect(ParamRefs<Scalar>& out) {
    c0_.collect(out);
    c1_.collect(out);
    n1_.collect(out);
    c2_.collect(out);
    n2_.collect(out);
    out_.collect(out);
  }

  Batch<Scalar> forward(const Batch<Scalar>& s) {
    Batch<Scalar> h = a0_.forward(c0_.forward(s));
    h = a1_.forward(n1_.forward(c1_.forward(h)));
    h = a2_.forward(n2_.forward(c2_.forward(h)));
    return out_.forward(h);
  }

  Batch<Scalar> backward(const Batch<Scalar>& dlogits) {
    Batch<Scalar> g = out_.backward(dlogits);
    g = c2_.backward(n2_.backward(a2_.backward(g)));
    g = c1_.backward(n1_.backward(a1_.backward(g)));
    return c0_.backward(a0_.backward(g));
  }

 private:
  nn::Conv2d<Scalar> c0_, c1_;
  nn::GroupNorm<Scalar> n1_;
  nn::Conv2d<Scalar> c2_;
  nn::GroupNorm<Scalar> n2_;
  nn::Conv2d<Scalar> out_;
  nn::LeakyReLU<Scalar> a0_, a1_, a2_;
};

/// Hinge adversarial losses evaluated on logit maps.
/// d_loss = mean(relu(1 - D(real))) + mean(relu(1 + D(fake)))
/// g_loss = -mean(D(fake))
template <typename Scalar>
std::pair<double, double> hinge_losses(const Batch<Scalar>& real_logits,
                                       const Batch<Scalar>& fake_logits) {
  check(real_logits.size() == fake_logits.size() && !real_logits.empty(),
        "hinge_losses: batch mismatch");
  double d_loss = 0.0, g_loss = 0.0;
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    check_same_shape(real_logits[i], fake_logits[i], "hinge_losses");
    d_loss += double((Scalar(1) - real_logits[i].data).max(Scalar(0)).mean());
    d_loss += double((Scalar(1) + fake_logits[i].data).max(Scalar(0)).mean());
    g_loss += double(-fake_logits[i].data.mean());
  }
  return {d_loss / double(real_logits.size()), g_loss / double(real_logits.size())};
}

/// Evaluation-only form of the adversarial pair (no gradients retained).
template <typename Scalar>
std::pair<double, double> adversarial_losses(Discriminator<Scalar>& disc,
                                             const Batch<Scalar>& real,
                                             const Batch<Scalar>& fake) {
  Batch<Scalar> rl = disc.forward(real);
  Batch<Scalar> fl = disc.forward(fake);
  return hinge_losses(rl, fl);
}

/// Fixed, seeded, untrained strided-conv pyramid used as the perceptual
/// feature extractor. Weights are deterministic and never trained; a
/// different extractor can be substituted behind perceptual_loss.
template <typename Scalar>
class PerceptualPyramid {
 public:
  static constexpr int kLevels = 5;

  explicit PerceptualPyramid(std::uint64_t seed = 0xFEA7) {
    Rng rng(seed, 0xBEEF);
    const int widths[kLevels + 1] = {1, 8, 16, 32, 64, 64};
    for (int i = 0; i < kLevels; ++i)
      convs_.emplace_back("perc.c" + std::to_string(i), widths[i], widths[i + 1], 3, 2, 1, rng);
  }

  /// Feature maps at every level (post-activation).
  std::vector<Batch<Scalar>> features(const Batch<Scalar>& x) {
    std::vector<Batch<Scalar>> out;
    Batch<Scalar> h = x;
    for (int i = 0; i < kLevels; ++i) {
      h = acts_[i].forward(convs_[i].forward(h));
      out.push_back(h);
    }
    return out;
  }

  /// Backprop level gradients to the input. Internal parameter grads are
  /// produced as a side effect and discarded.
  Batch<Scalar> backward_to_input(const std::vector<Batch<Scalar>>& dfeat) {
    Batch<Scalar> g;
    for (int i = kLevels - 1; i >= 0; --i) {
      if (g.empty()) {
        g = dfeat[i];
      } else {
        for (std::size_t s = 0; s < g.size(); ++s) g[s].data += dfeat[i][s].data;
      }
      g = convs_[i].backward(acts_[i].backward(g));
    }
    for (auto& c : convs_) {
      c.weight.zero_grad();
      c.bias.zero_grad();
    }
    return g;
  }

 private:
  std::vector<nn::Conv2d<Scalar>> convs_;
  std::array<nn::SiLU<Scalar>, kLevels> acts_;
};

/// Sum over pyramid levels of mean squared feature differences. With
/// d_s_hat non-null, also backprops the loss gradient to s_hat (single
/// sample interface; batching is handled by the training step).
template <typename Scalar>
double perceptual_loss(PerceptualPyramid<Scalar>& extractor, const Tensor<Scalar>& s_hat,
                       const Tensor<Scalar>& s0, Tensor<Scalar>* d_s_hat = nullptr,
                       double weight = 1.0) {
  check_same_shape(s_hat, s0, "perceptual_loss");
  const auto f0 = extractor.features({s0});
  const auto f1 = extractor.features({s_hat});  // extractor caches now hold the s_hat pass
  double loss = 0.0;
  std::vector<Batch<Scalar>> dfeat(f1.size());
  for (std::size_t l = 0; l < f1.size(); ++l) {
    loss += mean_squared_diff(f1[l][0], f0[l][0]);
    if (d_s_hat) {
      Tensor<Scalar> g = f1[l][0];
      g.data = Scalar(weight * 2.0 / double(g.size())) * (f1[l][0].data - f0[l][0].data);
      dfeat[l] = {std::move(g)};
    }
  }
  if (d_s_hat) {
    Batch<Scalar> dx = extractor.backward_to_input(dfeat);
    d_s_hat->data += dx[0].data;
  }
  return loss;
}

}  // namespace flowiid
