#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "flowiid/nn/attention.hpp"
#include "flowiid/nn/blocks.hpp"

namespace flowiid {

using nn::ParamRefs;
using nn::VecX;

/// Architecture and ablation knobs. The widths of the published model are
/// not public; base_width doubles per downsample and is capped at 512.
struct ModelConfig {
  int image_size = 256;     // divisible by 64
  int latent_channels = 8;  // VAE latent depth
  int base_width = 128;     // UNet stage-0 width
  int unet_depth = 4;       // 4 or 5 residual stages
  std::vector<int> attention_stages = {2, 3};  // 1-based, in forward order
  bool use_concatenation = true;
  int time_embed_dim = 128;
  int encoder_blocks = 6;

  int concat_channels = 256;     // condition features concatenated onto the latent
  int encoder_base_width = 64;   // condition-encoder entry width
  int vae_width = 64;            // VAE entry width
  int disc_width = 64;           // discriminator entry width
  int attn_head_dim = 32;

  int latent_size() const { return image_size / 8; }
  int unet_width(int stage) const { return std::min(512, base_width << stage); }  // stage 0..2

  void validate() const {
    check(image_size > 0 && image_size % 64 == 0, "ModelConfig: image_size must be divisible by 64");
    check(latent_channels >= 1, "ModelConfig: latent_channels must be >= 1");
    check(base_width >= 4, "ModelConfig: base_width must be >= 4");
    check(unet_depth == 4 || unet_depth == 5, "ModelConfig: unet_depth must be 4 or 5");
    for (int s : attention_stages)
      check(s >= 1 && s <= unet_depth, "ModelConfig: attention stage out of range");
    check(encoder_blocks == 6, "ModelConfig: the condition encoder is a six-block design");
    check(time_embed_dim >= 4 && time_embed_dim % 2 == 0,
          "ModelConfig: time_embed_dim must be even and >= 4");
    check(concat_channels >= 1, "ModelConfig: concat_channels must be >= 1");
  }

  static ModelConfig tiny() {
    ModelConfig c;
    c.image_size = 64;
    c.base_width = 32;
    c.encoder_base_width = 32;
    c.vae_width = 32;
    c.disc_width = 32;
    return c;
  }

  static ModelConfig paper() { return ModelConfig{}; }
};

/// Condition features: one map concatenated onto the latent and three maps
/// pointwise added at the UNet's input conv and its two downsampling blocks.
template <typename Scalar>
struct FeatureBundle {
  Tensor<Scalar> concat;                   // concat_channels x S x S
  std::array<Tensor<Scalar>, 3> inject;    // widths w0@S, w1@S/2, w2@S/4
};

template <typename Scalar>
struct FeatureBundleBatch {
  Batch<Scalar> concat;
  std::array<Batch<Scalar>, 3> inject;

  std::size_t size() const { return concat.size(); }
  FeatureBundle<Scalar> sample(std::size_t i) const {
    return {concat[i], {inject[0][i], inject[1][i], inject[2][i]}};
  }
};

namespace detail {

/// Residual block plus optional stride-2 conv.
template <typename Scalar>
struct DownBlock {
  nn::ResidualBlock<Scalar> mrb;
  std::optional<nn::Conv2d<Scalar>> down;

  DownBlock() = default;
  DownBlock(const std::string& name, int in, int out, bool downsample, Rng& rng)
      : mrb(name + ".mrb", in, out, /*time_feat_dim=*/0, rng) {
    if (downsample) down.emplace(name + ".down", out, out, 3, 2, 1, rng);
  }

  void collect(ParamRefs<Scalar>& out) {
    mrb.collect(out);
    if (down) down->collect(out);
  }

  Batch<Scalar> forward(const Batch<Scalar>& x) {
    Batch<Scalar> h = mrb.forward(x);
    return down ? down->forward(h) : h;
  }
  Batch<Scalar> backward(const Batch<Scalar>& dy) {
    Batch<Scalar> g = down ? down->backward(dy) : dy;
    return mrb.backward(g);
  }
};

template <typename Scalar>
Batch<Scalar> concat_channelwise(const Batch<Scalar>& a, const Batch<Scalar>& b) {
  Batch<Scalar> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    check(a[i].h == b[i].h && a[i].w == b[i].w, "concat: spatial mismatch");
    Tensor<Scalar> t(a[i].c + b[i].c, a[i].h, a[i].w);
    t.data.head(a[i].size()) = a[i].data;
    t.data.tail(b[i].size()) = b[i].data;
    out.push_back(std::move(t));
  }
  return out;
}

template <typename Scalar>
void split_channelwise(const Batch<Scalar>& cat, int c_first, Batch<Scalar>& first,
                       Batch<Scalar>& second) {
  first.clear();
  second.clear();
  for (const auto& t : cat) {
    Tensor<Scalar> a(c_first, t.h, t.w), b(t.c - c_first, t.h, t.w);
    a.data = t.data.head(a.size());
    b.data = t.data.tail(b.size());
    first.push_back(std::move(a));
    second.push_back(std::move(b));
  }
}

}  // namespace detail

/// Six-block condition encoder. Blocks 1-3 downsample to H/8 (block 3 feeds
/// the concatenation), block 4 keeps H/8, blocks 5-6 downsample to H/16 and
/// H/32 so the last three outputs align with the UNet injection sites.
template <typename Scalar>
class ConditionEncoder {
 public:
  ConditionEncoder(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        init_conv_("cond.init", 3, cfg.encoder_base_width, 3, 1, 1, rng) {
    const int e = cfg.encoder_base_width;
    const int e2 = std::min(512, 2 * e), e4 = std::min(512, 4 * e);
    blocks_.reserve(6);
    blocks_.emplace_back("cond.b1", e, e2, true, rng);
    blocks_.emplace_back("cond.b2", e2, e4, true, rng);
    blocks_.emplace_back("cond.b3", e4, cfg.concat_channels, true, rng);
    blocks_.emplace_back("cond.b4", cfg.concat_channels, cfg.unet_width(0), false, rng);
    blocks_.emplace_back("cond.b5", cfg.unet_width(0), cfg.unet_width(1), true, rng);
    blocks_.emplace_back("cond.b6", cfg.unet_width(1), cfg.unet_width(2), true, rng);
  }

  void collect(ParamRefs<Scalar>& out) {
    init_conv_.collect(out);
    for (auto& b : blocks_) b.collect(out);
  }

  /// image batch (3 x H x W) -> feature bundle batch. Counts evaluations for
  /// the single-call inference contract.
  FeatureBundleBatch<Scalar> forward(const Batch<Scalar>& images) {
    for (const auto& im : images)
      check(im.c == 3 && im.h == cfg_.image_size && im.w == cfg_.image_size,
            "ConditionEncoder: expected 3x" + std::to_string(cfg_.image_size) + "x" +
                std::to_string(cfg_.image_size) + " input, got " + im.shape_str());
    ++eval_count;
    FeatureBundleBatch<Scalar> out;
    Batch<Scalar> h = init_conv_.forward(images);
    h = blocks_[0].forward(h);
    h = blocks_[1].forward(h);
    out.concat = blocks_[2].forward(h);
    out.inject[0] = blocks_[3].forward(out.concat);
    out.inject[1] = blocks_[4].forward(out.inject[0]);
    out.inject[2] = blocks_[5].forward(out.inject[1]);
    return out;
  }

  /// Accumulates parameter grads from bundle grads; image grads discarded.
  void backward(const FeatureBundleBatch<Scalar>& grads) {
    Batch<Scalar> g = blocks_[5].backward(grads.inject[2]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i].data += grads.inject[1][i].data;
    g = blocks_[4].backward(g);
    for (std::size_t i = 0; i < g.size(); ++i) g[i].data += grads.inject[0][i].data;
    g = blocks_[3].backward(g);
    for (std::size_t i = 0; i < g.size(); ++i) g[i].data += grads.concat[i].data;
    g = blocks_[2].backward(g);
    g = blocks_[1].backward(g);
    g = blocks_[0].backward(g);
    init_conv_.backward(g);
  }

  long eval_count = 0;

 private:
  ModelConfig cfg_;
  nn::Conv2d<Scalar> init_conv_;
  std::vector<detail::DownBlock<Scalar>> blocks_;
};

/// UNet velocity predictor. Two downsampling and two upsampling residual
/// stages (optionally a fifth bottleneck stage), skip connections, condition
/// concatenation at the input conv, and pointwise feature injection at the
/// input conv and both downsampling outputs. Output matches the latent shape.
template <typename Scalar>
class UNet {
 public:
  UNet(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        time_embed_("unet.time", cfg.time_embed_dim, cfg.time_embed_dim, rng),
        in_conv_("unet.in_conv",
                 cfg.latent_channels + (cfg.use_concatenation ? cfg.concat_channels : 0),
                 cfg.unet_width(0), 3, 1, 1, rng),
        rb1_("unet.rb1", cfg.unet_width(0), cfg.unet_width(1), cfg.time_embed_dim, rng),
        down1_("unet.down1", cfg.unet_width(1), cfg.unet_width(1), 3, 2, 1, rng),
        rb2_("unet.rb2", cfg.unet_width(1), cfg.unet_width(2), cfg.time_embed_dim, rng),
        down2_("unet.down2", cfg.unet_width(2), cfg.unet_width(2), 3, 2, 1, rng),
        rb_up1_("unet.rb_up1", cfg.unet_width(2) + cfg.unet_width(1), cfg.unet_width(1),
                cfg.time_embed_dim, rng),
        rb_up2_("unet.rb_up2", cfg.unet_width(1) + cfg.unet_width(0), cfg.unet_width(0),
                cfg.time_embed_dim, rng),
        out_conv_("unet.out_conv", cfg.unet_width(0), cfg.latent_channels, 3, 1, 1, rng,
                  /*zero_init=*/true) {
    if (cfg.unet_depth == 5)
      rb_mid_.emplace("unet.rb_mid", cfg.unet_width(2), cfg.unet_width(2), cfg.time_embed_dim,
                      rng);
    auto has = [&cfg](int stage) {
      return std::find(cfg.attention_stages.begin(), cfg.attention_stages.end(), stage) !=
             cfg.attention_stages.end();
    };
    // Stage order: rb1, rb2, [mid], rb_up1, rb_up2. Attention sits on the
    // stage's output channels.
    int stage = 1;
    if (has(stage++)) attn1_.emplace("unet.attn1", cfg.unet_width(1), cfg.attn_head_dim, rng);
    if (has(stage++)) attn2_.emplace("unet.attn2", cfg.unet_width(2), cfg.attn_head_dim, rng);
    if (cfg.unet_depth == 5 && has(stage++))
      attn_mid_.emplace("unet.attn_mid", cfg.unet_width(2), cfg.attn_head_dim, rng);
    if (has(stage++)) attn_up1_.emplace("unet.attn_up1", cfg.unet_width(1), cfg.attn_head_dim, rng);
    if (has(stage++)) attn_up2_.emplace("unet.attn_up2", cfg.unet_width(0), cfg.attn_head_dim, rng);
  }

  void collect(ParamRefs<Scalar>& out) {
    time_embed_.collect(out);
    in_conv_.collect(out);
    rb1_.collect(out);
    if (attn1_) attn1_->collect(out);
    down1_.collect(out);
    rb2_.collect(out);
    if (attn2_) attn2_->collect(out);
    down2_.collect(out);
    if (rb_mid_) rb_mid_->collect(out);
    if (attn_mid_) attn_mid_->collect(out);
    rb_up1_.collect(out);
    if (attn_up1_) attn_up1_->collect(out);
    rb_up2_.collect(out);
    if (attn_up2_) attn_up2_->collect(out);
    out_conv_.collect(out);
  }

  bool injection_enabled = true;
  long eval_count = 0;

  Batch<Scalar> forward(const Batch<Scalar>& x_t, const FeatureBundleBatch<Scalar>& bundle,
                        const std::vector<Scalar>& ts) {
    check(x_t.size() == bundle.size() && x_t.size() == ts.size(), "UNet: batch size mismatch");
    for (std::size_t i = 0; i < x_t.size(); ++i) {
      check(x_t[i].c == cfg_.latent_channels, "UNet: latent channel mismatch");
      check(!cfg_.use_concatenation || (x_t[i].h == bundle.concat[i].h &&
                                        x_t[i].w == bundle.concat[i].w),
            "UNet: bundle/latent spatial mismatch");
    }
    ++eval_count;
    tfeat_ = time_embed_.forward(ts);

    Batch<Scalar> xin =
        cfg_.use_concatenation ? detail::concat_channelwise(x_t, bundle.concat) : x_t;
    h0_ = in_conv_.forward(xin);
    if (injection_enabled) add_into(h0_, bundle.inject[0]);

    Batch<Scalar> t1 = rb1_.forward(h0_, &tfeat_);
    if (attn1_) t1 = attn1_->forward(t1);
    d1_ = down1_.forward(t1);
    if (injection_enabled) add_into(d1_, bundle.inject[1]);

    Batch<Scalar> t2 = rb2_.forward(d1_, &tfeat_);
    if (attn2_) t2 = attn2_->forward(t2);
    Batch<Scalar> d2 = down2_.forward(t2);
    if (injection_enabled) add_into(d2, bundle.inject[2]);

    if (rb_mid_) {
      d2 = rb_mid_->forward(d2, &tfeat_);
      if (attn_mid_) d2 = attn_mid_->forward(d2);
    }

    Batch<Scalar> u1 = up_.forward(d2);
    Batch<Scalar> c1 = detail::concat_channelwise(u1, d1_);
    Batch<Scalar> r1 = rb_up1_.forward(c1, &tfeat_);
    if (attn_up1_) r1 = attn_up1_->forward(r1);

    Batch<Scalar> u2 = up2_.forward(r1);
    Batch<Scalar> c2 = detail::concat_channelwise(u2, h0_);
    Batch<Scalar> r2 = rb_up2_.forward(c2, &tfeat_);
    if (attn_up2_) r2 = attn_up2_->forward(r2);

    return out_conv_.forward(r2);
  }

  /// Returns gradients w.r.t. x_t and the feature bundle.
  std::pair<Batch<Scalar>, FeatureBundleBatch<Scalar>> backward(const Batch<Scalar>& dv) {
    std::vector<VecX<Scalar>> dtfeat(tfeat_.size());
    for (std::size_t i = 0; i < tfeat_.size(); ++i)
      dtfeat[i] = VecX<Scalar>::Zero(tfeat_[i].size());

    Batch<Scalar> g = out_conv_.backward(dv);
    if (attn_up2_) g = attn_up2_->backward(g);
    g = rb_up2_.backward(g, &dtfeat);
    Batch<Scalar> du2, dh0;
    detail::split_channelwise(g, cfg_.unet_width(1), du2, dh0);
    g = up2_.backward(du2);

    if (attn_up1_) g = attn_up1_->backward(g);
    g = rb_up1_.backward(g, &dtfeat);
    Batch<Scalar> du1, dd1;
    detail::split_channelwise(g, cfg_.unet_width(2), du1, dd1);
    g = up_.backward(du1);  // = dd2

    if (rb_mid_) {
      if (attn_mid_) g = attn_mid_->backward(g);
      g = rb_mid_->backward(g, &dtfeat);
    }

    FeatureBundleBatch<Scalar> db;
    db.inject[2] = injection_enabled ? g : zeros_like(g);

    g = down2_.backward(g);
    if (attn2_) g = attn2_->backward(g);
    g = rb2_.backward(g, &dtfeat);
    for (std::size_t i = 0; i < g.size(); ++i) g[i].data += dd1[i].data;  // skip join

    db.inject[1] = injection_enabled ? g : zeros_like(g);

    g = down1_.backward(g);
    if (attn1_) g = attn1_->backward(g);
    g = rb1_.backward(g, &dtfeat);
    for (std::size_t i = 0; i < g.size(); ++i) g[i].data += dh0[i].data;  // skip join

    db.inject[0] = injection_enabled ? g : zeros_like(g);

    g = in_conv_.backward(g);
    Batch<Scalar> dx;
    if (cfg_.use_concatenation) {
      detail::split_channelwise(g, cfg_.latent_channels, dx, db.concat);
    } else {
      dx = g;
      db.concat = zeros_like_shape(g, cfg_.concat_channels);
    }
    time_embed_.backward(dtfeat);
    return {std::move(dx), std::move(db)};
  }

 private:
  static void add_into(Batch<Scalar>& dst, const Batch<Scalar>& src) {
    check(dst.size() == src.size(), "UNet: injection batch mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      check_same_shape(dst[i], src[i], "UNet injection");
      dst[i].data += src[i].data;
    }
  }
  static Batch<Scalar> zeros_like(const Batch<Scalar>& ref) {
    Batch<Scalar> out;
    out.reserve(ref.size());
    for (const auto& t : ref) out.emplace_back(t.c, t.h, t.w);
    return out;
  }
  Batch<Scalar> zeros_like_shape(const Batch<Scalar>& ref, int c) {
    Batch<Scalar> out;
    out.reserve(ref.size());
    for (const auto& t : ref) out.emplace_back(c, t.h, t.w);
    return out;
  }

  ModelConfig cfg_;
  nn::TimeEmbed<Scalar> time_embed_;
  nn::Conv2d<Scalar> in_conv_;
  nn::ResidualBlock<Scalar> rb1_;
  nn::Conv2d<Scalar> down1_;
  nn::ResidualBlock<Scalar> rb2_;
  nn::Conv2d<Scalar> down2_;
  std::optional<nn::ResidualBlock<Scalar>> rb_mid_;
  nn::ResidualBlock<Scalar> rb_up1_, rb_up2_;
  nn::Conv2d<Scalar> out_conv_;
  std::optional<nn::SelfAttention<Scalar>> attn1_, attn2_, attn_mid_, attn_up1_, attn_up2_;
  nn::Upsample2x<Scalar> up_, up2_;

  std::vector<VecX<Scalar>> tfeat_;
  Batch<Scalar> h0_, d1_;
};

}  // namespace flowiid
