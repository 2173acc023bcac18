#pragma once

#include <algorithm>
#include <utility>

#include "flowiid/backbone.hpp"
#include "flowiid/vae.hpp"

namespace flowiid {

/// Condition encoder + UNet, trained jointly in the flow-matching stage.
template <typename Scalar>
struct FlowModel {
  ModelConfig cfg;
  ConditionEncoder<Scalar> encoder;
  UNet<Scalar> unet;

  FlowModel(const ModelConfig& c, std::uint64_t init_seed)
      : FlowModel(c, Rng(init_seed, 1), Rng(init_seed, 2)) {}

  ParamRefs<Scalar> params() {
    ParamRefs<Scalar> ps;
    encoder.collect(ps);
    unet.collect(ps);
    return ps;
  }

 private:
  FlowModel(const ModelConfig& c, Rng r1, Rng r2) : cfg(c), encoder(c, r1), unet(c, r2) {}
};

/// VAE encoder/decoder plus discriminator; latent_scale is the multiplier
/// that normalizes encoder means to unit standard deviation, measured on the
/// training set after VAE training.
template <typename Scalar>
struct VaeModel {
  ModelConfig cfg;
  VaeEncoder<Scalar> encoder;
  VaeDecoder<Scalar> decoder;
  Discriminator<Scalar> discriminator;
  double latent_scale = 1.0;

  VaeModel(const ModelConfig& c, std::uint64_t init_seed)
      : cfg(c),
        encoder(c, make_rng(init_seed, 11)),
        decoder(c, make_rng(init_seed, 12)),
        discriminator(c, make_rng(init_seed, 13)) {}

  ParamRefs<Scalar> vae_params() {
    ParamRefs<Scalar> ps;
    encoder.collect(ps);
    decoder.collect(ps);
    return ps;
  }
  ParamRefs<Scalar> disc_params() {
    ParamRefs<Scalar> ps;
    discriminator.collect(ps);
    return ps;
  }

 private:
  static Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(seed, stream); }
};

struct ParameterCounts {
  long long inference = 0;  // condition encoder + UNet + VAE decoder
  long long training = 0;   // inference + VAE encoder + discriminator
};

/// Closed-form learnable-parameter census mirroring the module constructors.
/// Cross-checked against instantiated models in the test suite.
inline ParameterCounts count_parameters(const ModelConfig& cfg) {
  const auto conv = [](long long in, long long out, long long k) { return out * in * k * k + out; };
  const auto norm = [](long long c) { return 2 * c; };
  const auto linear = [](long long in, long long out) { return out * in + out; };
  const auto mrb = [&](long long in, long long out, long long tfeat) {
    long long n = norm(in) + conv(in, out, 3) + norm(out) + conv(out, out, 3);
    if (tfeat > 0) n += linear(tfeat, out);
    if (in != out) n += conv(in, out, 1);
    return n;
  };
  const auto attn = [&](long long c) { return norm(c) + conv(c, 3 * c, 1) + conv(c, c, 1); };
  const auto down_block = [&](long long in, long long out, bool down) {
    return mrb(in, out, 0) + (down ? conv(out, out, 3) : 0);
  };
  const auto cap = [](int v) { return std::min(512, v); };

  const long long w0 = cfg.unet_width(0), w1 = cfg.unet_width(1), w2 = cfg.unet_width(2);
  const long long T = cfg.time_embed_dim;
  const long long z = cfg.latent_channels;

  // Condition encoder
  const int e = cfg.encoder_base_width;
  long long enc = conv(3, e, 3);
  enc += down_block(e, cap(2 * e), true);
  enc += down_block(cap(2 * e), cap(4 * e), true);
  enc += down_block(cap(4 * e), cfg.concat_channels, true);
  enc += down_block(cfg.concat_channels, w0, false);
  enc += down_block(w0, w1, true);
  enc += down_block(w1, w2, true);

  // UNet
  const auto has_stage = [&cfg](int s) {
    return std::find(cfg.attention_stages.begin(), cfg.attention_stages.end(), s) !=
           cfg.attention_stages.end();
  };
  long long unet = linear(T, T) + linear(T, T);  // time MLP
  unet += conv(z + (cfg.use_concatenation ? cfg.concat_channels : 0), w0, 3);
  unet += mrb(w0, w1, T);
  int stage = 1;
  if (has_stage(stage++)) unet += attn(w1);
  unet += conv(w1, w1, 3);  // down1
  unet += mrb(w1, w2, T);
  if (has_stage(stage++)) unet += attn(w2);
  unet += conv(w2, w2, 3);  // down2
  if (cfg.unet_depth == 5) {
    unet += mrb(w2, w2, T);
    if (has_stage(stage)) unet += attn(w2);
  }
  if (cfg.unet_depth == 5) ++stage;
  if (has_stage(stage++)) unet += attn(w1);
  unet += mrb(w2 + w1, w1, T);
  unet += mrb(w1 + w0, w0, T);
  if (has_stage(stage++)) unet += attn(w0);
  unet += conv(w0, z, 3);

  // VAE
  const int v = cfg.vae_width;
  const long long vw[4] = {v, cap(2 * v), cap(4 * v), cap(4 * v)};
  long long vae_enc = conv(1, v, 3);
  for (int i = 0; i < 3; ++i) vae_enc += norm(vw[i]) + conv(vw[i], vw[i + 1], 3);
  vae_enc += norm(vw[3]) + conv(vw[3], 2 * z, 3);

  const long long dw[4] = {cap(4 * v), cap(2 * v), v, v};
  long long vae_dec = conv(z, dw[0], 3);
  for (int i = 0; i < 3; ++i) vae_dec += norm(dw[i]) + conv(dw[i], dw[i + 1], 3);
  vae_dec += norm(dw[3]) + conv(dw[3], 1, 3);

  // Discriminator
  const long long d = cfg.disc_width;
  long long disc = conv(1, d, 4) + conv(d, 2 * d, 4) + norm(2 * d) + conv(2 * d, 4 * d, 4) +
                   norm(4 * d) + conv(4 * d, 1, 3);

  ParameterCounts counts;
  counts.inference = enc + unet + vae_dec;
  counts.training = counts.inference + vae_enc + disc;
  return counts;
}

}  // namespace flowiid
