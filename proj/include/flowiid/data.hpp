#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "flowiid/rng.hpp"
#include "flowiid/tensor.hpp"

namespace flowiid {

/// Dataset-side building blocks: shading derivation from HDR/albedo pairs,
/// tonemapping to the unit interval, aspect-preserving resize+crop, and a
/// synthetic Lambertian scene generator with exact ground truth.

inline constexpr double kLumaR = 0.2126, kLumaG = 0.7152, kLumaB = 0.0722;  // Rec.709

template <typename Scalar>
Tensor<Scalar> luminance(const Tensor<Scalar>& rgb) {
  check(rgb.c == 3, "luminance: expected 3 channels");
  Tensor<Scalar> out(1, rgb.h, rgb.w);
  out.plane(0) = Scalar(kLumaR) * rgb.plane(0) + Scalar(kLumaG) * rgb.plane(1) +
                 Scalar(kLumaB) * rgb.plane(2);
  return out;
}

template <typename Scalar>
struct ShadingResult {
  Tensor<Scalar> shading;  // 1 x H x W, non-negative, pre-tonemap
  long masked = 0;         // pixels with zero albedo under nonzero hdr
};

/// Per-channel HDR/albedo ratio collapsed to one channel with Rec.709
/// luminance weights. Pixels where a channel has zero albedo but nonzero hdr
/// are masked to zero and counted.
template <typename Scalar>
ShadingResult<Scalar> compute_shading(const Tensor<Scalar>& hdr, const Tensor<Scalar>& albedo) {
  check(hdr.c == 3 && albedo.c == 3, "compute_shading: expected 3-channel inputs");
  check_same_shape(hdr, albedo, "compute_shading");
  ShadingResult<Scalar> res;
  res.shading = Tensor<Scalar>(1, hdr.h, hdr.w);
  const double weights[3] = {kLumaR, kLumaG, kLumaB};
  for (int y = 0; y < hdr.h; ++y) {
    for (int x = 0; x < hdr.w; ++x) {
      double s = 0.0;
      bool bad = false;
      for (int c = 0; c < 3; ++c) {
        const double a = double(albedo.at(c, y, x));
        const double i = double(hdr.at(c, y, x));
        if (a > 0.0) {
          s += weights[c] * (i / a);
        } else if (i > 0.0) {
          bad = true;
        }
        // a == 0 && i == 0: unlit pixel, contributes nothing
      }
      if (bad) {
        ++res.masked;
        res.shading.at(0, y, x) = Scalar(0);
      } else {
        res.shading.at(0, y, x) = Scalar(s);
      }
    }
  }
  return res;
}

/// Scale a non-negative HDR plane into [0, 1] by its 99th percentile
/// (nearest rank), then clamp. No gamma is applied. Constant positive images
/// map to 1; an all-zero image stays zero and sets *warned_all_zero.
template <typename Scalar>
Tensor<Scalar> tonemap_unit(const Tensor<Scalar>& hdr, bool* warned_all_zero = nullptr) {
  check(hdr.size() > 0, "tonemap_unit: empty image");
  check((hdr.data >= Scalar(0)).all(), "tonemap_unit: negative input");
  if (warned_all_zero) *warned_all_zero = false;
  std::vector<Scalar> vals(hdr.data.data(), hdr.data.data() + hdr.size());
  const Eigen::Index rank = Eigen::Index(std::ceil(0.99 * double(vals.size()))) - 1;
  std::nth_element(vals.begin(), vals.begin() + rank, vals.end());
  Scalar scale = vals[rank];
  if (scale <= Scalar(0)) scale = hdr.data.maxCoeff();  // >99% zeros: fall back to max
  Tensor<Scalar> out = hdr;
  if (scale <= Scalar(0)) {
    if (warned_all_zero) *warned_all_zero = true;
    return out;  // all zeros
  }
  out.data = (hdr.data / scale).min(Scalar(1)).max(Scalar(0));
  return out;
}

/// Bilinear resize so the shorter edge equals `side` (one scale factor for
/// both axes), then center crop to side x side.
template <typename Scalar>
Tensor<Scalar> resize_crop(const Tensor<Scalar>& img, int side) {
  check(side >= 8, "resize_crop: side must be >= 8");
  check(img.h >= 2 && img.w >= 2, "resize_crop: degenerate input");
  const double scale = double(side) / double(std::min(img.h, img.w));
  const int new_h = std::max(side, int(std::lround(img.h * scale)));
  const int new_w = std::max(side, int(std::lround(img.w * scale)));

  Tensor<Scalar> resized(img.c, new_h, new_w);
  for (int c = 0; c < img.c; ++c) {
    for (int y = 0; y < new_h; ++y) {
      const double sy = (y + 0.5) / scale - 0.5;
      const int y0 = std::clamp(int(std::floor(sy)), 0, img.h - 1);
      const int y1 = std::min(y0 + 1, img.h - 1);
      const double fy = std::clamp(sy - y0, 0.0, 1.0);
      for (int x = 0; x < new_w; ++x) {
        const double sx = (x + 0.5) / scale - 0.5;
        const int x0 = std::clamp(int(std::floor(sx)), 0, img.w - 1);
        const int x1 = std::min(x0 + 1, img.w - 1);
        const double fx = std::clamp(sx - x0, 0.0, 1.0);
        const double v = (1 - fy) * ((1 - fx) * img.at(c, y0, x0) + fx * img.at(c, y0, x1)) +
                         fy * ((1 - fx) * img.at(c, y1, x0) + fx * img.at(c, y1, x1));
        resized.at(c, y, x) = Scalar(v);
      }
    }
  }

  const int oy = (new_h - side) / 2;
  const int ox = (new_w - side) / 2;
  Tensor<Scalar> out(img.c, side, side);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) out.at(c, y, x) = resized.at(c, oy + y, ox + x);
  return out;
}

/// One synthetic scene: image = albedo * shading holds exactly.
template <typename Scalar>
struct ScenePair {
  Tensor<Scalar> image;       // 3 x H x W in [0, 1]
  Tensor<Scalar> albedo_gt;   // 3 x H x W in [0.1, 0.95]
  Tensor<Scalar> shading_gt;  // 1 x H x W in (0.05, 1]
};

/// Deterministic per (seed, index): albedo is a Voronoi field of piecewise
/// constant colors, shading a smooth positive sum of 2-5 Gaussian lobes
/// rescaled so its max is 1 and floor 0.05.
template <typename Scalar>
ScenePair<Scalar> synth_scene(std::uint64_t seed, std::uint64_t index, int side) {
  Rng rng(seed, 0x5CE4E000ULL + index);
  ScenePair<Scalar> sp;
  sp.albedo_gt = Tensor<Scalar>(3, side, side);
  sp.shading_gt = Tensor<Scalar>(1, side, side);

  const int sites = 6 + int(rng.uniform_int(9));  // 6..14 Voronoi cells
  std::vector<double> cx(sites), cy(sites);
  std::vector<std::array<double, 3>> color(sites);
  for (int s = 0; s < sites; ++s) {
    cx[s] = rng.uniform(0.0, side);
    cy[s] = rng.uniform(0.0, side);
    for (int c = 0; c < 3; ++c) color[s][c] = rng.uniform(0.1, 0.95);
  }
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      int best = 0;
      double best_d = 1e30;
      for (int s = 0; s < sites; ++s) {
        const double d = (x - cx[s]) * (x - cx[s]) + (y - cy[s]) * (y - cy[s]);
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      for (int c = 0; c < 3; ++c) sp.albedo_gt.at(c, y, x) = Scalar(color[best][c]);
    }
  }

  const int lobes = 2 + int(rng.uniform_int(4));  // 2..5
  std::vector<double> lx(lobes), ly(lobes), ls(lobes), la(lobes);
  for (int l = 0; l < lobes; ++l) {
    lx[l] = rng.uniform(0.0, side);
    ly[l] = rng.uniform(0.0, side);
    ls[l] = rng.uniform(0.10, 0.30) * side;
    la[l] = rng.uniform(0.3, 1.0);
  }
  double fmax = 0.0;
  std::vector<double> field(std::size_t(side) * side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double f = 0.0;
      for (int l = 0; l < lobes; ++l) {
        const double d2 = (x - lx[l]) * (x - lx[l]) + (y - ly[l]) * (y - ly[l]);
        f += la[l] * std::exp(-d2 / (2.0 * ls[l] * ls[l]));
      }
      field[std::size_t(y) * side + x] = f;
      fmax = std::max(fmax, f);
    }
  }
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      sp.shading_gt.at(0, y, x) = Scalar(0.05 + 0.95 * field[std::size_t(y) * side + x] / fmax);

  sp.image = Tensor<Scalar>(3, side, side);
  for (int c = 0; c < 3; ++c)
    sp.image.plane(c) = sp.albedo_gt.plane(c) * sp.shading_gt.plane(0);
  return sp;
}

template <typename Scalar>
std::vector<ScenePair<Scalar>> synth_generate(std::uint64_t seed, int count, int side) {
  check(count >= 1, "synth_generate: count must be >= 1");
  std::vector<ScenePair<Scalar>> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(synth_scene<Scalar>(seed, i, side));
  return out;
}

/// Mean gradient magnitude (forward differences), averaged over channels.
template <typename Scalar>
double mean_gradient_magnitude(const Tensor<Scalar>& img) {
  double acc = 0.0;
  long n = 0;
  for (int c = 0; c < img.c; ++c) {
    for (int y = 0; y + 1 < img.h; ++y) {
      for (int x = 0; x + 1 < img.w; ++x) {
        const double gx = double(img.at(c, y, x + 1)) - double(img.at(c, y, x));
        const double gy = double(img.at(c, y + 1, x)) - double(img.at(c, y, x));
        acc += std::sqrt(gx * gx + gy * gy);
        ++n;
      }
    }
  }
  return acc / double(n);
}

}  // namespace flowiid
