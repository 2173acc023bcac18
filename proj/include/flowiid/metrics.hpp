#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "flowiid/tensor.hpp"

namespace flowiid {

/// Evaluation measures for decomposition quality: MSE, RMSE, windowed
/// scale-invariant LMSE, SSIM and DSSIM = (1 - SSIM) / 2. All of them are
/// computed in double regardless of the image scalar type.

template <typename Scalar>
double mse(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
  return mean_squared_diff(pred, gt);
}

template <typename Scalar>
double rmse(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
  return std::sqrt(mse(pred, gt));
}

/// Window origins covering [0, extent): strided, plus a final window flush to
/// the edge when the stride does not land there.
inline std::vector<int> window_origins(int extent, int window, int stride) {
  std::vector<int> out;
  for (int p = 0; p + window <= extent; p += stride) out.push_back(p);
  if (out.empty() || out.back() + window < extent) out.push_back(extent - window);
  return out;
}

/// LMSE window/stride at a given image side, scaled from 20/10 at side 256.
inline int lmse_window_for(int side) { return std::max(2, int(std::lround(20.0 * side / 256.0))); }
inline int lmse_stride_for(int side) { return std::max(1, int(std::lround(10.0 * side / 256.0))); }

/// Local scale-invariant MSE. Per channel, over sliding windows: fit the
/// window scale a* = <gt,pred>/<pred,pred> (a* = 0 for an all-zero pred
/// window), accumulate the per-window MSE at a*, and normalize by the mean
/// per-window gt energy. Channels are scored independently and averaged.
template <typename Scalar>
double lmse(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt, int window, int stride) {
  check_same_shape(pred, gt, "lmse");
  check(window >= 1 && window <= std::min(gt.h, gt.w), "lmse: invalid window");
  check(stride >= 1, "lmse: invalid stride");
  const std::vector<int> ys = window_origins(gt.h, window, stride);
  const std::vector<int> xs = window_origins(gt.w, window, stride);
  const double wn = double(window) * window;

  double channel_sum = 0.0;
  for (int c = 0; c < gt.c; ++c) {
    double err_sum = 0.0, energy_sum = 0.0;
    for (int oy : ys) {
      for (int ox : xs) {
        double pp = 0.0, gp = 0.0, gg = 0.0;
        for (int y = oy; y < oy + window; ++y) {
          for (int x = ox; x < ox + window; ++x) {
            const double p = double(pred.at(c, y, x));
            const double g = double(gt.at(c, y, x));
            pp += p * p;
            gp += g * p;
            gg += g * g;
          }
        }
        const double alpha = pp > 0.0 ? gp / pp : 0.0;
        // ||a p - g||^2 = a^2 pp - 2 a gp + gg
        const double sse = alpha * alpha * pp - 2.0 * alpha * gp + gg;
        err_sum += std::max(0.0, sse) / wn;
        energy_sum += gg / wn;
      }
    }
    channel_sum += energy_sum > 0.0 ? err_sum / energy_sum : 0.0;
  }
  return channel_sum / double(gt.c);
}

template <typename Scalar>
double lmse(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
  const int side = std::min(gt.h, gt.w);
  return lmse(pred, gt, lmse_window_for(side), lmse_stride_for(side));
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 1, evaluated where the full window fits and averaged over
/// channels.
template <typename Scalar>
double ssim(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
  check_same_shape(pred, gt, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (K1 L)^2
  constexpr double kC2 = 0.03 * 0.03;  // (K2 L)^2
  check(gt.h >= kWin && gt.w >= kWin, "ssim: image smaller than the 11x11 window");

  double kernel[kWin][kWin];
  double ksum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - (kWin - 1) / 2.0, dx = j - (kWin - 1) / 2.0;
      kernel[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
      ksum += kernel[i][j];
    }
  }
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) kernel[i][j] /= ksum;

  double channel_sum = 0.0;
  for (int c = 0; c < gt.c; ++c) {
    double map_sum = 0.0;
    long map_n = 0;
    for (int oy = 0; oy + kWin <= gt.h; ++oy) {
      for (int ox = 0; ox + kWin <= gt.w; ++ox) {
        double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
        for (int i = 0; i < kWin; ++i) {
          for (int j = 0; j < kWin; ++j) {
            const double k = kernel[i][j];
            const double x = double(pred.at(c, oy + i, ox + j));
            const double y = double(gt.at(c, oy + i, ox + j));
            mx += k * x;
            my += k * y;
            mxx += k * x * x;
            myy += k * y * y;
            mxy += k * x * y;
          }
        }
        const double vx = mxx - mx * mx;
        const double vy = myy - my * my;
        const double cxy = mxy - mx * my;
        const double val = ((2 * mx * my + kC1) * (2 * cxy + kC2)) /
                           ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        map_sum += val;
        ++map_n;
      }
    }
    channel_sum += map_sum / double(map_n);
  }
  return channel_sum / double(gt.c);
}

template <typename Scalar>
double dssim(const Tensor<Scalar>& pred, const Tensor<Scalar>& gt) {
  return (1.0 - ssim(pred, gt)) / 2.0;
}

struct MetricRow {
  std::string id;
  double mse = 0, rmse = 0, lmse = 0, ssim = 0, dssim = 0;
};

template <typename Scalar>
MetricRow compute_metric_row(const std::string& id, const Tensor<Scalar>& pred,
                             const Tensor<Scalar>& gt) {
  MetricRow r;
  r.id = id;
  r.mse = mse(pred, gt);
  r.rmse = std::sqrt(r.mse);
  r.lmse = lmse(pred, gt);
  r.ssim = ssim(pred, gt);
  r.dssim = (1.0 - r.ssim) / 2.0;
  return r;
}

/// Per-image rows plus column means, for albedo and shading separately.
struct MetricReport {
  std::vector<MetricRow> albedo;
  std::vector<MetricRow> shading;

  static MetricRow aggregate(const std::vector<MetricRow>& rows) {
    MetricRow a;
    a.id = "mean";
    if (rows.empty()) return a;
    for (const auto& r : rows) {
      a.mse += r.mse;
      a.rmse += r.rmse;
      a.lmse += r.lmse;
      a.ssim += r.ssim;
      a.dssim += r.dssim;
    }
    const double n = double(rows.size());
    a.mse /= n;
    a.rmse /= n;
    a.lmse /= n;
    a.ssim /= n;
    a.dssim /= n;
    return a;
  }

  // Columns: component,id,mse,rmse,lmse,ssim,dssim. One row per image per
  // component plus a "mean" row per component.
  void write_csv(std::ostream& os) const {
    os << "component,id,mse,rmse,lmse,ssim,dssim\n";
    auto emit = [&os](const char* comp, const MetricRow& r) {
      os << comp << ',' << r.id << ',' << std::setprecision(12) << r.mse << ',' << r.rmse << ','
         << r.lmse << ',' << r.ssim << ',' << r.dssim << '\n';
    };
    for (const auto& r : albedo) emit("albedo", r);
    emit("albedo", aggregate(albedo));
    for (const auto& r : shading) emit("shading", r);
    emit("shading", aggregate(shading));
  }

  void write_table(std::ostream& os) const {
    auto line = [&os](const char* comp, const MetricRow& m) {
      os << std::left << std::setw(8) << comp << std::right << std::fixed << std::setprecision(5)
         << "  MSE " << std::setw(9) << m.mse << "  RMSE " << std::setw(9) << m.rmse << "  LMSE "
         << std::setw(9) << m.lmse << "  SSIM " << std::setw(9) << m.ssim << "  DSSIM "
         << std::setw(9) << m.dssim << "\n";
    };
    os << "aggregate over " << albedo.size() << " image(s)\n";
    line("albedo", aggregate(albedo));
    line("shading", aggregate(shading));
  }
};

}  // namespace flowiid
