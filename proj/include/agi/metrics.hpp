#pragma once

#include <cmath>
#include <vector>

#include "agi/tensor.hpp"

namespace agi::metrics {

inline constexpr double kPsnrCap = 100.0;  // dB reported for a zero-error pair

// 10 log10(peak^2 / MSE), capped so identical images stay finite.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  check(a.same_shape(b), "psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  check(a.numel() >= 1, "psnr of empty tensors");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    mse += d * d;
  }
  mse /= double(a.numel());
  if (mse == 0) return kPsnrCap;
  const double v = 10.0 * std::log10(peak * peak / mse);
  return v > kPsnrCap ? kPsnrCap : v;
}

// Mean absolute error scaled by 100.
template <typename T>
double mae_scaled(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.same_shape(b), "mae: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  check(a.numel() >= 1, "mae of empty tensors");
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::fabs(double(a[i]) - double(b[i]));
  return acc / double(a.numel()) * 100.0;
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < size; ++i) {
    w[size_t(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[size_t(i)];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Valid-mode separable filter: rows then columns, output (h-size+1) x (w-size+1).
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                        const std::vector<double>& win) {
  const int size = int(win.size());
  const int wo = w - size + 1, ho = h - size + 1;
  std::vector<double> rows(size_t(h) * wo), out(size_t(ho) * wo);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0;
      for (int i = 0; i < size; ++i) acc += win[size_t(i)] * img[size_t(y) * w + x + i];
      rows[size_t(y) * wo + x] = acc;
    }
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double acc = 0;
      for (int i = 0; i < size; ++i) acc += win[size_t(i)] * rows[size_t(y + i) * wo + x];
      out[size_t(y) * wo + x] = acc;
    }
  return out;
}

}  // namespace detail

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Mean structural similarity over all fully-covered windows (no padding).
// Inputs are H x W with H, W >= window.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg = {}) {
  check(a.same_shape(b), "ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
  check(a.rank() == 2, "ssim expects H x W tensors, got " + shape_str(a.shape()));
  const int h = int(a.dim(0)), w = int(a.dim(1));
  check(h >= cfg.window && w >= cfg.window,
        "ssim: image " + shape_str(a.shape()) + " smaller than window " +
            std::to_string(cfg.window));
  const int64_t n = a.numel();
  std::vector<double> pa(static_cast<size_t>(n)), pb(static_cast<size_t>(n)), paa(static_cast<size_t>(n)), pbb(static_cast<size_t>(n)), pab(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double av = double(a[i]), bv = double(b[i]);
    pa[size_t(i)] = av;
    pb[size_t(i)] = bv;
    paa[size_t(i)] = av * av;
    pbb[size_t(i)] = bv * bv;
    pab[size_t(i)] = av * bv;
  }
  const auto win = detail::gaussian_window(cfg.window, cfg.sigma);
  const auto ma = detail::filter_valid(pa, h, w, win);
  const auto mb = detail::filter_valid(pb, h, w, win);
  const auto maa = detail::filter_valid(paa, h, w, win);
  const auto mbb = detail::filter_valid(pbb, h, w, win);
  const auto mab = detail::filter_valid(pab, h, w, win);
  const double c1 = (cfg.k1 * cfg.peak) * (cfg.k1 * cfg.peak);
  const double c2 = (cfg.k2 * cfg.peak) * (cfg.k2 * cfg.peak);
  double acc = 0;
  for (size_t i = 0; i < ma.size(); ++i) {
    const double mu_a = ma[i], mu_b = mb[i];
    const double va = maa[i] - mu_a * mu_a;
    const double vb = mbb[i] - mu_b * mu_b;
    const double cov = mab[i] - mu_a * mu_b;
    acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
           ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
  }
  return acc / double(ma.size());
}

// Per-sample metric rows plus their arithmetic means. SSIM is carried
// times 100 and MAE times 100, matching the reported tables.
struct MetricReport {
  std::vector<double> psnr_db;
  std::vector<double> ssim_pct;
  std::vector<double> mae_x100;
  double mean_psnr_db = 0;
  double mean_ssim_pct = 0;
  double mean_mae_x100 = 0;

  void finalize() {
    check(!psnr_db.empty() && psnr_db.size() == ssim_pct.size() &&
              psnr_db.size() == mae_x100.size(),
          "metric report: per-sample lists empty or ragged");
    auto mean = [](const std::vector<double>& v) {
      double acc = 0;
      for (double x : v) acc += x;
      return acc / double(v.size());
    };
    mean_psnr_db = mean(psnr_db);
    mean_ssim_pct = mean(ssim_pct);
    mean_mae_x100 = mean(mae_x100);
  }
};

}  // namespace agi::metrics
