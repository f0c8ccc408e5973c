// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Distortion metrics. PSNR over all elements; SSIM with an 11x11 Gaussian
// window (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2 on [0,1] data, valid-region
// convolution, averaged over channels.

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dinat/tensor.hpp"

namespace dinat {

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  if (!a.same_shape(b)) throw DimensionError("psnr: shape mismatch");
  const T* ap = a.data();
  const T* bp = b.data();
  double mse = 0.0;
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(ap[i]) - static_cast<double>(bp[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(11);
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
      const double d = i - 5;
      v[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += v[static_cast<size_t>(i)];
    }
    for (auto& x : v) x /= sum;
    return v;
  }();
  return w;
}

// separable valid-region Gaussian filter of one channel (H,W) -> (H-10,W-10)
inline std::vector<double> ssim_filter(const std::vector<double>& img, int64_t H, int64_t W) {
  const auto& win = ssim_window();
  const int64_t Wo = W - 10, Ho = H - 10;
  std::vector<double> tmp(static_cast<size_t>(H * Wo));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 11; ++t) acc += win[static_cast<size_t>(t)] * img[static_cast<size_t>(y * W + x + t)];
      tmp[static_cast<size_t>(y * Wo + x)] = acc;
    }
  std::vector<double> out(static_cast<size_t>(Ho * Wo));
  for (int64_t y = 0; y < Ho; ++y)
    for (int64_t x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 11; ++t) acc += win[static_cast<size_t>(t)] * tmp[static_cast<size_t>((y + t) * Wo + x)];
      out[static_cast<size_t>(y * Wo + x)] = acc;
    }
  return out;
}

}  // namespace detail

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw DimensionError("ssim: shape mismatch");
  if (a.rank() != 3) throw DimensionError("ssim: expected (C,H,W), got " + shape_str(a.shape()));
  const int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (H < 11 || W < 11) throw DataError("ssim: image smaller than the 11x11 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double total = 0.0;
  for (int64_t c = 0; c < C; ++c) {
    const int64_t n = H * W;
    std::vector<double> xa(static_cast<size_t>(n)), xb(static_cast<size_t>(n));
    std::vector<double> xaa(static_cast<size_t>(n)), xbb(static_cast<size_t>(n)), xab(static_cast<size_t>(n));
    const T* ap = a.data() + c * n;
    const T* bp = b.data() + c * n;
    for (int64_t i = 0; i < n; ++i) {
      const double va = static_cast<double>(ap[i]);
      const double vb = static_cast<double>(bp[i]);
      xa[static_cast<size_t>(i)] = va;
      xb[static_cast<size_t>(i)] = vb;
      xaa[static_cast<size_t>(i)] = va * va;
      xbb[static_cast<size_t>(i)] = vb * vb;
      xab[static_cast<size_t>(i)] = va * vb;
    }
    const auto mu_a = detail::ssim_filter(xa, H, W);
    const auto mu_b = detail::ssim_filter(xb, H, W);
    const auto m_aa = detail::ssim_filter(xaa, H, W);
    const auto m_bb = detail::ssim_filter(xbb, H, W);
    const auto m_ab = detail::ssim_filter(xab, H, W);
    double acc = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double va = m_aa[i] - mu_a[i] * mu_a[i];
      const double vb = m_bb[i] - mu_b[i] * mu_b[i];
      const double cov = m_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / static_cast<double>(C);
}

}  // namespace dinat
