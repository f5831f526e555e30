#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "faceforge/core/tensor.hpp"
#include "faceforge/identity/embedder.hpp"

namespace faceforge::metrics {

/// 10 log10(peak^2 / MSE); identical images return the +infinity sentinel.
inline double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (!a.same_shape(b)) throw Error("psnr: shape mismatch");
  check(peak > 0, "psnr: peak must be positive");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> k(static_cast<size_t>(size) * size);
  double sum = 0;
  int half = size / 2;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double dy = y - half, dx = x - half;
      double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
      k[static_cast<size_t>(y * size + x)] = v;
      sum += v;
    }
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace detail

/// Windowed structural similarity: 11x11 Gaussian window (sigma 1.5),
/// k1 = 0.01, k2 = 0.03, computed over every fully interior window and
/// averaged over windows and channels.
inline double ssim(const Tensor& a, const Tensor& b, double data_range = 1.0) {
  if (!a.same_shape(b)) throw Error("ssim: shape mismatch");
  if (a.ndim() != 3) throw Error("ssim: images must be (H,W,C)");
  const int win = 11;
  const double sigma = 1.5, k1 = 0.01, k2 = 0.03;
  const int64_t h = a.dim(0), w = a.dim(1), ch = a.dim(2);
  if (h < win || w < win) throw Error("ssim: image smaller than the 11x11 window");
  const double c1 = (k1 * data_range) * (k1 * data_range);
  const double c2 = (k2 * data_range) * (k2 * data_range);
  static const std::vector<double> kernel = detail::gaussian_window(win, sigma);

  double total = 0;
  int64_t count = 0;
  for (int64_t c = 0; c < ch; ++c) {
    for (int64_t y = 0; y + win <= h; ++y) {
      for (int64_t x = 0; x + win <= w; ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int ky = 0; ky < win; ++ky) {
          for (int kx = 0; kx < win; ++kx) {
            double kw = kernel[static_cast<size_t>(ky * win + kx)];
            double va = a.at3(y + ky, x + kx, c);
            double vb = b.at3(y + ky, x + kx, c);
            mx += kw * va;
            my += kw * vb;
            sxx += kw * va * va;
            syy += kw * vb * vb;
            sxy += kw * va * vb;
          }
        }
        sxx -= mx * mx;
        syy -= my * my;
        sxy -= mx * my;
        total += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                 ((mx * mx + my * my + c1) * (sxx + syy + c2));
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

/// exp of the mean KL divergence between per-image class distributions and
/// their marginal. probs: (N,K) rows summing to 1.
inline double inception_score(const Tensor& probs) {
  if (probs.ndim() != 2 || probs.dim(0) < 1) throw Error("inception_score: need (N,K) probs");
  const int64_t n = probs.dim(0), k = probs.dim(1);
  std::vector<double> marginal(static_cast<size_t>(k), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) marginal[static_cast<size_t>(j)] += probs.at2(i, j);
  for (double& m : marginal) m /= static_cast<double>(n);
  double mean_kl = 0;
  for (int64_t i = 0; i < n; ++i) {
    double kl = 0;
    for (int64_t j = 0; j < k; ++j) {
      double p = probs.at2(i, j);
      if (p <= 0) continue;
      kl += p * std::log(p / std::max(marginal[static_cast<size_t>(j)], 1e-300));
    }
    mean_kl += kl;
  }
  return std::exp(mean_kl / static_cast<double>(n));
}

/// Learned perceptual distance over the embedder's convolutional feature
/// stack: features are unit-normalized along channels at every spatial
/// position, then layer-wise mean squared differences are summed.
inline double lpips_like(const identity::IdentityEmbedder& net, const Tensor& a, const Tensor& b) {
  check(net.frozen(), "lpips_like: feature net must be frozen");
  if (!a.same_shape(b)) throw Error("lpips_like: shape mismatch");
  auto fa = net.feature_maps(ad::constant(a));
  auto fb = net.feature_maps(ad::constant(b));
  double total = 0;
  for (size_t layer = 0; layer < fa.size(); ++layer) {
    const Tensor& ta = fa[layer]->value;
    const Tensor& tb = fb[layer]->value;
    int64_t positions = ta.dim(0) * ta.dim(1) * ta.dim(2), c = ta.dim(3);
    double layer_sum = 0;
    for (int64_t p = 0; p < positions; ++p) {
      double na = 1e-12, nb = 1e-12;
      for (int64_t j = 0; j < c; ++j) {
        na += ta[p * c + j] * ta[p * c + j];
        nb += tb[p * c + j] * tb[p * c + j];
      }
      na = std::sqrt(na);
      nb = std::sqrt(nb);
      for (int64_t j = 0; j < c; ++j) {
        double d = ta[p * c + j] / na - tb[p * c + j] / nb;
        layer_sum += d * d;
      }
    }
    total += layer_sum / static_cast<double>(positions * c);
  }
  return total;
}

}  // namespace faceforge::metrics
