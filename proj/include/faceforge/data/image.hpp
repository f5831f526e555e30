#pragma once

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "faceforge/core/tensor.hpp"

namespace faceforge::img {

/// 8-bit RGB (HWC) -> (H,W,3) reals in [-1,1].
inline Tensor normalize_u8(const std::vector<uint8_t>& px, int64_t h, int64_t w) {
  if (static_cast<int64_t>(px.size()) != h * w * 3)
    throw Error("normalize_u8: buffer size mismatch");
  Tensor t({h, w, 3});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<double>(px[static_cast<size_t>(i)]) / 255.0 * 2.0 - 1.0;
  return t;
}

/// Inverse of normalize_u8; round-trips 8-bit values exactly.
inline std::vector<uint8_t> denormalize_u8(const Tensor& im) {
  std::vector<uint8_t> px(static_cast<size_t>(im.numel()));
  for (int64_t i = 0; i < im.numel(); ++i) {
    double v = (im[i] + 1.0) / 2.0 * 255.0;
    v = std::lround(std::min(255.0, std::max(0.0, v)));
    px[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
  }
  return px;
}

inline cv::Mat to_mat_bgr(const Tensor& im) {
  if (im.ndim() != 3 || im.dim(2) != 3) throw Error("to_mat_bgr: image must be (H,W,3)");
  auto px = denormalize_u8(im);
  cv::Mat rgb(static_cast<int>(im.dim(0)), static_cast<int>(im.dim(1)), CV_8UC3, px.data());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

inline Tensor from_mat_bgr(const cv::Mat& m) {
  cv::Mat rgb;
  if (m.channels() == 1)
    cv::cvtColor(m, rgb, cv::COLOR_GRAY2RGB);
  else if (m.channels() == 4)
    cv::cvtColor(m, rgb, cv::COLOR_BGRA2RGB);
  else
    cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB);
  Tensor t({m.rows, m.cols, 3});
  for (int y = 0; y < m.rows; ++y) {
    const uint8_t* row = rgb.ptr<uint8_t>(y);
    for (int x = 0; x < m.cols * 3; ++x)
      t[static_cast<int64_t>(y) * m.cols * 3 + x] = row[x] / 255.0 * 2.0 - 1.0;
  }
  return t;
}

inline void save_png(const std::filesystem::path& path, const Tensor& im) {
  if (!cv::imwrite(path.string(), to_mat_bgr(im)))
    throw Error("save_png: cannot write " + path.string());
}

/// Loads any 8-bit image as (H,W,3) in [-1,1].
inline Tensor load_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw ValidationError("cannot read image: " + path.string());
  return from_mat_bgr(m);
}

inline Tensor resize_bilinear(const Tensor& im, int64_t oh, int64_t ow) {
  if (im.dim(0) == oh && im.dim(1) == ow) return im;
  int64_t h = im.dim(0), w = im.dim(1);
  Tensor out({oh, ow, 3});
  double sy = static_cast<double>(h) / static_cast<double>(oh);
  double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (int64_t y = 0; y < oh; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double wy = fy - static_cast<double>(y0);
    int64_t y0c = std::clamp<int64_t>(y0, 0, h - 1), y1c = std::clamp<int64_t>(y0 + 1, 0, h - 1);
    for (int64_t x = 0; x < ow; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      double wx = fx - static_cast<double>(x0);
      int64_t x0c = std::clamp<int64_t>(x0, 0, w - 1), x1c = std::clamp<int64_t>(x0 + 1, 0, w - 1);
      for (int64_t c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * im.at3(y0c, x0c, c) + wx * im.at3(y0c, x1c, c)) +
                   wy * ((1 - wx) * im.at3(y1c, x0c, c) + wx * im.at3(y1c, x1c, c));
        out.at3(y, x, c) = v;
      }
    }
  }
  return out;
}

/// Bilinear sample of a 3-channel image at continuous (x,y); pixel centers
/// sit at integer coordinates. Also returns the sample's derivative with
/// respect to x and y (zero where the lookup is clamped to the border).
struct BilinearTap {
  double value[3];
  double dx[3];
  double dy[3];
};

inline BilinearTap bilinear_tap(const Tensor& im, double x, double y) {
  int64_t h = im.dim(0), w = im.dim(1);
  double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
  double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
  bool clamped_x = xc != x, clamped_y = yc != y;
  int64_t x0 = std::min<int64_t>(static_cast<int64_t>(std::floor(xc)), w - 2 >= 0 ? w - 2 : 0);
  int64_t y0 = std::min<int64_t>(static_cast<int64_t>(std::floor(yc)), h - 2 >= 0 ? h - 2 : 0);
  x0 = std::max<int64_t>(x0, 0);
  y0 = std::max<int64_t>(y0, 0);
  int64_t x1 = std::min<int64_t>(x0 + 1, w - 1), y1 = std::min<int64_t>(y0 + 1, h - 1);
  double fx = xc - static_cast<double>(x0), fy = yc - static_cast<double>(y0);
  BilinearTap tap{};
  for (int64_t c = 0; c < 3; ++c) {
    double v00 = im.at3(y0, x0, c), v01 = im.at3(y0, x1, c);
    double v10 = im.at3(y1, x0, c), v11 = im.at3(y1, x1, c);
    tap.value[c] = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    tap.dx[c] = clamped_x ? 0.0 : (1 - fy) * (v01 - v00) + fy * (v11 - v10);
    tap.dy[c] = clamped_y ? 0.0 : (1 - fx) * (v10 - v00) + fx * (v11 - v01);
  }
  return tap;
}

}  // namespace faceforge::img
