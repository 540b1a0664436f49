#pragma once

// 8-bit RGB frames and the crop / resample / augmentation primitives shared by
// training-pair sampling, online sample generation and the tracker.

#include <cstdint>
#include <vector>

#include "dt/tensor.hpp"

namespace dt {

/// Interleaved 8-bit RGB image.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // (r * width + c) * 3 + ch

  Image() = default;
  Image(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int r, int c, int ch) { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }
  std::uint8_t at(int r, int c, int ch) const { return rgb[(static_cast<std::size_t>(r) * width + c) * 3 + ch]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear resample of a square region of side `side` centered at (cx, cy)
/// (pixel coordinates, pixel centers at integer + 0.5 offsets from the box
/// origin) onto an out x out grid. Out-of-frame samples replicate the border.
/// Values scaled to [0, 1].
inline Tensor3 crop_square(const Image& img, double cx, double cy, double side, int out) {
  if (img.height < 1 || img.width < 1) throw Error("crop_square: empty image");
  if (!(side > 0) || out < 1) throw Error("crop_square: side and output size must be positive");
  Tensor3 t(out, out, 3);
  const double step = side / out;
  const double x0 = cx - 0.5 * side - 0.5;
  const double y0 = cy - 0.5 * side - 0.5;
  std::vector<int> xa(out), xb(out);
  std::vector<double> xf(out);
  for (int j = 0; j < out; ++j) {
    double sx = std::clamp(x0 + (j + 0.5) * step, 0.0, static_cast<double>(img.width - 1));
    xa[j] = static_cast<int>(std::floor(sx));
    xb[j] = std::min(xa[j] + 1, img.width - 1);
    xf[j] = sx - xa[j];
  }
  constexpr double inv255 = 1.0 / 255.0;
  for (int i = 0; i < out; ++i) {
    const double sy = std::clamp(y0 + (i + 0.5) * step, 0.0, static_cast<double>(img.height - 1));
    const int ya = static_cast<int>(std::floor(sy));
    const int yb = std::min(ya + 1, img.height - 1);
    const double fy = sy - ya;
    for (int j = 0; j < out; ++j)
      for (int ch = 0; ch < 3; ++ch) {
        const double top = img.at(ya, xa[j], ch) * (1 - xf[j]) + img.at(ya, xb[j], ch) * xf[j];
        const double bot = img.at(yb, xa[j], ch) * (1 - xf[j]) + img.at(yb, xb[j], ch) * xf[j];
        t(i, j, ch) = (top * (1 - fy) + bot * fy) * inv255;
      }
  }
  return t;
}

inline void subtract_channel_mean(Tensor3& t) {
  for (int ch = 0; ch < t.channels(); ++ch) {
    auto p = t.channel(ch);
    double m = 0;
    for (double v : p) m += v;
    m /= static_cast<double>(p.size());
    for (double& v : p) v -= m;
  }
}

inline Tensor3 flip_horizontal(const Tensor3& t) {
  Tensor3 out(t.height(), t.width(), t.channels());
  for (int ch = 0; ch < t.channels(); ++ch)
    for (int r = 0; r < t.height(); ++r)
      for (int c = 0; c < t.width(); ++c) out(r, t.width() - 1 - c, ch) = t(r, c, ch);
  return out;
}

/// Separable box blur of the given radius with edge replication. Radius 0 is a no-op.
inline Tensor3 box_blur(const Tensor3& t, int radius) {
  if (radius <= 0) return t;
  const int h = t.height(), w = t.width();
  const double norm = 1.0 / (2 * radius + 1);
  Tensor3 tmp(h, w, t.channels()), out(h, w, t.channels());
  for (int ch = 0; ch < t.channels(); ++ch) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double s = 0;
        for (int k = -radius; k <= radius; ++k) s += t(r, std::clamp(c + k, 0, w - 1), ch);
        tmp(r, c, ch) = s * norm;
      }
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double s = 0;
        for (int k = -radius; k <= radius; ++k) s += tmp(std::clamp(r + k, 0, h - 1), c, ch);
        out(r, c, ch) = s * norm;
      }
  }
  return out;
}

/// Side of the square context crop around a box: padding * sqrt(w h).
inline double crop_side(const Box& b, double padding) { return padding * std::sqrt(b.w * b.h); }

}  // namespace dt
