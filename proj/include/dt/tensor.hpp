#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dt {

/// Error raised on any violated precondition or malformed input.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// H x W x C real array, channel-planar: element (r, c, ch) lives at
/// data[(ch * H + r) * W + c].
class Tensor3 {
 public:
  Tensor3() = default;

  Tensor3(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    if (height < 1 || width < 1 || channels < 1)
      throw Error("Tensor3: dims must be >= 1, got " + std::to_string(height) + "x" +
                  std::to_string(width) + "x" + std::to_string(channels));
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  Tensor3(int height, int width, int channels, std::vector<double> values)
      : Tensor3(height, width, channels) {
    if (values.size() != data_.size()) throw Error("Tensor3: value count does not match dims");
    data_ = std::move(values);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c, int ch) { return data_[(static_cast<std::size_t>(ch) * height_ + r) * width_ + c]; }
  double operator()(int r, int c, int ch) const {
    return data_[(static_cast<std::size_t>(ch) * height_ + r) * width_ + c];
  }

  std::span<double> channel(int ch) { return {data_.data() + ch * plane(), plane()}; }
  std::span<const double> channel(int ch) const { return {data_.data() + ch * plane(), plane()}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor3& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  std::string shape_string() const {
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
  }

  Tensor3& operator+=(const Tensor3& o) {
    if (!same_shape(o)) throw Error("Tensor3 +=: shape mismatch " + shape_string() + " vs " + o.shape_string());
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor3& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Axis-aligned box, top-left origin, in pixels.
struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return std::max(0.0, w) * std::max(0.0, h); }

  static Box from_center(double cx, double cy, double w, double h) { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double ih = std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

}  // namespace dt
