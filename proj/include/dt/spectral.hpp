#pragma once

// DFT-domain correlation-filter mathematics.
//
// Conventions: forward DFT is unnormalized, inverse divides by H*W. Labels are
// stored in the wrapped layout (peak at index (0,0)), so the argmax of a
// detection response reads directly as a circular displacement.

#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "dt/tensor.hpp"

namespace dt {

using cplx = std::complex<double>;

/// Per-channel 2-D DFT coefficients, same layout as Tensor3.
class Spectrum {
 public:
  Spectrum() = default;
  Spectrum(int height, int width, int channels)
      : height_(height), width_(width), channels_(channels),
        data_(static_cast<std::size_t>(height) * width * channels) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }

  std::span<cplx> channel(int ch) { return {data_.data() + ch * plane(), plane()}; }
  std::span<const cplx> channel(int ch) const { return {data_.data() + ch * plane(), plane()}; }
  std::vector<cplx>& data() { return data_; }
  const std::vector<cplx>& data() const { return data_; }

  double squared_norm() const {
    double s = 0;
    for (const auto& v : data_) s += std::norm(v);
    return s;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<cplx> data_;
};

namespace detail {

inline Eigen::FFT<double>& fft_engine() {
  thread_local Eigen::FFT<double> engine = [] {
    Eigen::FFT<double> e;
    e.SetFlag(Eigen::FFT<double>::Unscaled);
    return e;
  }();
  return engine;
}

// In-place unnormalized 2-D transform of one h x w plane.
inline void fft_plane(std::span<cplx> plane, int h, int w, bool inverse) {
  auto& fft = fft_engine();
  std::vector<cplx> src(static_cast<std::size_t>(std::max(h, w)));
  std::vector<cplx> dst;
  // A length-1 DFT is the identity (and kissfft does not accept it).
  src.resize(w);
  for (int r = 0; r < h && w > 1; ++r) {
    std::copy_n(plane.begin() + static_cast<std::ptrdiff_t>(r) * w, w, src.begin());
    if (inverse) fft.inv(dst, src); else fft.fwd(dst, src);
    std::copy_n(dst.begin(), w, plane.begin() + static_cast<std::ptrdiff_t>(r) * w);
  }
  src.resize(h);
  for (int c = 0; c < w && h > 1; ++c) {
    for (int r = 0; r < h; ++r) src[r] = plane[static_cast<std::size_t>(r) * w + c];
    if (inverse) fft.inv(dst, src); else fft.fwd(dst, src);
    for (int r = 0; r < h; ++r) plane[static_cast<std::size_t>(r) * w + c] = dst[r];
  }
}

}  // namespace detail

/// Unnormalized forward 2-D DFT of every channel.
inline Spectrum dft2(const Tensor3& t) {
  if (t.empty()) throw Error("dft2: empty tensor");
  if (!t.all_finite()) throw Error("dft2: non-finite input");
  Spectrum s(t.height(), t.width(), t.channels());
  for (int ch = 0; ch < t.channels(); ++ch) {
    auto src = t.channel(ch);
    auto dst = s.channel(ch);
    std::copy(src.begin(), src.end(), dst.begin());
    detail::fft_plane(dst, t.height(), t.width(), false);
  }
  return s;
}

/// Inverse 2-D DFT (divides by H*W), keeping the complex result.
inline Spectrum idft2_complex(const Spectrum& s) {
  Spectrum out = s;
  const double scale = 1.0 / static_cast<double>(s.plane());
  for (int ch = 0; ch < s.channels(); ++ch) {
    auto p = out.channel(ch);
    detail::fft_plane(p, s.height(), s.width(), true);
    for (auto& v : p) v *= scale;
  }
  return out;
}

/// Inverse 2-D DFT returning the real part. Imaginary residue is discarded.
inline Tensor3 idft2(const Spectrum& s) {
  for (const auto& v : s.data())
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) throw Error("idft2: non-finite input");
  const Spectrum c = idft2_complex(s);
  Tensor3 t(s.height(), s.width(), s.channels());
  for (std::size_t i = 0; i < c.data().size(); ++i) t.data()[i] = c.data()[i].real();
  return t;
}

// ---------------------------------------------------------------------------
// Layout helpers

/// Signed displacement for wrapped index k on an axis of length n.
inline int decode_displacement(int k, int n) { return k > n / 2 ? k - n : k; }
inline double decode_displacement(double k, int n) { return k > n / 2.0 ? k - n : k; }

/// Moves the (0,0) element to (h/2, w/2), i.e. wrapped -> centered.
inline Tensor3 wrapped_to_centered(const Tensor3& t) {
  Tensor3 out(t.height(), t.width(), t.channels());
  const int h = t.height(), w = t.width();
  for (int ch = 0; ch < t.channels(); ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out((r + h / 2) % h, (c + w / 2) % w, ch) = t(r, c, ch);
  return out;
}

inline Tensor3 centered_to_wrapped(const Tensor3& t) {
  Tensor3 out(t.height(), t.width(), t.channels());
  const int h = t.height(), w = t.width();
  for (int ch = 0; ch < t.channels(); ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out(r, c, ch) = t((r + h / 2) % h, (c + w / 2) % w, ch);
  return out;
}

/// Circular shift: out(r + dr, c + dc) = in(r, c).
inline Tensor3 circshift(const Tensor3& t, int dr, int dc) {
  Tensor3 out(t.height(), t.width(), t.channels());
  const int h = t.height(), w = t.width();
  for (int ch = 0; ch < t.channels(); ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out(((r + dr) % h + h) % h, ((c + dc) % w + w) % w, ch) = t(r, c, ch);
  return out;
}

// ---------------------------------------------------------------------------
// Labels and windows

struct GaussianLabel {
  Tensor3 map;
  double sigma = 0;
  double peak_row = 0;
  double peak_col = 0;
};

/// exp(-d^2 / (2 sigma^2)) with d the toroidal distance to the peak. The peak
/// may be fractional.
inline GaussianLabel gaussian_label(int h, int w, double sigma, double peak_row, double peak_col) {
  if (!(sigma > 0)) throw Error("gaussian_label: sigma must be > 0");
  GaussianLabel g{Tensor3(h, w, 1), sigma, peak_row, peak_col};
  auto wrap = [](double d, int n) {
    d = std::fmod(d, static_cast<double>(n));
    if (d < 0) d += n;
    return std::min(d, n - d);
  };
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = 0; r < h; ++r) {
    const double dr = wrap(r - peak_row, h);
    for (int c = 0; c < w; ++c) {
      const double dc = wrap(c - peak_col, w);
      g.map(r, c, 0) = std::exp(-(dr * dr + dc * dc) * inv);
    }
  }
  return g;
}

/// Bandwidth rule: 0.1 * sqrt(target area in cells).
inline double label_sigma(double target_h_cells, double target_w_cells) {
  return 0.1 * std::sqrt(target_h_cells * target_w_cells);
}

/// Outer product of 1-D Hann windows 0.5 (1 - cos(2 pi n / (N - 1))).
inline Tensor3 cosine_window(int h, int w) {
  if (h < 2 || w < 2) throw Error("cosine_window: dims must be >= 2");
  auto hann = [](int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
    return v;
  };
  const auto hr = hann(h), hc = hann(w);
  Tensor3 t(h, w, 1);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) t(r, c, 0) = hr[r] * hc[c];
  return t;
}

/// Multiplies every channel of `features` by the single-channel `window`.
inline Tensor3 apply_window(const Tensor3& features, const Tensor3& window) {
  if (features.height() != window.height() || features.width() != window.width())
    throw Error("apply_window: window " + window.shape_string() + " vs features " + features.shape_string());
  Tensor3 out = features;
  const auto win = window.channel(0);
  for (int ch = 0; ch < out.channels(); ++ch) {
    auto p = out.channel(ch);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] *= win[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filters

/// Filter kept as numerator / shared-denominator pair so running averages stay
/// unbiased; the quotient is formed at detection time.
struct CorrelationFilter {
  Spectrum numerator;
  std::vector<double> denominator;  // H*W, includes lambda
  double lambda = 0;

  int height() const { return numerator.height(); }
  int width() const { return numerator.width(); }
  int channels() const { return numerator.channels(); }

  /// Filter spectrum w_d = numerator_d / denominator.
  Spectrum quotient() const {
    Spectrum w = numerator;
    for (int ch = 0; ch < w.channels(); ++ch) {
      auto p = w.channel(ch);
      for (std::size_t i = 0; i < p.size(); ++i) p[i] /= denominator[i];
    }
    return w;
  }
};

namespace detail {

inline void check_label(const Tensor3& label, const Tensor3& features, const char* who) {
  if (label.channels() != 1 || label.height() != features.height() || label.width() != features.width())
    throw Error(std::string(who) + ": label " + label.shape_string() + " does not match features " +
                features.shape_string());
}

inline void accumulate_energy(const Spectrum& s, std::vector<double>& acc, double weight) {
  for (int ch = 0; ch < s.channels(); ++ch) {
    auto p = s.channel(ch);
    for (std::size_t i = 0; i < p.size(); ++i) acc[i] += weight * std::norm(p[i]);
  }
}

inline CorrelationFilter make_filter(const Spectrum& x_hat, const Spectrum& y_hat, std::vector<double> den,
                                     double lambda) {
  CorrelationFilter f{Spectrum(x_hat.height(), x_hat.width(), x_hat.channels()), std::move(den), lambda};
  const auto y = y_hat.channel(0);
  for (int ch = 0; ch < x_hat.channels(); ++ch) {
    auto num = f.numerator.channel(ch);
    auto x = x_hat.channel(ch);
    for (std::size_t i = 0; i < num.size(); ++i) num[i] = std::conj(y[i]) * x[i];
  }
  return f;
}

}  // namespace detail

/// Closed-form filter: numerator_d = conj(Y) X_d, denominator = sum_i |X_i|^2 + lambda.
inline CorrelationFilter train_cf(const Tensor3& features, const Tensor3& label, double lambda_cf) {
  detail::check_label(label, features, "train_cf");
  if (!(lambda_cf >= 0)) throw Error("train_cf: lambda must be >= 0");
  const Spectrum x_hat = dft2(features);
  const Spectrum y_hat = dft2(label);
  std::vector<double> den(x_hat.plane(), lambda_cf);
  detail::accumulate_energy(x_hat, den, 1.0);
  if (lambda_cf == 0 && std::any_of(den.begin(), den.end(), [](double d) { return d == 0.0; }))
    throw Error("train_cf: zero denominator bin with lambda = 0");
  return detail::make_filter(x_hat, y_hat, std::move(den), lambda_cf);
}

inline CorrelationFilter train_cf(const Tensor3& features, const GaussianLabel& label, double lambda_cf) {
  return train_cf(features, label.map, lambda_cf);
}

/// Context-aware variant: negatives add lambda2 * sum_k sum_i |X^-_{k,i}|^2 to
/// the shared denominator. An empty negative list reduces to train_cf.
inline CorrelationFilter train_cf_context(const Tensor3& positive, std::span<const Tensor3> negatives,
                                          const Tensor3& label, double lambda1, double lambda2) {
  detail::check_label(label, positive, "train_cf_context");
  if (!(lambda1 > 0)) throw Error("train_cf_context: lambda1 must be > 0");
  if (!(lambda2 >= 0)) throw Error("train_cf_context: lambda2 must be >= 0");
  const Spectrum x_hat = dft2(positive);
  const Spectrum y_hat = dft2(label);
  std::vector<double> den(x_hat.plane(), lambda1);
  detail::accumulate_energy(x_hat, den, 1.0);
  for (const auto& neg : negatives) {
    if (!neg.same_shape(positive))
      throw Error("train_cf_context: negative " + neg.shape_string() + " vs positive " + positive.shape_string());
    if (lambda2 != 0) detail::accumulate_energy(dft2(neg), den, lambda2);
  }
  return detail::make_filter(x_hat, y_hat, std::move(den), lambda1);
}

/// a <- (1 - eta) a_old + eta a_new, applied to numerator and denominator separately.
inline CorrelationFilter update_cf(const CorrelationFilter& old_f, const CorrelationFilter& new_f, double eta) {
  if (!(eta >= 0 && eta <= 1)) throw Error("update_cf: eta must lie in [0, 1]");
  if (old_f.height() != new_f.height() || old_f.width() != new_f.width() || old_f.channels() != new_f.channels())
    throw Error("update_cf: filter dims differ");
  if (eta == 0) return old_f;
  if (eta == 1) return new_f;
  CorrelationFilter out = old_f;
  auto& num = out.numerator.data();
  const auto& nn = new_f.numerator.data();
  for (std::size_t i = 0; i < num.size(); ++i) num[i] = (1 - eta) * num[i] + eta * nn[i];
  for (std::size_t i = 0; i < out.denominator.size(); ++i)
    out.denominator[i] = (1 - eta) * out.denominator[i] + eta * new_f.denominator[i];
  out.lambda = (1 - eta) * old_f.lambda + eta * new_f.lambda;
  return out;
}

// ---------------------------------------------------------------------------
// Detection

struct Peak {
  int row = 0;
  int col = 0;
  double value = 0;
  double sub_row = 0;  // refined position, wrapped coordinates
  double sub_col = 0;
};

/// Sub-cell peak refinement from a least-squares quadratic over the toroidal
/// 3x3 neighborhood of (row, col). Offsets are clamped to [-1, 1]; a
/// non-concave fit leaves the integer peak in place.
inline Peak refine_peak(const Tensor3& response, int row, int col) {
  const int h = response.height(), w = response.width();
  Peak p{row, col, response(row, col, 0), static_cast<double>(row), static_cast<double>(col)};
  if (h < 3 || w < 3) return p;
  // Orthogonal basis on {-1,0,1}^2: 1, x, y, xy, x^2 - 2/3, y^2 - 2/3.
  double bx = 0, by = 0, bxy = 0, bxx = 0, byy = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const double f = response((row + dy + h) % h, (col + dx + w) % w, 0);
      bx += dx * f;
      by += dy * f;
      bxy += dx * dy * f;
      bxx += (dx * dx - 2.0 / 3.0) * f;
      byy += (dy * dy - 2.0 / 3.0) * f;
    }
  bx /= 6.0;
  by /= 6.0;
  bxy /= 4.0;
  bxx /= 2.0;
  byy /= 2.0;
  // Stationary point of bx x + by y + bxy x y + bxx x^2 + byy y^2.
  const double a = 2 * bxx, b = bxy, d = 2 * byy;
  const double det = a * d - b * b;
  if (!(a < 0 && det > 0)) return p;
  double ox = (-bx * d + by * b) / det;
  double oy = (-by * a + bx * b) / det;
  ox = std::clamp(ox, -1.0, 1.0);
  oy = std::clamp(oy, -1.0, 1.0);
  p.sub_row = row + oy;
  p.sub_col = col + ox;
  return p;
}

/// Argmax of a single-channel map, ties broken by lowest (row, col), then refined.
inline Peak locate_peak(const Tensor3& response) {
  const auto data = response.channel(0);
  std::size_t best = 0;
  for (std::size_t i = 1; i < data.size(); ++i)
    if (data[i] > data[best]) best = i;
  return refine_peak(response, static_cast<int>(best / response.width()), static_cast<int>(best % response.width()));
}

struct Detection {
  Tensor3 response;
  Peak peak;
};

/// Response map r = IDFT(sum_i conj(w_i) Z_i).
inline Tensor3 correlation_response(const CorrelationFilter& filter, const Spectrum& z_hat) {
  if (z_hat.height() != filter.height() || z_hat.width() != filter.width() || z_hat.channels() != filter.channels())
    throw Error("detect_cf: feature dims do not match filter dims");
  Spectrum r_hat(filter.height(), filter.width(), 1);
  auto acc = r_hat.channel(0);
  for (int ch = 0; ch < filter.channels(); ++ch) {
    auto num = filter.numerator.channel(ch);
    auto z = z_hat.channel(ch);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += std::conj(num[i]) * z[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] /= filter.denominator[i];
  return idft2(r_hat);
}

inline Detection detect_cf(const CorrelationFilter& filter, const Tensor3& features) {
  if (features.height() != filter.height() || features.width() != filter.width() ||
      features.channels() != filter.channels())
    throw Error("detect_cf: features " + features.shape_string() + " do not match filter " +
                std::to_string(filter.height()) + "x" + std::to_string(filter.width()) + "x" +
                std::to_string(filter.channels()));
  Detection d{correlation_response(filter, dft2(features)), {}};
  d.peak = locate_peak(d.response);
  return d;
}

}  // namespace dt
