#pragma once

// fKCF: a plain correlation-filter tracker on network tap features. One
// filter per selected level, responses fused on the finest grid, a
// three-scale search and a running numerator/denominator update.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dt/adapt.hpp"
#include "dt/image.hpp"
#include "dt/nnet.hpp"
#include "dt/spectral.hpp"

namespace dt {

enum class LevelMode { low, middle, high, fused };

inline LevelMode parse_level(const std::string& s) {
  if (s == "low") return LevelMode::low;
  if (s == "middle") return LevelMode::middle;
  if (s == "high") return LevelMode::high;
  if (s == "fused") return LevelMode::fused;
  throw Error("unknown level '" + s + "' (expected low, middle, high or fused)");
}

inline const char* to_string(LevelMode m) {
  constexpr const char* names[] = {"low", "middle", "high", "fused"};
  return names[static_cast<int>(m)];
}

struct TrackerConfig {
  LevelMode level = LevelMode::fused;
  std::array<double, 3> fusion_weights{0.25, 0.25, 0.5};
  double padding = 2.5;
  double eta = 0.01;
  std::vector<double> scales{0.985, 1.0, 1.015};
  double scale_penalty = 0.975;  // multiplies the peak of every non-unity scale
  double lambda_cf = 1e-4;
  bool adapt = false;
  AdaptConfig adapt_config;

  void validate() const {
    double sum = 0;
    for (double w : fusion_weights) {
      if (w < 0) throw Error("TrackerConfig: fusion weights must be >= 0");
      sum += w;
    }
    if (level == LevelMode::fused && std::abs(sum - 1.0) > 1e-9) throw Error("TrackerConfig: fusion weights must sum to 1");
    if (eta < 0 || eta > 1) throw Error("TrackerConfig: eta must be in [0, 1]");
    if (!(padding > 0)) throw Error("TrackerConfig: padding must be > 0");
    if (scales.empty()) throw Error("TrackerConfig: empty scale set");
    for (double s : scales)
      if (!(s > 0)) throw Error("TrackerConfig: scales must be > 0");
    if (!(lambda_cf >= 0)) throw Error("TrackerConfig: lambda_cf must be >= 0");
  }

  /// Per-level weights actually used: one-hot for a single level.
  std::array<double, 3> level_weights() const {
    if (level == LevelMode::fused) return fusion_weights;
    std::array<double, 3> w{};
    w[static_cast<int>(level)] = 1.0;
    return w;
  }
};

/// Square crop of side padding * sqrt(w h) around the box centre, bilinearly
/// resized to out_size, border-replicated, per-channel mean removed.
inline Tensor3 extract_patch(const Image& frame, const Box& box, double padding, int out_size) {
  if (!(box.w > 0 && box.h > 0)) throw Error("extract_patch: box must have positive area");
  Tensor3 t = crop_square(frame, box.cx(), box.cy(), crop_side(box, padding), out_size);
  subtract_channel_mean(t);
  return t;
}

/// Samples a wrapped response of one level onto a finer wrapped grid: output
/// cell i reads level position i * (n_level / n_out), bilinear with wrap-around.
inline Tensor3 resample_wrapped(const Tensor3& r, int out_h, int out_w) {
  if (r.height() == out_h && r.width() == out_w) return r;
  Tensor3 out(out_h, out_w, 1);
  const double fr = static_cast<double>(r.height()) / out_h, fc = static_cast<double>(r.width()) / out_w;
  for (int i = 0; i < out_h; ++i) {
    const double y = i * fr;
    const int y0 = static_cast<int>(std::floor(y));
    const double wy = y - y0;
    const int ya = y0 % r.height(), yb = (y0 + 1) % r.height();
    for (int j = 0; j < out_w; ++j) {
      const double x = j * fc;
      const int x0 = static_cast<int>(std::floor(x));
      const double wx = x - x0;
      const int xa = x0 % r.width(), xb = (x0 + 1) % r.width();
      out(i, j, 0) = (1 - wy) * ((1 - wx) * r(ya, xa, 0) + wx * r(ya, xb, 0)) +
                     wy * ((1 - wx) * r(yb, xa, 0) + wx * r(yb, xb, 0));
    }
  }
  return out;
}

struct TrackerState {
  Box box;
  std::array<std::optional<CorrelationFilter>, 3> filters;
  std::array<Tensor3, 3> windows;
  std::array<GaussianLabel, 3> labels;
  std::shared_ptr<const Network> net;
  TrackerConfig config;
  int frame_width = 0;
  int frame_height = 0;
  double feature_seconds = 0;  // accumulated crop + forward time
  int feature_calls = 0;
  std::string adapt_warning;

  bool uses(Level l) const { return filters[static_cast<int>(l)].has_value(); }
};

struct UpdateDiagnostics {
  double scale = 1.0;
  double peak_value = 0;  // fused response peak at the chosen scale
  std::array<double, 3> level_peak{};
  double dx = 0, dy = 0;  // image-pixel displacement applied
  bool held = false;      // response was identically zero; box kept
  Tensor3 fused_response;
};

struct UpdateResult {
  Box box;
  UpdateDiagnostics diagnostics;
};

namespace detail {

inline std::array<Tensor3, 3> windowed_features(TrackerState& s, const Image& frame, const Box& box) {
  const auto t0 = std::chrono::steady_clock::now();
  const int in = s.net->spec.input.height;
  const Tensor3 patch = extract_patch(frame, box, s.config.padding, in);
  auto taps = forward_taps(s.net->spec, s.net->weights, patch).taps;
  s.feature_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ++s.feature_calls;
  std::array<Tensor3, 3> out;
  for (auto l : kLevels) {
    const int i = static_cast<int>(l);
    if (s.uses(l)) out[i] = apply_window(taps[i], s.windows[i]);
  }
  return out;
}

inline int finest_level(const TrackerState& s) {
  int best = -1;
  for (int i = 0; i < 3; ++i)
    if (s.filters[i] && (best < 0 || s.windows[i].size() > s.windows[best].size())) best = i;
  return best;
}

/// Keeps the box size within [4 px, frame] and its centre inside the frame,
/// so at least half of each side (a quarter of the area) stays visible.
inline Box clamp_box(Box b, int fw, int fh) {
  const double w = std::clamp(b.w, std::min(4.0, static_cast<double>(fw)), static_cast<double>(fw));
  const double h = std::clamp(b.h, std::min(4.0, static_cast<double>(fh)), static_cast<double>(fh));
  const double cx = std::clamp(b.cx(), 0.0, static_cast<double>(fw));
  const double cy = std::clamp(b.cy(), 0.0, static_cast<double>(fh));
  return Box::from_center(cx, cy, w, h);
}

}  // namespace detail

/// Optionally adapts the network on the first frame (needs `teacher` when
/// the fidelity term is active), then trains one filter per selected level.
inline TrackerState tracker_init(const Image& frame, const Box& box, std::shared_ptr<const Network> net,
                                 const TrackerConfig& config, const Network* teacher = nullptr) {
  config.validate();
  if (!net) throw Error("tracker_init: no network");
  net->spec.validate();
  if (!(box.w > 0 && box.h > 0)) throw Error("tracker_init: box must have positive area");
  TrackerState s;
  s.config = config;
  s.frame_width = frame.width;
  s.frame_height = frame.height;
  s.box = box;

  if (config.adapt) {
    AdaptConfig ac = config.adapt_config;
    ac.geometry = {config.padding, net->spec.input.height};
    ac.loss.lambda_cf = std::max(ac.loss.lambda_cf, 1e-12);
    const bool needs_teacher = ac.loss.fidelity_weight > 0;
    if (needs_teacher && !teacher) throw Error("tracker_init: adaptation with a fidelity term needs the teacher network");
    auto r = adapt_online(*net, needs_teacher ? *teacher : *net, frame, box, ac);
    s.adapt_warning = r.warning;
    net = std::make_shared<const Network>(std::move(r.network));
  }
  s.net = std::move(net);

  const auto w = config.level_weights();
  const double side = crop_side(box, config.padding);
  const double to_input = s.net->spec.input.height / side;
  for (auto l : kLevels) {
    const int i = static_cast<int>(l);
    if (w[i] <= 0) continue;
    const auto shape = s.net->spec.tap_shape(l);
    if (shape.height < 2 || shape.width < 2) throw Error(std::string("tracker_init: ") + to_string(l) + " tap is smaller than 2x2");
    s.windows[i] = cosine_window(shape.height, shape.width);
    const double stride_r = static_cast<double>(s.net->spec.input.height) / shape.height;
    const double stride_c = static_cast<double>(s.net->spec.input.width) / shape.width;
    s.labels[i] = gaussian_label(shape.height, shape.width,
                                 label_sigma(box.h * to_input / stride_r, box.w * to_input / stride_c), 0, 0);
    s.filters[i] = CorrelationFilter{};  // marks the level as used
  }
  const auto feats = detail::windowed_features(s, frame, box);
  for (int i = 0; i < 3; ++i)
    if (s.filters[i]) s.filters[i] = train_cf(feats[i], s.labels[i], config.lambda_cf);
  return s;
}

/// Fused response of every used level on the finest level's grid.
inline Tensor3 fuse_responses(const TrackerState& s, const std::array<Tensor3, 3>& responses) {
  const int f = detail::finest_level(s);
  const auto w = s.config.level_weights();
  Tensor3 fused(responses[f].height(), responses[f].width(), 1);
  for (int i = 0; i < 3; ++i) {
    if (!s.filters[i]) continue;
    const auto r = resample_wrapped(responses[i], fused.height(), fused.width());
    for (std::size_t k = 0; k < fused.size(); ++k) fused.data()[k] += w[i] * r.data()[k];
  }
  return fused;
}

/// Detect at every scale, move to the best penalised peak, retrain there and
/// blend the filters with rate eta.
inline UpdateResult tracker_update(TrackerState& s, const Image& frame) {
  if (!s.net) throw Error("tracker_update: state not initialised");
  UpdateResult out;
  const int f = detail::finest_level(s);
  const double base_side = crop_side(s.box, s.config.padding);
  const int in = s.net->spec.input.height;
  const double stride_r = static_cast<double>(in) / s.windows[f].height();
  const double stride_c = static_cast<double>(s.net->spec.input.width) / s.windows[f].width();

  double best_score = -std::numeric_limits<double>::infinity();
  bool any_nonzero = false;
  for (double scale : s.config.scales) {
    const Box probe = Box::from_center(s.box.cx(), s.box.cy(), s.box.w * scale, s.box.h * scale);
    const auto feats = detail::windowed_features(s, frame, probe);
    std::array<Tensor3, 3> responses;
    std::array<double, 3> level_peak{};
    for (int i = 0; i < 3; ++i)
      if (s.filters[i]) {
        responses[i] = correlation_response(*s.filters[i], dft2(feats[i]));
        level_peak[i] = locate_peak(responses[i]).value;
      }
    Tensor3 fused = fuse_responses(s, responses);
    bool nonzero = false;
    for (double v : fused.data())
      if (v != 0) nonzero = true;
    any_nonzero = any_nonzero || nonzero;
    const Peak p = locate_peak(fused);
    const double score = p.value * (scale == 1.0 ? 1.0 : s.config.scale_penalty);
    if (nonzero && score > best_score) {
      best_score = score;
      const double side = base_side * scale;
      out.diagnostics.scale = scale;
      out.diagnostics.peak_value = p.value;
      out.diagnostics.level_peak = level_peak;
      out.diagnostics.dy = decode_displacement(p.sub_row, fused.height()) * stride_r * side / in;
      out.diagnostics.dx = decode_displacement(p.sub_col, fused.width()) * stride_c * side / in;
      out.diagnostics.fused_response = std::move(fused);
    }
  }
  if (!any_nonzero) {
    out.diagnostics.held = true;
    out.box = s.box;
    return out;
  }
  const auto& d = out.diagnostics;
  s.box = detail::clamp_box(Box::from_center(s.box.cx() + d.dx, s.box.cy() + d.dy, s.box.w * d.scale, s.box.h * d.scale),
                            frame.width, frame.height);

  if (s.config.eta > 0) {
    const auto feats = detail::windowed_features(s, frame, s.box);
    for (int i = 0; i < 3; ++i)
      if (s.filters[i])
        s.filters[i] = update_cf(*s.filters[i], train_cf(feats[i], s.labels[i], s.config.lambda_cf), s.config.eta);
  }
  out.box = s.box;
  return out;
}

/// One `x,y,w,h` line per box, written to a temporary file and renamed.
inline void write_trajectory(const std::filesystem::path& path, const std::vector<Box>& boxes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error("cannot write " + path.string());
    char line[160];
    for (const auto& b : boxes) {
      std::snprintf(line, sizeof line, "%.4f,%.4f,%.4f,%.4f\n", b.x, b.y, b.w, b.h);
      out << line;
    }
    if (!out) throw Error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace dt
