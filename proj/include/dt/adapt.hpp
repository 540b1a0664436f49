#pragma once

// First-frame fine-tuning of the student. Positives are augmented
// target-centred crops regressed onto shifted Gaussian labels; negatives are
// background crops that never touch the target box, regressed onto zero.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dt/distill.hpp"
#include "dt/image.hpp"

namespace dt {

struct AugmentSpec {
  double flip_prob = 0.5;
  double max_shift = 0.1;  // fraction of the crop side, per axis
  std::vector<int> blur_radii{0, 1, 2};
  double gain_min = 0.6;
  double gain_max = 1.4;

  /// Every augmentation switched off: positives equal the plain crop.
  static AugmentSpec none() { return {0.0, 0.0, {0}, 1.0, 1.0}; }

  void validate() const {
    if (flip_prob < 0 || flip_prob > 1) throw Error("AugmentSpec: flip probability must be in [0, 1]");
    if (max_shift < 0 || max_shift >= 0.5) throw Error("AugmentSpec: shift must be in [0, 0.5)");
    if (blur_radii.empty()) throw Error("AugmentSpec: blur radius set is empty");
    for (int r : blur_radii)
      if (r < 0) throw Error("AugmentSpec: negative blur radius");
    if (!(gain_min > 0 && gain_max < 2 && gain_min <= gain_max)) throw Error("AugmentSpec: gain range must lie in (0, 2)");
  }
};

/// Crop geometry shared by the template, the positives and the negatives.
struct CropGeometry {
  double padding = 2.5;
  int out_size = 64;
};

struct Positive {
  Tensor3 patch;
  double offset_row = 0;  // target centre relative to patch centre, input pixels
  double offset_col = 0;
};

struct SampleBatch {
  Tensor3 x;
  std::vector<Positive> positives;
  std::vector<Tensor3> negatives;
  std::vector<Box> negative_regions;  // source square of every negative, frame pixels
  double target_h = 0;                // input pixels
  double target_w = 0;
  int requested_negatives = 0;
  std::string warning;  // set when fewer negatives than requested fit in the frame
};

namespace detail {

inline Tensor3 scale_values(Tensor3 t, double gain) {
  if (gain != 1.0) t *= gain;
  return t;
}

/// Candidate negative centres on a half-pixel grid whose crop square has zero
/// intersection with the target box. Centres stay inside the frame.
inline std::vector<std::pair<double, double>> negative_centres(const Image& frame, const Box& bbox, double side) {
  std::vector<std::pair<double, double>> out;
  for (int i = 0; i <= 2 * frame.height; ++i)
    for (int j = 0; j <= 2 * frame.width; ++j) {
      const double cx = 0.5 * j, cy = 0.5 * i;
      if (intersection_area(Box::from_center(cx, cy, side, side), bbox) == 0) out.emplace_back(cx, cy);
    }
  return out;
}

}  // namespace detail

/// Template, augmented positives and zero-overlap negatives from one frame.
/// Deterministic given seed.
inline SampleBatch crop_samples(const Image& frame, const Box& bbox, int n_pos, int n_neg, const AugmentSpec& augment,
                                std::uint64_t seed, const CropGeometry& geo = {}) {
  augment.validate();
  if (!(bbox.w >= 1 && bbox.h >= 1)) throw Error("crop_samples: degenerate target box");
  if (n_pos < 0 || n_neg < 0) throw Error("crop_samples: negative sample count");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double side = crop_side(bbox, geo.padding);
  const double to_input = geo.out_size / side;

  SampleBatch b;
  b.requested_negatives = n_neg;
  b.target_h = bbox.h * to_input;
  b.target_w = bbox.w * to_input;
  b.x = crop_square(frame, bbox.cx(), bbox.cy(), side, geo.out_size);
  subtract_channel_mean(b.x);

  // Shift limit also keeps the whole target inside the crop.
  const double room_r = std::max(0.0, 0.5 * (side - bbox.h)), room_c = std::max(0.0, 0.5 * (side - bbox.w));
  const double lim_r = std::min(augment.max_shift * side, room_r), lim_c = std::min(augment.max_shift * side, room_c);
  for (int k = 0; k < n_pos; ++k) {
    const double dr = lim_r * (2 * U(rng) - 1), dc = lim_c * (2 * U(rng) - 1);
    const bool flip = U(rng) < augment.flip_prob;
    const int radius = augment.blur_radii[static_cast<std::size_t>(U(rng) * augment.blur_radii.size()) %
                                          augment.blur_radii.size()];
    const double gain = augment.gain_min + (augment.gain_max - augment.gain_min) * U(rng);
    Positive p;
    p.patch = crop_square(frame, bbox.cx() - dc, bbox.cy() - dr, side, geo.out_size);
    p.patch = detail::scale_values(std::move(p.patch), gain);
    if (radius > 0) p.patch = box_blur(p.patch, radius);
    p.offset_row = dr * to_input;
    p.offset_col = dc * to_input;
    if (flip) {
      p.patch = flip_horizontal(p.patch);
      p.offset_col = -p.offset_col;
    }
    subtract_channel_mean(p.patch);
    b.positives.push_back(std::move(p));
  }

  if (n_neg > 0) {
    const auto centres = detail::negative_centres(frame, bbox, side);
    if (centres.empty()) {
      b.warning = "no zero-overlap negative fits in the frame; negatives reduced from " + std::to_string(n_neg) + " to 0";
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, centres.size() - 1);
      for (int k = 0; k < n_neg; ++k) {
        const auto [cx, cy] = centres[pick(rng)];
        Tensor3 t = crop_square(frame, cx, cy, side, geo.out_size);
        subtract_channel_mean(t);
        b.negatives.push_back(std::move(t));
        b.negative_regions.push_back(Box::from_center(cx, cy, side, side));
      }
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Online objective

struct OnlineLossConfig {
  double lambda_cf = 1e-4;
  double fidelity_weight = 1e-5;
  double weight_decay = 0.005;
  bool fidelity_all_levels = false;

  TrainingConfig as_training() const {
    TrainingConfig c;
    c.lambda_cf = lambda_cf;
    c.fidelity_weight = fidelity_weight;
    c.weight_decay = weight_decay;
    c.fidelity_all_levels = fidelity_all_levels;
    return c;
  }
};

struct OnlineLoss {
  LossAndGrads value;
  double negative_energy = 0;  // sum over negatives and levels of ||r-||^2 / N
};

/// Tracking: sum over levels of ||r+ - g||^2 for positives and ||r-||^2 for
/// negatives, averaged over all search samples. Fidelity: the template term
/// plus the mean of the search-sample terms. Plus gamma ||Theta||^2.
inline OnlineLoss online_loss(const SampleBatch& batch, const Network& student, const Network& teacher,
                              const OnlineLossConfig& cfg, bool need_grads = true) {
  const std::size_t n = batch.positives.size() + batch.negatives.size();
  if (n == 0) throw Error("online_loss: batch has no search samples");
  const auto tcfg = cfg.as_training();
  detail::check_adapters(student, tcfg);
  const bool use_fid = cfg.fidelity_weight > 0;
  const double inv_n = 1.0 / static_cast<double>(n);

  OnlineLoss out;
  auto& res = out.value;
  if (need_grads) res.grads = student.weights.zeros_like();

  const auto fx = forward_taps(student.spec, student.weights, batch.x);
  std::array<Tensor3, 3> gx;
  for (int l = 0; l < 3; ++l) gx[l] = Tensor3(fx.taps[l].height(), fx.taps[l].width(), fx.taps[l].channels());
  TapOutputs tx;
  if (use_fid) tx = forward_taps(teacher.spec, teacher.weights, batch.x);

  LevelLabels zero_labels;
  for (int l = 0; l < 3; ++l) {
    const auto zero_desired = Tensor3(fx.taps[l].height(), fx.taps[l].width(), 1);
    zero_labels.desired[l] = zero_desired;
  }

  auto fidelity = [&](const Tensor3& s, const Tensor3& t, int l, double scale, Tensor3* grad) {
    const auto& adapter = *student.weights.adapters[l];
    auto f = fidelity_term(s, t, adapter, scale / static_cast<double>(t.size()), need_grads);
    if (need_grads) {
      f.grad_student *= cfg.fidelity_weight;
      *grad += f.grad_student;
      detail::add_into(res.grads.adapters[l]->weight, f.grad_adapter, cfg.fidelity_weight);
    }
    return f.loss;
  };

  if (use_fid)
    for (auto lv : kLevels)
      if (tcfg.fidelity_at(lv)) {
        const int l = static_cast<int>(lv);
        res.loss.fidelity_target += fidelity(fx.taps[l], tx.taps[l], l, 1.0, &gx[l]);
      }

  for (std::size_t k = 0; k < n; ++k) {
    const bool positive = k < batch.positives.size();
    const Tensor3& patch = positive ? batch.positives[k].patch : batch.negatives[k - batch.positives.size()];
    LevelLabels labels;
    if (positive) {
      const auto& p = batch.positives[k];
      labels = make_level_labels(student.spec, batch.target_h, batch.target_w, p.offset_row, p.offset_col);
    } else {
      labels = make_level_labels(student.spec, batch.target_h, batch.target_w, 0, 0);
      labels.desired = zero_labels.desired;
    }
    const auto fz = forward_taps(student.spec, student.weights, patch);
    auto track = multilevel_tracking_loss(fx.taps, fz.taps, labels, cfg.lambda_cf, need_grads);
    for (int l = 0; l < 3; ++l) res.loss.tracking_level[l] += track.per_level[l] * inv_n;
    res.loss.tracking += track.total * inv_n;
    if (!positive) out.negative_energy += track.total;

    std::array<Tensor3, 3> gz;
    if (need_grads)
      for (int l = 0; l < 3; ++l) {
        track.grad_target[l] *= inv_n;
        gx[l] += track.grad_target[l];
        gz[l] = std::move(track.grad_search[l]);
        gz[l] *= inv_n;
      }
    if (use_fid) {
      const auto tz = forward_taps(teacher.spec, teacher.weights, patch);
      for (auto lv : kLevels)
        if (tcfg.fidelity_at(lv)) {
          const int l = static_cast<int>(lv);
          res.loss.fidelity_search += fidelity(fz.taps[l], tz.taps[l], l, inv_n, need_grads ? &gz[l] : nullptr);
        }
    }
    if (need_grads)
      detail::add_network_grads(res.grads, backward(student.spec, student.weights, fz.cache, gz).grads);
  }
  if (need_grads) detail::add_network_grads(res.grads, backward(student.spec, student.weights, fx.cache, gx).grads);
  detail::add_decay(tcfg, student.weights, res, need_grads);
  detail::finish_total(tcfg, res.loss);
  return out;
}

/// Sum over negatives and levels of ||r-||^2 / N for a fixed network.
inline double negative_energy(const SampleBatch& batch, const Network& student, double lambda_cf) {
  SampleBatch only_neg = batch;
  only_neg.positives.clear();
  if (only_neg.negatives.empty()) return 0.0;
  OnlineLossConfig cfg;
  cfg.lambda_cf = lambda_cf;
  cfg.fidelity_weight = 0;
  cfg.weight_decay = 0;
  return online_loss(only_neg, student, student, cfg, false).negative_energy;
}

// ---------------------------------------------------------------------------
// Fine-tuning

struct AdaptConfig {
  int iterations = 8;
  int n_pos = 32;
  int n_neg = 32;
  double lr = 1e-3;
  double momentum = 0.9;
  OnlineLossConfig loss;
  AugmentSpec augment;
  CropGeometry geometry;
  std::uint64_t seed = 0;
};

struct AdaptResult {
  Network network;                    // adapted snapshot, or the input on failure
  bool adapted = false;
  std::string warning;
  std::vector<LossBreakdown> history;  // loss before each step
};

/// `iterations` SGD steps at a fixed learning rate, each on a fresh seeded
/// batch. The input network is never modified.
inline AdaptResult adapt_online(const Network& student, const Network& teacher, const Image& frame, const Box& bbox,
                                const AdaptConfig& cfg) {
  if (cfg.iterations < 0) throw Error("adapt_online: iterations must be >= 0");
  AdaptResult r{student, false, {}, {}};
  if (cfg.iterations == 0) return r;
  Network cur = student;
  NetworkWeights velocity = cur.weights.zeros_like();
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto batch = crop_samples(frame, bbox, cfg.n_pos, cfg.n_neg, cfg.augment,
                                    cfg.seed * 1000003ULL + static_cast<std::uint64_t>(it) + 1, cfg.geometry);
    if (!batch.warning.empty() && r.warning.empty()) r.warning = batch.warning;
    const auto ol = online_loss(batch, cur, teacher, cfg.loss, true);
    r.history.push_back(ol.value.loss);
    auto step = sgd_step(cur.weights, ol.value.grads, velocity, cfg.momentum, cfg.lr);
    if (!step.ok || !std::isfinite(ol.value.loss.total)) {
      r.warning = "adaptation diverged at iteration " + std::to_string(it) + " (" +
                  (step.ok ? std::string("non-finite loss") : step.error) + "); keeping the original network";
      r.network = student;
      return r;
    }
    cur.weights = std::move(step.weights);
    velocity = std::move(step.velocity);
  }
  r.network = std::move(cur);
  r.adapted = true;
  return r;
}

}  // namespace dt
