#pragma once

// Offline joint compression and transfer: a pruned student is trained to
// mimic the teacher's high-level features (fidelity loss through a 1x1
// adapter) while a differentiable correlation-filter layer regresses its
// response maps onto Gaussian labels at three feature levels.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dt/image.hpp"
#include "dt/nnet.hpp"
#include "dt/sequence.hpp"
#include "dt/spectral.hpp"

namespace dt {

struct TrainingConfig {
  int epochs = 50;
  double lr_start = 1e-2;
  double lr_end = 1e-5;
  double momentum = 0.9;
  double weight_decay = 0.005;     // gamma
  double fidelity_weight = 1e-5;   // lambda_fid
  double lambda_cf = 1e-4;
  int batch_size = 1;  // larger batches let weight decay dominate the step
  std::uint64_t seed = 0;
  double keep_fraction = 1.0 / 8.0;
  bool fidelity_all_levels = false;  // ablation: fidelity at every tap instead of high only

  void validate() const {
    if (epochs < 1) throw Error("TrainingConfig: epochs must be >= 1");
    if (!(lr_start >= lr_end && lr_end >= 0)) throw Error("TrainingConfig: need lr_start >= lr_end >= 0");
    if (momentum < 0 || weight_decay < 0 || fidelity_weight < 0 || lambda_cf <= 0)
      throw Error("TrainingConfig: weights must be >= 0 and lambda_cf > 0");
    if (batch_size < 1) throw Error("TrainingConfig: batch_size must be >= 1");
  }

  bool fidelity_at(Level l) const { return fidelity_all_levels || l == Level::high; }
};

/// Equal-size target patch x and search patch z (network input resolution,
/// mean-subtracted). The offset is the target centre inside z relative to the
/// patch centre, in input pixels; target dims are in input pixels too.
struct TrainingPair {
  Tensor3 x;
  Tensor3 z;
  double offset_row = 0;
  double offset_col = 0;
  double target_h = 0;
  double target_w = 0;
};

struct LossBreakdown {
  std::array<double, 3> tracking_level{};
  double tracking = 0;
  double fidelity_target = 0;
  double fidelity_search = 0;
  double fidelity = 0;
  double decay = 0;  // gamma * ||Theta||^2
  double total = 0;
};

// ---------------------------------------------------------------------------
// Labels

struct LevelLabels {
  std::array<Tensor3, 3> train;    // peak at (0,0): target centred in x
  std::array<Tensor3, 3> desired;  // peak at the target offset inside z
};

/// Cell stride of a tap relative to the network input, (rows, cols).
inline std::pair<double, double> tap_stride(const NetworkSpec& spec, Level l) {
  const auto s = spec.tap_shape(l);
  return {static_cast<double>(spec.input.height) / s.height, static_cast<double>(spec.input.width) / s.width};
}

inline LevelLabels make_level_labels(const NetworkSpec& spec, double target_h, double target_w, double offset_row,
                                     double offset_col) {
  LevelLabels out;
  for (auto l : kLevels) {
    const auto s = spec.tap_shape(l);
    const auto [sr, sc] = tap_stride(spec, l);
    const double sigma = label_sigma(target_h / sr, target_w / sc);
    const int i = static_cast<int>(l);
    out.train[i] = gaussian_label(s.height, s.width, sigma, 0, 0).map;
    out.desired[i] = gaussian_label(s.height, s.width, sigma, offset_row / sr, offset_col / sc).map;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable correlation-filter layer

struct CfLayerResult {
  Tensor3 response;
  double loss = 0;
  Tensor3 grad_target;  // dL / d phi(x)
  Tensor3 grad_search;  // dL / d phi(z)
};

/// Learns the filter on `target` with `train_label`, correlates it with
/// `search`, and scores ||r - desired||^2 / (H W). Gradients are exact:
///   P = conj(E) Y with E = DFT(dL/dr), S = sum_i conj(X_i) Z_i, A = sum_i |X_i|^2 + lambda
///   dL/dz_d = Re IDFT(conj(P) X_d / A)
///   dL/dx_d = Re IDFT(P Z_d / A - 2 Re(P S) X_d / A^2)
/// The second line folds the conjugate-pair terms of the spectral gradient
/// into one real-valued inverse transform.
inline CfLayerResult cf_layer(const Tensor3& target, const Tensor3& search, const Tensor3& train_label,
                              const Tensor3& desired, double lambda_cf, bool need_grads = true) {
  if (!target.same_shape(search))
    throw Error("cf_layer: target " + target.shape_string() + " vs search " + search.shape_string());
  detail::check_label(train_label, target, "cf_layer");
  detail::check_label(desired, target, "cf_layer");
  if (!(lambda_cf > 0)) throw Error("cf_layer: lambda must be > 0 for a differentiable layer");

  const int D = target.channels();
  const std::size_t N = target.plane();
  const Spectrum X = dft2(target), Z = dft2(search), Y = dft2(train_label);
  std::vector<double> A(N, lambda_cf);
  detail::accumulate_energy(X, A, 1.0);
  std::vector<cplx> S(N);
  for (int d = 0; d < D; ++d) {
    auto x = X.channel(d), z = Z.channel(d);
    for (std::size_t k = 0; k < N; ++k) S[k] += std::conj(x[k]) * z[k];
  }
  Spectrum R(target.height(), target.width(), 1);
  const auto y = Y.channel(0);
  for (std::size_t k = 0; k < N; ++k) R.channel(0)[k] = y[k] * S[k] / A[k];

  CfLayerResult out;
  out.response = idft2(R);
  const double inv_n = 1.0 / static_cast<double>(N);
  Tensor3 e(target.height(), target.width(), 1);
  for (std::size_t k = 0; k < N; ++k) {
    const double diff = out.response.data()[k] - desired.data()[k];
    out.loss += diff * diff;
    e.data()[k] = 2.0 * diff * inv_n;
  }
  out.loss *= inv_n;
  if (!need_grads) return out;

  const Spectrum E = dft2(e);
  std::vector<cplx> P(N);
  std::vector<double> coupling(N);  // 2 Re(P S) / A^2
  for (std::size_t k = 0; k < N; ++k) {
    P[k] = std::conj(E.channel(0)[k]) * y[k];
    coupling[k] = 2.0 * std::real(P[k] * S[k]) / (A[k] * A[k]);
  }
  Spectrum gx(target.height(), target.width(), D), gz(target.height(), target.width(), D);
  for (int d = 0; d < D; ++d) {
    auto x = X.channel(d), z = Z.channel(d);
    auto ox = gx.channel(d), oz = gz.channel(d);
    for (std::size_t k = 0; k < N; ++k) {
      ox[k] = P[k] * z[k] / A[k] - coupling[k] * x[k];
      oz[k] = std::conj(P[k]) * x[k] / A[k];
    }
  }
  out.grad_target = idft2(gx);
  out.grad_search = idft2(gz);
  return out;
}

struct MultiLevelResult {
  double total = 0;
  std::array<double, 3> per_level{};
  std::array<Tensor3, 3> grad_target;
  std::array<Tensor3, 3> grad_search;
};

/// Sum of cf_layer losses over the low, middle and high taps.
inline MultiLevelResult multilevel_tracking_loss(const std::array<Tensor3, 3>& x_taps,
                                                 const std::array<Tensor3, 3>& z_taps, const LevelLabels& labels,
                                                 double lambda_cf, bool need_grads = true) {
  MultiLevelResult out;
  for (int l = 0; l < 3; ++l) {
    auto r = cf_layer(x_taps[l], z_taps[l], labels.train[l], labels.desired[l], lambda_cf, need_grads);
    out.per_level[l] = r.loss;
    out.total += r.loss;
    out.grad_target[l] = std::move(r.grad_target);
    out.grad_search[l] = std::move(r.grad_search);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fidelity

inline Tensor3 apply_adapter(const Adapter1x1& a, const Tensor3& in) {
  if (in.channels() != a.in_channels)
    throw Error("adapter: input has " + std::to_string(in.channels()) + " channels, adapter expects " +
                std::to_string(a.in_channels));
  Tensor3 out(in.height(), in.width(), a.out_channels);
  for (int t = 0; t < a.out_channels; ++t) {
    auto dst = out.channel(t);
    for (int s = 0; s < a.in_channels; ++s) {
      const double w = a.weight[static_cast<std::size_t>(t) * a.in_channels + s];
      const auto src = in.channel(s);
      for (std::size_t p = 0; p < dst.size(); ++p) dst[p] += w * src[p];
    }
  }
  return out;
}

struct FidelityTerm {
  double loss = 0;
  Tensor3 grad_student;
  std::vector<double> grad_adapter;  // out x in
};

/// scale * ||A(student) - teacher||^2 with gradients; the teacher is constant.
inline FidelityTerm fidelity_term(const Tensor3& student, const Tensor3& teacher, const Adapter1x1& a, double scale,
                                  bool need_grads = true) {
  const Tensor3 mapped = apply_adapter(a, student);
  if (!mapped.same_shape(teacher))
    throw Error("fidelity: adapted student " + mapped.shape_string() + " vs teacher " + teacher.shape_string());
  FidelityTerm f;
  Tensor3 diff = mapped;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff.data()[i] -= teacher.data()[i];
    f.loss += diff.data()[i] * diff.data()[i];
  }
  f.loss *= scale;
  if (!need_grads) return f;
  f.grad_student = Tensor3(student.height(), student.width(), student.channels());
  f.grad_adapter.assign(a.weight.size(), 0.0);
  for (int t = 0; t < a.out_channels; ++t) {
    const auto dt_ = diff.channel(t);
    for (int s = 0; s < a.in_channels; ++s) {
      const std::size_t wi = static_cast<std::size_t>(t) * a.in_channels + s;
      const double w = a.weight[wi];
      const auto src = student.channel(s);
      auto gs = f.grad_student.channel(s);
      double acc = 0;
      for (std::size_t p = 0; p < dt_.size(); ++p) {
        acc += dt_[p] * src[p];
        gs[p] += 2.0 * scale * w * dt_[p];
      }
      f.grad_adapter[wi] = 2.0 * scale * acc;
    }
  }
  return f;
}

struct FidelityResult {
  double target = 0;
  double search = 0;
  double total() const { return target + search; }
  Tensor3 grad_x;
  Tensor3 grad_z;
  std::vector<double> grad_adapter;
};

/// ||A(phi(x)) - psi(x)||^2 + ||A(phi(z)) - psi(z)||^2, each divided by the
/// teacher map's element count and the batch size.
inline FidelityResult fidelity_loss(const Tensor3& student_x, const Tensor3& student_z, const Tensor3& teacher_x,
                                    const Tensor3& teacher_z, const Adapter1x1& adapter, double batch_size = 1,
                                    bool need_grads = true) {
  const double scale = 1.0 / (batch_size * static_cast<double>(teacher_x.size()));
  auto fx = fidelity_term(student_x, teacher_x, adapter, scale, need_grads);
  auto fz = fidelity_term(student_z, teacher_z, adapter, scale, need_grads);
  FidelityResult r{fx.loss, fz.loss, std::move(fx.grad_student), std::move(fz.grad_student), std::move(fx.grad_adapter)};
  for (std::size_t i = 0; i < r.grad_adapter.size(); ++i) r.grad_adapter[i] += fz.grad_adapter[i];
  return r;
}

/// Adapter initialised as the channel selection recorded by pruning: student
/// channel j feeds teacher channel kept[j] with weight 1.
inline Adapter1x1 selection_adapter(const NetworkSpec& teacher, const PruneRecord& record, Level level) {
  int conv = teacher.tap(level);
  if (teacher.layers[conv].kind != LayerKind::conv) --conv;
  const auto& kept = record.kept_filters.at(conv);
  Adapter1x1 a{static_cast<int>(kept.size()), teacher.layers[conv].out_channels, {}};
  a.weight.assign(static_cast<std::size_t>(a.in_channels) * a.out_channels, 0.0);
  for (std::size_t j = 0; j < kept.size(); ++j) a.weight[static_cast<std::size_t>(kept[j]) * a.in_channels + j] = 1.0;
  return a;
}

// ---------------------------------------------------------------------------
// Objective

struct TeacherTaps {
  std::array<Tensor3, 3> x;
  std::array<Tensor3, 3> z;
};

inline TeacherTaps teacher_taps(const Network& teacher, const TrainingPair& pair) {
  return {forward_taps(teacher.spec, teacher.weights, pair.x).taps,
          forward_taps(teacher.spec, teacher.weights, pair.z).taps};
}

struct LossAndGrads {
  LossBreakdown loss;
  NetworkWeights grads;  // same structure as the student weights, adapters included
};

namespace detail {

inline void add_into(std::vector<double>& dst, const std::vector<double>& src, double scale = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

inline void add_network_grads(NetworkWeights& dst, const NetworkWeights& src) {
  for (std::size_t i = 0; i < dst.layers.size(); ++i) {
    add_into(dst.layers[i].kernel, src.layers[i].kernel);
    add_into(dst.layers[i].bias, src.layers[i].bias);
  }
}

inline void add_decay(const TrainingConfig& cfg, const NetworkWeights& w, LossAndGrads& out, bool need_grads) {
  out.loss.decay = cfg.weight_decay * w.squared_norm();
  if (!need_grads || cfg.weight_decay == 0) return;
  auto g = out.grads.params();
  auto p = w.params();
  for (std::size_t k = 0; k < g.size(); ++k)
    for (std::size_t i = 0; i < g[k].size(); ++i) g[k][i] += 2.0 * cfg.weight_decay * p[k][i];
}

inline void finish_total(const TrainingConfig& cfg, LossBreakdown& b) {
  b.fidelity = b.fidelity_target + b.fidelity_search;
  b.total = b.tracking + cfg.fidelity_weight * b.fidelity + b.decay;
}

inline void check_adapters(const Network& student, const TrainingConfig& cfg) {
  for (auto l : kLevels)
    if (cfg.fidelity_at(l) && cfg.fidelity_weight > 0 && !student.weights.adapters[static_cast<int>(l)])
      throw Error(std::string("offline_loss: student lacks an adapter for the ") + to_string(l) + " tap");
}

}  // namespace detail

/// L = tracking + lambda_fid * fidelity + gamma ||Theta||^2 over a batch. The
/// x and z branches share one weight snapshot; their gradients are summed.
inline LossAndGrads offline_loss(std::span<const TrainingPair> batch, const Network& student,
                                 std::span<const TeacherTaps> teacher, const TrainingConfig& cfg,
                                 bool need_grads = true) {
  if (batch.empty()) throw Error("offline_loss: empty batch");
  if (teacher.size() != batch.size()) throw Error("offline_loss: teacher taps do not match batch");
  detail::check_adapters(student, cfg);
  const double B = static_cast<double>(batch.size());
  LossAndGrads out;
  if (need_grads) out.grads = student.weights.zeros_like();
  const bool use_fid = cfg.fidelity_weight > 0;

  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& pair = batch[n];
    auto fx = forward_taps(student.spec, student.weights, pair.x);
    auto fz = forward_taps(student.spec, student.weights, pair.z);
    const auto labels = make_level_labels(student.spec, pair.target_h, pair.target_w, pair.offset_row, pair.offset_col);
    auto track = multilevel_tracking_loss(fx.taps, fz.taps, labels, cfg.lambda_cf, need_grads);
    for (int l = 0; l < 3; ++l) out.loss.tracking_level[l] += track.per_level[l] / B;
    out.loss.tracking += track.total / B;

    std::array<Tensor3, 3> gx, gz;
    if (need_grads)
      for (int l = 0; l < 3; ++l) {
        gx[l] = track.grad_target[l];
        gx[l] *= 1.0 / B;
        gz[l] = track.grad_search[l];
        gz[l] *= 1.0 / B;
      }
    for (auto l : kLevels) {
      const int i = static_cast<int>(l);
      if (!use_fid || !cfg.fidelity_at(l)) continue;
      const auto& adapter = *student.weights.adapters[i];
      auto fid = fidelity_loss(fx.taps[i], fz.taps[i], teacher[n].x[i], teacher[n].z[i], adapter, B, need_grads);
      out.loss.fidelity_target += fid.target;
      out.loss.fidelity_search += fid.search;
      if (!need_grads) continue;
      fid.grad_x *= cfg.fidelity_weight;
      fid.grad_z *= cfg.fidelity_weight;
      gx[i] += fid.grad_x;
      gz[i] += fid.grad_z;
      detail::add_into(out.grads.adapters[i]->weight, fid.grad_adapter, cfg.fidelity_weight);
    }
    if (!need_grads) continue;
    detail::add_network_grads(out.grads, backward(student.spec, student.weights, fx.cache, gx).grads);
    detail::add_network_grads(out.grads, backward(student.spec, student.weights, fz.cache, gz).grads);
  }
  detail::add_decay(cfg, student.weights, out, need_grads);
  detail::finish_total(cfg, out.loss);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

/// lr(epoch) = lr_start (lr_end / lr_start)^(epoch / (epochs - 1)).
inline double learning_rate(const TrainingConfig& cfg, int epoch) {
  if (cfg.epochs <= 1 || cfg.lr_start == 0) return cfg.lr_start;
  const double t = static_cast<double>(epoch) / (cfg.epochs - 1);
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

struct SgdResult {
  NetworkWeights weights;
  NetworkWeights velocity;
  bool ok = true;
  std::string error;
};

/// v <- m v - lr g;  w <- w + v. New weights are rounded to float32. A
/// non-finite gradient rejects the step and returns the inputs unchanged.
inline SgdResult sgd_step(const NetworkWeights& weights, const NetworkWeights& grads, const NetworkWeights& velocity,
                          double momentum, double lr) {
  SgdResult r{weights, velocity, true, {}};
  if (!grads.all_finite()) {
    r.ok = false;
    r.error = "non-finite gradient";
    return r;
  }
  auto w = r.weights.params();
  auto v = r.velocity.params();
  const auto g = grads.params();
  if (w.size() != g.size() || w.size() != v.size()) throw Error("sgd_step: parameter structure mismatch");
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k].size() != g[k].size() || w[k].size() != v[k].size()) throw Error("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < w[k].size(); ++i) {
      v[k][i] = momentum * v[k][i] - lr * g[k][i];
      w[k][i] += v[k][i];
    }
  }
  round_to_float(r.weights);
  if (!r.weights.all_finite()) {
    r = {weights, velocity, false, "step produced non-finite weights"};
  }
  return r;
}

inline SgdResult sgd_step(const NetworkWeights& weights, const NetworkWeights& grads, const NetworkWeights& velocity,
                          const TrainingConfig& cfg, int epoch) {
  return sgd_step(weights, grads, velocity, cfg.momentum, learning_rate(cfg, epoch));
}

// ---------------------------------------------------------------------------
// Training loop

struct OfflineRun {
  Network student;  // adapters attached
  PruneRecord prune;
  std::vector<LossBreakdown> history;  // [0] = pruned init, [e] = after epoch e
  bool diverged = false;
  std::string message;
};

/// Pruned student with selection adapters on the fidelity taps.
inline PrunedNetwork init_student(const Network& teacher, const TrainingConfig& cfg) {
  auto pruned = prune_init(teacher, cfg.keep_fraction, cfg.seed);
  for (auto l : kLevels)
    if (cfg.fidelity_at(l))
      pruned.student.weights.adapters[static_cast<int>(l)] = selection_adapter(teacher.spec, pruned.record, l);
  return pruned;
}

inline std::vector<TeacherTaps> teacher_taps(const Network& teacher, std::span<const TrainingPair> pairs) {
  std::vector<TeacherTaps> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(teacher_taps(teacher, p));
  return out;
}

inline OfflineRun train_offline(std::span<const TrainingPair> dataset, const Network& teacher,
                                const TrainingConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw Error("train_offline: empty dataset");
  auto pruned = init_student(teacher, cfg);
  OfflineRun run{std::move(pruned.student), std::move(pruned.record), {}, false, {}};
  auto tt = teacher_taps(teacher, dataset);
  for (auto& t : tt)
    for (auto l : kLevels)
      if (!cfg.fidelity_at(l) || cfg.fidelity_weight == 0) {
        t.x[static_cast<int>(l)] = Tensor3();
        t.z[static_cast<int>(l)] = Tensor3();
      }

  run.history.push_back(offline_loss(dataset, run.student, tt, cfg, false).loss);
  NetworkWeights velocity = run.student.weights.zeros_like();
  std::vector<std::size_t> order(dataset.size());
  std::vector<TrainingPair> batch;
  std::vector<TeacherTaps> batch_tt;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(cfg.seed * 7919ULL + static_cast<std::uint64_t>(epoch) + 1);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      batch_tt.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) {
        batch.push_back(dataset[order[k]]);
        batch_tt.push_back(tt[order[k]]);
      }
      const auto lg = offline_loss(batch, run.student, batch_tt, cfg, true);
      auto step = sgd_step(run.student.weights, lg.grads, velocity, cfg, epoch);
      if (!step.ok || !std::isfinite(lg.loss.total)) {
        run.diverged = true;
        run.message = "diverged in epoch " + std::to_string(epoch) + ": " +
                      (step.ok ? std::string("non-finite loss") : step.error);
        return run;
      }
      run.student.weights = std::move(step.weights);
      velocity = std::move(step.velocity);
    }
    run.history.push_back(offline_loss(dataset, run.student, tt, cfg, false).loss);
    if (!std::isfinite(run.history.back().total)) {
      run.diverged = true;
      run.message = "non-finite loss after epoch " + std::to_string(epoch);
      return run;
    }
  }
  return run;
}

/// CSV `epoch,tracking,fidelity,decay,total`; row 0 is the pruned init.
inline void write_loss_csv(const std::filesystem::path& path, std::span<const LossBreakdown> history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,tracking,fidelity,decay,total\n";
  char line[256];
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", e, h.tracking, h.fidelity, h.decay, h.total);
    out << line;
  }
}

// ---------------------------------------------------------------------------
// Training pairs

struct CropConfig {
  double padding = 2.0;
  int out_size = 64;
  int max_gap = 10;
  double max_jitter = 0.15;  // fraction of the search patch side
};

/// Target patch from frame t, search patch from frame t + gap whose centre is
/// moved so the target sits at (+jitter_row, +jitter_col) image pixels from it.
/// Returns nothing for degenerate boxes (w or h < 2 px).
inline std::optional<TrainingPair> sample_pair(const SequenceRecord& seq, std::size_t frame, std::size_t gap,
                                               double jitter_row, double jitter_col, const CropConfig& cfg) {
  if (frame + gap >= seq.size()) throw Error("sample_pair: frame range exceeds sequence " + seq.name);
  const Box bx = seq.boxes[frame], bz = seq.boxes[frame + gap];
  if (bx.w < 2 || bx.h < 2 || bz.w < 2 || bz.h < 2) return std::nullopt;
  const double sx = crop_side(bx, cfg.padding), sz = crop_side(bz, cfg.padding);
  TrainingPair p;
  p.x = crop_square(seq.frame(frame), bx.cx(), bx.cy(), sx, cfg.out_size);
  p.z = crop_square(seq.frame(frame + gap), bz.cx() - jitter_col, bz.cy() - jitter_row, sz, cfg.out_size);
  subtract_channel_mean(p.x);
  subtract_channel_mean(p.z);
  const double scale_z = cfg.out_size / sz;
  p.offset_row = jitter_row * scale_z;
  p.offset_col = jitter_col * scale_z;
  p.target_h = bx.h * cfg.out_size / sx;
  p.target_w = bx.w * cfg.out_size / sx;
  return p;
}

/// Seeded draw of frame, gap in [0, max_gap] and jitter in +-max_jitter * side.
inline std::optional<TrainingPair> sample_pair(const SequenceRecord& seq, const CropConfig& cfg, std::mt19937_64& rng) {
  if (seq.size() < 1) return std::nullopt;
  const std::size_t max_gap = std::min<std::size_t>(cfg.max_gap, seq.size() - 1);
  const std::size_t gap = std::uniform_int_distribution<std::size_t>(0, max_gap)(rng);
  const std::size_t frame = std::uniform_int_distribution<std::size_t>(0, seq.size() - 1 - gap)(rng);
  const double side = crop_side(seq.boxes[frame + gap], cfg.padding);
  std::uniform_real_distribution<double> J(-cfg.max_jitter * side, cfg.max_jitter * side);
  const double jr = J(rng), jc = J(rng);
  return sample_pair(seq, frame, gap, jr, jc, cfg);
}

inline std::optional<TrainingPair> sample_pair(const SequenceRecord& seq, const CropConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_pair(seq, cfg, rng);
}

/// `count` pairs drawn round-robin over sequences; degenerate draws are skipped.
inline std::vector<TrainingPair> sample_pairs(std::span<const SequenceRecord> sequences, int count,
                                              const CropConfig& cfg, std::uint64_t seed) {
  if (sequences.empty()) throw Error("sample_pairs: no sequences");
  std::mt19937_64 rng(seed);
  std::vector<TrainingPair> out;
  int attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 20 * count + 100) throw Error("sample_pairs: too many degenerate boxes");
    const auto& seq = sequences[static_cast<std::size_t>(attempts - 1) % sequences.size()];
    if (auto p = sample_pair(seq, cfg, rng)) out.push_back(std::move(*p));
  }
  return out;
}

}  // namespace dt
