#pragma once

// One-pass evaluation: initialise on the first ground-truth box, track to the
// end without re-initialisation, score IoU on a 21-point threshold grid.
// Also the model cost report (FLOPs and parameters).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dt/nnet.hpp"
#include "dt/sequence.hpp"
#include "dt/tracker.hpp"

namespace dt {

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Thresholds 0.00, 0.05, ..., 1.00.
inline std::array<double, 21> threshold_grid() {
  std::array<double, 21> t{};
  for (int i = 0; i < 21; ++i) t[i] = i / 20.0;
  return t;
}

/// Anything that can follow a target through a sequence.
class SequenceTracker {
 public:
  virtual ~SequenceTracker() = default;
  virtual void init(const Image& frame, const Box& box) = 0;
  virtual Box update(const Image& frame) = 0;
  /// Accumulated feature-extraction time, seconds.
  virtual double feature_seconds() const { return 0.0; }
};

using TrackerFactory = std::function<std::unique_ptr<SequenceTracker>(const SequenceRecord&)>;

struct SequenceResult {
  std::string name;
  std::vector<Box> predicted;
  std::vector<double> ious;
  std::array<double, 21> success{};
  double auc = 0;
  double mean_iou = 0;
  double fps = 0;
  double feat_ms = 0;  // per tracked frame
  bool failed = false;
  std::string failure;
};

struct EvalReport {
  std::vector<SequenceResult> sequences;  // sorted by name
  double mean_auc = 0;
  double mean_iou = 0;
  double mean_fps = 0;
};

/// success(t) = fraction of frames with IoU > t; AUC = mean over the grid.
inline void score_sequence(SequenceResult& r) {
  const auto grid = threshold_grid();
  const double n = static_cast<double>(r.ious.size());
  r.auc = 0;
  for (int i = 0; i < 21; ++i) {
    const auto hits = std::count_if(r.ious.begin(), r.ious.end(), [&](double v) { return v > grid[i]; });
    r.success[i] = n > 0 ? static_cast<double>(hits) / n : 0.0;
    r.auc += r.success[i];
  }
  r.auc /= 21.0;
  r.mean_iou = 0;
  for (double v : r.ious) r.mean_iou += v;
  if (n > 0) r.mean_iou /= n;
}

/// Tracks one sequence. Frames are loaded before the clock starts; a tracker
/// exception scores the remaining frames as IoU 0 and flags the sequence.
inline SequenceResult evaluate_sequence(const SequenceRecord& seq, const TrackerFactory& factory) {
  if (seq.size() < 2) throw Error("sequence " + seq.name + " needs at least 2 frames");
  SequenceResult r;
  r.name = seq.name;
  auto tracker = factory(seq);
  double track_seconds = 0;
  const auto clock = [] { return std::chrono::steady_clock::now(); };
  try {
    const Image first = seq.frame(0);
    const auto t0 = clock();
    tracker->init(first, seq.boxes[0]);
    track_seconds += std::chrono::duration<double>(clock() - t0).count();
    r.predicted.push_back(seq.boxes[0]);
    for (std::size_t i = 1; i < seq.size(); ++i) {
      const Image frame = seq.frame(i);
      const auto t1 = clock();
      r.predicted.push_back(tracker->update(frame));
      track_seconds += std::chrono::duration<double>(clock() - t1).count();
    }
  } catch (const std::exception& e) {
    r.failed = true;
    r.failure = e.what();
  }
  for (std::size_t i = 0; i < seq.size(); ++i)
    r.ious.push_back(i < r.predicted.size() ? iou(r.predicted[i], seq.boxes[i]) : 0.0);
  score_sequence(r);
  const double frames = static_cast<double>(r.predicted.size());
  r.fps = track_seconds > 0 ? frames / track_seconds : 0.0;
  r.feat_ms = frames > 0 ? 1000.0 * tracker->feature_seconds() / frames : 0.0;
  return r;
}

inline void summarise(EvalReport& rep) {
  std::sort(rep.sequences.begin(), rep.sequences.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  rep.mean_auc = rep.mean_iou = rep.mean_fps = 0;
  for (const auto& s : rep.sequences) {
    rep.mean_auc += s.auc;
    rep.mean_iou += s.mean_iou;
    rep.mean_fps += s.fps;
  }
  const double n = static_cast<double>(rep.sequences.size());
  if (n > 0) {
    rep.mean_auc /= n;
    rep.mean_iou /= n;
    rep.mean_fps /= n;
  }
}

/// OPE over all sequences with `threads` workers (0 = hardware concurrency).
/// Each worker owns its trackers; results are merged in sequence-name order.
inline EvalReport run_ope(const std::vector<SequenceRecord>& sequences, const TrackerFactory& factory,
                          unsigned threads = 1) {
  if (sequences.empty()) throw Error("run_ope: no sequences");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(sequences.size()));
  EvalReport rep;
  rep.sequences.resize(sequences.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < sequences.size(); i = next++) {
      try {
        rep.sequences[i] = evaluate_sequence(sequences[i], factory);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  summarise(rep);
  return rep;
}

/// CSV `sequence,frames,auc,mean_iou,fps,feat_ms`, one row per sequence.
inline std::string report_csv(const EvalReport& rep) {
  std::ostringstream out;
  out << "sequence,frames,auc,mean_iou,fps,feat_ms\n";
  char line[512];
  for (const auto& s : rep.sequences) {
    std::snprintf(line, sizeof line, "%s,%zu,%.6f,%.6f,%.2f,%.3f\n", s.name.c_str(), s.ious.size(), s.auc, s.mean_iou,
                  s.fps, s.feat_ms);
    out << line;
  }
  return out.str();
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// fKCF as a SequenceTracker

class FkcfTracker : public SequenceTracker {
 public:
  FkcfTracker(std::shared_ptr<const Network> net, TrackerConfig config, std::shared_ptr<const Network> teacher = {})
      : net_(std::move(net)), teacher_(std::move(teacher)), config_(std::move(config)) {}

  void init(const Image& frame, const Box& box) override {
    state_ = tracker_init(frame, box, net_, config_, teacher_.get());
  }
  Box update(const Image& frame) override { return tracker_update(state_, frame).box; }
  double feature_seconds() const override { return state_.feature_seconds; }
  const TrackerState& state() const { return state_; }

 private:
  std::shared_ptr<const Network> net_;
  std::shared_ptr<const Network> teacher_;
  TrackerConfig config_;
  TrackerState state_;
};

inline TrackerFactory fkcf_factory(std::shared_ptr<const Network> net, TrackerConfig config,
                                   std::shared_ptr<const Network> teacher = {}) {
  return [=](const SequenceRecord&) { return std::make_unique<FkcfTracker>(net, config, teacher); };
}

// ---------------------------------------------------------------------------
// Model cost report

struct ModelReport {
  FlopsReport teacher;
  FlopsReport student;
  double flops_ratio = 1;
  double param_ratio = 1;         // conv weights only
  double param_ratio_biased = 1;  // conv weights + biases
};

inline ModelReport report_model(const NetworkSpec& teacher, const NetworkSpec& student) {
  ModelReport r{count_flops(teacher), count_flops(student), 1, 1, 1};
  r.flops_ratio = ratio(r.teacher.total_flops, r.student.total_flops);
  r.param_ratio = ratio(r.teacher.total_weights, r.student.total_weights);
  r.param_ratio_biased = ratio(r.teacher.total_params(), r.student.total_params());
  return r;
}

/// Per-layer rows for both models, then a totals row per model and a ratio row.
inline std::string model_report_csv(const ModelReport& r) {
  std::ostringstream out;
  out << "model,layer,kind,out_h,out_w,out_c,flops,weights,biases\n";
  for (const auto* f : {&r.teacher, &r.student}) {
    for (const auto& l : f->layers)
      out << f->name << ',' << l.index << ',' << to_string(l.kind) << ',' << l.output.height << ',' << l.output.width
          << ',' << l.output.channels << ',' << l.flops << ',' << l.weights << ',' << l.biases << '\n';
    out << f->name << ",total,,,,," << f->total_flops << ',' << f->total_weights << ',' << f->total_biases << '\n';
  }
  char line[160];
  std::snprintf(line, sizeof line, "ratio,teacher/student,,,,,%.4f,%.4f,\n", r.flops_ratio, r.param_ratio);
  out << line;
  return out.str();
}

inline std::string model_report_text(const ModelReport& r) {
  std::ostringstream out;
  char line[256];
  for (const auto* f : {&r.teacher, &r.student}) {
    out << f->name << '\n';
    std::snprintf(line, sizeof line, "  %-5s %-8s %-14s %16s %12s %8s\n", "layer", "kind", "output", "flops", "weights",
                  "biases");
    out << line;
    for (const auto& l : f->layers) {
      if (l.kind != LayerKind::conv) continue;
      const std::string shape = std::to_string(l.output.height) + "x" + std::to_string(l.output.width) + "x" +
                                std::to_string(l.output.channels);
      std::snprintf(line, sizeof line, "  %-5d %-8s %-14s %16llu %12llu %8llu\n", l.index, to_string(l.kind),
                    shape.c_str(), static_cast<unsigned long long>(l.flops), static_cast<unsigned long long>(l.weights),
                    static_cast<unsigned long long>(l.biases));
      out << line;
    }
    std::snprintf(line, sizeof line, "  %-28s %16llu %12llu %8llu\n", "total", static_cast<unsigned long long>(f->total_flops),
                  static_cast<unsigned long long>(f->total_weights), static_cast<unsigned long long>(f->total_biases));
    out << line;
  }
  std::snprintf(line, sizeof line, "flops ratio %.4f  param ratio %.4f (weights+biases %.4f)\n", r.flops_ratio,
                r.param_ratio, r.param_ratio_biased);
  out << line;
  return out.str();
}

}  // namespace dt
