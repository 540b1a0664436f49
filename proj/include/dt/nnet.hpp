#pragma once

// Minimal convolutional engine: conv / ReLU / max-pool layers with exact
// backward passes, level taps, pruning-based student initialization and
// FLOPs / parameter accounting.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dt/tensor.hpp"

namespace dt {

enum class LayerKind { conv, relu, maxpool };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
  }
  return "?";
}

/// For maxpool, `kernel` is the pooling window.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int in_channels = 0;
  int out_channels = 0;
  bool has_bias = false;

  static LayerSpec conv(int k, int stride, int pad, int in, int out, bool bias = true) {
    return {LayerKind::conv, k, stride, pad, in, out, bias};
  }
  static LayerSpec relu() { return {}; }
  static LayerSpec maxpool(int window, int stride) { return {LayerKind::maxpool, window, stride, 0, 0, 0, false}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class Level { low = 0, middle = 1, high = 2 };
inline constexpr std::array<Level, 3> kLevels{Level::low, Level::middle, Level::high};
inline const char* to_string(Level l) {
  constexpr const char* names[] = {"low", "middle", "high"};
  return names[static_cast<int>(l)];
}

struct Shape {
  int height = 0, width = 0, channels = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct NetworkSpec {
  std::string name;
  Shape input;
  std::vector<LayerSpec> layers;
  std::array<int, 3> taps{};  // layer index whose output is exported, per Level

  int tap(Level l) const { return taps[static_cast<int>(l)]; }

  /// Output shape of every layer, validating geometry on the way.
  std::vector<Shape> output_shapes() const {
    std::vector<Shape> out;
    Shape cur = input;
    if (cur.height < 1 || cur.width < 1 || cur.channels < 1) throw Error("NetworkSpec " + name + ": bad input dims");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string where = "NetworkSpec " + name + " layer " + std::to_string(i) + ": ";
      switch (l.kind) {
        case LayerKind::conv: {
          if (l.kernel < 1 || l.stride < 1 || l.pad < 0) throw Error(where + "invalid conv geometry");
          if (l.in_channels != cur.channels)
            throw Error(where + "in_channels " + std::to_string(l.in_channels) + " != incoming " +
                        std::to_string(cur.channels));
          if (l.out_channels < 1) throw Error(where + "out_channels must be >= 1");
          if (cur.height + 2 * l.pad < l.kernel || cur.width + 2 * l.pad < l.kernel)
            throw Error(where + "kernel exceeds padded input");
          cur = {(cur.height + 2 * l.pad - l.kernel) / l.stride + 1, (cur.width + 2 * l.pad - l.kernel) / l.stride + 1,
                 l.out_channels};
          break;
        }
        case LayerKind::maxpool:
          if (l.kernel < 1 || l.stride < 1) throw Error(where + "invalid pool geometry");
          if (cur.height < l.kernel || cur.width < l.kernel) throw Error(where + "pool window exceeds input");
          cur = {(cur.height - l.kernel) / l.stride + 1, (cur.width - l.kernel) / l.stride + 1, cur.channels};
          break;
        case LayerKind::relu:
          break;
      }
      if (cur.height < 1 || cur.width < 1) throw Error(where + "output dims < 1");
      out.push_back(cur);
    }
    return out;
  }

  void validate() const {
    output_shapes();
    for (int t = 0; t < 3; ++t) {
      const int idx = taps[t];
      if (idx < 0 || idx >= static_cast<int>(layers.size()))
        throw Error("NetworkSpec " + name + ": tap " + to_string(kLevels[t]) + " out of range");
      const auto kind = layers[idx].kind;
      const bool ok = kind == LayerKind::conv || (kind == LayerKind::relu && idx > 0 &&
                                                  layers[idx - 1].kind == LayerKind::conv);
      if (!ok) throw Error("NetworkSpec " + name + ": tap " + to_string(kLevels[t]) + " must be a conv output");
      if (t > 0 && taps[t] <= taps[t - 1]) throw Error("NetworkSpec " + name + ": taps must be strictly increasing");
    }
  }

  Shape tap_shape(Level l) const { return output_shapes()[tap(l)]; }

  std::vector<int> conv_layers() const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].kind == LayerKind::conv) idx.push_back(static_cast<int>(i));
    return idx;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// ---------------------------------------------------------------------------
// Weights

struct ConvParams {
  std::vector<double> kernel;  // out x in x K x K
  std::vector<double> bias;    // out, empty when the layer has no bias
  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

/// 1x1 projection from student tap channels to teacher tap channels.
struct Adapter1x1 {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weight;  // out x in
  friend bool operator==(const Adapter1x1&, const Adapter1x1&) = default;
};

struct NetworkWeights {
  std::vector<ConvParams> layers;  // one entry per spec layer, empty for non-conv
  std::array<std::optional<Adapter1x1>, 3> adapters;

  /// Every learnable array in a fixed order: kernels, biases (by layer), adapters.
  std::vector<std::span<double>> params() {
    std::vector<std::span<double>> out;
    for (auto& l : layers) {
      if (!l.kernel.empty()) out.emplace_back(l.kernel);
      if (!l.bias.empty()) out.emplace_back(l.bias);
    }
    for (auto& a : adapters)
      if (a) out.emplace_back(a->weight);
    return out;
  }
  std::vector<std::span<const double>> params() const {
    std::vector<std::span<const double>> out;
    for (auto& s : const_cast<NetworkWeights*>(this)->params()) out.emplace_back(s);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto s : params()) n += s.size();
    return n;
  }

  double squared_norm() const {
    double s = 0;
    for (auto p : params())
      for (double v : p) s += v * v;
    return s;
  }

  bool all_finite() const {
    for (auto p : params())
      for (double v : p)
        if (!std::isfinite(v)) return false;
    return true;
  }

  /// Same structure, all zeros.
  NetworkWeights zeros_like() const {
    NetworkWeights z = *this;
    for (auto p : z.params()) std::fill(p.begin(), p.end(), 0.0);
    return z;
  }

  /// Weights without adapters (deployment form).
  NetworkWeights stripped() const {
    NetworkWeights w = *this;
    w.adapters = {};
    return w;
  }

  friend bool operator==(const NetworkWeights&, const NetworkWeights&) = default;
};

struct Network {
  NetworkSpec spec;
  NetworkWeights weights;
};

/// Rounds every value to the nearest float32 so snapshots survive weight files exactly.
inline void round_to_float(NetworkWeights& w) {
  for (auto p : w.params())
    for (double& v : p) v = static_cast<double>(static_cast<float>(v));
}

inline void check_weights(const NetworkSpec& spec, const NetworkWeights& w) {
  if (w.layers.size() != spec.layers.size())
    throw Error("weights: layer count " + std::to_string(w.layers.size()) + " != spec " +
                std::to_string(spec.layers.size()));
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const auto& p = w.layers[i];
    const std::size_t nk =
        l.kind == LayerKind::conv ? static_cast<std::size_t>(l.out_channels) * l.in_channels * l.kernel * l.kernel : 0;
    const std::size_t nb = (l.kind == LayerKind::conv && l.has_bias) ? l.out_channels : 0;
    if (p.kernel.size() != nk || p.bias.size() != nb) throw Error("weights: shape mismatch at layer " + std::to_string(i));
  }
}

/// He-normal kernels, zero biases, rounded to float32. Deterministic given seed.
inline NetworkWeights init_weights(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  NetworkWeights w;
  w.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind != LayerKind::conv) continue;
    const int fan_in = l.in_channels * l.kernel * l.kernel;
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / fan_in));
    auto& p = w.layers[i];
    p.kernel.resize(static_cast<std::size_t>(l.out_channels) * fan_in);
    for (double& v : p.kernel) v = nd(rng);
    if (l.has_bias) p.bias.assign(l.out_channels, 0.0);
  }
  round_to_float(w);
  return w;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct ForwardCache {
  std::vector<Tensor3> activations;           // [0] = input, [i+1] = output of layer i
  std::vector<std::vector<int>> pool_argmax;  // per layer, flat input index per output element
};

struct TapOutputs {
  std::array<Tensor3, 3> taps;
  ForwardCache cache;

  const Tensor3& operator[](Level l) const { return taps[static_cast<int>(l)]; }
};

namespace detail {

inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Patch matrix: row q = (c, ky, kx) holds the input value seen by kernel tap q
// at every output position (zero where the tap falls in the padding).
inline std::vector<double> im2col(const LayerSpec& l, const Tensor3& in, int OH, int OW) {
  const int K = l.kernel, S = l.stride, P = l.pad;
  const int H = in.height(), W = in.width();
  const std::size_t np = static_cast<std::size_t>(OH) * OW;
  std::vector<double> col(static_cast<std::size_t>(in.channels()) * K * K * np, 0.0);
  for (int c = 0; c < in.channels(); ++c) {
    const auto src = in.channel(c);
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        double* row = col.data() + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * np;
        // ox range with 0 <= ox*S + kx - P < W
        const int ox0 = std::max(0, -floor_div(kx - P, S));
        const int ox1 = std::min(OW, floor_div(W - 1 + P - kx, S) + 1);
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * S + ky - P;
          if (iy < 0 || iy >= H) continue;
          const double* srow = src.data() + static_cast<std::size_t>(iy) * W;
          double* drow = row + static_cast<std::size_t>(oy) * OW;
          for (int ox = ox0; ox < ox1; ++ox) drow[ox] = srow[ox * S + kx - P];
        }
      }
  }
  return col;
}

// Accumulation order per output element: bias, then input channel, kernel row, kernel column.
inline Tensor3 conv_forward(const LayerSpec& l, const ConvParams& p, const Tensor3& in, const Shape& out_shape) {
  Tensor3 out(out_shape.height, out_shape.width, out_shape.channels);
  const std::size_t np = static_cast<std::size_t>(out_shape.height) * out_shape.width;
  const std::size_t nq = static_cast<std::size_t>(l.in_channels) * l.kernel * l.kernel;
  const auto col = im2col(l, in, out_shape.height, out_shape.width);
  for (int o = 0; o < l.out_channels; ++o) {
    double* dst = out.channel(o).data();
    if (!p.bias.empty()) std::fill(dst, dst + np, p.bias[o]);
    const double* kern = p.kernel.data() + o * nq;
    for (std::size_t q = 0; q < nq; ++q) {
      const double wv = kern[q];
      const double* row = col.data() + q * np;
      for (std::size_t k = 0; k < np; ++k) dst[k] += wv * row[k];
    }
  }
  return out;
}

inline void conv_backward(const LayerSpec& l, const ConvParams& p, const Tensor3& in, const Tensor3& grad_out,
                          ConvParams& grad_p, Tensor3* grad_in) {
  const int K = l.kernel, S = l.stride, P = l.pad;
  const int H = in.height(), W = in.width(), OH = grad_out.height(), OW = grad_out.width();
  const std::size_t np = static_cast<std::size_t>(OH) * OW;
  const std::size_t nq = static_cast<std::size_t>(l.in_channels) * K * K;
  const auto col = im2col(l, in, OH, OW);
  std::vector<double> gcol(grad_in ? col.size() : 0, 0.0);
  for (int o = 0; o < l.out_channels; ++o) {
    const double* g = grad_out.channel(o).data();
    if (!grad_p.bias.empty()) {
      double s = 0;
      for (std::size_t k = 0; k < np; ++k) s += g[k];
      grad_p.bias[o] += s;
    }
    const double* kern = p.kernel.data() + o * nq;
    double* gkern = grad_p.kernel.data() + o * nq;
    for (std::size_t q = 0; q < nq; ++q) {
      const double* row = col.data() + q * np;
      double acc = 0;
      for (std::size_t k = 0; k < np; ++k) acc += g[k] * row[k];
      gkern[q] += acc;
      if (grad_in) {
        const double wv = kern[q];
        double* grow = gcol.data() + q * np;
        for (std::size_t k = 0; k < np; ++k) grow[k] += wv * g[k];
      }
    }
  }
  if (!grad_in) return;
  for (int c = 0; c < l.in_channels; ++c) {
    auto gin = grad_in->channel(c);
    for (int ky = 0; ky < K; ++ky)
      for (int kx = 0; kx < K; ++kx) {
        const double* row = gcol.data() + ((static_cast<std::size_t>(c) * K + ky) * K + kx) * np;
        const int ox0 = std::max(0, -floor_div(kx - P, S));
        const int ox1 = std::min(OW, floor_div(W - 1 + P - kx, S) + 1);
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * S + ky - P;
          if (iy < 0 || iy >= H) continue;
          double* girow = gin.data() + static_cast<std::size_t>(iy) * W;
          const double* grow = row + static_cast<std::size_t>(oy) * OW;
          for (int ox = ox0; ox < ox1; ++ox) girow[ox * S + kx - P] += grow[ox];
        }
      }
  }
}

inline Tensor3 maxpool_forward(const LayerSpec& l, const Tensor3& in, const Shape& out_shape, std::vector<int>& argmax) {
  Tensor3 out(out_shape.height, out_shape.width, out_shape.channels);
  argmax.assign(out.size(), 0);
  const int W = in.width();
  std::size_t k = 0;
  for (int ch = 0; ch < in.channels(); ++ch) {
    const auto src = in.channel(ch);
    for (int oy = 0; oy < out_shape.height; ++oy)
      for (int ox = 0; ox < out_shape.width; ++ox, ++k) {
        int best = (oy * l.stride) * W + ox * l.stride;
        for (int dy = 0; dy < l.kernel; ++dy)
          for (int dx = 0; dx < l.kernel; ++dx) {
            const int idx = (oy * l.stride + dy) * W + ox * l.stride + dx;
            if (src[idx] > src[best]) best = idx;  // ties keep the first in scan order
          }
        out.data()[k] = src[best];
        argmax[k] = static_cast<int>(ch * in.plane()) + best;
      }
  }
  return out;
}

}  // namespace detail

/// Runs the network up to its last tap and returns the three tap outputs plus
/// the activations needed by backward().
inline TapOutputs forward_taps(const NetworkSpec& spec, const NetworkWeights& weights, const Tensor3& input) {
  const auto shapes = spec.output_shapes();
  if (input.height() != spec.input.height || input.width() != spec.input.width ||
      input.channels() != spec.input.channels)
    throw Error("forward_taps: input " + input.shape_string() + " does not match spec input of " + spec.name);
  check_weights(spec, weights);
  TapOutputs out;
  auto& acts = out.cache.activations;
  const int last = spec.tap(Level::high);
  acts.reserve(last + 2);
  acts.push_back(input);
  out.cache.pool_argmax.resize(last + 1);
  for (int i = 0; i <= last; ++i) {
    const auto& l = spec.layers[i];
    const Tensor3& in = acts.back();
    switch (l.kind) {
      case LayerKind::conv:
        if (in.channels() != l.in_channels) throw Error("forward_taps: shape mismatch at layer " + std::to_string(i));
        acts.push_back(detail::conv_forward(l, weights.layers[i], in, shapes[i]));
        break;
      case LayerKind::relu: {
        Tensor3 t = in;
        for (double& v : t.data()) v = v > 0 ? v : 0.0;
        acts.push_back(std::move(t));
        break;
      }
      case LayerKind::maxpool:
        acts.push_back(detail::maxpool_forward(l, in, shapes[i], out.cache.pool_argmax[i]));
        break;
    }
  }
  for (int t = 0; t < 3; ++t) out.taps[t] = acts[spec.taps[t] + 1];
  return out;
}

struct BackwardResult {
  NetworkWeights grads;  // adapters left empty
  Tensor3 input_grad;    // empty unless requested
};

/// Exact gradients for a scalar loss whose derivative w.r.t. each tap output
/// is given. An empty tensor in `tap_grads` means zero gradient for that tap.
inline BackwardResult backward(const NetworkSpec& spec, const NetworkWeights& weights, const ForwardCache& cache,
                               const std::array<Tensor3, 3>& tap_grads, bool want_input_grad = false) {
  if (cache.activations.empty()) throw Error("backward: missing forward cache");
  const int last = spec.tap(Level::high);
  if (static_cast<int>(cache.activations.size()) < last + 2) throw Error("backward: incomplete forward cache");
  BackwardResult res;
  res.grads.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    res.grads.layers[i].kernel.assign(weights.layers[i].kernel.size(), 0.0);
    res.grads.layers[i].bias.assign(weights.layers[i].bias.size(), 0.0);
  }
  for (int t = 0; t < 3; ++t)
    if (!tap_grads[t].empty() && !tap_grads[t].same_shape(cache.activations[spec.taps[t] + 1]))
      throw Error("backward: tap gradient for " + std::string(to_string(kLevels[t])) + " has shape " +
                  tap_grads[t].shape_string());

  Tensor3 g;  // gradient w.r.t. output of layer i
  bool live = false;
  for (int i = last; i >= 0; --i) {
    for (int t = 0; t < 3; ++t)
      if (spec.taps[t] == i && !tap_grads[t].empty()) {
        if (!live) { g = tap_grads[t]; live = true; }
        else g += tap_grads[t];
      }
    if (!live) continue;
    const auto& l = spec.layers[i];
    const Tensor3& in = cache.activations[i];
    const bool need_in = i > 0 || want_input_grad;
    switch (l.kind) {
      case LayerKind::conv: {
        Tensor3 gin;
        if (need_in) gin = Tensor3(in.height(), in.width(), in.channels());
        detail::conv_backward(l, weights.layers[i], in, g, res.grads.layers[i], need_in ? &gin : nullptr);
        g = std::move(gin);
        break;
      }
      case LayerKind::relu: {
        const Tensor3& out = cache.activations[i + 1];
        for (std::size_t k = 0; k < g.size(); ++k)
          if (!(out.data()[k] > 0)) g.data()[k] = 0.0;
        break;
      }
      case LayerKind::maxpool: {
        Tensor3 gin(in.height(), in.width(), in.channels());
        const auto& am = cache.pool_argmax[i];
        for (std::size_t k = 0; k < g.size(); ++k) gin.data()[am[k]] += g.data()[k];
        g = std::move(gin);
        break;
      }
    }
  }
  if (want_input_grad) res.input_grad = live ? g : Tensor3(spec.input.height, spec.input.width, spec.input.channels);
  return res;
}

// ---------------------------------------------------------------------------
// Pruning

struct PruneRecord {
  std::vector<std::vector<int>> kept_filters;  // per spec layer, teacher filter indices kept (conv only)
  std::vector<std::vector<int>> kept_inputs;   // per spec layer, teacher input channels kept (conv only)
  friend bool operator==(const PruneRecord&, const PruneRecord&) = default;
};

struct PrunedNetwork {
  Network student;
  PruneRecord record;
};

/// Keeps ceil(C_out * keep_fraction) randomly chosen filters per conv layer and
/// the matching input channels of the next conv layer. Weights are copied.
inline PrunedNetwork prune_init(const Network& teacher, double keep_fraction, std::uint64_t seed) {
  const auto& spec = teacher.spec;
  spec.validate();
  check_weights(spec, teacher.weights);
  if (!(keep_fraction > 0 && keep_fraction <= 1)) throw Error("prune_init: keep_fraction must be in (0, 1]");
  std::mt19937_64 rng(seed);
  PrunedNetwork out;
  out.student.spec = spec;
  out.student.spec.name = spec.name + "-pruned";
  out.student.weights.layers.resize(spec.layers.size());
  out.record.kept_filters.resize(spec.layers.size());
  out.record.kept_inputs.resize(spec.layers.size());

  std::vector<int> channels(spec.input.channels);
  for (int c = 0; c < spec.input.channels; ++c) channels[c] = c;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind != LayerKind::conv) continue;
    const double want = std::ceil(l.out_channels * keep_fraction - 1e-9);
    const int keep = static_cast<int>(want);
    if (keep < 1) throw Error("prune_init: layer " + std::to_string(i) + " keeps no filters");
    std::vector<int> perm(l.out_channels);
    for (int k = 0; k < l.out_channels; ++k) perm[k] = k;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> kept(perm.begin(), perm.begin() + keep);
    std::sort(kept.begin(), kept.end());

    auto& sl = out.student.spec.layers[i];
    sl.in_channels = static_cast<int>(channels.size());
    sl.out_channels = keep;
    const auto& tp = teacher.weights.layers[i];
    auto& sp = out.student.weights.layers[i];
    const int K2 = l.kernel * l.kernel;
    sp.kernel.resize(static_cast<std::size_t>(keep) * channels.size() * K2);
    for (int f = 0; f < keep; ++f)
      for (std::size_t c = 0; c < channels.size(); ++c)
        std::copy_n(tp.kernel.begin() + (static_cast<std::size_t>(kept[f]) * l.in_channels + channels[c]) * K2, K2,
                    sp.kernel.begin() + (static_cast<std::size_t>(f) * channels.size() + c) * K2);
    if (l.has_bias) {
      sp.bias.resize(keep);
      for (int f = 0; f < keep; ++f) sp.bias[f] = tp.bias[kept[f]];
    }
    out.record.kept_inputs[i] = channels;
    out.record.kept_filters[i] = kept;
    channels = kept;
  }
  out.student.spec.validate();
  return out;
}

/// Student spec geometry with conv widths ceil(C_out * keep_fraction).
inline NetworkSpec pruned_spec(const NetworkSpec& spec, double keep_fraction) {
  NetworkSpec s = spec;
  s.name = spec.name + "-pruned";
  int channels = spec.input.channels;
  for (auto& l : s.layers) {
    if (l.kind != LayerKind::conv) continue;
    l.in_channels = channels;
    l.out_channels = static_cast<int>(std::ceil(l.out_channels * keep_fraction - 1e-9));
    channels = l.out_channels;
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Accounting

struct LayerCost {
  int index = 0;
  LayerKind kind = LayerKind::conv;
  Shape output;
  std::uint64_t flops = 0;
  std::uint64_t weights = 0;
  std::uint64_t biases = 0;
};

struct FlopsReport {
  std::string name;
  std::vector<LayerCost> layers;
  std::uint64_t total_flops = 0;
  std::uint64_t total_weights = 0;
  std::uint64_t total_biases = 0;
  std::uint64_t total_params() const { return total_weights + total_biases; }
};

/// Per conv layer FLOPs = (C_in K^2 + 1) H_out W_out C_out; the +1 is always
/// counted. ReLU and pooling contribute zero.
inline FlopsReport count_flops(const NetworkSpec& spec) {
  const auto shapes = spec.output_shapes();
  FlopsReport r{spec.name, {}, 0, 0, 0};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    LayerCost c{static_cast<int>(i), l.kind, shapes[i], 0, 0, 0};
    if (l.kind == LayerKind::conv) {
      const std::uint64_t k2 = static_cast<std::uint64_t>(l.kernel) * l.kernel;
      c.flops = (static_cast<std::uint64_t>(l.in_channels) * k2 + 1) * shapes[i].height * shapes[i].width *
                static_cast<std::uint64_t>(l.out_channels);
      c.weights = k2 * l.in_channels * l.out_channels;
      c.biases = l.has_bias ? l.out_channels : 0;
    }
    r.total_flops += c.flops;
    r.total_weights += c.weights;
    r.total_biases += c.biases;
    r.layers.push_back(c);
  }
  return r;
}

struct ParamCount {
  std::uint64_t weights = 0;  // conv kernels
  std::uint64_t biases = 0;
  std::uint64_t total() const { return weights + biases; }
};

inline ParamCount count_params(const NetworkSpec& spec) {
  ParamCount p;
  for (const auto& l : spec.layers)
    if (l.kind == LayerKind::conv) {
      p.weights += static_cast<std::uint64_t>(l.kernel) * l.kernel * l.in_channels * l.out_channels;
      if (l.has_bias) p.biases += l.out_channels;
    }
  return p;
}

/// reference / self; 1 when both are zero.
inline double ratio(std::uint64_t reference, std::uint64_t self) {
  if (self == 0) return reference == 0 ? 1.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(reference) / static_cast<double>(self);
}

// ---------------------------------------------------------------------------
// Profiles

/// Conv / ReLU stack shared by every profile: conv1 relu pool conv2 relu pool
/// (conv relu) x3. Taps sit on the ReLU after conv1, conv2 and conv5.
inline NetworkSpec conv5_spec(std::string name, Shape input, std::array<int, 5> ch, int conv2_stride) {
  NetworkSpec s;
  s.name = std::move(name);
  s.input = input;
  s.layers = {LayerSpec::conv(7, 2, 3, input.channels, ch[0]), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
              LayerSpec::conv(5, conv2_stride, 2, ch[0], ch[1]), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
              LayerSpec::conv(3, 1, 1, ch[1], ch[2]), LayerSpec::relu(),
              LayerSpec::conv(3, 1, 1, ch[2], ch[3]), LayerSpec::relu(),
              LayerSpec::conv(3, 1, 1, ch[3], ch[4]), LayerSpec::relu()};
  s.taps = {1, 4, 11};
  s.validate();
  return s;
}

enum class Profile { table3, desk64 };

inline Profile parse_profile(const std::string& s) {
  if (s == "table3") return Profile::table3;
  if (s == "desk64") return Profile::desk64;
  throw Error("unknown profile '" + s + "' (expected table3 or desk64)");
}

inline const char* to_string(Profile p) { return p == Profile::table3 ? "table3" : "desk64"; }

/// Teacher geometry. table3: 224x224x3 input, taps at 112/28/14.
/// desk64: 64x64x3 input, conv2 stride 1, taps at 32/16/8, narrower layers.
inline NetworkSpec teacher_spec(Profile p) {
  if (p == Profile::table3) return conv5_spec("table3-teacher", {224, 224, 3}, {96, 256, 512, 512, 512}, 2);
  return conv5_spec("desk64-teacher", {64, 64, 3}, {32, 64, 128, 128, 128}, 1);
}

inline NetworkSpec student_spec(Profile p) {
  NetworkSpec s = pruned_spec(teacher_spec(p), 1.0 / 8.0);
  s.name = p == Profile::table3 ? "table3-student" : "desk64-student";
  return s;
}

}  // namespace dt
