#pragma once

// Seeded synthetic tracking sequences: a block-textured target over a smooth
// textured background with random-walk motion, and optionally look-alike
// distractors, transient occluder bars or gradual scale change.
//
// Colour convention used by audits: target and distractor texels have an odd
// red channel; background and occluder pixels have an even one.

#include <array>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "dt/sequence.hpp"

namespace dt {

enum class SynthKind { plain, distractor, occlusion, scale };

inline const char* to_string(SynthKind k) {
  switch (k) {
    case SynthKind::plain: return "plain";
    case SynthKind::distractor: return "distractor";
    case SynthKind::occlusion: return "occlusion";
    case SynthKind::scale: return "scale";
  }
  return "?";
}

struct SynthOptions {
  SynthKind kind = SynthKind::plain;
  int frame_height = 160;
  int frame_width = 160;
  int distractor_count = 2;
};

namespace detail {

struct BlockTexture {
  int blocks = 6;
  std::vector<std::array<std::uint8_t, 3>> cells;  // blocks x blocks colours

  std::array<std::uint8_t, 3> sample(double u, double v) const {
    const int bi = std::clamp(static_cast<int>(v * blocks), 0, blocks - 1);
    const int bj = std::clamp(static_cast<int>(u * blocks), 0, blocks - 1);
    return cells[bi * blocks + bj];
  }
};

inline BlockTexture make_texture(const std::vector<std::array<std::uint8_t, 3>>& palette, std::mt19937_64& rng) {
  BlockTexture t;
  std::uniform_int_distribution<std::size_t> pick(0, palette.size() - 1);
  t.cells.resize(static_cast<std::size_t>(t.blocks) * t.blocks);
  for (auto& c : t.cells) c = palette[pick(rng)];
  return t;
}

inline void draw_texture(Image& img, const Box& b, const BlockTexture& tex) {
  const int x0 = static_cast<int>(b.x), y0 = static_cast<int>(b.y);
  const int w = static_cast<int>(b.w), h = static_cast<int>(b.h);
  for (int r = std::max(0, y0); r < std::min(img.height, y0 + h); ++r)
    for (int c = std::max(0, x0); c < std::min(img.width, x0 + w); ++c) {
      const auto col = tex.sample((c - x0 + 0.5) / w, (r - y0 + 0.5) / h);
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = col[ch];
    }
}

struct Mover {
  double cx, cy, vx, vy;

  void step(std::mt19937_64& rng, double w, double h, int fw, int fh) {
    std::normal_distribution<double> nd(0.0, 0.4);
    vx += nd(rng);
    vy += nd(rng);
    const double speed = std::hypot(vx, vy);
    if (speed > 3.0) {
      vx *= 3.0 / speed;
      vy *= 3.0 / speed;
    }
    cx += vx;
    cy += vy;
    const double m = 4.0;
    if (cx - w / 2 < m) { cx = m + w / 2; vx = std::abs(vx); }
    if (cx + w / 2 > fw - m) { cx = fw - m - w / 2; vx = -std::abs(vx); }
    if (cy - h / 2 < m) { cy = m + h / 2; vy = std::abs(vy); }
    if (cy + h / 2 > fh - m) { cy = fh - m - h / 2; vy = -std::abs(vy); }
  }
};

inline Box pixel_box(double cx, double cy, int w, int h) {
  return {std::round(cx - 0.5 * w), std::round(cy - 0.5 * h), static_cast<double>(w), static_cast<double>(h)};
}

}  // namespace detail

/// One synthetic sequence; identical bytes for identical (options, length, seed).
inline SequenceRecord synth_sequence(const SynthOptions& opt, int length, std::uint64_t seed, std::string name = {}) {
  if (length < 1) throw Error("synth_sequence: length must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const int fh = opt.frame_height, fw = opt.frame_width;

  // Background: two-colour blend driven by a few low-frequency sinusoids.
  std::array<double, 3> bg_a{}, bg_b{};
  for (int ch = 0; ch < 3; ++ch) {
    bg_a[ch] = 60 + 100 * U(rng);
    bg_b[ch] = 60 + 100 * U(rng);
  }
  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> waves(4);
  for (auto& wv : waves) wv = {0.02 + 0.08 * U(rng), 0.02 + 0.08 * U(rng), 6.283 * U(rng), 0.25 + 0.25 * U(rng)};
  Image background(fh, fw);
  for (int r = 0; r < fh; ++r)
    for (int c = 0; c < fw; ++c) {
      double s = 0;
      for (const auto& wv : waves) s += wv.amp * std::sin(wv.fx * c + wv.fy * r + wv.phase);
      const double t = std::clamp(0.5 + 0.5 * s, 0.0, 1.0);
      for (int ch = 0; ch < 3; ++ch) {
        auto v = static_cast<int>(std::lround(bg_a[ch] * (1 - t) + bg_b[ch] * t));
        if (ch == 0) v &= ~1;
        background.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(v, 0, 254));
      }
    }

  std::vector<std::array<std::uint8_t, 3>> palette(5);
  for (auto& p : palette) {
    for (int ch = 0; ch < 3; ++ch) p[ch] = static_cast<std::uint8_t>(std::lround(255 * U(rng)));
    p[0] |= 1;
  }
  const auto target_tex = detail::make_texture(palette, rng);

  const double base_w = 26 + 12 * U(rng), base_h = 26 + 12 * U(rng);
  detail::Mover target{fw * (0.35 + 0.3 * U(rng)), fh * (0.35 + 0.3 * U(rng)), 4 * U(rng) - 2, 4 * U(rng) - 2};

  std::vector<detail::Mover> distractors;
  std::vector<detail::BlockTexture> distractor_tex;
  if (opt.kind == SynthKind::distractor)
    for (int k = 0; k < opt.distractor_count; ++k) {
      distractors.push_back({fw * U(rng), fh * U(rng), 4 * U(rng) - 2, 4 * U(rng) - 2});
      distractor_tex.push_back(detail::make_texture(palette, rng));
    }

  double scale = 1.0;
  double scale_rate = 0;
  if (opt.kind == SynthKind::scale) scale_rate = (U(rng) < 0.5 ? -1 : 1) * (0.004 + 0.005 * U(rng));

  const int occ_period = 16, occ_duration = 8;
  const int occ_phase = static_cast<int>(4 + 6 * U(rng));
  std::array<std::uint8_t, 3> occ_colour{};
  for (int ch = 0; ch < 3; ++ch) occ_colour[ch] = static_cast<std::uint8_t>(std::lround(40 + 170 * U(rng)));
  occ_colour[0] &= static_cast<std::uint8_t>(~1);

  SequenceRecord seq;
  seq.name = name.empty() ? std::string(to_string(opt.kind)) + "-" + std::to_string(seed) : std::move(name);
  for (int f = 0; f < length; ++f) {
    if (f > 0) {
      if (scale_rate != 0) {
        scale *= 1 + scale_rate;
        if (scale > 1.6 || scale < 0.65) scale_rate = -scale_rate;
      }
      target.step(rng, base_w * scale, base_h * scale, fw, fh);
    }
    const int tw = std::max(4, static_cast<int>(std::lround(base_w * scale)));
    const int th = std::max(4, static_cast<int>(std::lround(base_h * scale)));
    const Box gt = detail::pixel_box(target.cx, target.cy, tw, th);

    Image img = background;
    for (std::size_t k = 0; k < distractors.size(); ++k) {
      auto& d = distractors[k];
      if (f > 0) d.step(rng, tw, th, fw, fh);
      // Push away from the target until the boxes are disjoint with a margin.
      for (int it = 0; it < 64; ++it) {
        const Box db = detail::pixel_box(d.cx, d.cy, tw, th);
        const Box grown{gt.x - 2, gt.y - 2, gt.w + 4, gt.h + 4};
        if (intersection_area(db, grown) == 0) break;
        double dx = d.cx - gt.cx(), dy = d.cy - gt.cy();
        const double n = std::hypot(dx, dy);
        if (n < 1e-6) { dx = 1; dy = 0; } else { dx /= n; dy /= n; }
        d.cx = std::clamp(d.cx + 2 * dx, tw / 2.0, fw - tw / 2.0);
        d.cy = std::clamp(d.cy + 2 * dy, th / 2.0, fh - th / 2.0);
        if (it == 63) { d.cx = gt.cx() < fw / 2.0 ? fw - tw / 2.0 : tw / 2.0; }
      }
      const Box db = detail::pixel_box(d.cx, d.cy, tw, th);
      const Box grown{gt.x - 2, gt.y - 2, gt.w + 4, gt.h + 4};
      if (intersection_area(db, grown) == 0) detail::draw_texture(img, db, distractor_tex[k]);
    }
    detail::draw_texture(img, gt, target_tex);

    if (opt.kind == SynthKind::occlusion) {
      const int t = (f - occ_phase) % occ_period;
      if (f >= occ_phase && t < occ_duration) {
        const int bar_w = std::max(3, static_cast<int>(0.35 * tw));
        const double frac = (t + 0.5) / occ_duration;
        const int bx = static_cast<int>(gt.x - bar_w + frac * (gt.w + bar_w));
        for (int r = 0; r < fh; ++r)
          for (int c = std::max(0, bx); c < std::min(fw, bx + bar_w); ++c)
            for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = occ_colour[ch];
      }
    }
    seq.frames.push_back(std::move(img));
    seq.boxes.push_back(gt);
  }
  return seq;
}

/// `count` sequences of the given kind, seeds derived from `seed`.
inline std::vector<SequenceRecord> synth_sequences(int count, int length, std::uint64_t seed,
                                                   const SynthOptions& opt = {}) {
  if (count < 1) throw Error("synth_sequences: count must be >= 1");
  std::vector<SequenceRecord> out;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = seed * 1000003ULL + static_cast<std::uint64_t>(i) * 7919ULL + 17;
    char name[64];
    std::snprintf(name, sizeof name, "%s-%02d", to_string(opt.kind), i);
    out.push_back(synth_sequence(opt, length, s, name));
  }
  return out;
}

/// Benchmark suite: 5 plain, 5 distractor, 5 occlusion and 5 scale-change sequences.
inline std::vector<SequenceRecord> synthetic_benchmark(std::uint64_t seed, int per_kind = 5, int length = 50) {
  std::vector<SequenceRecord> all;
  int k = 0;
  for (auto kind : {SynthKind::plain, SynthKind::distractor, SynthKind::occlusion, SynthKind::scale}) {
    SynthOptions opt;
    opt.kind = kind;
    auto part = synth_sequences(per_kind, length, seed + 101 * static_cast<std::uint64_t>(++k), opt);
    for (auto& s : part) all.push_back(std::move(s));
  }
  return all;
}

}  // namespace dt
