#include <gtest/gtest.h>

#include <random>

#include "dt/adapt.hpp"
#include "dt/synth.hpp"
#include "dt/testing/oracles.hpp"

namespace dt {
namespace {

struct Nets {
  Network teacher;
  Network student;
};

Nets tiny_nets(std::uint64_t seed) {
  const auto spec = conv5_spec("tiny-teacher", {24, 24, 3}, {16, 16, 16, 16, 16}, 1);
  Nets n;
  n.teacher = {spec, init_weights(spec, seed)};
  TrainingConfig cfg;
  cfg.keep_fraction = 0.25;
  cfg.seed = seed;
  n.student = init_student(n.teacher, cfg).student;
  return n;
}

Image noise_frame(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Image img(h, w);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng() % 256);
  return img;
}

const CropGeometry kTiny{2.5, 24};

TEST(CropSamples, IdentityAugmentationGivesPlainCrop) {
  const auto frame = noise_frame(80, 90, 1);
  const Box box{30, 25, 14, 18};
  const auto b = crop_samples(frame, box, 3, 0, AugmentSpec::none(), 7, kTiny);
  ASSERT_EQ(b.positives.size(), 3u);
  for (const auto& p : b.positives) {
    EXPECT_EQ(p.patch.data(), b.x.data());
    EXPECT_EQ(p.offset_row, 0.0);
    EXPECT_EQ(p.offset_col, 0.0);
  }
  EXPECT_DOUBLE_EQ(b.target_h, 18 * 24 / crop_side(box, 2.5));
}

TEST(CropSamples, FlipOnlyMirrorsTheCrop) {
  const auto frame = noise_frame(80, 90, 2);
  const Box box{30, 25, 14, 18};
  auto aug = AugmentSpec::none();
  aug.flip_prob = 1.0;
  const auto b = crop_samples(frame, box, 1, 0, aug, 3, kTiny);
  const auto want = flip_horizontal(b.x);
  const auto& got = b.positives[0].patch;
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
}

TEST(CropSamples, ShiftedOffsetsPointAtTheTarget) {
  // A single bright pixel at the box centre must appear at patch centre + offset.
  Image frame(120, 120);
  const Box box{50, 50, 20, 20};
  frame.at(60, 60, 0) = frame.at(60, 60, 1) = frame.at(60, 60, 2) = 255;
  auto aug = AugmentSpec::none();
  aug.max_shift = 0.2;
  aug.flip_prob = 0.5;
  const CropGeometry geo{2.5, 50};  // side 50 px: one input pixel per frame pixel
  const auto b = crop_samples(frame, box, 40, 0, aug, 11, geo);
  for (const auto& p : b.positives) {
    int br = 0, bc = 0;
    for (int r = 0; r < 50; ++r)
      for (int c = 0; c < 50; ++c)
        if (p.patch(r, c, 0) > p.patch(br, bc, 0)) br = r, bc = c;
    // Pixel (60,60) has its centre at 60.5, the crop centre sits at 60 + shift.
    EXPECT_NEAR(br + 0.5 - 25.0, p.offset_row + 0.5, 1.0);
    // A flip mirrors the marker's half-pixel offset as well.
    const double col = p.offset_col;
    EXPECT_TRUE(std::abs(bc + 0.5 - 25.0 - (col + 0.5)) <= 1.0 || std::abs(bc + 0.5 - 25.0 - (col - 0.5)) <= 1.0)
        << bc << " vs " << col;
  }
}

TEST(CropSamples, ShiftKeepsTargetInsideCrop) {
  const auto frame = noise_frame(100, 100, 3);
  const Box box{35, 30, 26, 30};
  AugmentSpec aug;
  aug.max_shift = 0.45;
  const auto b = crop_samples(frame, box, 200, 0, aug, 5, kTiny);
  const double half = 12.0;
  for (const auto& p : b.positives) {
    EXPECT_LE(std::abs(p.offset_row) + b.target_h / 2, half + 1e-9);
    EXPECT_LE(std::abs(p.offset_col) + b.target_w / 2, half + 1e-9);
  }
}

TEST(CropSamples, NegativesNeverOverlapTargetExhaustive) {
  const auto frame = noise_frame(64, 64, 4);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> pos(0, 50), size(3, 12);
  std::size_t emitted = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Box box{pos(rng), pos(rng), size(rng), size(rng)};
    const auto b = crop_samples(frame, box, 0, 8, AugmentSpec::none(), seed, {2.5, 4});
    ASSERT_EQ(b.negatives.size(), b.negative_regions.size());
    for (const auto& r : b.negative_regions) EXPECT_EQ(intersection_area(r, box), 0.0) << "seed " << seed;
    emitted += b.negatives.size();
  }
  EXPECT_GT(emitted, 4000u);
}

TEST(CropSamples, ReportsWhenNoNegativeFits) {
  const auto frame = noise_frame(40, 40, 5);
  const auto b = crop_samples(frame, {5, 5, 30, 30}, 1, 32, AugmentSpec::none(), 1, kTiny);
  EXPECT_TRUE(b.negatives.empty());
  EXPECT_EQ(b.requested_negatives, 32);
  EXPECT_FALSE(b.warning.empty());
}

TEST(CropSamples, DeterministicAndValidated) {
  const auto frame = noise_frame(80, 80, 6);
  const Box box{30, 30, 12, 12};
  const auto a = crop_samples(frame, box, 4, 4, {}, 21, kTiny);
  const auto b = crop_samples(frame, box, 4, 4, {}, 21, kTiny);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(a.positives[k].patch.data(), b.positives[k].patch.data());
    EXPECT_EQ(a.negatives[k].data(), b.negatives[k].data());
  }
  EXPECT_THROW(crop_samples(frame, {1, 1, 0, 5}, 1, 1, {}, 1, kTiny), Error);
  AugmentSpec bad;
  bad.gain_max = 2.0;
  EXPECT_THROW(crop_samples(frame, box, 1, 1, bad, 1, kTiny), Error);
}

// ---------------------------------------------------------------------------

SampleBatch random_batch(int n_pos, int n_neg, std::uint64_t seed) {
  const auto frame = noise_frame(90, 90, seed);
  return crop_samples(frame, {35, 38, 16, 14}, n_pos, n_neg, AugmentSpec{}, seed, kTiny);
}

TEST(OnlineLoss, MatchesPerSampleRecomputation) {
  const auto n = tiny_nets(1);
  const auto batch = random_batch(2, 2, 3);
  OnlineLossConfig cfg;
  cfg.lambda_cf = 1e-2;
  cfg.fidelity_weight = 0;
  cfg.weight_decay = 0;
  const auto got = online_loss(batch, n.student, n.teacher, cfg, false);

  const auto fx = forward_taps(n.student.spec, n.student.weights, batch.x);
  double want = 0, energy = 0;
  for (int k = 0; k < 4; ++k) {
    const bool pos = k < 2;
    const Tensor3& z = pos ? batch.positives[k].patch : batch.negatives[k - 2];
    const auto fz = forward_taps(n.student.spec, n.student.weights, z);
    auto labels = make_level_labels(n.student.spec, batch.target_h, batch.target_w, pos ? batch.positives[k].offset_row : 0,
                                    pos ? batch.positives[k].offset_col : 0);
    for (int l = 0; l < 3; ++l) {
      const Tensor3 desired = pos ? labels.desired[l] : Tensor3(labels.desired[l].height(), labels.desired[l].width(), 1);
      const double v = cf_layer(fx.taps[l], fz.taps[l], labels.train[l], desired, cfg.lambda_cf, false).loss;
      want += v / 4;
      if (!pos) energy += v;
    }
  }
  EXPECT_NEAR(got.value.loss.total, want, 1e-10);
  EXPECT_NEAR(got.negative_energy, energy, 1e-10);
  EXPECT_NEAR(negative_energy(batch, n.student, cfg.lambda_cf), energy, 1e-10);
}

TEST(OnlineLoss, NoNegativesReducesToOfflineLoss) {
  const auto n = tiny_nets(2);
  const auto frame = noise_frame(90, 90, 8);
  const auto batch = crop_samples(frame, {35, 38, 16, 14}, 1, 0, AugmentSpec::none(), 1, kTiny);
  OnlineLossConfig cfg;
  cfg.lambda_cf = 1e-2;
  cfg.fidelity_weight = 0.3;
  const auto online = online_loss(batch, n.student, n.teacher, cfg, true);

  const auto& p = batch.positives[0];
  const std::vector<TrainingPair> pair{{batch.x, p.patch, p.offset_row, p.offset_col, batch.target_h, batch.target_w}};
  const std::vector<TeacherTaps> taps{teacher_taps(n.teacher, pair[0])};
  const auto offline = offline_loss(pair, n.student, taps, cfg.as_training(), true);
  EXPECT_NEAR(online.value.loss.total, offline.loss.total, 1e-10);
  EXPECT_NEAR(online.value.loss.fidelity, offline.loss.fidelity, 1e-10);
  const auto a = online.value.grads.params(), b = offline.grads.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k) EXPECT_NEAR(a[i][k], b[i][k], 1e-10 + 1e-8 * std::abs(b[i][k]));
}

TEST(OnlineLoss, GradientMatchesFiniteDifferences) {
  auto n = tiny_nets(3);
  const auto batch = random_batch(2, 2, 4);
  OnlineLossConfig cfg;
  cfg.lambda_cf = 1e-2;
  cfg.fidelity_weight = 0.5;
  const auto lg = online_loss(batch, n.student, n.teacher, cfg, true);
  auto params = n.student.weights.params();
  const auto grads = lg.value.grads.params();
  std::size_t total = 0;
  for (auto p : params) total += p.size();
  std::mt19937_64 rng(5);
  auto loss = [&] { return online_loss(batch, n.student, n.teacher, cfg, false).value.loss.total; };
  for (int k = 0; k < 20; ++k) {
    std::size_t idx = rng() % total, b = 0;
    while (idx >= params[b].size()) idx -= params[b++].size();
    const double numeric = testing::central_difference(params[b][idx], 1e-4, loss);
    EXPECT_LT(testing::gradient_rel_error(grads[b][idx], numeric, 1e-9), 1e-3) << "block " << b << " index " << idx;
  }
}

TEST(OnlineLoss, SilentNegativesContributeNothing) {
  auto n = tiny_nets(4);
  for (auto& l : n.student.weights.layers) std::fill(l.bias.begin(), l.bias.end(), 0.0);
  auto batch = random_batch(1, 2, 5);
  for (auto& t : batch.negatives) t = Tensor3(t.height(), t.width(), t.channels());
  EXPECT_EQ(negative_energy(batch, n.student, 1e-2), 0.0);
}

// ---------------------------------------------------------------------------

TEST(AdaptOnline, ZeroIterationsAndDeterminism) {
  const auto n = tiny_nets(5);
  const auto seq = synth_sequence({}, 1, 3);
  AdaptConfig cfg;
  cfg.geometry = kTiny;
  cfg.n_pos = cfg.n_neg = 4;
  cfg.iterations = 0;
  const auto before = n.student.weights;
  const auto r0 = adapt_online(n.student, n.teacher, seq.frames[0], seq.boxes[0], cfg);
  EXPECT_EQ(r0.network.weights, n.student.weights);
  cfg.iterations = 3;
  const auto a = adapt_online(n.student, n.teacher, seq.frames[0], seq.boxes[0], cfg);
  const auto b = adapt_online(n.student, n.teacher, seq.frames[0], seq.boxes[0], cfg);
  EXPECT_TRUE(a.adapted);
  EXPECT_EQ(a.history.size(), 3u);
  EXPECT_EQ(a.network.weights, b.network.weights);
  EXPECT_NE(a.network.weights, n.student.weights);
  EXPECT_EQ(n.student.weights, before);  // input untouched
}

TEST(AdaptOnline, LowersNegativeEnergyNextToDistractors) {
  const auto n = tiny_nets(6);
  SynthOptions opt;
  opt.kind = SynthKind::distractor;
  const auto seq = synth_sequence(opt, 1, 12);
  AdaptConfig cfg;
  cfg.geometry = kTiny;
  cfg.n_pos = cfg.n_neg = 8;
  const auto probe = crop_samples(seq.frames[0], seq.boxes[0], 8, 8, AugmentSpec::none(), 0, kTiny);
  const double pre = negative_energy(probe, n.student, cfg.loss.lambda_cf);
  const auto r = adapt_online(n.student, n.teacher, seq.frames[0], seq.boxes[0], cfg);
  ASSERT_TRUE(r.adapted) << r.warning;
  EXPECT_LT(negative_energy(probe, r.network, cfg.loss.lambda_cf), pre);
}

TEST(AdaptOnline, DivergenceKeepsOriginal) {
  const auto n = tiny_nets(7);
  const auto seq = synth_sequence({}, 1, 4);
  AdaptConfig cfg;
  cfg.geometry = kTiny;
  cfg.n_pos = cfg.n_neg = 2;
  cfg.lr = 1e300;
  cfg.iterations = 4;
  const auto r = adapt_online(n.student, n.teacher, seq.frames[0], seq.boxes[0], cfg);
  EXPECT_FALSE(r.adapted);
  EXPECT_FALSE(r.warning.empty());
  EXPECT_EQ(r.network.weights, n.student.weights);
}

}  // namespace
}  // namespace dt
