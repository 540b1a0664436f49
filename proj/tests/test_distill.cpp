#include <gtest/gtest.h>

#include <random>

#include "dt/distill.hpp"
#include "dt/synth.hpp"
#include "dt/testing/oracles.hpp"

namespace dt {
namespace {

using testing::random_tensor;

Tensor3 label_map(int h, int w, double sigma, double r = 0, double c = 0) { return gaussian_label(h, w, sigma, r, c).map; }

TEST(CfLayer, DesiredEqualsResponseGivesZero) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor(6, 6, 2, rng), z = random_tensor(6, 6, 2, rng);
  const auto y = label_map(6, 6, 1);
  const auto first = cf_layer(x, z, y, y, 0.1);
  const auto again = cf_layer(x, z, y, first.response, 0.1);
  EXPECT_EQ(again.loss, 0.0);
  EXPECT_EQ(again.grad_target.squared_norm(), 0.0);
  EXPECT_EQ(again.grad_search.squared_norm(), 0.0);
}

TEST(CfLayer, DeltaTargetClosedForm) {
  // x = delta, lambda = 1: A = 2 everywhere and S = Z, so r = (y circularly convolved with z) / 2.
  std::mt19937_64 rng(2);
  Tensor3 x(6, 6, 1);
  x(0, 0, 0) = 1;
  const auto z = random_tensor(6, 6, 1, rng);
  const auto y = label_map(6, 6, 1.0);
  const auto r = cf_layer(x, z, y, y, 1.0).response;
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b) {
      double want = 0;
      for (int p = 0; p < 6; ++p)
        for (int q = 0; q < 6; ++q) want += y(p, q, 0) * z((a - p + 6) % 6, (b - q + 6) % 6, 0);
      EXPECT_NEAR(r(a, b, 0), 0.5 * want, 1e-12);
    }
}

TEST(CfLayer, ResponseMatchesDenseFilter) {
  // Forward path recomputed through the spatial ridge solution.
  std::mt19937_64 rng(3);
  const auto x = random_tensor(6, 6, 2, rng), z = random_tensor(6, 6, 2, rng);
  const auto y = label_map(6, 6, 1.0);
  const auto w = testing::dense_ridge_filter(x, y, 0.3);
  const auto r = cf_layer(x, z, y, y, 0.3).response;
  for (int a = 0; a < 6; ++a)
    for (int b = 0; b < 6; ++b) {
      double want = 0;
      for (int d = 0; d < 2; ++d)
        for (int p = 0; p < 6; ++p)
          for (int q = 0; q < 6; ++q) want += w(p, q, d) * z((p + a) % 6, (q + b) % 6, d);
      EXPECT_NEAR(r(a, b, 0), want, 1e-9);
    }
}

TEST(CfLayer, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor(6, 6, 2, rng), z = random_tensor(6, 6, 2, rng);
    const auto y = label_map(6, 6, 1.0);
    const auto g = label_map(6, 6, 1.0, 1.3, -0.7);
    const auto res = cf_layer(x, z, y, g, 0.05);
    for (int k = 0; k < 50; ++k) {
      const bool on_x = rng() % 2 == 0;
      const std::size_t i = rng() % x.size();
      double& v = on_x ? x.data()[i] : z.data()[i];
      const double numeric = testing::central_difference(v, 1e-4, [&] { return cf_layer(x, z, y, g, 0.05, false).loss; });
      const double analytic = on_x ? res.grad_target.data()[i] : res.grad_search.data()[i];
      EXPECT_LT(testing::gradient_rel_error(analytic, numeric, 1e-8), 1e-4) << (on_x ? "x" : "z") << i;
    }
  }
}

TEST(CfLayer, RejectsZeroLambdaAndMismatch) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor(4, 4, 1, rng);
  const auto y = label_map(4, 4, 1);
  EXPECT_THROW(cf_layer(x, x, y, y, 0.0), Error);
  EXPECT_THROW(cf_layer(x, random_tensor(4, 5, 1, rng), y, y, 0.1), Error);
}

std::array<Tensor3, 3> level_taps(std::mt19937_64& rng) {
  return {random_tensor(8, 8, 2, rng), random_tensor(4, 4, 3, rng), random_tensor(2, 2, 4, rng)};
}

LevelLabels level_labels() {
  LevelLabels L;
  const int sides[3] = {8, 4, 2};
  for (int l = 0; l < 3; ++l) {
    L.train[l] = label_map(sides[l], sides[l], 1.0);
    L.desired[l] = label_map(sides[l], sides[l], 1.0, 0.5, 0.25);
  }
  return L;
}

TEST(MultiLevel, SumOfIndependentLevels) {
  std::mt19937_64 rng(6);
  const auto xt = level_taps(rng), zt = level_taps(rng);
  const auto L = level_labels();
  const auto m = multilevel_tracking_loss(xt, zt, L, 0.01);
  double sum = 0;
  for (int l = 0; l < 3; ++l) sum += cf_layer(xt[l], zt[l], L.train[l], L.desired[l], 0.01).loss;
  EXPECT_NEAR(m.total, sum, 1e-10);
}

TEST(MultiLevel, ZeroAndSingleLevelCases) {
  std::mt19937_64 rng(7);
  const auto xt = level_taps(rng), zt = level_taps(rng);
  LevelLabels L = level_labels();
  for (int l = 0; l < 3; ++l) L.desired[l] = cf_layer(xt[l], zt[l], L.train[l], L.train[l], 0.01).response;
  EXPECT_EQ(multilevel_tracking_loss(xt, zt, L, 0.01).total, 0.0);
  L.desired[2] = label_map(2, 2, 1.0, 1, 1);
  const auto m = multilevel_tracking_loss(xt, zt, L, 0.01);
  EXPECT_EQ(m.total, cf_layer(xt[2], zt[2], L.train[2], L.desired[2], 0.01).loss);
  EXPECT_GT(m.total, 0.0);
}

Adapter1x1 identity_adapter(int c) {
  Adapter1x1 a{c, c, std::vector<double>(static_cast<std::size_t>(c) * c, 0.0)};
  for (int i = 0; i < c; ++i) a.weight[static_cast<std::size_t>(i) * c + i] = 1;
  return a;
}

TEST(Fidelity, IdenticalFeaturesGiveZero) {
  std::mt19937_64 rng(8);
  const auto x = random_tensor(4, 4, 2, rng), z = random_tensor(4, 4, 2, rng);
  const auto f = fidelity_loss(x, z, x, z, identity_adapter(2));
  EXPECT_EQ(f.total(), 0.0);
  EXPECT_EQ(f.grad_x.squared_norm(), 0.0);
  EXPECT_EQ(f.grad_z.squared_norm(), 0.0);
}

TEST(Fidelity, ZeroTeacherQuadratic) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor(4, 4, 2, rng), z = random_tensor(4, 4, 2, rng);
  const Tensor3 zero(4, 4, 2);
  const double batch = 3, n = 32;
  const auto f = fidelity_loss(x, z, zero, zero, identity_adapter(2), batch);
  EXPECT_NEAR(f.total(), (x.squared_norm() + z.squared_norm()) / (batch * n), 1e-14);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(f.grad_x.data()[i], 2 * x.data()[i] / (batch * n), 1e-15);
    EXPECT_NEAR(f.grad_z.data()[i], 2 * z.data()[i] / (batch * n), 1e-15);
  }
}

TEST(Fidelity, RandomMatchesOracleAndFiniteDifferences) {
  std::mt19937_64 rng(10);
  auto sx = random_tensor(4, 4, 2, rng), sz = random_tensor(4, 4, 2, rng);
  const auto tx = random_tensor(4, 4, 3, rng), tz = random_tensor(4, 4, 3, rng);
  Adapter1x1 a{2, 3, {}};
  for (int i = 0; i < 6; ++i) a.weight.push_back(std::uniform_real_distribution<double>(-1, 1)(rng));
  const auto f = fidelity_loss(sx, sz, tx, tz, a);
  double want = 0;
  for (int t = 0; t < 3; ++t)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        const double mx = a.weight[t * 2] * sx(r, c, 0) + a.weight[t * 2 + 1] * sx(r, c, 1) - tx(r, c, t);
        const double mz = a.weight[t * 2] * sz(r, c, 0) + a.weight[t * 2 + 1] * sz(r, c, 1) - tz(r, c, t);
        want += mx * mx + mz * mz;
      }
  EXPECT_NEAR(f.total(), want / 48.0, 1e-10);

  auto loss = [&] { return fidelity_loss(sx, sz, tx, tz, a, 1, false).total(); };
  for (std::size_t i = 0; i < sx.size(); ++i) {
    EXPECT_LT(testing::gradient_rel_error(f.grad_x.data()[i], testing::central_difference(sx.data()[i], 1e-4, loss)), 1e-4);
    EXPECT_LT(testing::gradient_rel_error(f.grad_z.data()[i], testing::central_difference(sz.data()[i], 1e-4, loss)), 1e-4);
  }
  for (std::size_t i = 0; i < a.weight.size(); ++i)
    EXPECT_LT(testing::gradient_rel_error(f.grad_adapter[i], testing::central_difference(a.weight[i], 1e-4, loss)), 1e-4);
  EXPECT_THROW(fidelity_loss(sx, sz, random_tensor(4, 4, 2, rng), tz, a), Error);
}

// Small teacher/student pair for objective-level tests.
struct Fixture {
  Network teacher;
  Network student;
  TrainingConfig cfg;
  std::vector<TrainingPair> pairs;
  std::vector<TeacherTaps> tt;
};

NetworkSpec tiny_teacher() {
  NetworkSpec s = conv5_spec("tiny-teacher", {24, 24, 3}, {16, 16, 16, 16, 16}, 1);
  return s;
}

Fixture make_fixture(int n_pairs, std::uint64_t seed) {
  Fixture f;
  f.teacher = {tiny_teacher(), init_weights(tiny_teacher(), seed)};
  f.cfg.lambda_cf = 1e-2;
  f.cfg.fidelity_weight = 0.5;
  f.cfg.weight_decay = 0.005;
  f.cfg.keep_fraction = 0.25;
  f.cfg.seed = seed;
  f.student = init_student(f.teacher, f.cfg).student;
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> nd(0, 0.01);
  for (auto p : f.student.weights.params())
    for (double& v : p) v += nd(rng);  // make biases and adapter entries non-trivial
  for (int i = 0; i < n_pairs; ++i) {
    TrainingPair p{random_tensor(24, 24, 3, rng), random_tensor(24, 24, 3, rng), 1.5, -2.0, 8, 10};
    f.pairs.push_back(p);
    f.tt.push_back(teacher_taps(f.teacher, p));
  }
  return f;
}

TEST(OfflineLoss, AdditivityAndReductions) {
  auto f = make_fixture(2, 1);
  const auto full = offline_loss(f.pairs, f.student, f.tt, f.cfg);
  const auto& b = full.loss;
  EXPECT_NEAR(b.total, b.tracking + f.cfg.fidelity_weight * b.fidelity + b.decay, 1e-10);
  EXPECT_NEAR(b.tracking, b.tracking_level[0] + b.tracking_level[1] + b.tracking_level[2], 1e-12);
  EXPECT_NEAR(b.decay, f.cfg.weight_decay * f.student.weights.squared_norm(), 1e-12);

  auto cfg0 = f.cfg;
  cfg0.fidelity_weight = 0;
  cfg0.weight_decay = 0;
  const auto red = offline_loss(f.pairs, f.student, f.tt, cfg0);
  double want = 0;
  for (const auto& p : f.pairs) {
    const auto fx = forward_taps(f.student.spec, f.student.weights, p.x);
    const auto fz = forward_taps(f.student.spec, f.student.weights, p.z);
    const auto L = make_level_labels(f.student.spec, p.target_h, p.target_w, p.offset_row, p.offset_col);
    want += multilevel_tracking_loss(fx.taps, fz.taps, L, cfg0.lambda_cf, false).total / 2;
  }
  EXPECT_NEAR(red.loss.total, want, 1e-12);

  auto zero = f.student;
  zero.weights = zero.weights.zeros_like();
  auto cfg1 = f.cfg;
  cfg1.weight_decay = 1;
  EXPECT_EQ(offline_loss(f.pairs, zero, f.tt, cfg1, false).loss.decay, 0.0);
}

TEST(OfflineLoss, GradientMatchesFiniteDifferences) {
  auto f = make_fixture(1, 2);
  const auto lg = offline_loss(f.pairs, f.student, f.tt, f.cfg);
  auto params = f.student.weights.params();
  const auto grads = lg.grads.params();
  std::size_t total = 0;
  for (auto p : params) total += p.size();
  std::mt19937_64 rng(3);
  auto loss = [&] { return offline_loss(f.pairs, f.student, f.tt, f.cfg, false).loss.total; };
  for (int k = 0; k < 30; ++k) {
    std::size_t idx = rng() % total, b = 0;
    while (idx >= params[b].size()) idx -= params[b++].size();
    const double numeric = testing::central_difference(params[b][idx], 1e-4, loss);
    EXPECT_LT(testing::gradient_rel_error(grads[b][idx], numeric, 1e-9), 1e-3)
        << "block " << b << " index " << idx << " analytic " << grads[b][idx] << " numeric " << numeric;
  }
}

TEST(OfflineLoss, SharedWeightsSumBranchGradients) {
  // Gradient of the tracking term equals the sum of per-branch backward passes
  // run separately with the other branch's taps held fixed.
  auto f = make_fixture(1, 3);
  auto cfg = f.cfg;
  cfg.fidelity_weight = 0;
  cfg.weight_decay = 0;
  const auto& p = f.pairs[0];
  const auto lg = offline_loss(f.pairs, f.student, f.tt, cfg);
  const auto fx = forward_taps(f.student.spec, f.student.weights, p.x);
  const auto fz = forward_taps(f.student.spec, f.student.weights, p.z);
  const auto L = make_level_labels(f.student.spec, p.target_h, p.target_w, p.offset_row, p.offset_col);
  const auto m = multilevel_tracking_loss(fx.taps, fz.taps, L, cfg.lambda_cf);
  auto gx = backward(f.student.spec, f.student.weights, fx.cache, m.grad_target).grads;
  const auto gz = backward(f.student.spec, f.student.weights, fz.cache, m.grad_search).grads;
  auto a = gx.params();
  const auto bz = gz.params();
  const auto got = lg.grads.params();
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) EXPECT_NEAR(got[k][i], a[k][i] + bz[k][i], 1e-12);
}

TEST(Sgd, ZeroGradientsAndSchedule) {
  const auto spec = tiny_teacher();
  const auto w = init_weights(spec, 1);
  const auto r = sgd_step(w, w.zeros_like(), w.zeros_like(), 0.9, 0.1);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.weights, w);
  TrainingConfig cfg;
  EXPECT_DOUBLE_EQ(learning_rate(cfg, 0), 1e-2);
  EXPECT_NEAR(learning_rate(cfg, 49), 1e-5, 1e-18);
}

TEST(Sgd, MomentumRecursionTwoSteps) {
  NetworkWeights w;
  w.layers = {ConvParams{{0.5}, {}}};
  NetworkWeights g = w;
  g.layers[0].kernel = {0.25};
  const double lr = 0.125;
  auto s1 = sgd_step(w, g, w.zeros_like(), 0.9, lr);
  auto s2 = sgd_step(s1.weights, g, s1.velocity, 0.9, lr);
  EXPECT_NEAR(s2.weights.layers[0].kernel[0] - 0.5, -lr * 0.25 * (1 + 1.9), 1e-7);
}

TEST(Sgd, NonFiniteGradientRejected) {
  NetworkWeights w;
  w.layers = {ConvParams{{0.5}, {}}};
  NetworkWeights g = w;
  g.layers[0].kernel = {std::nan("")};
  const auto r = sgd_step(w, g, w.zeros_like(), 0.9, 0.1);
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.weights, w);
}

TEST(TrainOffline, ZeroLearningRateKeepsPrunedInit) {
  auto f = make_fixture(3, 4);
  auto cfg = f.cfg;
  cfg.epochs = 1;
  cfg.lr_start = cfg.lr_end = 0;
  const auto run = train_offline(f.pairs, f.teacher, cfg);
  EXPECT_EQ(run.student.weights, init_student(f.teacher, cfg).student.weights);
  ASSERT_EQ(run.history.size(), 2u);
  EXPECT_EQ(run.history[0].total, run.history[1].total);
}

TEST(TrainOffline, DeterministicAndDecreasing) {
  auto f = make_fixture(8, 5);
  auto cfg = f.cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.lr_start = 1e-2;
  cfg.lr_end = 1e-3;
  const auto a = train_offline(f.pairs, f.teacher, cfg);
  const auto b = train_offline(f.pairs, f.teacher, cfg);
  EXPECT_FALSE(a.diverged) << a.message;
  EXPECT_EQ(a.student.weights, b.student.weights);
  EXPECT_LT(a.history.back().total, a.history.front().total);
}

TEST(TrainOffline, LossCsvLayout) {
  std::vector<LossBreakdown> h(2);
  h[1].total = 0.5;
  const auto p = std::filesystem::temp_directory_path() / "dt_loss_test.csv";
  write_loss_csv(p, h);
  std::ifstream in(p);
  std::string header, row0, row1;
  std::getline(in, header);
  std::getline(in, row0);
  std::getline(in, row1);
  EXPECT_EQ(header, "epoch,tracking,fidelity,decay,total");
  EXPECT_EQ(row1, "1,0,0,0,0.5");
}

SequenceRecord flat_sequence(int n, Box box) {
  SequenceRecord s;
  s.name = "flat";
  SynthOptions o;
  auto base = synth_sequence(o, 1, 3);
  for (int i = 0; i < n; ++i) {
    s.frames.push_back(base.frames[0]);
    s.boxes.push_back(box);
  }
  return s;
}

TEST(SamplePair, ZeroGapZeroJitterIsSymmetric) {
  const auto seq = flat_sequence(3, {50, 60, 30, 24});
  const auto p = sample_pair(seq, 1, 0, 0, 0, CropConfig{});
  ASSERT_TRUE(p);
  EXPECT_EQ(p->x, p->z);
  EXPECT_EQ(p->offset_row, 0);
  EXPECT_EQ(p->offset_col, 0);
}

TEST(SamplePair, JitterOffsetInvertsCropTransform) {
  const Box box{50, 60, 32, 32};
  const auto seq = flat_sequence(2, box);
  CropConfig cfg;
  cfg.out_size = 64;  // side = 2 * 32 = 64: scale 1
  const auto p = sample_pair(seq, 0, 1, 5, 3, cfg);
  ASSERT_TRUE(p);
  EXPECT_DOUBLE_EQ(p->offset_row, 5);
  EXPECT_DOUBLE_EQ(p->offset_col, 3);
  // Shifted crop: z(r, c) equals x(r - 5, c - 3) before mean subtraction.
  const auto img = seq.frame(0);
  const auto x = crop_square(img, box.cx(), box.cy(), 64, 64);
  const auto z = crop_square(img, box.cx() - 3, box.cy() - 5, 64, 64);
  for (int r = 10; r < 50; ++r)
    for (int c = 10; c < 50; ++c) ASSERT_NEAR(z(r, c, 0), x(r - 5, c - 3, 0), 1e-12);
  cfg.out_size = 32;  // half scale
  const auto q = sample_pair(seq, 0, 1, 5, 3, cfg);
  EXPECT_DOUBLE_EQ(q->offset_row, 2.5);
  EXPECT_DOUBLE_EQ(q->offset_col, 1.5);
}

TEST(SamplePair, EdgeBoxAndDegenerateBox) {
  const auto seq = flat_sequence(2, {0, 0, 20, 20});
  const auto p = sample_pair(seq, 0, 1, 0, 0, CropConfig{});
  ASSERT_TRUE(p);
  EXPECT_EQ(p->x.height(), 64);
  EXPECT_EQ(p->x.width(), 64);
  // Top-left corner of the crop lies outside the frame: replicated pixel (0,0).
  const auto raw = crop_square(seq.frame(0), 10, 10, 40, 64);
  const auto img = seq.frame(0);
  EXPECT_NEAR(raw(0, 0, 1), img.at(0, 0, 1) / 255.0, 1e-12);
  EXPECT_NEAR(raw(3, 5, 2), img.at(0, 0, 2) / 255.0, 1e-12);
  EXPECT_FALSE(sample_pair(flat_sequence(2, {5, 5, 1, 20}), 0, 1, 0, 0, CropConfig{}));
}

}  // namespace
}  // namespace dt
