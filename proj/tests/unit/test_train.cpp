#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "mlgcn/checkpoint.hpp"
#include "mlgcn/error.hpp"
#include "mlgcn/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace mlgcn;

namespace {

template <class F>
void expect_error(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

ModelConfig toy_config() {
  auto cfg = preset_lighter();
  cfg.n_points = 128;
  cfg.num_classes = 2;
  return cfg;
}

std::string checkpoint_bytes(const Model<float>& m) {
  std::ostringstream out;
  write_checkpoint(out, m);
  return out.str();
}

template <class T>
std::vector<T> flat_grads(const Model<T>& m) {
  std::vector<T> g;
  m.for_each_layer([&](const DenseLayer<T>& l) {
    g.insert(g.end(), l.grad_weight.values().begin(), l.grad_weight.values().end());
    g.insert(g.end(), l.grad_bias.begin(), l.grad_bias.end());
  });
  return g;
}

template <class T>
std::vector<T> flat_params(const Model<T>& m) {
  std::vector<T> p;
  m.for_each_layer([&](const DenseLayer<T>& l) {
    p.insert(p.end(), l.weight.values().begin(), l.weight.values().end());
    p.insert(p.end(), l.bias.begin(), l.bias.end());
  });
  return p;
}

}  // namespace

// ---- losses ----------------------------------------------------------------

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 10u, 40u}) {
    std::vector<double> logits(c, 0.37);
    auto r = cross_entropy_loss<double>(logits, 1);
    EXPECT_NEAR(r.loss, std::log(static_cast<double>(c)), 1e-12);
    EXPECT_NEAR(r.grad[1], 1.0 / c - 1.0, 1e-12);
    EXPECT_NEAR(r.grad[0], 1.0 / c, 1e-12);
  }
}

TEST(CrossEntropy, Saturation) {
  std::vector<double> logits(5, 0.0);
  logits[3] = 1e6;
  auto r = cross_entropy_loss<double>(logits, 3);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(r.loss));
  std::vector<float> wrong(5, 0.0f);
  wrong[0] = 1e6f;
  auto w = cross_entropy_loss<float>(wrong, 3);
  EXPECT_NEAR(w.loss, 1e6f, 1.0f);
}

TEST(CrossEntropy, FiniteDifferences) {
  auto logits = oracle::random_rows(1, 7, 3, -3, 3)[0];
  auto r = cross_entropy_loss<double>(logits, 4);
  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto up = logits, down = logits;
    up[i] += h;
    down[i] -= h;
    const double fd = (cross_entropy_loss<double>(up, 4).loss - cross_entropy_loss<double>(down, 4).loss) / (2 * h);
    EXPECT_NEAR(r.grad[i], fd, 1e-7);
  }
}

TEST(CrossEntropy, LabelOutOfRange) {
  std::vector<double> logits(3, 0.0);
  expect_error(ErrorCode::kLabelOutOfRange, [&] { cross_entropy_loss<double>(logits, 3); });
}

TEST(SegmentationLoss, AveragesPerPoint) {
  auto rows = oracle::random_rows(4, 3, 5);
  Matrix<double> logits(4, 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 3; ++c) logits(i, c) = rows[i][c];
  std::vector<int> labels{0, 2, 1, 1};
  auto [loss, grad] = segmentation_loss<double>(logits, labels);
  double want = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    auto r = cross_entropy_loss<double>(rows[i], labels[i]);
    want += r.loss / 4;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(grad(i, c), r.grad[c] / 4, 1e-15);
  }
  EXPECT_NEAR(loss, want, 1e-15);
  std::vector<int> short_labels{0, 1};
  expect_error(ErrorCode::kLabelLengthMismatch, [&] { segmentation_loss<double>(logits, short_labels); });
}

// ---- Adam ------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<double> p{1.0, -2.0, 0.5}, g(3, 0.0);
  AdamState<double> s;
  for (int i = 0; i < 10; ++i) adam_step<double>(s, p, g, 0.01);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, FirstStepMagnitudeIsLr) {
  std::vector<double> p{1.0, 1.0, 1.0}, g{0.003, -40.0, 7.0};
  AdamState<double> s;
  adam_step<double>(s, p, g, 0.01);
  EXPECT_NEAR(p[0], 1.0 - 0.01, 1e-6);
  EXPECT_NEAR(p[1], 1.0 + 0.01, 1e-6);
  EXPECT_NEAR(p[2], 1.0 - 0.01, 1e-6);
}

TEST(Adam, QuadraticBowlMatchesScalarRecurrence) {
  // oracle: the textbook recurrence on f(w) = w^2
  double w_ref = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 500; ++t) {
    const double g = 2 * w_ref;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w_ref -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
  }
  std::vector<double> w{1.0};
  AdamState<double> s;
  for (int t = 0; t < 500; ++t) {
    std::vector<double> g{2 * w[0]};
    adam_step<double>(s, w, g, 0.01);
  }
  EXPECT_EQ(s.steps, 500u);
  EXPECT_NEAR(w[0], w_ref, 1e-12);
  EXPECT_LT(std::abs(w[0]), 1e-2);
}

TEST(Adam, ShapeMismatch) {
  std::vector<double> p(3, 0.0), g(2, 0.0);
  AdamState<double> s;
  expect_error(ErrorCode::kShapeMismatch, [&] { adam_step<double>(s, p, g, 0.01); });
  std::vector<double> g3(3, 1.0), p4(4, 0.0), g4(4, 1.0);
  adam_step<double>(s, p, g3, 0.01);
  expect_error(ErrorCode::kShapeMismatch, [&] { adam_step<double>(s, p4, g4, 0.01); });
}

// ---- schedule --------------------------------------------------------------

TEST(LrSchedule, Values) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_schedule(cfg, 1), 0.001);
  EXPECT_DOUBLE_EQ(lr_schedule(cfg, 20), 0.001);
  EXPECT_NEAR(lr_schedule(cfg, 21), 0.000997, 1e-15);
  EXPECT_NEAR(lr_schedule(cfg, 120), 0.001 * std::pow(0.997, 100), 1e-15);
  EXPECT_NEAR(lr_schedule(cfg, 120), 0.000741, 1e-6);
}

TEST(LrSchedule, NonIncreasingAndContinuous) {
  TrainConfig cfg;
  for (std::size_t e = 1; e < 400; ++e) EXPECT_LE(lr_schedule(cfg, e + 1), lr_schedule(cfg, e));
  EXPECT_LE(lr_schedule(cfg, 20) - lr_schedule(cfg, 21), 0.003 * cfg.lr + 1e-15);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  expect_error(ErrorCode::kInvalidConfig, [&] { cfg.validate(); });
  cfg = {};
  cfg.decay = 0.0;
  expect_error(ErrorCode::kInvalidConfig, [&] { cfg.validate(); });
  cfg.decay = 1.5;
  expect_error(ErrorCode::kInvalidConfig, [&] { cfg.validate(); });
  cfg = {};
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.batch_size, 128u);
}

// ---- metrics ---------------------------------------------------------------

TEST(Accuracy, PerfectAndConstantPredictors) {
  std::vector<int> labels{0, 1, 0, 1, 1, 0};
  std::vector<std::size_t> perfect(labels.begin(), labels.end());
  auto r = classification_report(perfect, labels, 2);
  EXPECT_EQ(r.overall_accuracy, 1.0);
  EXPECT_EQ(r.mean_class_accuracy, 1.0);

  std::vector<std::size_t> constant(6, 1);
  auto c = classification_report(constant, labels, 2);
  EXPECT_EQ(c.overall_accuracy, 0.5);
  EXPECT_EQ(c.confusion[0][1], 3u);
  EXPECT_EQ(c.confusion[1][1], 3u);
  std::size_t total = 0;
  for (const auto& row : c.confusion) total = std::accumulate(row.begin(), row.end(), total);
  EXPECT_EQ(total, 6u);
}

TEST(Accuracy, HandFixture) {
  // sample 1 ties between classes 0 and 1 and resolves to 0
  const std::vector<std::vector<double>> logits{{0.1, 2.0, -1.0}, {3.0, 3.0, 0.0}, {0.0, 0.0, 5.0}};
  const std::vector<int> labels{1, 1, 2};
  std::vector<std::size_t> pred;
  for (const auto& l : logits) pred.push_back(argmax<double>(l));
  EXPECT_EQ(pred, (std::vector<std::size_t>{1, 0, 2}));
  auto r = classification_report(pred, labels, 3);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[1], 0.5);
  EXPECT_DOUBLE_EQ(r.per_class_accuracy[2], 1.0);
  EXPECT_EQ(r.class_support[0], 0u);
  EXPECT_DOUBLE_EQ(r.mean_class_accuracy, 0.75);  // class 0 has no support
}

TEST(Iou, FourPointFixture) {
  std::vector<int> truth{0, 0, 1, 1}, pred{0, 1, 1, 1}, parts{0, 1};
  // part 0: |{0}| / |{0,1}| = 1/2; part 1: |{2,3}| / |{1,2,3}| = 2/3
  EXPECT_DOUBLE_EQ(shape_iou(pred, truth, parts), 7.0 / 12.0);
}

TEST(Iou, IdentityAndComplement) {
  std::vector<int> truth{0, 1, 1, 0, 1}, parts{0, 1};
  EXPECT_EQ(shape_iou(truth, truth, parts), 1.0);
  std::vector<int> comp{1, 0, 0, 1, 0};
  EXPECT_EQ(shape_iou(comp, truth, parts), 0.0);
}

TEST(Iou, AbsentPartScoresOne) {
  std::vector<int> truth{0, 0, 1}, pred{0, 0, 1}, parts{0, 1, 2};
  EXPECT_EQ(shape_iou(pred, truth, parts), 1.0);
  std::vector<int> pred2{0, 2, 1};
  EXPECT_DOUBLE_EQ(shape_iou(pred2, truth, parts), (0.5 + 1.0 + 0.0) / 3.0);
}

TEST(Iou, PointOrderInvariant) {
  std::vector<int> truth{0, 0, 1, 2, 2, 1}, pred{0, 1, 1, 2, 0, 1}, parts{0, 1, 2};
  std::vector<int> perm{5, 2, 0, 4, 1, 3}, pt, pp;
  for (int i : perm) {
    pt.push_back(truth[i]);
    pp.push_back(pred[i]);
  }
  EXPECT_EQ(shape_iou(pred, truth, parts), shape_iou(pp, pt, parts));
}

TEST(SegmentationReport, ClassAndInstanceMeans) {
  std::vector<SegmentedShape> shapes{
      {0, {0, 1}, {0, 1}},        // 1
      {0, {0, 1, 1, 1}, {0, 0, 1, 1}},  // 7/12
      {1, {2, 2}, {3, 3}},        // 0
  };
  std::map<int, std::vector<int>> parts{{0, {0, 1}}, {1, {2, 3}}};
  auto r = segmentation_report(shapes, parts);
  EXPECT_DOUBLE_EQ(r.instance_miou, (1.0 + 7.0 / 12.0 + 0.0) / 3.0);
  EXPECT_DOUBLE_EQ(r.class_miou, ((1.0 + 7.0 / 12.0) / 2.0 + 0.0) / 2.0);
  EXPECT_GE(r.class_miou, 0.0);
  EXPECT_LE(r.instance_miou, 1.0);
}

TEST(EvaluateSegmentation, FourPointFixture) {
  auto model = fixture::threshold_segmenter();
  auto sample = fixture::four_point_shape();
  auto logits = segment(model, sample.cloud);
  ASSERT_EQ(logits.rows(), 4u);
  auto r = evaluate_segmentation(model, std::vector<LabeledSample>{sample});
  EXPECT_EQ(r.instance_miou, 7.0 / 12.0);
  EXPECT_EQ(r.class_miou, 7.0 / 12.0);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.75);
}

TEST(EvaluateSegmentation, RestrictsToCategoryParts) {
  auto model = fixture::threshold_segmenter();
  auto sample = fixture::four_point_shape();
  // category 0 owns only part 1, so every point must be labeled 1
  auto r = evaluate_segmentation(model, std::vector<LabeledSample>{sample}, 1, {{0, {1}}});
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.5);
}

TEST(CategoryPartSets, CollectsPartsPerClass) {
  std::vector<LabeledSample> s{{PointCloud({{0, 0, 0}, {1, 0, 0}}), 0, std::vector<int>{0, 1}},
                               {PointCloud({{0, 0, 0}, {1, 0, 0}}), 1, std::vector<int>{3, 2}},
                               {PointCloud({{0, 0, 0}, {1, 0, 0}}), 0, std::vector<int>{1, 1}}};
  auto parts = category_part_sets(s);
  EXPECT_EQ(parts[0], (std::vector<int>{0, 1}));
  EXPECT_EQ(parts[1], (std::vector<int>{2, 3}));
}

// ---- training loop ---------------------------------------------------------

TEST(TrainLoop, ZeroEpochsLeavesModelUnchanged) {
  Model<float> m(toy_config(), 1);
  const auto before = checkpoint_bytes(m);
  TrainConfig cfg;
  cfg.epochs = 0;
  auto logs = train_loop(m, oracle::sphere_cube_set(2, 128, 1), cfg);
  EXPECT_TRUE(logs.empty());
  EXPECT_EQ(checkpoint_bytes(m), before);
}

TEST(TrainLoop, Errors) {
  Model<float> m(toy_config(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  expect_error(ErrorCode::kEmptyDataset, [&] { train_loop(m, std::vector<LabeledSample>{}, cfg); });
  auto data = oracle::sphere_cube_set(1, 128, 1);
  data[1].class_label = 2;
  expect_error(ErrorCode::kLabelOutOfRange, [&] { train_loop(m, data, cfg); });
  data[1].class_label = -1;
  expect_error(ErrorCode::kLabelOutOfRange, [&] { train_loop(m, data, cfg); });
  data[1].class_label = 1;
  cfg.task = Task::kSegmentation;
  expect_error(ErrorCode::kHeadNotConfigured, [&] { train_loop(m, data, cfg); });
}

TEST(TrainLoop, ToySetReachesFullAccuracy) {
  Model<float> m(toy_config(), 0);
  auto data = oracle::sphere_cube_set(4, 128, 100);
  TrainConfig cfg;
  cfg.epochs = 50;
  auto logs = train_loop(m, data, cfg);
  ASSERT_EQ(logs.size(), 50u);
  EXPECT_EQ(evaluate_classification(m, data).overall_accuracy, 1.0);
  EXPECT_LT(logs.back().train_loss, logs.front().train_loss);
}

TEST(TrainLoop, ToySetLossDecreasesAfterWarmup) {
  Model<float> m(toy_config(), 0);
  auto data = oracle::sphere_cube_set(4, 128, 100);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 3e-4;
  cfg.batch_size = 4;
  cfg.augment = false;
  std::vector<double> loss;
  train_loop<float>(m, data, cfg, nullptr, [&](const EpochLog&, const Model<float>& trained) {
    Model<float> probe = trained;
    probe.zero_grad();
    loss.push_back(accumulate_gradients(probe, std::span<const LabeledSample>(data), Task::kClassification) /
                   data.size());
  });
  ASSERT_EQ(loss.size(), 50u);
  for (std::size_t e = 5; e < loss.size(); ++e) EXPECT_LE(loss[e], loss[e - 1]) << "epoch " << e + 1;
}

TEST(TrainLoop, DeterministicForSeed) {
  auto data = oracle::sphere_cube_set(3, 128, 7);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 42;
  auto run = [&](std::size_t threads, std::uint64_t seed) {
    Model<float> m(toy_config(), 5);
    auto c = cfg;
    c.threads = threads;
    c.seed = seed;
    train_loop(m, data, c);
    return checkpoint_bytes(m);
  };
  EXPECT_EQ(run(1, 42), run(1, 42));
  EXPECT_EQ(run(3, 42), run(3, 42));
  EXPECT_NE(run(1, 42), run(1, 43));
}

TEST(TrainLoop, ThreadedGradientsMatchSequential) {
  auto data = oracle::sphere_cube_set(3, 64, 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = data.size();
  cfg.augment = false;
  auto cfgm = toy_config();
  cfgm.n_points = 64;
  Model<double> seq(cfgm, 2), par(cfgm, 2);
  train_loop(seq, data, cfg);
  cfg.threads = 4;
  train_loop(par, data, cfg);
  auto a = flat_grads(seq), b = flat_grads(par);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  auto pa = flat_params(seq), pb = flat_params(par);
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-9);
}

// After one full-batch epoch the model still holds the batch gradient it
// stepped with; it must be the mean of the per-sample gradients at the
// initial weights.
TEST(TrainLoop, BatchGradientIsMeanOfSampleGradients) {
  auto data = oracle::sphere_cube_set(3, 64, 9);
  auto cfgm = toy_config();
  cfgm.n_points = 64;
  Model<double> init(cfgm, 3);

  std::vector<double> mean;
  for (const auto& s : data) {
    Model<double> probe = init;
    probe.zero_grad();
    accumulate_gradients(probe, std::span<const LabeledSample>(&s, 1), Task::kClassification);
    auto g = flat_grads(probe);
    if (mean.empty()) mean.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i] / data.size();
  }

  Model<double> trained = init;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = data.size();
  cfg.augment = false;
  train_loop(trained, data, cfg);
  auto batch = flat_grads(trained);
  ASSERT_EQ(batch.size(), mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(batch[i], mean[i], 1e-9);
}

TEST(TrainLoop, PartialLastBatchAndLogs) {
  Model<float> m(toy_config(), 1);
  auto data = oracle::sphere_cube_set(3, 128, 2);  // 6 samples
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  std::size_t calls = 0;
  auto logs = train_loop<float>(m, data, cfg, &data, [&](const EpochLog& l, const Model<float>&) {
    ++calls;
    EXPECT_EQ(l.epoch, calls);
  });
  EXPECT_EQ(calls, 2u);
  ASSERT_TRUE(logs[1].val_acc.has_value());
  EXPECT_GE(*logs[1].val_acc, 0.0);
  EXPECT_LE(*logs[1].val_acc, 1.0);
  EXPECT_EQ(logs[0].lr, 0.001);
}

TEST(TrainLoop, SegmentationTask) {
  auto cfgm = toy_config();
  cfgm.n_points = 32;
  cfgm.segmentation = default_segmentation(cfgm.trunk_out_channels, 3);
  Model<float> m(cfgm, 1);
  std::vector<LabeledSample> data;
  for (int s = 0; s < 4; ++s) {
    auto pts = oracle::random_points(32, 50 + s);
    std::vector<int> parts;
    // bands along y survive the rotation about +y used by augmentation
    for (const auto& p : pts) parts.push_back(p[1] < -0.3 ? 0 : (p[1] < 0.3 ? 1 : 2));
    data.push_back({PointCloud(pts), s % 2, parts});
  }
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 2;
  cfg.task = Task::kSegmentation;
  cfg.lr = 0.01;
  auto logs = train_loop(m, data, cfg, &data);
  ASSERT_TRUE(logs.back().val_instance_miou.has_value());
  EXPECT_LT(logs.back().train_loss, logs.front().train_loss);
  EXPECT_GT(*logs.back().val_acc, 0.6);
}
