#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "fanet/trainer.hpp"

using fanet::Parameter;
using fanet::Rng;
using fanet::SgdState;
using fanet::Tensor;
using fanet::TrainConfig;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

fanet::ArchitectureSpec tiny_spec(fanet::Variant v = fanet::Variant::fanet) {
  fanet::ArchitectureSpec s;
  s.variant = v;
  s.base_width = 4;
  s.input_size = 48;
  return s;
}

}  // namespace

// --- sgd_step ----------------------------------------------------------------

TEST(Sgd, ZeroLearningRateLeavesParamsUnchanged) {
  auto w = Tensor<double>::from({3}, {1.0, -2.0, 3.0}, true);
  w.grad() = {0.5, 0.5, 0.5};
  std::vector<Parameter<double>> params{{"w", w}};
  auto st = SgdState<double>::init(params);
  fanet::sgd_step(params, st, 0.0, 0.9, 0.01);
  EXPECT_EQ(w.values(), (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(Sgd, PlainGradientDescentWithoutMomentumOrDecay) {
  auto w = Tensor<double>::from({2}, {1.0, 2.0}, true);
  w.grad() = {0.25, -0.5};
  std::vector<Parameter<double>> params{{"w", w}};
  auto st = SgdState<double>::init(params);
  fanet::sgd_step(params, st, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(w.values()[0], 1.0 - 0.1 * 0.25);
  EXPECT_DOUBLE_EQ(w.values()[1], 2.0 + 0.1 * 0.5);
}

TEST(Sgd, TwoStepsMatchHandUnrolledRecurrence) {
  // Quadratic loss sum(x*x): grad = 2x. Unroll
  //   v1 = 2*x0 + wd*x0;          x1 = x0 - lr*v1
  //   v2 = mu*v1 + 2*x1 + wd*x1;  x2 = x1 - lr*v2
  double x0 = 1.5, lr = 0.05, mu = 0.9, wd = 0.01;
  double v1 = 2 * x0 + wd * x0;
  double x1 = x0 - lr * v1;
  double v2 = mu * v1 + 2 * x1 + wd * x1;
  double x2 = x1 - lr * v2;

  auto w = Tensor<double>::from({1}, {x0}, true);
  std::vector<Parameter<double>> params{{"w", w}};
  auto st = SgdState<double>::init(params);
  for (int step = 0; step < 2; ++step) {
    w.zero_grad();
    fanet::sum(fanet::mul(w, w)).backward();
    fanet::sgd_step(params, st, lr, mu, wd);
  }
  EXPECT_NEAR(w.values()[0], x2, 1e-12);
}

TEST(Sgd, DecayAppliesToEveryParameterEvenWithZeroGradient) {
  auto w = Tensor<double>::from({2}, {4.0, -8.0}, true);
  w.grad();  // allocate zeros
  std::vector<Parameter<double>> params{{"w", w}};
  auto st = SgdState<double>::init(params);
  double lr = 0.1, wd = 0.5;
  fanet::sgd_step(params, st, lr, 0.0, wd);
  EXPECT_DOUBLE_EQ(w.values()[0], 4.0 - lr * wd * 4.0);
  EXPECT_DOUBLE_EQ(w.values()[1], -8.0 - lr * wd * -8.0);
}

// --- cosine_lr ------------------------------------------------------------------

TEST(Cosine, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(fanet::cosine_lr(0, 100, 0.3), 0.3);
  EXPECT_NEAR(fanet::cosine_lr(100, 100, 0.3), 0.0, 1e-15);
  EXPECT_NEAR(fanet::cosine_lr(50, 100, 0.3), 0.15, 1e-12);
}

TEST(Cosine, MonotoneNonIncreasing) {
  double prev = 1e9;
  for (int64_t t = 0; t <= 500; ++t) {
    double lr = fanet::cosine_lr(t, 500, 0.05);
    EXPECT_LE(lr, prev + 1e-15);
    prev = lr;
  }
}

TEST(Cosine, ZeroTotalStepsIsAnError) {
  EXPECT_THROW(fanet::cosine_lr(0, 0, 0.1), fanet::ConfigError);
}

// --- train loop -------------------------------------------------------------------

TEST(Train, ZeroEpochsWritesInitialCheckpointOnly) {
  TempDir d("fanet_train_zero");
  auto model = fanet::Model<float>::build(tiny_spec(), 7);
  auto data = fanet::synth_orange(3, 4, 48);
  TrainConfig cfg;
  cfg.epochs = 0;
  fanet::AugmentConfig aug;
  aug.crop_size = 32;
  auto report = fanet::train(model, data, {}, cfg, aug, d.path.string());
  EXPECT_TRUE(report.steps.empty());
  EXPECT_TRUE(report.epochs.empty());
  EXPECT_TRUE(report.best_checkpoint.empty());
  EXPECT_TRUE(fs::exists(report.final_checkpoint));
  auto loaded = fanet::load_checkpoint<float>(report.final_checkpoint);
  auto pa = model.parameters().items();
  auto pb = loaded.parameters().items();
  for (size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values());
}

TEST(Train, EmptyDatasetIsAnError) {
  auto model = fanet::Model<float>::build(tiny_spec(), 7);
  TrainConfig cfg;
  fanet::AugmentConfig aug;
  EXPECT_THROW(fanet::train(model, {}, {}, cfg, aug), fanet::ConfigError);
}

TEST(Train, DeterministicLossLogForFixedSeed) {
  auto data = fanet::synth_orange(5, 8, 48);
  auto run = [&]() {
    auto model = fanet::Model<float>::build(tiny_spec(), 21);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 9;
    cfg.eval_every = 0;
    fanet::AugmentConfig aug;
    aug.crop_size = 32;
    std::ostringstream log;
    fanet::train(model, data, {}, cfg, aug, "", &log);
    return log.str();
  };
  std::string a = run();
  std::string b = run();
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("epoch,step,lr,loss"), std::string::npos);
  // 8 samples / batch 4 * 2 epochs = 4 step lines + header
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 5);
}

TEST(Train, EvalTracksBestMeanIuAndWritesCheckpoints) {
  TempDir d("fanet_train_eval");
  auto model = fanet::Model<float>::build(tiny_spec(fanet::Variant::unet), 3);
  auto data = fanet::synth_orange(11, 8, 48);
  auto val = fanet::synth_orange(12, 4, 48);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.eval_every = 1;
  cfg.lr0 = 0.01;
  fanet::AugmentConfig aug;
  aug.crop_size = 32;
  auto report = fanet::train(model, data, val, cfg, aug, d.path.string());
  ASSERT_EQ(report.epochs.size(), 2u);
  EXPECT_GE(report.best_mean_iu, 0.0);
  EXPECT_GE(report.best_epoch, 0);
  EXPECT_TRUE(fs::exists(report.best_checkpoint));
  EXPECT_TRUE(fs::exists(report.final_checkpoint));
  for (const auto& e : report.epochs) EXPECT_GE(e.val_mean_iu, 0.0);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  auto model = fanet::Model<float>::build(tiny_spec(), 5);
  // Poison the logits head; a NaN in earlier layers would be absorbed by
  // the following ReLU (NaN > 0 is false).
  model.out.conv.b.values()[0] = std::numeric_limits<float>::quiet_NaN();
  auto data = fanet::synth_orange(13, 4, 48);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  fanet::AugmentConfig aug;
  aug.p = 0;
  aug.crop_size = 32;
  try {
    fanet::train(model, data, {}, cfg, aug);
    FAIL() << "expected NumericError";
  } catch (const fanet::NumericError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 0"), std::string::npos);
    EXPECT_NE(msg.find("lr"), std::string::npos);
  }
}

TEST(Train, LearningRateSequenceIsNonIncreasing) {
  auto model = fanet::Model<float>::build(tiny_spec(), 11);
  auto data = fanet::synth_orange(17, 8, 48);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  fanet::AugmentConfig aug;
  aug.crop_size = 32;
  auto report = fanet::train(model, data, {}, cfg, aug);
  for (size_t i = 1; i < report.steps.size(); ++i)
    EXPECT_LE(report.steps[i].lr, report.steps[i - 1].lr + 1e-15);
  EXPECT_DOUBLE_EQ(report.steps[0].lr, cfg.lr0);
}

TEST(Train, SmoothedLossHelpers) {
  std::vector<fanet::StepRecord> steps;
  for (int i = 0; i < 10; ++i)
    steps.push_back({0, i, 0.1, static_cast<double>(10 - i)});
  EXPECT_DOUBLE_EQ(fanet::smoothed_initial_loss(steps, 3), (10 + 9 + 8) / 3.0);
  EXPECT_DOUBLE_EQ(fanet::smoothed_final_loss(steps, 3), (3 + 2 + 1) / 3.0);
  EXPECT_DOUBLE_EQ(fanet::smoothed_initial_loss(steps, 100), 5.5);
}

TEST(Train, OneStepChangesEveryUnetParameter) {
  // weight decay off so only true gradients move parameters
  auto model = fanet::Model<float>::build(tiny_spec(fanet::Variant::unet), 31);
  auto data = fanet::synth_orange(23, 4, 48);
  auto params = model.parameters();
  std::vector<std::vector<float>> before;
  for (const auto& p : params.items()) before.push_back(p.tensor.values());
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.weight_decay = 0.0;
  cfg.lr0 = 0.01;
  fanet::AugmentConfig aug;
  aug.crop_size = 32;
  fanet::train(model, data, {}, cfg, aug);
  for (size_t i = 0; i < before.size(); ++i)
    EXPECT_NE(params.items()[i].tensor.values(), before[i])
        << params.items()[i].name;
}

TEST(Train, AllFiveVariantsTrainOneStep) {
  auto data = fanet::synth_orange(29, 4, 48);
  for (auto v : {fanet::Variant::unet, fanet::Variant::unet_se,
                 fanet::Variant::fanet_s, fanet::Variant::fanet_i,
                 fanet::Variant::fanet}) {
    auto model = fanet::Model<float>::build(tiny_spec(v), 37);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.lr0 = 0.01;
    fanet::AugmentConfig aug;
    aug.crop_size = 32;
    auto report = fanet::train(model, data, {}, cfg, aug);
    ASSERT_EQ(report.steps.size(), 1u) << fanet::variant_name(v);
    EXPECT_TRUE(std::isfinite(report.steps[0].loss));
  }
}
