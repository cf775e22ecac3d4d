#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "fanet/metrics.hpp"
#include "fanet/random.hpp"

using fanet::ConfusionMatrix;
using fanet::Rng;
using fanet::Tensor;

namespace {

std::vector<uint8_t> random_mask(int64_t n, int64_t k, Rng& rng) {
  std::vector<uint8_t> m(static_cast<size_t>(n));
  for (auto& e : m) e = static_cast<uint8_t>(rng.uniform_int(0, k - 1));
  return m;
}

// Set-based per-class IoU/accuracy oracle over raw masks.
struct SetOracle {
  std::vector<double> iou, acc;
  double pixel_acc;
};

SetOracle set_oracle(const std::vector<uint8_t>& gt,
                     const std::vector<uint8_t>& pred, int64_t k) {
  SetOracle o;
  int64_t correct = 0;
  for (size_t i = 0; i < gt.size(); ++i) correct += gt[i] == pred[i];
  o.pixel_acc = static_cast<double>(correct) / static_cast<double>(gt.size());
  for (int64_t c = 0; c < k; ++c) {
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < gt.size(); ++i) {
      bool ga = gt[i] == c, pb = pred[i] == c;
      inter += ga && pb;
      a += ga;
      b += pb;
    }
    int64_t uni = a + b - inter;
    o.iou.push_back(uni > 0 ? static_cast<double>(inter) /
                                  static_cast<double>(uni)
                            : 0.0);
    o.acc.push_back(a > 0 ? static_cast<double>(inter) /
                                static_cast<double>(a)
                          : 0.0);
  }
  return o;
}

}  // namespace

TEST(Confusion, DiagonalOnPerfectPrediction) {
  ConfusionMatrix cm(3);
  std::vector<uint8_t> m{0, 1, 2, 1, 0};
  cm.accumulate(m, m);
  EXPECT_EQ(cm.at(0, 0), 2);
  EXPECT_EQ(cm.at(1, 1), 2);
  EXPECT_EQ(cm.at(2, 2), 1);
  EXPECT_EQ(cm.at(0, 1), 0);
}

TEST(Confusion, FourPixelExample) {
  ConfusionMatrix cm(2);
  cm.accumulate({0, 0, 1, 1}, {0, 1, 1, 1});
  EXPECT_EQ(cm.at(0, 0), 1);
  EXPECT_EQ(cm.at(0, 1), 1);
  EXPECT_EQ(cm.at(1, 1), 2);
  EXPECT_EQ(cm.at(1, 0), 0);
}

TEST(Confusion, MatchesCountingOracleOnRandomPair) {
  Rng rng(501);
  auto gt = random_mask(64 * 64, 5, rng);
  auto pred = random_mask(64 * 64, 5, rng);
  ConfusionMatrix cm(5);
  cm.accumulate(gt, pred);
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      int64_t count = 0;
      for (size_t p = 0; p < gt.size(); ++p)
        count += gt[p] == i && pred[p] == j;
      EXPECT_EQ(cm.at(i, j), count);
    }
  EXPECT_EQ(cm.total(), 64 * 64);
}

TEST(Confusion, AccumulationCommutes) {
  Rng rng(503);
  auto gt1 = random_mask(256, 4, rng);
  auto pr1 = random_mask(256, 4, rng);
  auto gt2 = random_mask(256, 4, rng);
  auto pr2 = random_mask(256, 4, rng);
  ConfusionMatrix a(4), b(4), shard1(4), shard2(4);
  a.accumulate(gt1, pr1);
  a.accumulate(gt2, pr2);
  shard1.accumulate(gt2, pr2);
  shard2.accumulate(gt1, pr1);
  b.add(shard1);
  b.add(shard2);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) EXPECT_EQ(a.at(i, j), b.at(i, j));
}

TEST(Confusion, RejectsOutOfRangeIds) {
  ConfusionMatrix cm(3);
  EXPECT_THROW(cm.accumulate({3}, {0}), fanet::DataError);
}

TEST(Metrics, PerfectPredictionIsAllOnes) {
  Rng rng(509);
  auto gt = random_mask(1000, 5, rng);
  ConfusionMatrix cm(5);
  cm.accumulate(gt, gt);
  auto m = fanet::compute_metrics(cm);
  EXPECT_DOUBLE_EQ(m.pixel_acc, 1.0);
  EXPECT_DOUBLE_EQ(m.mean_acc, 1.0);
  EXPECT_DOUBLE_EQ(m.mean_iu, 1.0);
  EXPECT_DOUBLE_EQ(m.fw_iu, 1.0);
}

TEST(Metrics, FourPixelHandEnumeration) {
  ConfusionMatrix cm(2);
  cm.accumulate({0, 0, 1, 1}, {0, 1, 1, 1});
  auto m = fanet::compute_metrics(cm);
  EXPECT_DOUBLE_EQ(m.pixel_acc, 0.75);
  EXPECT_DOUBLE_EQ(m.per_class_iu[0], 0.5);
  EXPECT_DOUBLE_EQ(m.per_class_iu[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.mean_iu, 7.0 / 12.0);
}

TEST(Metrics, ScaleInvariance) {
  Rng rng(521);
  ConfusionMatrix cm(4);
  cm.accumulate(random_mask(512, 4, rng), random_mask(512, 4, rng));
  auto m1 = fanet::compute_metrics(cm);
  cm.scale_counts(10);
  auto m10 = fanet::compute_metrics(cm);
  EXPECT_DOUBLE_EQ(m1.pixel_acc, m10.pixel_acc);
  EXPECT_DOUBLE_EQ(m1.mean_acc, m10.mean_acc);
  EXPECT_DOUBLE_EQ(m1.mean_iu, m10.mean_iu);
  EXPECT_DOUBLE_EQ(m1.fw_iu, m10.fw_iu);
}

TEST(Metrics, MatchesSetOracleExactlyOnManyRandomPairs) {
  for (uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(1000 + trial);
    auto gt = random_mask(64 * 64, 5, rng);
    auto pred = random_mask(64 * 64, 5, rng);
    ConfusionMatrix cm(5);
    cm.accumulate(gt, pred);
    auto m = fanet::compute_metrics(cm);
    auto o = set_oracle(gt, pred, 5);
    EXPECT_EQ(m.pixel_acc, o.pixel_acc);
    double iu_sum = 0, acc_sum = 0;
    for (int64_t c = 0; c < 5; ++c) {
      EXPECT_EQ(m.per_class_iu[static_cast<size_t>(c)], o.iou[static_cast<size_t>(c)]);
      iu_sum += o.iou[static_cast<size_t>(c)];
      acc_sum += o.acc[static_cast<size_t>(c)];
    }
    // All 5 classes occur w.p. ~1 at 4096 pixels, so the means divide by 5.
    EXPECT_EQ(m.mean_iu, iu_sum / 5.0);
    EXPECT_EQ(m.mean_acc, acc_sum / 5.0);
  }
}

TEST(Metrics, FwIuBoundedByPerClassExtremes) {
  Rng rng(541);
  ConfusionMatrix cm(5);
  cm.accumulate(random_mask(4096, 5, rng), random_mask(4096, 5, rng));
  auto m = fanet::compute_metrics(cm);
  double mn = 1e9, mx = -1e9;
  for (size_t c = 0; c < 5; ++c) {
    mn = std::min(mn, m.per_class_iu[c]);
    mx = std::max(mx, m.per_class_iu[c]);
  }
  EXPECT_GE(m.fw_iu, mn);
  EXPECT_LE(m.fw_iu, mx);
}

TEST(Metrics, AbsentClassIsExcludedFromMeans) {
  ConfusionMatrix cm(3);
  cm.accumulate({0, 0, 1, 1}, {0, 0, 1, 0});  // class 2 never occurs
  auto m = fanet::compute_metrics(cm);
  EXPECT_FALSE(m.valid[2]);
  EXPECT_TRUE(m.valid[0]);
  // mean over the two valid classes only
  EXPECT_DOUBLE_EQ(m.mean_acc, (1.0 + 0.5) / 2.0);
}

TEST(Metrics, EmptyMatrixIsAnError) {
  ConfusionMatrix cm(3);
  EXPECT_THROW(fanet::compute_metrics(cm), fanet::ConfigError);
}

TEST(Prf, HarmonicMeanReproducesPaperCells) {
  // Printed U-Net matrix cells: P 86.2, R 76.5 -> F1 81.1 and
  // P 69.0, R 46.7 -> F1 55.7 (one decimal).
  double f1 = 2.0 * 86.2 * 76.5 / (86.2 + 76.5);
  EXPECT_NEAR(std::round(f1 * 10.0) / 10.0, 81.1, 0.05);
  double f2 = 2.0 * 69.0 * 46.7 / (69.0 + 46.7);
  EXPECT_NEAR(std::round(f2 * 10.0) / 10.0, 55.7, 0.05);

  // The same construction is what prf_matrices applies elementwise.
  ConfusionMatrix cm(2);
  cm.accumulate({0, 0, 0, 1, 1, 1, 1, 1}, {0, 0, 1, 1, 1, 1, 0, 1});
  auto prf = fanet::prf_matrices(cm);
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 2; ++j) {
      double p = prf.p(i, j), r = prf.r(i, j);
      double expect = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
      EXPECT_NEAR(prf.f(i, j), expect, 1e-12);
    }
}

TEST(Prf, IdentityMatrixGivesDiagonalHundreds) {
  ConfusionMatrix cm(4);
  std::vector<uint8_t> m{0, 1, 2, 3, 2, 1};
  cm.accumulate(m, m);
  auto prf = fanet::prf_matrices(cm);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j) {
      EXPECT_DOUBLE_EQ(prf.p(i, j), i == j ? 100.0 : 0.0);
      EXPECT_DOUBLE_EQ(prf.r(i, j), i == j ? 100.0 : 0.0);
      EXPECT_DOUBLE_EQ(prf.f(i, j), i == j ? 100.0 : 0.0);
    }
}

TEST(Prf, ColumnsAndRowsSumToHundred) {
  Rng rng(547);
  ConfusionMatrix cm(5);
  cm.accumulate(random_mask(4096, 5, rng), random_mask(4096, 5, rng));
  auto prf = fanet::prf_matrices(cm);
  for (int64_t j = 0; j < 5; ++j) {
    double col = 0, row = 0;
    for (int64_t i = 0; i < 5; ++i) {
      col += prf.p(i, j);
      row += prf.r(j, i);
    }
    EXPECT_NEAR(col, 100.0, 0.1);
    EXPECT_NEAR(row, 100.0, 0.1);
  }
}

TEST(Prf, ZeroColumnIsFlagged) {
  ConfusionMatrix cm(3);
  cm.accumulate({0, 1, 1}, {0, 0, 1});  // nothing predicted as class 2
  auto prf = fanet::prf_matrices(cm);
  EXPECT_FALSE(prf.col_valid[2]);
  EXPECT_TRUE(prf.col_valid[0]);
  for (int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(prf.p(i, 2), 0.0);
}

TEST(Argmax, FirstMaxWinsTies) {
  auto logits = Tensor<double>::from({1, 3, 1, 2},
                                     {1.0, 0.0,
                                      1.0, 2.0,
                                      0.5, 2.0});
  auto pred = fanet::argmax_classes(logits);
  EXPECT_EQ(pred[0], 0);  // tie between class 0 and 1 -> class 0
  EXPECT_EQ(pred[1], 1);  // tie between class 1 and 2 -> class 1
}

// --- attention statistics -------------------------------------------------

TEST(AttentionStats, ZeroWeightHeadsCollapseToHalf) {
  fanet::ArchitectureSpec spec;
  spec.variant = fanet::Variant::fanet;
  spec.base_width = 4;
  spec.input_size = 48;
  auto model = fanet::Model<float>::build(spec, 61);
  for (auto& t : {&model.fiam->conv_w, &model.fiam->conv_b})
    std::fill(t->values().begin(), t->values().end(), 0.f);
  for (auto& t : model.fiam->ws)
    std::fill(t.values().begin(), t.values().end(), 0.f);
  for (auto& t : model.fiam->wg)
    std::fill(t.values().begin(), t.values().end(), 0.f);
  for (auto& f : model.fsam) {
    std::fill(f->w1s.values().begin(), f->w1s.values().end(), 0.f);
    std::fill(f->w2s.values().begin(), f->w2s.values().end(), 0.f);
    std::fill(f->w1g.values().begin(), f->w1g.values().end(), 0.f);
    std::fill(f->w2g.values().begin(), f->w2g.values().end(), 0.f);
  }
  auto samples = fanet::synth_orange(71, 3, 48);
  auto stats = fanet::collect_attention_stats(model, samples);
  ASSERT_EQ(stats.size(), 8u);
  for (const auto& st : stats) {
    for (const auto& cs : st.s_stats) {
      EXPECT_EQ(cs.count, 3);
      EXPECT_DOUBLE_EQ(cs.mean, 0.5);
      EXPECT_DOUBLE_EQ(cs.stddev, 0.0);
      EXPECT_DOUBLE_EQ(cs.min, 0.5);
      EXPECT_DOUBLE_EQ(cs.q50, 0.5);
      EXPECT_DOUBLE_EQ(cs.max, 0.5);
    }
    for (const auto& cs : st.g_stats) EXPECT_DOUBLE_EQ(cs.mean, 0.5);
  }
}

TEST(AttentionStats, SingleSampleHasZeroStd) {
  fanet::ArchitectureSpec spec;
  spec.variant = fanet::Variant::fanet_s;
  spec.base_width = 4;
  spec.input_size = 48;
  auto model = fanet::Model<float>::build(spec, 67);
  auto samples = fanet::synth_orange(73, 1, 48);
  auto stats = fanet::collect_attention_stats(model, samples);
  ASSERT_EQ(stats.size(), 4u);  // FSAM only
  for (const auto& st : stats)
    for (const auto& cs : st.s_stats) {
      EXPECT_EQ(cs.count, 1);
      EXPECT_DOUBLE_EQ(cs.stddev, 0.0);
      EXPECT_DOUBLE_EQ(cs.min, cs.max);
    }
}

TEST(AttentionStats, VariantWithoutAttentionGivesEmptyResult) {
  fanet::ArchitectureSpec spec;
  spec.variant = fanet::Variant::unet;
  spec.base_width = 4;
  spec.input_size = 48;
  auto model = fanet::Model<float>::build(spec, 71);
  auto samples = fanet::synth_orange(79, 2, 48);
  auto stats = fanet::collect_attention_stats(model, samples);
  EXPECT_TRUE(stats.empty());
}

TEST(AttentionStats, StreamingSummaryMatchesTwoPassRecomputation) {
  fanet::ArchitectureSpec spec;
  spec.variant = fanet::Variant::fanet;
  spec.base_width = 4;
  spec.input_size = 48;
  auto model = fanet::Model<float>::build(spec, 83);
  auto samples = fanet::synth_orange(89, 6, 48);
  auto stats = fanet::collect_attention_stats(model, samples);
  for (const auto& st : stats)
    for (size_t ch = 0; ch < st.raw_s.size(); ++ch) {
      const auto& raw = st.raw_s[ch];
      double mean = 0;
      for (float v : raw) mean += v;
      mean /= static_cast<double>(raw.size());
      double var = 0;
      for (float v : raw) var += (v - mean) * (v - mean);
      var /= static_cast<double>(raw.size());
      auto sorted = raw;
      std::sort(sorted.begin(), sorted.end());
      EXPECT_NEAR(st.s_stats[ch].mean, mean, 1e-6);
      EXPECT_NEAR(st.s_stats[ch].stddev, std::sqrt(var), 1e-6);
      EXPECT_NEAR(st.s_stats[ch].min, sorted.front(), 1e-9);
      EXPECT_NEAR(st.s_stats[ch].max, sorted.back(), 1e-9);
      double pos = 0.25 * static_cast<double>(sorted.size() - 1);
      size_t lo = static_cast<size_t>(pos);
      double frac = pos - std::floor(pos);
      double q25 = lo + 1 < sorted.size()
                       ? sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
                       : sorted.back();
      EXPECT_NEAR(st.s_stats[ch].q25, q25, 1e-6);
    }
}

// --- excitation maps -------------------------------------------------------

TEST(ExcitationMaps, RatioAndSuppressionProperties) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "fanet_maps_test";
  fs::remove_all(dir);
  fanet::ArchitectureSpec spec;
  spec.variant = fanet::Variant::fanet;
  spec.base_width = 4;
  spec.input_size = 48;
  auto model = fanet::Model<float>::build(spec, 97);
  auto samples = fanet::synth_orange(101, 1, 48);
  auto maps = fanet::export_excitation_maps(model, samples[0], "fsam4",
                                            {0, 1, 2}, dir.string());
  ASSERT_EQ(maps.size(), 3u);
  for (const auto& m : maps) {
    for (int64_t i = 0; i < m.h * m.w; ++i) {
      float in = m.input[static_cast<size_t>(i)];
      float ratio = m.ratio[static_cast<size_t>(i)];
      EXPECT_TRUE(std::fabs(ratio - 1.f) < 1e-6 ||
                  std::fabs(ratio - m.s) < 1e-6)
          << "ratio " << ratio << " vs s " << m.s;
      if (in >= 0)
        EXPECT_LE(m.difference[static_cast<size_t>(i)], 0.f);
    }
    EXPECT_GT(m.s, 0.f);
    EXPECT_LT(m.s, 1.f);
  }
  EXPECT_TRUE(fs::exists(dir / "fsam4_ch0_ratio.png"));
  EXPECT_TRUE(fs::exists(dir / "fsam4_ch2.csv"));
  fs::remove_all(dir);
}

TEST(ExcitationMaps, EmptyMaskGivesIdentityMaps) {
  // Threshold above the channel max: difference == 0, ratio == 1.
  fanet::ExcitationSite<double> site;
  site.id = "fsam1";
  site.fig_key = "FSAM1_2";
  auto x = Tensor<double>::from({1, 2, 2, 2},
                                {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
  auto s = Tensor<double>::from({1, 2}, {0.4, 0.6});
  auto g = Tensor<double>::from({1, 2}, {0.9, 0.95});  // above all maxima
  site.input = x;
  site.output = fanet::fastidious_excite(
      x, fanet::ExcitationParams<double>{s, g}, fanet::GradMode::hard, 0.1);
  site.s = s;
  site.g = g;
  for (int64_t ch = 0; ch < 2; ++ch) {
    auto maps = fanet::compute_excitation_maps(site, ch);
    for (int64_t i = 0; i < 4; ++i) {
      EXPECT_DOUBLE_EQ(maps.difference[static_cast<size_t>(i)], 0.0);
      EXPECT_DOUBLE_EQ(maps.ratio[static_cast<size_t>(i)], 1.0);
    }
  }
}

TEST(ExcitationMaps, UnknownModuleIsAnError) {
  fanet::ArchitectureSpec spec;
  spec.variant = fanet::Variant::unet;
  spec.base_width = 4;
  spec.input_size = 48;
  auto model = fanet::Model<float>::build(spec, 103);
  auto samples = fanet::synth_orange(107, 1, 48);
  EXPECT_THROW(fanet::export_excitation_maps(model, samples[0], "fsam1", {0},
                                             "/tmp/fanet_should_not_exist"),
               fanet::ConfigError);
}
