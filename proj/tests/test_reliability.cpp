// Copyright 2026 The Latte Bench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "latte/reliability.hpp"

namespace {

using latte::Convention;
using latte::ModalReliability;
using latte::Modality;
using latte::PointRef;
using latte::PredictionFrame;
using latte::QueryFrameVoxels;
using latte::ReliabilityRecord;

TEST(EntropyTest, OneHotUniformAndSymmetric) {
  latte::RowMatrixXd onehot = latte::RowMatrixXd::Zero(4, 5);
  onehot.col(3).setOnes();
  auto r = latte::st_entropy(onehot);
  EXPECT_EQ(r.entropy, 0.0);
  EXPECT_EQ(r.mean, Eigen::RowVectorXd::Unit(5, 3));

  latte::RowMatrixXd uniform = latte::RowMatrixXd::Constant(3, 9, 1.0 / 9);
  EXPECT_NEAR(latte::st_entropy(uniform).entropy, std::log(9.0), 1e-12);
  EXPECT_NEAR(std::log(9.0), 2.19722, 1e-5);

  latte::RowMatrixXd two = latte::RowMatrixXd::Zero(2, 4);
  two(0, 0) = 1.0;
  two(1, 1) = 1.0;
  r = latte::st_entropy(two);
  EXPECT_NEAR(r.entropy, std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(r.mean(0), 0.5);
  EXPECT_DOUBLE_EQ(r.mean(1), 0.5);
  EXPECT_THROW(latte::st_entropy(latte::RowMatrixXd(0, 3)), latte::ConfigError);
}

TEST(QuantileTest, Examples) {
  std::vector<double> same(7, 0.3);
  for (double a : {0.1, 0.5, 0.9, 1.0}) {
    const auto keep = latte::quantile_filter(same, a);
    EXPECT_EQ(std::count(keep.begin(), keep.end(), 1), 7);
  }
  std::vector<double> ten{10, 3, 1, 4, 5, 9, 2, 6, 8, 7};
  EXPECT_EQ(latte::nearest_rank_quantile(ten, 0.9), 9.0);
  const auto keep = latte::quantile_filter(ten, 0.9);
  EXPECT_EQ(std::count(keep.begin(), keep.end(), 0), 1);
  EXPECT_EQ(keep[0], 0);
  const auto all = latte::quantile_filter(ten, 1.0);
  EXPECT_EQ(std::count(all.begin(), all.end(), 1), 10);
  EXPECT_THROW(latte::nearest_rank_quantile(std::vector<double>{}, 0.9), latte::ConfigError);
  EXPECT_THROW(latte::nearest_rank_quantile(ten, 0.0), latte::ConfigError);
}

TEST(QuantileTest, CardinalityWithDistinctValues) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int n : {1, 7, 10, 33, 100, 1000}) {
    for (double alpha : {0.5, 0.9, 0.95}) {
      std::vector<double> e(static_cast<std::size_t>(n));
      for (auto& v : e) v = u(rng);
      const auto keep = latte::quantile_filter(e, alpha);
      const auto filtered = std::count(keep.begin(), keep.end(), 0);
      // Sort oracle for the rank.
      const auto rank = static_cast<long>(std::ceil(alpha * n - 1e-9));
      EXPECT_EQ(filtered, n - rank) << "n=" << n << " alpha=" << alpha;
    }
  }
}

TEST(MergeWindowsTest, SingleWindowReducesToInput) {
  const std::vector<double> e{0.42};
  const std::vector<Eigen::RowVectorXd> mean{Eigen::RowVector3d(0.2, 0.3, 0.5)};
  const std::vector<std::uint8_t> keep{1};
  const std::vector<double> prior{latte::window_prior(3)};
  const auto m = latte::merge_windows(e, mean, keep, prior);
  EXPECT_EQ(m.tau[0], 1.0);
  EXPECT_EQ(m.entropy, 0.42);
  EXPECT_EQ(m.mean, mean[0]);
  EXPECT_TRUE(m.keep);
}

TEST(MergeWindowsTest, SymmetricWindowsSplitEvenly) {
  const std::vector<double> e{0.3, 0.3};
  const std::vector<Eigen::RowVectorXd> mean{Eigen::RowVector2d(1, 0), Eigen::RowVector2d(0, 1)};
  const std::vector<std::uint8_t> keep{1, 1};
  const std::vector<double> prior{2.0, 2.0};
  const auto m = latte::merge_windows(e, mean, keep, prior);
  EXPECT_NEAR(m.tau[0], 0.5, 1e-15);
  EXPECT_NEAR(m.tau[1], 0.5, 1e-15);
  EXPECT_NEAR(m.mean(0), 0.5, 1e-15);
}

TEST(MergeWindowsTest, PriorWeightedSoftmin) {
  const std::vector<double> prior{latte::window_prior(3), latte::window_prior(5)};
  EXPECT_NEAR(prior[0], 2.3219, 1e-4);
  EXPECT_NEAR(prior[1], 2.8074, 1e-4);
  const std::vector<double> e{0.1, 0.5};
  const std::vector<Eigen::RowVectorXd> mean{Eigen::RowVector2d(0.9, 0.1), Eigen::RowVector2d(0.6, 0.4)};
  const std::vector<std::uint8_t> keep{1, 1};
  const auto m = latte::merge_windows(e, mean, keep, prior);
  const double a = std::log2(5.0) * std::exp(-0.1), b = std::log2(7.0) * std::exp(-0.5);
  EXPECT_NEAR(m.tau[0], a / (a + b), 1e-12);
  EXPECT_NEAR(m.tau[1], b / (a + b), 1e-12);
  EXPECT_NEAR(m.tau[0], 0.5523, 1e-4);
  EXPECT_NEAR(m.entropy, m.tau[0] * 0.1 + m.tau[1] * 0.5, 1e-15);
  EXPECT_NEAR(m.mean.sum(), 1.0, 1e-12);
}

TEST(MergeWindowsTest, FilteredAndMissingWindows) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> prior{2.0, 3.0};
  const std::vector<Eigen::RowVectorXd> mean{Eigen::RowVector2d(0.9, 0.1), Eigen::RowVector2d(0.6, 0.4)};
  // One kept window takes all the weight.
  auto m = latte::merge_windows(std::vector<double>{0.1, 0.5}, mean, std::vector<std::uint8_t>{0, 1}, prior);
  EXPECT_EQ(m.tau[0], 0.0);
  EXPECT_EQ(m.tau[1], 1.0);
  EXPECT_TRUE(m.keep);
  // Missing references behave as an absent window.
  m = latte::merge_windows(std::vector<double>{nan, 0.5}, mean, std::vector<std::uint8_t>{0, 1}, prior);
  EXPECT_EQ(m.entropy, 0.5);
  // Everything filtered: defined entropy, keep false.
  m = latte::merge_windows(std::vector<double>{0.1, 0.5}, mean, std::vector<std::uint8_t>{0, 0}, prior);
  EXPECT_FALSE(m.keep);
  EXPECT_TRUE(std::isfinite(m.entropy));
  EXPECT_NEAR(m.tau[0] + m.tau[1], 1.0, 1e-12);
}

TEST(MergeWindowsTest, LiteralModeEvaluatesPrintedForm) {
  const std::vector<double> prior{std::log2(5.0), std::log2(7.0)};
  const std::vector<double> e{0.1, 0.5};
  const std::vector<Eigen::RowVectorXd> mean{Eigen::RowVector2d(0.9, 0.1), Eigen::RowVector2d(0.6, 0.4)};
  const auto m = latte::merge_windows(e, mean, std::vector<std::uint8_t>{1, 1}, prior, Convention::kPaperLiteral);
  const double denom = std::exp(0.1) + std::exp(0.5);
  EXPECT_NEAR(m.tau[0], prior[0] * std::exp(0.1) / denom, 1e-12);
  EXPECT_NEAR(m.tau[1], prior[1] * std::exp(0.5) / denom, 1e-12);
  EXPECT_GT(m.tau[0] + m.tau[1], 1.0);
  EXPECT_NEAR(m.mean.sum(), 1.0, 1e-12);
}

TEST(CrossModalTest, Weights) {
  auto [a, b] = latte::cross_modal_weights(0.7, 0.7);
  EXPECT_EQ(a, 0.5);
  EXPECT_EQ(b, 0.5);
  auto [c, d] = latte::cross_modal_weights(0.0, std::numeric_limits<double>::infinity());
  EXPECT_EQ(c, 1.0);
  EXPECT_EQ(d, 0.0);
  auto [e, f] = latte::cross_modal_weights(0.2, 1.0);
  EXPECT_NEAR(e, std::exp(-0.2) / (std::exp(-0.2) + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(e, 0.6900, 1e-4);
  EXPECT_NEAR(e + f, 1.0, 1e-15);
  auto [g, h] = latte::cross_modal_weights(0.2, 1.0, Convention::kPaperLiteral);
  EXPECT_NEAR(g, std::exp(0.2) / (std::exp(0.2) + std::exp(1.0)), 1e-15);
  (void)h;
}

TEST(CrossModalTest, SoftminMonotone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, std::log(6.0));
  for (int i = 0; i < 1000; ++i) {
    const double other = u(rng), lo = u(rng), hi = lo + 0.05 + u(rng);
    EXPECT_GT(latte::cross_modal_weights(lo, other).first, latte::cross_modal_weights(hi, other).first);
    EXPECT_GT(latte::cross_modal_weights(other, lo).second, latte::cross_modal_weights(other, hi).second);
  }
}

ReliabilityRecord record_with(const Eigen::RowVectorXd& ref2d, double e2d, bool k2d, const Eigen::RowVectorXd& ref3d,
                              double e3d, bool k3d) {
  ReliabilityRecord r;
  r[Modality::k2D].mean = ref2d;
  r[Modality::k2D].entropy = e2d;
  r[Modality::k2D].keep = k2d;
  r[Modality::k3D].mean = ref3d;
  r[Modality::k3D].entropy = e3d;
  r[Modality::k3D].keep = k3d;
  return r;
}

TEST(XmLossTest, ZeroWhenQueriesMatchOtherReferences) {
  const Eigen::RowVector3d a(0.2, 0.5, 0.3), b(0.6, 0.3, 0.1);
  const auto rec = record_with(a, 0.4, true, b, 0.9, true);
  const auto l = latte::xm_consistency_loss(b, a, 3, rec);
  EXPECT_NEAR(l.value, 0.0, 1e-15);
}

TEST(XmLossTest, ScalarOracle) {
  const Eigen::RowVector2d q(0.9, 0.1), r(0.5, 0.5);
  // w2D = 1 via an infinite 3D entropy: only KL(q3D || r2D) survives.
  const auto rec = record_with(r, 0.0, true, Eigen::RowVector2d(0.3, 0.7), std::numeric_limits<double>::infinity(), true);
  const auto l = latte::xm_consistency_loss(Eigen::RowVector2d(0.3, 0.7), q, 1, rec);
  const double oracle = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
  EXPECT_NEAR(l.value, oracle, 1e-12);
  EXPECT_NEAR(l.value, 0.368064, 1e-6);
  EXPECT_EQ(l.weight2d, 1.0);
}

TEST(XmLossTest, DroppedTermsAndEmptyQuery) {
  const Eigen::RowVector2d a(0.9, 0.1), b(0.2, 0.8);
  auto rec = record_with(a, 0.3, false, b, 0.3, true);
  auto l = latte::xm_consistency_loss(a, a, 2, rec);
  EXPECT_NEAR(l.value, 0.5 * latte::kl_divergence(a, b), 1e-15);
  EXPECT_EQ(l.grad_query_mean[1].size(), 0);
  EXPECT_EQ(l.grad_query_mean[0].size(), 2);
  l = latte::xm_consistency_loss(a, a, 0, rec);
  EXPECT_EQ(l.value, 0.0);
}

TEST(XmLossTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  auto random_row = [&](int k) {
    Eigen::RowVectorXd v(k);
    for (int c = 0; c < k; ++c) v(c) = u(rng);
    return Eigen::RowVectorXd(v / v.sum());
  };
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + trial % 5;
    const auto rec = record_with(random_row(k), u(rng), true, random_row(k), u(rng), true);
    Eigen::RowVectorXd q2 = random_row(k), q3 = random_row(k);
    const auto l = latte::xm_consistency_loss(q2, q3, 4, rec);
    for (int c = 0; c < k; ++c) {
      const double h = 1e-6;
      Eigen::RowVectorXd p = q3, m = q3;
      p(c) += h;
      m(c) -= h;
      const double fd = (latte::xm_consistency_loss(q2, p, 4, rec).value - latte::xm_consistency_loss(q2, m, 4, rec).value) / (2 * h);
      EXPECT_NEAR(l.grad_query_mean[1](c), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(FuseTest, Examples) {
  const Eigen::RowVector3d p(0.2, 0.5, 0.3);
  auto r = latte::fuse_predictions(p, p, 0.4, 0.4);
  EXPECT_LT((r.probs - p).cwiseAbs().maxCoeff(), 1e-15);
  r = latte::fuse_predictions(p, Eigen::RowVector3d(1, 0, 0), 0.0, 1e6);
  EXPECT_LT((r.probs - p).cwiseAbs().maxCoeff(), 1e-12);
  r = latte::fuse_predictions(Eigen::RowVector2d(0.8, 0.2), Eigen::RowVector2d(0.2, 0.8), 0.1, 0.9);
  EXPECT_NEAR(r.weight2d, 0.6900, 1e-4);
  EXPECT_NEAR(r.probs(0), 0.6140, 1e-4);
  EXPECT_NEAR(r.probs(1), 0.3860, 1e-4);
  EXPECT_EQ(r.label, 0);
  r = latte::fuse_predictions(Eigen::RowVector2d(0.5, 0.5), Eigen::RowVector2d(0.5, 0.5), 0.1, 0.9);
  EXPECT_EQ(r.label, 0);
}

// A random batch: points of several frames crowded into a few voxels.
struct Batch {
  std::vector<latte::MultiModalFrame> frames;
  std::map<std::int64_t, PredictionFrame> teacher;
  std::map<std::int64_t, PredictionFrame> student;

  latte::PredictionLookup teachers() const {
    return [this](std::int64_t t) -> const PredictionFrame* {
      auto it = teacher.find(t);
      return it == teacher.end() ? nullptr : &it->second;
    };
  }
};

PredictionFrame random_frame(std::int64_t t, Eigen::Index n, int k, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(0.3, 1.0);
  PredictionFrame p;
  p.t = t;
  p.probs2d.resize(n, k);
  p.probs3d.resize(n, k);
  for (Eigen::Index i = 0; i < p.probs2d.size(); ++i) {
    p.probs2d.data()[i] = g(rng) + 1e-9;
    p.probs3d.data()[i] = g(rng) + 1e-9;
  }
  latte::normalize_rows(p.probs2d);
  latte::normalize_rows(p.probs3d);
  return p;
}

Batch make_batch(std::uint64_t seed, int num_frames, int n, int k) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch b;
  for (int t = 0; t < num_frames; ++t) {
    latte::MultiModalFrame f;
    f.t = t;
    f.points.resize(n, 3);
    for (Eigen::Index i = 0; i < f.points.size(); ++i) f.points.data()[i] = u(rng);
    f.pose = latte::Pose::translation(0.02 * t, 0, 0);
    b.frames.push_back(std::move(f));
    b.teacher[t] = random_frame(t, n, k, rng);
    b.student[t] = random_frame(t, n, k, rng);
  }
  return b;
}

std::vector<QueryFrameVoxels> voxels_for(const Batch& b, std::span<const std::int64_t> queries,
                                         const latte::WindowConfig& windows) {
  std::vector<const latte::MultiModalFrame*> ptrs;
  for (const auto& f : b.frames) ptrs.push_back(&f);
  std::vector<QueryFrameVoxels> out;
  for (auto i : queries) {
    const auto cloud = latte::aggregate_window(ptrs, i, windows.max_size());
    const auto grid = latte::voxelize(cloud, windows.voxel_size);
    out.push_back({i, latte::build_st_voxels(grid, cloud, b.student.at(i), b.teachers(), windows), {}});
  }
  return out;
}

TEST(AssessTest, MultiWindowWithOneSizeEqualsSingleWindow) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Batch b = make_batch(seed, 8, 120, 4);
    const std::vector<std::int64_t> q{6, 7};
    const latte::WindowConfig w{{3}, 0.25, 0.9};
    auto single = voxels_for(b, q, w);
    auto multi = single;
    latte::assess_single_window(single, b.teachers(), w.alpha);
    latte::assess_multi_window(multi, b.teachers(), w);
    for (std::size_t f = 0; f < single.size(); ++f) {
      for (std::size_t k = 0; k < single[f].records.size(); ++k) {
        for (auto m : latte::kModalities) {
          const ModalReliability& s = single[f].records[k][m];
          const ModalReliability& x = multi[f].records[k][m];
          ASSERT_NEAR(s.entropy, x.entropy, 1e-12);
          ASSERT_LT((s.mean - x.mean).cwiseAbs().maxCoeff(), 1e-12);
          ASSERT_EQ(s.keep, x.keep);
        }
      }
    }
  }
}

TEST(AssessTest, RecordInvariants) {
  const Batch b = make_batch(21, 8, 150, 5);
  const std::vector<std::int64_t> q{6, 7};
  auto batch = voxels_for(b, q, latte::WindowConfig{{3, 5}, 0.3, 0.9});
  latte::assess_multi_window(batch, b.teachers(), latte::WindowConfig{{3, 5}, 0.3, 0.9});
  std::size_t kept = 0, total = 0;
  for (const auto& f : batch) {
    for (const auto& rec : f.records) {
      for (auto m : latte::kModalities) {
        const ModalReliability& r = rec[m];
        EXPECT_GE(r.entropy, 0.0);
        EXPECT_LE(r.entropy, std::log(5.0) + 1e-12);
        EXPECT_NEAR(r.mean.sum(), 1.0, 1e-9);
        bool any = false;
        for (auto h : r.window_keep) any = any || h;
        EXPECT_EQ(any, r.keep);
        double tau = 0.0;
        for (double t : r.tau) tau += t;
        EXPECT_NEAR(tau, 1.0, 1e-9);
        kept += r.keep;
        ++total;
      }
    }
  }
  EXPECT_GT(kept, 0u);
  EXPECT_LT(kept, total);
}

TEST(PropagateTest, Examples) {
  // Frame 0 has four points; voxels hand-built so point 0 is in one kept
  // voxel (0.7), point 1 in two (0.4, 0.8), point 2 in a filtered one and
  // point 3 in none.
  PredictionFrame pred;
  pred.t = 0;
  pred.probs2d = latte::RowMatrixXd::Constant(4, 2, 0.5);
  pred.probs3d = pred.probs2d;
  pred.probs3d.row(2) << 0.9, 0.1;
  auto lookup = [&](std::int64_t t) -> const PredictionFrame* { return t == 0 ? &pred : nullptr; };

  auto voxel = [](std::vector<PointRef> refs) {
    latte::STVoxel v;
    v.refs = {std::move(refs)};
    return v;
  };
  auto rec = [](double e, bool keep) {
    ReliabilityRecord r;
    for (auto m : latte::kModalities) {
      r[m].entropy = e;
      r[m].keep = keep;
    }
    return r;
  };
  std::vector<QueryFrameVoxels> batch(2);
  batch[0].t = 0;
  batch[0].voxels = {voxel({{0, 0}}), voxel({{0, 1}}), voxel({{0, 2}})};
  batch[0].records = {rec(0.7, true), rec(0.4, true), rec(0.1, false)};
  batch[1].t = 1;
  batch[1].voxels = {voxel({{0, 1}, {5, 0}})};
  batch[1].records = {rec(0.8, true)};
  const std::vector<std::int64_t> frames{0};
  const auto out = latte::propagate_point_entropy(batch, lookup, frames);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR(out[0].entropy[0](0), 0.7, 1e-15);
  EXPECT_NEAR(out[0].entropy[0](1), 0.6, 1e-15);
  EXPECT_EQ(out[0].contributors[0](1), 2);
  EXPECT_NEAR(out[0].entropy[0](2), std::log(2.0), 1e-15);
  EXPECT_NEAR(out[0].entropy[1](2), latte::entropy(Eigen::RowVector2d(0.9, 0.1)), 1e-15);
  EXPECT_EQ(out[0].contributors[0](3), 0);
  EXPECT_NEAR(out[0].entropy[0](3), std::log(2.0), 1e-15);
}

TEST(FuseFrameTest, WeightsSumToOneAndLabelsAreArgmax) {
  std::mt19937_64 rng(4);
  const PredictionFrame p = random_frame(3, 200, 6, rng);
  latte::PointReliability rel;
  rel.t = 3;
  std::uniform_real_distribution<double> u(0.0, std::log(6.0));
  for (int m = 0; m < 2; ++m) {
    rel.entropy[m].resize(200);
    for (int i = 0; i < 200; ++i) rel.entropy[m](i) = u(rng);
  }
  const auto fused = latte::fuse_frame(p, rel);
  const auto labels = latte::argmax_rows(fused.probs);
  EXPECT_EQ(fused.labels, labels);
  for (int i = 0; i < 200; ++i) {
    EXPECT_NEAR(fused.weights[0](i) + fused.weights[1](i), 1.0, 1e-12);
    EXPECT_NEAR(fused.probs.row(i).sum(), 1.0, 1e-12);
  }
  const auto avg = latte::average_frame(p);
  EXPECT_LT((avg.probs - 0.5 * (p.probs2d + p.probs3d)).cwiseAbs().maxCoeff(), 1e-15);
}

}  // namespace
