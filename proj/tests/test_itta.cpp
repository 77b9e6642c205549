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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "latte/itta.hpp"
#include "latte/synth.hpp"

namespace {

using latte::Convention;
using latte::IttaConfig;
using latte::Points3d;
using latte::PromptableHead;
using latte::RowMatrixXd;

Points3d blob(const Eigen::Vector3d& center, int n, double spread, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Points3d p(n, 3);
  for (int i = 0; i < n; ++i) p.row(i) = (center + Eigen::Vector3d(u(rng), u(rng), u(rng))).transpose();
  return p;
}

Points3d stack(const Points3d& a, const Points3d& b) {
  Points3d out(a.rows() + b.rows(), 3);
  out << a, b;
  return out;
}

// O(N^2) reference with the same visiting order and border rule.
std::vector<int> dbscan_oracle(const Points3d& p, double eps, int min_pts) {
  const int n = static_cast<int>(p.rows());
  auto nb = [&](int i) {
    std::vector<int> out;
    for (int j = 0; j < n; ++j) {
      if ((p.row(i) - p.row(j)).norm() <= eps) out.push_back(j);
    }
    return out;
  };
  std::vector<int> core(n);
  for (int i = 0; i < n; ++i) core[i] = static_cast<int>(nb(i).size()) >= min_pts;
  std::vector<int> label(n, -1);
  int cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (label[i] != -1 || !core[i]) continue;
    std::vector<int> stack_{i};
    label[i] = cluster;
    while (!stack_.empty()) {
      const int j = stack_.back();
      stack_.pop_back();
      if (!core[j]) continue;
      for (int k : nb(j)) {
        if (label[k] == -1) {
          label[k] = cluster;
          stack_.push_back(k);
        }
      }
    }
    ++cluster;
  }
  return label;
}

TEST(DbscanTest, TwoSeparatedBlobs) {
  std::mt19937_64 rng(1);
  const Points3d p = stack(blob({0, 0, 0}, 30, 0.3, rng), blob({10, 0, 0}, 30, 0.3, rng));
  const auto labels = latte::dbscan(p, 0.5, 5);
  EXPECT_EQ(std::set<int>(labels.begin(), labels.end()), (std::set<int>{0, 1}));
  EXPECT_EQ(latte::group_instances(labels).size(), 2u);
}

TEST(DbscanTest, TooFewPointsAreNoise) {
  std::mt19937_64 rng(2);
  const auto labels = latte::dbscan(blob({0, 0, 0}, 4, 0.1, rng), 0.5, 5);
  for (int l : labels) EXPECT_EQ(l, -1);
}

TEST(DbscanTest, MatchesBruteForceOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> where(-5.0, 5.0);
  for (int trial = 0; trial < 10; ++trial) {
    Points3d p = blob({where(rng), where(rng), 0}, 40, 0.6, rng);
    for (int b = 0; b < 4; ++b) p = stack(p, blob({where(rng), where(rng), where(rng) * 0.2}, 25, 0.8, rng));
    p = stack(p, blob({0, 0, 0}, 30, 5.0, rng));  // sparse background, mostly noise
    EXPECT_EQ(latte::dbscan(p, 0.5, 5), dbscan_oracle(p, 0.5, 5)) << "trial " << trial;
  }
}

TEST(DbscanTest, ExtractInstancesOnlyLabelsRequestedClass) {
  latte::MultiModalFrame f;
  std::mt19937_64 rng(4);
  f.points = stack(blob({0, 0, 0}, 20, 0.3, rng), blob({5, 0, 0}, 20, 0.3, rng));
  f.gt.assign(40, 1);
  std::fill(f.gt.begin() + 20, f.gt.end(), 2);
  const auto labels = latte::extract_instances(f, 2, 0.5, 5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(labels[i], -1);
  for (int i = 20; i < 40; ++i) EXPECT_EQ(labels[i], 0);
  const auto none = latte::extract_instances(f, 3, 0.5, 5);
  for (int l : none) EXPECT_EQ(l, -1);
}

latte::MultiModalFrame cloud_frame(const Points3d& p, int cls) {
  latte::MultiModalFrame f;
  f.points = p;
  f.gt.assign(static_cast<std::size_t>(p.rows()), cls);
  return f;
}

TEST(PromptSimulationTest, SinglePointInstance) {
  std::mt19937_64 rng(5);
  const auto f = cloud_frame(blob({0, 0, 0}, 10, 1.0, rng), 4);
  const std::vector<int> inst{7};
  std::mt19937_64 r(0);
  const int rho = latte::sample_rounds(inst.size(), 5, 10, r);
  EXPECT_EQ(rho, 1);
  const auto p = latte::simulate_prompt(f, 4, inst, rho);
  EXPECT_EQ(p.clicks, std::vector<int>{7});
  EXPECT_EQ(p.rho, 1);
}

TEST(PromptSimulationTest, TenDistinctClicksOnLargeInstance) {
  std::mt19937_64 rng(6);
  const auto f = cloud_frame(blob({0, 0, 0}, 100, 1.0, rng), 4);
  std::vector<int> inst(100);
  std::iota(inst.begin(), inst.end(), 0);
  const auto p = latte::simulate_prompt(f, 4, inst, 10);
  EXPECT_EQ(p.clicks.size(), 10u);
  EXPECT_EQ(std::set<int>(p.clicks.begin(), p.clicks.end()).size(), 10u);
  for (int c : p.clicks) EXPECT_EQ(f.gt[c], 4);
  ASSERT_TRUE(p.box.has_value());
  for (int i : inst) EXPECT_TRUE(p.box->contains(f.points.row(i).transpose()));

  // First click is the point nearest the centroid.
  const Eigen::RowVector3d center = f.points.colwise().mean();
  Eigen::Index nearest;
  (f.points.rowwise() - center).rowwise().squaredNorm().minCoeff(&nearest);
  EXPECT_EQ(p.clicks.front(), nearest);
  EXPECT_EQ(latte::simulate_prompt(f, 4, inst, 10).clicks, p.clicks);
}

TEST(PromptSimulationTest, RoundsWithinClampedBounds) {
  std::mt19937_64 r(9);
  for (int i = 0; i < 200; ++i) {
    const int a = latte::sample_rounds(100, 5, 10, r);
    EXPECT_GE(a, 5);
    EXPECT_LE(a, 10);
    const int b = latte::sample_rounds(3, 5, 10, r);
    EXPECT_EQ(b, 3);
  }
  std::mt19937_64 r1(11), r2(11);
  EXPECT_EQ(latte::sample_rounds(50, 1, 10, r1), latte::sample_rounds(50, 1, 10, r2));
}

TEST(PromptSimulationTest, LaterClicksTargetMissedPoints) {
  std::mt19937_64 rng(7);
  const auto f = cloud_frame(blob({0, 0, 0}, 50, 1.0, rng), 3);
  std::vector<int> inst(50);
  std::iota(inst.begin(), inst.end(), 0);
  // The mask covers everything except points 10..14.
  const latte::MaskFn mask = [](const std::vector<int>&) {
    Eigen::VectorXd m = Eigen::VectorXd::Ones(50);
    m.segment(10, 5).setZero();
    return m;
  };
  const auto p = latte::simulate_prompt(f, 3, inst, 4, mask);
  for (std::size_t j = 1; j < p.clicks.size(); ++j) {
    EXPECT_GE(p.clicks[j], 10);
    EXPECT_LT(p.clicks[j], 15);
  }
}

RowMatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

TEST(PromptableHeadTest, ZeroDecoderGivesHalf) {
  PromptableHead h = PromptableHead::init(8, 1);
  h.dec_weight.setZero();
  h.dec_bias.setZero();
  h.out_weight.setZero();
  h.out_bias = 0.0;
  std::mt19937_64 rng(1);
  const RowMatrixXd x = random_matrix(12, 8, rng);
  const std::vector<int> clicks{3};
  const auto out = latte::head_forward(h, x, clicks, Eigen::VectorXd::Zero(12), Eigen::VectorXd::Zero(12));
  for (Eigen::Index i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(out.probs(i), 0.5);
}

TEST(PromptableHeadTest, DeterministicAndRejectsEmptyClicks) {
  const PromptableHead h = PromptableHead::init(8, 2);
  std::mt19937_64 rng(2);
  const RowMatrixXd x = random_matrix(12, 8, rng);
  const Eigen::VectorXd box = Eigen::VectorXd::Ones(12), prev = Eigen::VectorXd::Zero(12);
  const std::vector<int> clicks{1, 4};
  EXPECT_EQ(latte::head_forward(h, x, clicks, box, prev).probs, latte::head_forward(h, x, clicks, box, prev).probs);
  EXPECT_THROW(latte::head_forward(h, x, std::vector<int>{}, box, prev), latte::ConfigError);
  EXPECT_THROW(latte::head_forward(h, x, std::vector<int>{12}, box, prev), latte::ConfigError);
}

TEST(PromptableHeadTest, FocalGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const PromptableHead h = PromptableHead::init(6, 100 + trial);
    const RowMatrixXd x = random_matrix(9, 6, rng);
    Eigen::VectorXd box(9), prev(9), target(9);
    for (int i = 0; i < 9; ++i) {
      box(i) = coin(rng);
      prev(i) = std::uniform_real_distribution<double>(0, 1)(rng);
      target(i) = coin(rng);
    }
    const std::vector<int> clicks{static_cast<int>(rng() % 9), static_cast<int>(rng() % 9)};
    auto loss = [&](const PromptableHead& q) {
      return latte::focal_loss(latte::head_forward(q, x, clicks, box, prev).logits, target, 2.0, 0.5).value;
    };
    const auto out = latte::head_forward(h, x, clicks, box, prev);
    const auto fl = latte::focal_loss(out.logits, target, 2.0, 0.5);
    const Eigen::VectorXd analytic = latte::head_backward(h, out.cache, fl.dlogits).flatten();
    const Eigen::VectorXd theta = h.flatten();
    const double step = 1e-5;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      PromptableHead plus = h, minus = h;
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += step;
      tm(i) -= step;
      plus.unflatten(tp);
      minus.unflatten(tm);
      const double fd = (loss(plus) - loss(minus)) / (2 * step);
      if (std::abs(fd - analytic(i)) > 1e-9) {
        worst = std::max(worst, std::abs(fd - analytic(i)) / std::max({std::abs(fd), std::abs(analytic(i)), 1e-6}));
      }
    }
  }
  EXPECT_LT(worst, 1e-4);
}

std::vector<latte::MultiModalFrame> source_frames(std::int64_t start, std::int64_t stride, int count) {
  latte::StreamSpec spec;
  spec = spec.source();
  const latte::World world = latte::generate_world(spec.world);
  std::vector<latte::MultiModalFrame> out;
  for (int i = 0; i < count; ++i) out.push_back(latte::render_frame(world, spec, start + i * stride));
  return out;
}

TEST(WarmupTest, ZeroIterationsLeavesHeadUnchanged) {
  PromptableHead h = PromptableHead::init(16, 3);
  const PromptableHead before = h;
  IttaConfig cfg;
  cfg.warmup_iterations = 0;
  latte::warmup_head(h, {}, latte::ClassSet::default_urban(), cfg, 1);
  EXPECT_EQ(h.flatten(), before.flatten());
}

TEST(WarmupTest, HeldOutPromptMaskIoU) {
  const auto train = source_frames(0, 10, 40);
  const auto held = source_frames(5, 10, 40);
  const latte::ClassSet classes = latte::ClassSet::default_urban();
  IttaConfig cfg;
  PromptableHead h = PromptableHead::init(16, 7);
  const auto stats = latte::warmup_head(h, train, classes, cfg, 11);
  EXPECT_EQ(stats.iterations, cfg.warmup_iterations);

  std::mt19937_64 rng(13);
  double total = 0.0;
  int count = 0;
  for (const auto& f : held) {
    for (int c : classes.interest) {
      for (const auto& inst : latte::group_instances(latte::extract_instances(f, c, 0.5, 5))) {
        latte::Prompt p;
        p.t = f.t;
        p.cls = c;
        p.box = latte::bounding_box(f.points, inst);
        p.instance = inst;
        p.rho = latte::sample_rounds(inst.size(), cfg.rho_min, cfg.rho_max, rng);
        total += latte::mask_iou(latte::promptable_mask(h, f, p), 0.5, inst);
        ++count;
      }
    }
  }
  ASSERT_GT(count, 20);
  const double mean_iou = total / count;
  RecordProperty("held_out_mask_iou", std::to_string(mean_iou));
  EXPECT_GE(mean_iou, 0.8);
}

TEST(CentroidTest, IdentityClassifierPointsAlongClassAxis) {
  IttaConfig cfg;
  cfg.centroid_batches = 1;
  cfg.centroid_batch_size = 256;
  const int k = 4;
  const RowMatrixXd w = RowMatrixXd::Identity(k, k);
  for (int c = 0; c < k; ++c) {
    const auto centroid = latte::generate_centroid(w, Eigen::VectorXd::Zero(k), c, cfg, 5 + c);
    EXPECT_TRUE(centroid.converged);
    Eigen::Index best;
    centroid.mean.maxCoeff(&best);
    EXPECT_EQ(best, c);
    EXPECT_NEAR(centroid.mean.norm(), 1.0, 1e-12);
  }
}

TEST(CentroidTest, IdentityClassifierEveryFeaturePointsAlongClassAxis) {
  // The optimized samples themselves, not only their mean, prefer class c.
  IttaConfig cfg;
  cfg.centroid_batches = 1;
  cfg.centroid_batch_size = 128;
  const RowMatrixXd w = RowMatrixXd::Identity(3, 3);
  const auto c0 = latte::generate_centroid(w, Eigen::VectorXd::Zero(3), 2, cfg, 9);
  // With min score > 0.8 every sample's coordinate 2 dominates; the mean does too.
  EXPECT_GT(c0.mean(2), c0.mean(0));
  EXPECT_GT(c0.mean(2), c0.mean(1));
}

TEST(CentroidTest, ZeroThresholdNeedsNoSteps) {
  IttaConfig cfg;
  cfg.centroid_threshold = 0.0;
  cfg.centroid_batches = 1;
  cfg.centroid_batch_size = 64;
  std::mt19937_64 rng(1);
  const auto c = latte::generate_centroid(random_matrix(3, 5, rng), Eigen::VectorXd::Zero(3), 1, cfg, 2);
  EXPECT_EQ(c.steps, 0);
  EXPECT_TRUE(c.converged);
}

TEST(CentroidTest, TwoClassToySeparatedAndCovariancePsd) {
  IttaConfig cfg;
  std::mt19937_64 rng(4);
  const RowMatrixXd w = random_matrix(2, 6, rng);
  const Eigen::VectorXd b = Eigen::VectorXd::Zero(2);
  const auto c0 = latte::generate_centroid(w, b, 0, cfg, 1);
  const auto c1 = latte::generate_centroid(w, b, 1, cfg, 2);
  EXPECT_TRUE(c0.converged && c1.converged);
  EXPECT_EQ(c0.count, 5 * 1024);
  EXPECT_LT(c0.mean.dot(c1.mean), 1.0 - 1e-6);
  EXPECT_NEAR(c0.mean.squaredNorm(), 1.0, 1e-12);
  EXPECT_TRUE(c0.covariance.isApprox(c0.covariance.transpose(), 1e-12));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(c0.covariance));
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(CentroidTest, NonConvergenceIsReported) {
  IttaConfig cfg;
  cfg.centroid_max_steps = 2;
  cfg.centroid_batches = 1;
  cfg.centroid_batch_size = 64;
  cfg.centroid_threshold = 0.999999;
  const RowMatrixXd w = RowMatrixXd::Identity(3, 3) * 0.01;
  const auto c = latte::generate_centroid(w, Eigen::VectorXd::Zero(3), 0, cfg, 3);
  EXPECT_FALSE(c.converged);
  EXPECT_EQ(c.steps, 2);
}

TEST(MaskRefinementTest, Examples) {
  IttaConfig cfg;
  // Hard agreement: logits at +-inf-like magnitude give zero loss.
  Eigen::VectorXd logits(4), teacher(4);
  logits << 800, -800, 800, -800;
  teacher << 1, 0, 1, 0;
  EXPECT_NEAR(latte::mask_refinement_loss(logits, teacher, cfg).value, 0.0, 1e-300);

  cfg.lambda_p = 0.0;
  EXPECT_EQ(latte::mask_refinement_loss(Eigen::VectorXd::Zero(4), teacher, cfg).value, 0.0);

  // p = 0.5 everywhere, half ones: alpha_t (1/2)^2 ln 2 for every point.
  cfg.lambda_p = 0.01;
  const double oracle = 0.01 * (0.5 * 0.25 * std::log(2.0));
  EXPECT_NEAR(latte::mask_refinement_loss(Eigen::VectorXd::Zero(4), teacher, cfg).value, oracle, 1e-15);
  EXPECT_NEAR(latte::focal_loss_value(Eigen::VectorXd::Constant(4, 0.5), teacher, 2.0, 0.5), oracle / 0.01, 1e-15);
}

TEST(ClusteringTest, AnchorAtCentroidWithoutCandidatesIsZero) {
  RowMatrixXd f(3, 4);
  f << 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0;
  const std::vector<int> mask{0, 1};
  const std::vector<int> pred{0, 0, 0};
  Eigen::RowVectorXd mu(4);
  mu << 1, 0, 0, 0;
  const auto r = latte::clustering_objective(f, mask, pred, /*anchor_class=*/2, mu, IttaConfig{});
  EXPECT_NEAR(r.value, 0.0, 1e-15);
  EXPECT_TRUE(r.inliers.empty());
  EXPECT_TRUE(r.outliers.empty());
}

TEST(ClusteringTest, IdenticalFeaturesHaveNoOutliers) {
  RowMatrixXd f = RowMatrixXd::Ones(5, 3);
  const std::vector<int> mask{0, 1}, pred{1, 1, 1, 1, 1};
  const auto r = latte::clustering_objective(f, mask, pred, 1, Eigen::RowVectorXd::Ones(3), IttaConfig{});
  EXPECT_EQ(r.inliers.size(), 5u);
  EXPECT_TRUE(r.outliers.empty());
  // Every s is 1 and the anchor sits on the centroid: only -lambda_cls remains.
  EXPECT_NEAR(r.value, -1.0, 1e-12);
}

TEST(ClusteringTest, HandBuiltThresholds) {
  // Anchor along e0; four candidates with cosines {1.0, 0.95, 0.5, -0.2}.
  auto unit = [](double c) {
    Eigen::RowVector3d v(c, std::sqrt(1.0 - c * c), 0.0);
    return v;
  };
  RowMatrixXd f(5, 3);
  f.row(0) = unit(1.0);
  f.row(1) = unit(0.95);
  f.row(2) = unit(0.5);
  f.row(3) = unit(-0.2);
  f.row(4) << 1, 0, 0;  // masked anchor point, different predicted class
  const std::vector<int> mask{4};
  const std::vector<int> pred{3, 3, 3, 3, 1};
  const auto r = latte::clustering_objective(f, mask, pred, 3, Eigen::RowVector3d(1, 0, 0), IttaConfig{});
  EXPECT_EQ(r.inliers, (std::vector<int>{0, 1}));
  EXPECT_EQ(r.outliers, (std::vector<int>{2, 3}));
  EXPECT_NEAR(r.value, -(1.0 + 0.95) / 2 + (0.5 - 0.2) / 2, 1e-12);
}

TEST(ClusteringTest, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (Convention conv : {Convention::kIntent, Convention::kPaperLiteral}) {
    IttaConfig cfg;
    cfg.convention = conv;
    if (conv == Convention::kPaperLiteral) {
      cfg.tau_in = std::exp(0.3);
      cfg.tau_out = std::exp(-0.1);
    } else {
      cfg.tau_in = 0.3;
      cfg.tau_out = -0.1;
    }
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      RowMatrixXd f = random_matrix(10, 5, rng);
      const Eigen::RowVectorXd mu = random_matrix(1, 5, rng).row(0);
      std::vector<int> pred(10);
      for (auto& p : pred) p = static_cast<int>(rng() % 2);
      const std::vector<int> mask{0, 1, 2};
      const auto r = latte::clustering_objective(f, mask, pred, 1, mu, cfg);
      for (Eigen::Index i = 0; i < f.size(); ++i) {
        RowMatrixXd fp = f, fm = f;
        fp.data()[i] += 1e-6;
        fm.data()[i] -= 1e-6;
        const auto rp = latte::clustering_objective(fp, mask, pred, 1, mu, cfg);
        const auto rm = latte::clustering_objective(fm, mask, pred, 1, mu, cfg);
        if (rp.inliers != r.inliers || rm.inliers != r.inliers || rp.outliers != r.outliers ||
            rm.outliers != r.outliers) {
          continue;  // selection changed inside the stencil
        }
        const double fd = (rp.value - rm.value) / 2e-6;
        const double an = r.dfeatures.data()[i];
        if (std::abs(fd - an) > 1e-9) {
          worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
        }
      }
    }
    EXPECT_LT(worst, 1e-4);
  }
}

std::vector<Eigen::VectorXd> tensors(std::initializer_list<Eigen::VectorXd> v) { return v; }

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TEST(MomentumRecordTest, CosineExamples) {
  const auto same = latte::record_momentum_grad(tensors({vec({1, 2})}), tensors({vec({1, 2})}), 0);
  EXPECT_NEAR(same.cosine[0], 1.0, 1e-15);
  const auto ortho = latte::record_momentum_grad(tensors({vec({1, 0})}), tensors({vec({0, 3})}), 0);
  EXPECT_EQ(ortho.cosine[0], 0.0);
  const auto diag = latte::record_momentum_grad(tensors({vec({1, 0})}), tensors({vec({1, 1})}), 0);
  EXPECT_NEAR(diag.cosine[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(diag.cosine[0], 0.70711, 5e-6);
  const auto zero = latte::record_momentum_grad(tensors({vec({0, 0})}), tensors({vec({1, 1})}), 0);
  EXPECT_EQ(zero.cosine[0], 0.0);
  EXPECT_EQ(zero.degenerate[0], 1);
  // A new record replaces the old one.
  EXPECT_EQ(latte::record_momentum_grad(tensors({vec({3, 0})}), tensors({vec({1, 0})}), 7).step, 7);
}

TEST(MomentumReuseTest, HandGeometry) {
  const Eigen::VectorXd r = latte::reuse_direction(vec({1, 0}), 0.0, vec({0, 2}), 1.0);
  EXPECT_NEAR(r(0), 1.0, 1e-15);
  EXPECT_NEAR(r(1), 0.0, 1e-15);
  EXPECT_EQ(latte::reuse_direction(vec({1, 0}), 0.5, vec({0, 0}), 1.0).size(), 0);
}

TEST(MomentumReuseTest, DecayAndWindow) {
  IttaConfig cfg;
  auto rec = latte::record_momentum_grad(tensors({vec({1, 0})}), tensors({vec({1, 1})}), 10);
  const auto g = tensors({vec({0.3, -1.2})});
  const auto at2 = latte::reuse_momentum_grad(rec, g, 12, cfg);
  EXPECT_NEAR(at2[0].norm(), 0.81, 1e-12);
  EXPECT_EQ(latte::reuse_momentum_grad(rec, g, 21, cfg)[0].norm(), 0.0);
  EXPECT_GT(latte::reuse_momentum_grad(rec, g, 20, cfg)[0].norm(), 0.0);
  EXPECT_EQ(latte::reuse_momentum_grad(rec, g, 10, cfg)[0].norm(), 0.0);
  for (std::int64_t k = 11; k < 20; ++k) {
    const double a = latte::reuse_momentum_grad(rec, g, k, cfg)[0].norm();
    const double b = latte::reuse_momentum_grad(rec, g, k + 1, cfg)[0].norm();
    EXPECT_NEAR(b / a, cfg.gamma_mg, 1e-14);
  }
  latte::MGRecord empty;
  EXPECT_EQ(latte::reuse_momentum_grad(empty, g, 1, cfg)[0].norm(), 0.0);
}

TEST(MomentumReuseTest, GeometryProperties) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd g_mg = random_matrix(6, 1, rng).col(0);
    const Eigen::VectorXd g_t = random_matrix(6, 1, rng).col(0);
    const Eigen::VectorXd g_k = random_matrix(6, 1, rng).col(0);
    const auto rec = latte::record_momentum_grad({g_mg}, {g_t}, 0);
    const double decay = std::pow(0.9, 1 + trial % 10);
    const Eigen::VectorXd r = latte::reuse_direction(g_mg, rec.cosine[0], g_k, decay);
    EXPECT_NEAR(r.dot(g_k) / (r.norm() * g_k.norm()), rec.cosine[0], 1e-6);
    EXPECT_NEAR(r.norm(), decay * g_mg.norm(), 1e-6);
    // Residual after projecting onto span{g_k, g_mg}.
    Eigen::MatrixXd basis(6, 2);
    basis << g_k, g_mg;
    const Eigen::VectorXd coef = basis.colPivHouseholderQr().solve(r);
    EXPECT_LT((basis * coef - r).norm(), 1e-9);
  }
}

TEST(MomentumReuseTest, ParallelRecordFallsBackToSignedDirection) {
  const Eigen::VectorXd r = latte::reuse_direction(vec({2, 0}), -1.0, vec({5, 0}), 0.5);
  EXPECT_NEAR(r(0), -1.0, 1e-15);
  EXPECT_NEAR(r(1), 0.0, 1e-15);
}

TEST(IttaConfigTest, Validation) {
  IttaConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.tau_out = 0.95;
  EXPECT_THROW(cfg.validate(), latte::ConfigError);
  cfg = IttaConfig{};
  cfg.p_i = 1.5;
  EXPECT_THROW(cfg.validate(), latte::ConfigError);
}

}  // namespace
