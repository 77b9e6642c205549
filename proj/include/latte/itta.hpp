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

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "latte/losses.hpp"
#include "latte/mlp.hpp"
#include "latte/optim.hpp"
#include "latte/types.hpp"

namespace latte {

struct IttaConfig {
  double p_i = 0.01;
  double tau_in = 0.9;
  double tau_out = 0.7;
  double lambda_p = 0.01;
  double lambda_ac = 1.0;
  double lambda_cls = 1.0;
  double gamma_mg = 0.9;
  int dt_max = 10;
  double focal_gamma = 2.0;
  double focal_alpha = 0.5;
  double mask_threshold = 0.5;
  int rho_min = 5;
  int rho_max = 10;
  int warmup_rho_min = 1;
  int warmup_rho_max = 10;
  int warmup_iterations = 2000;
  double warmup_lr = 3e-3;
  double dbscan_eps = 0.5;
  int dbscan_min_pts = 5;
  int centroid_batches = 5;
  int centroid_batch_size = 1024;
  double centroid_threshold = 0.8;
  double centroid_lr = 0.1;
  int centroid_max_steps = 10000;
  Convention convention = Convention::kIntent;

  void validate() const;
};

/// Density clustering with eps-neighborhoods (inclusive) and core points
/// having at least `min_pts` neighbors including themselves. Clusters are
/// numbered in order of their first core point; noise is -1.
std::vector<int> dbscan(const Points3d& points, double eps, int min_pts);

/// DBSCAN over the ground-truth class-c points of a frame. Returns one label
/// per frame point; points of other classes and noise are -1.
std::vector<int> extract_instances(const MultiModalFrame& frame, int cls, double eps, int min_pts);

/// Point indices per instance id, ordered by id.
std::vector<std::vector<int>> group_instances(std::span<const int> labels);

struct Box {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

Box bounding_box(const Points3d& points, std::span<const int> indices);

enum class PromptOrigin { kSimulated, kHuman };

struct Prompt {
  std::int64_t t = 0;
  int cls = 0;
  std::vector<int> clicks;
  std::optional<Box> box;
  int rho = 1;
  // Simulator only: the target instance, used to place further clicks.
  std::vector<int> instance;
  PromptOrigin origin = PromptOrigin::kSimulated;
  // Opaque id chosen by the prompt source, echoed back in update reports.
  std::int64_t ticket = -1;
  // Filled by the adaptation loop: points whose labels the prompt overrode.
  std::vector<int> mask;
};

/// Uniform round count in [min(lo, n), min(hi, n)].
int sample_rounds(std::size_t instance_size, int lo, int hi, std::mt19937_64& rng);

/// Per-point mask probabilities for the frame given the clicks so far.
using MaskFn = std::function<Eigen::VectorXd(const std::vector<int>& clicks)>;

/// First click is the instance point nearest the instance centroid. Later
/// clicks go to the instance point farthest from existing clicks among those
/// the mask currently misses, else among all unclicked instance points.
/// Without a mask every unclicked point counts as missed.
Prompt simulate_prompt(const MultiModalFrame& frame, int cls, std::span<const int> instance, int rho,
                       const MaskFn& mask = {});

/// Surrogate promptable segmentation head. The bottleneck maps 2D features
/// to 16 dims through two affine -> layer norm -> GELU stages; the decoder
/// reads [feature, mean click feature, in-box flag, previous mask].
struct PromptableHead {
  static constexpr int kDim = 16;
  static constexpr int kHidden = 16;

  std::array<NormDense, 2> bottleneck;
  RowMatrixXd dec_weight;  // kHidden x (2 kDim + 2)
  Eigen::VectorXd dec_bias;
  Eigen::RowVectorXd out_weight;  // 1 x kHidden
  double out_bias = 0.0;

  static PromptableHead init(int input_dim, std::uint64_t seed);
  static PromptableHead zeros_like(const PromptableHead& other);

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& s : bottleneck) {
      f(std::span<double>(s.weight.data(), static_cast<std::size_t>(s.weight.size())));
      f(std::span<double>(s.bias.data(), static_cast<std::size_t>(s.bias.size())));
      f(std::span<double>(s.gamma.data(), static_cast<std::size_t>(s.gamma.size())));
      f(std::span<double>(s.beta.data(), static_cast<std::size_t>(s.beta.size())));
    }
    f(std::span<double>(dec_weight.data(), static_cast<std::size_t>(dec_weight.size())));
    f(std::span<double>(dec_bias.data(), static_cast<std::size_t>(dec_bias.size())));
    f(std::span<double>(out_weight.data(), static_cast<std::size_t>(out_weight.size())));
    f(std::span<double>(&out_bias, 1));
  }

  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& values);
};

struct HeadCache {
  std::array<RowMatrixXd, 2> input;
  std::array<LayerNormCache, 2> ln;
  std::array<RowMatrixXd, 2> normalized;  // before GELU
  RowMatrixXd features;
  std::vector<int> clicks;
  RowMatrixXd dec_input;
  RowMatrixXd hidden_pre;
};

struct HeadOutput {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
  HeadCache cache;
};

HeadOutput head_forward(const PromptableHead& head, const RowMatrixXd& feat2d, std::span<const int> clicks,
                        const Eigen::VectorXd& in_box, const Eigen::VectorXd& prev_mask);
PromptableHead head_backward(const PromptableHead& head, const HeadCache& cache, const Eigen::VectorXd& dlogits);

/// 1 for points inside the box, all zeros without one.
Eigen::VectorXd box_indicator(const Points3d& points, const std::optional<Box>& box);

/// Runs one round per click prefix, feeding each round's mask to the next,
/// and returns the final probabilities. Simulated prompts with fewer clicks
/// than rounds grow their clicks from the running mask first.
Eigen::VectorXd promptable_mask(const PromptableHead& head, const MultiModalFrame& frame, Prompt& prompt);

/// Probability-thresholded mask IoU against a set of truth indices.
double mask_iou(const Eigen::VectorXd& probs, double threshold, std::span<const int> truth);

struct WarmupStats {
  int iterations = 0;
  double mean_loss_last = 0.0;  // mean focal loss over the final 100 iterations
};

/// Trains bottleneck and decoder on simulated prompts over source frames,
/// supervised by ground-truth instance masks.
WarmupStats warmup_head(PromptableHead& head, std::span<const MultiModalFrame> frames, const ClassSet& classes,
                        const IttaConfig& config, std::uint64_t seed);

struct Centroid {
  Eigen::RowVectorXd mean;  // unit norm
  RowMatrixXd covariance;
  int count = 0;
  int steps = 0;
  bool converged = false;
};

/// Feature inversion through a frozen linear classifier: random normal
/// features ascend the class log-score until every score exceeds the
/// threshold.
Centroid generate_centroid(const RowMatrixXd& cls_weight, const Eigen::VectorXd& cls_bias, int cls,
                           const IttaConfig& config, std::uint64_t seed);

/// Centroids per modality indexed by class; classes not generated have
/// count 0.
struct CentroidSet {
  std::array<std::vector<Centroid>, 2> modality;

  const Centroid& at(Modality m, int cls) const { return modality[index_of(m)].at(static_cast<std::size_t>(cls)); }
  bool has(Modality m, int cls) const;
};

CentroidSet generate_centroids(const std::array<const MlpParams*, 2>& classifiers, std::span<const int> classes,
                               const IttaConfig& config, std::uint64_t seed);

/// lambda_p * focal(student mask, thresholded teacher mask).
FocalLoss mask_refinement_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_probs,
                               const IttaConfig& config);

struct ClusteringResult {
  double value = 0.0;
  RowMatrixXd dfeatures;  // gradient on the raw (unnormalized) features
  std::vector<int> inliers;
  std::vector<int> outliers;
};

/// Feature clustering around the masked anchor. `raw_features` are the
/// classifier's last hidden activations; rows are normalized internally.
/// Candidates are the points whose predicted class equals `anchor_class`.
ClusteringResult clustering_objective(const RowMatrixXd& raw_features, std::span<const int> mask,
                                      std::span<const int> predicted, int anchor_class,
                                      const Eigen::RowVectorXd& centroid, const IttaConfig& config);

struct MGRecord {
  std::vector<Eigen::VectorXd> grad;
  std::vector<double> cosine;
  std::vector<std::uint8_t> degenerate;
  std::int64_t step = 0;
  bool valid = false;
};

MGRecord record_momentum_grad(const std::vector<Eigen::VectorXd>& g_mg, const std::vector<Eigen::VectorXd>& g,
                              std::int64_t step);

/// Reuse for one tensor given the stored gradient and angle; returns an
/// empty vector when the current gradient has zero norm.
Eigen::VectorXd reuse_direction(const Eigen::VectorXd& g_mg, double cosine, const Eigen::VectorXd& g_k, double decay,
                                Convention convention = Convention::kIntent);

/// Contribution for step k; zero tensors when k - record.step is outside
/// [1, dt_max] or the record is empty.
std::vector<Eigen::VectorXd> reuse_momentum_grad(const MGRecord& record, const std::vector<Eigen::VectorXd>& g_k,
                                                 std::int64_t k, const IttaConfig& config);

}  // namespace latte
