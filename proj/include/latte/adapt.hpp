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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latte/itta.hpp"
#include "latte/metrics.hpp"
#include "latte/mlp.hpp"
#include "latte/optim.hpp"
#include "latte/reliability.hpp"
#include "latte/synth.hpp"
#include "latte/voxel.hpp"

namespace latte {

enum class Method { kSourceOnly, kOracle, kTentLike, kPsLabel, kLatte, kLattePP };

struct MethodSpec {
  Method base = Method::kLatte;
  bool itta = false;

  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

std::string method_name(MethodSpec method);
/// Accepts e.g. "latte", "latte_pp+itta". Throws ConfigError otherwise.
MethodSpec parse_method(std::string_view name);

struct ModelPair {
  MlpParams student;
  MlpParams teacher;
  Modality modality = Modality::k2D;

  static ModelPair from(const MlpParams& params, Modality m) { return {params, params, m}; }
};

using Models = std::array<ModelPair, 2>;

/// theta_teacher <- lambda_s * theta_teacher + (1 - lambda_s) * theta_student.
void ema_update(ModelPair& pair, double lambda_s);

struct AdaptConfig {
  MethodSpec method;
  int batch = 2;
  double lambda_xm = 0.3;
  double lambda_s = 0.99;
  AdamWConfig optimizer{1e-3, 0.9, 0.999, 1e-8, 0.01};
  UpdateScope scope = UpdateScope::kNormOnly;
  WindowConfig windows = WindowConfig::latte();
  Convention convention = Convention::kIntent;
  double pslabel_threshold = 0.9;
  std::optional<IttaConfig> itta;
  bool record_timing = false;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Row ranges of each frame inside a batch-stacked matrix.
struct BatchLayout {
  std::vector<std::int64_t> t;
  std::vector<Eigen::Index> offset;
  std::vector<Eigen::Index> rows;

  void add(std::int64_t frame, Eigen::Index count);
  std::size_t size() const { return t.size(); }
  Eigen::Index total_rows() const { return offset.empty() ? 0 : offset.back() + rows.back(); }
  /// Position of frame t in the layout, or -1.
  std::int64_t find(std::int64_t frame) const;
};

struct LossTerms {
  double total = 0.0;
  double ce = 0.0;
  double xm = 0.0;
  std::array<RowMatrixXd, 2> dlogits;
};

/// Sum over frames and modalities of the mean cross-entropy against
/// per-modality labels (-1 ignored), plus (lambda_xm / batch) times the
/// summed voxel consistency losses. Labels and references are constants.
LossTerms overall_loss(const std::array<RowMatrixXd, 2>& student_probs, const BatchLayout& layout,
                       const std::array<std::vector<std::vector<int>>, 2>& labels,
                       const std::vector<QueryFrameVoxels>& voxels, double lambda_xm, int batch,
                       Convention convention = Convention::kIntent);

/// Sum over frames and modalities of the mean prediction entropy.
LossTerms entropy_objective(const std::array<RowMatrixXd, 2>& student_probs, const BatchLayout& layout);

/// Teacher argmax labels kept where the max probability reaches the threshold.
std::vector<int> confident_labels(const RowMatrixXd& probs, double threshold);

struct PretrainConfig {
  std::vector<int> hidden{32, 32};
  int steps = 1500;
  int batch_points = 1024;
  int pool_frames = 40;
  AdamWConfig optimizer{1e-2, 0.9, 0.999, 1e-8, 0.01};
  std::uint64_t seed = 42;
};

/// Supervised training of both modality classifiers on source-distribution
/// frames of the stream's world.
Models pretrain_source(const World& world, const StreamSpec& spec, const PretrainConfig& config);

/// Per-modality mIoU of the students on `frames`.
std::array<double, 2> evaluate_models(const Models& models, std::span<const MultiModalFrame> frames, int num_classes);

struct FrameStream {
  std::int64_t length = 0;
  std::function<MultiModalFrame(std::int64_t)> frame;
};

FrameStream make_stream(const World& world, const StreamSpec& spec);

struct FrameRecord {
  std::int64_t t = 0;
  double miou_xm = 0.0;
  double miou_2d = 0.0;
  double miou_3d = 0.0;
  std::vector<std::optional<double>> iou;
  double loss_total = 0.0;
  double loss_xm = 0.0;
  int n_prompts = 0;
  std::optional<double> wall_ms;
  // Number of optimizer updates applied before this frame was evaluated.
  std::int64_t param_version = 0;
};

struct LoopEvent {
  enum class Kind { kEvaluate, kUpdate };
  Kind kind = Kind::kEvaluate;
  std::int64_t t = 0;
  std::int64_t version = 0;
};

struct RunLog {
  std::vector<FrameRecord> frames;
  // Accumulated confusion for the fused, 2D and 3D predictions.
  std::vector<ConfusionMatrix> confusion;
  std::vector<LoopEvent> events;
  std::int64_t updates = 0;
  int prompts_simulated = 0;
  int prompts_human = 0;
  int prompts_dropped = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  double mean_miou_xm() const;
};

/// Assets shared by interactive runs: warmed-up head and class centroids.
struct IttaAssets {
  PromptableHead head;
  CentroidSet centroids;
  WarmupStats warmup;
};

IttaAssets prepare_itta(const Models& models, const World& world, const StreamSpec& spec, const ClassSet& classes,
                        const IttaConfig& config, std::uint64_t seed);

/// Supplies prompts once per batch, after evaluation. `batch` holds the
/// batch frames; prompts may also target earlier frames still buffered.
class PromptSource {
 public:
  virtual ~PromptSource() = default;
  virtual std::vector<Prompt> collect(std::span<const MultiModalFrame* const> batch) = 0;
};

/// Per-frame Bernoulli(p_I) activation. An activation on a frame without a
/// usable instance carries over to the next frame that has one.
class SimulatedPrompts : public PromptSource {
 public:
  SimulatedPrompts(ClassSet classes, IttaConfig config, std::uint64_t seed);
  std::vector<Prompt> collect(std::span<const MultiModalFrame* const> batch) override;

  int activations() const { return activations_; }

 private:
  ClassSet classes_;
  IttaConfig config_;
  std::uint64_t seed_;
  int activations_ = 0;
  int pending_ = 0;
};

struct FrameView {
  const MultiModalFrame& frame;
  const PredictionFrame& predictions;  // the reported per-modality predictions
  const FusedFrame& fused;
  // Propagated point entropies; null for methods without reliability.
  const PointReliability* reliability;
  std::int64_t param_version;
};

struct UpdateView {
  std::int64_t first_t = 0;
  std::int64_t last_t = 0;
  std::int64_t version = 0;  // after the update
  // Supervision used for each batch frame, per modality (-1 = none).
  const std::array<std::vector<std::vector<int>>, 2>& labels;
  std::span<const Prompt> prompts;
  // Norm of the reused clustering gradient added this update (0 if none).
  double reuse_norm = 0.0;
};

class AdaptObserver {
 public:
  virtual ~AdaptObserver() = default;
  virtual void on_evaluated(const FrameView&) {}
  virtual void on_updated(const UpdateView&) {}
  virtual void on_record(const FrameRecord&) {}
};

/// One-pass adaptation: each batch is evaluated with the current parameters,
/// then used for one update. A batch without any supervision signal (no
/// labeled rows, voxel terms or prompts) skips the update. Models are
/// modified in place.
RunLog run_adaptation(const FrameStream& stream, Models& models, const AdaptConfig& config, const ClassSet& classes,
                      const IttaAssets* itta = nullptr, PromptSource* prompts = nullptr,
                      AdaptObserver* observer = nullptr);

}  // namespace latte
