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

#include "latte/itta.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "latte/voxel.hpp"

namespace latte {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
double gelu_grad(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); }

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Unclicked instance point farthest from the existing clicks, restricted to
// points the mask misses when any exist. -1 when every point is clicked.
int next_click(const Points3d& points, std::span<const int> instance, const std::vector<int>& clicks,
               const Eigen::VectorXd* mask, double threshold) {
  int best = -1;
  double best_dist = -1.0;
  bool best_missed = false;
  for (int idx : instance) {
    if (std::find(clicks.begin(), clicks.end(), idx) != clicks.end()) continue;
    const bool missed = mask == nullptr || (*mask)(idx) <= threshold;
    double d = std::numeric_limits<double>::infinity();
    for (int c : clicks) d = std::min(d, (points.row(idx) - points.row(c)).squaredNorm());
    if ((missed && !best_missed) || (missed == best_missed && d > best_dist)) {
      best = idx;
      best_dist = d;
      best_missed = missed;
    }
  }
  return best;
}

int centroid_click(const Points3d& points, std::span<const int> instance) {
  Eigen::RowVector3d center = Eigen::RowVector3d::Zero();
  for (int idx : instance) center += points.row(idx);
  center /= static_cast<double>(instance.size());
  int best = instance.front();
  double best_dist = std::numeric_limits<double>::infinity();
  for (int idx : instance) {
    const double d = (points.row(idx) - center).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = idx;
    }
  }
  return best;
}

// Rounds of click growth; returns the final round's forward output.
HeadOutput run_rounds(const PromptableHead& head, const RowMatrixXd& feat2d, const Points3d& points, Prompt& prompt,
                      double threshold) {
  const bool grow = !prompt.instance.empty();
  if (prompt.clicks.empty()) {
    if (!grow) throw ConfigError("prompt has no clicks");
    prompt.clicks.push_back(centroid_click(points, prompt.instance));
  }
  for (int c : prompt.clicks) {
    if (c < 0 || c >= points.rows()) throw ConfigError("prompt click index out of range");
  }
  const int rounds = grow ? std::max<int>(prompt.rho, 1) : static_cast<int>(prompt.clicks.size());
  const Eigen::VectorXd in_box = box_indicator(points, prompt.box);
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(points.rows());
  HeadOutput out;
  for (int j = 1; j <= rounds; ++j) {
    if (grow && static_cast<int>(prompt.clicks.size()) < j) {
      const int c = next_click(points, prompt.instance, prompt.clicks, &prev, threshold);
      if (c < 0) break;
      prompt.clicks.push_back(c);
    }
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(j), prompt.clicks.size());
    out = head_forward(head, feat2d, std::span<const int>(prompt.clicks.data(), n), in_box, prev);
    prev = out.probs;
  }
  return out;
}

}  // namespace

void IttaConfig::validate() const {
  if (!(p_i >= 0.0 && p_i <= 1.0)) throw ConfigError("itta: p_i must lie in [0, 1]");
  if (!(tau_out <= tau_in)) throw ConfigError("itta: tau_out must not exceed tau_in");
  if (lambda_p < 0 || lambda_ac < 0 || lambda_cls < 0) throw ConfigError("itta: loss weights must be non-negative");
  if (!(gamma_mg >= 0.0 && gamma_mg <= 1.0)) throw ConfigError("itta: gamma_mg must lie in [0, 1]");
  if (dt_max < 0) throw ConfigError("itta: dt_max must be non-negative");
  if (rho_min < 1 || rho_max < rho_min || warmup_rho_min < 1 || warmup_rho_max < warmup_rho_min) {
    throw ConfigError("itta: invalid round bounds");
  }
  if (warmup_iterations < 0) throw ConfigError("itta: warmup_iterations must be non-negative");
  if (!(dbscan_eps > 0.0) || dbscan_min_pts < 1) throw ConfigError("itta: invalid clustering parameters");
  if (centroid_batches < 1 || centroid_batch_size < 2 || centroid_max_steps < 0) {
    throw ConfigError("itta: invalid centroid sampling");
  }
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) throw ConfigError("itta: mask_threshold must lie in (0, 1)");
}

std::vector<int> dbscan(const Points3d& points, double eps, int min_pts) {
  if (!(eps > 0.0)) throw ConfigError("dbscan: eps must be positive");
  const Eigen::Index n = points.rows();
  std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> cells;
  std::vector<VoxelKey> key(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    key[static_cast<std::size_t>(i)] = voxel_key(points(i, 0), points(i, 1), points(i, 2), eps);
    cells[key[static_cast<std::size_t>(i)]].push_back(static_cast<int>(i));
  }
  const double eps2 = eps * eps;
  auto neighbors = [&](int i, std::vector<int>& out) {
    out.clear();
    const VoxelKey& k = key[static_cast<std::size_t>(i)];
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = cells.find(VoxelKey{k.x + dx, k.y + dy, k.z + dz});
          if (it == cells.end()) continue;
          for (int j : it->second) {
            if ((points.row(i) - points.row(j)).squaredNorm() <= eps2) out.push_back(j);
          }
        }
      }
    }
  };

  constexpr int kUnvisited = -2;
  std::vector<int> labels(static_cast<std::size_t>(n), kUnvisited);
  std::vector<int> nb, queue;
  int cluster = 0;
  for (int i = 0; i < static_cast<int>(n); ++i) {
    if (labels[static_cast<std::size_t>(i)] != kUnvisited) continue;
    neighbors(i, nb);
    if (static_cast<int>(nb.size()) < min_pts) {
      labels[static_cast<std::size_t>(i)] = -1;
      continue;
    }
    labels[static_cast<std::size_t>(i)] = cluster;
    queue = nb;
    for (std::size_t q = 0; q < queue.size(); ++q) {
      const int j = queue[q];
      int& lj = labels[static_cast<std::size_t>(j)];
      if (lj == -1) lj = cluster;
      if (lj != kUnvisited) continue;
      lj = cluster;
      neighbors(j, nb);
      if (static_cast<int>(nb.size()) >= min_pts) queue.insert(queue.end(), nb.begin(), nb.end());
    }
    ++cluster;
  }
  return labels;
}

std::vector<int> extract_instances(const MultiModalFrame& frame, int cls, double eps, int min_pts) {
  std::vector<int> members;
  for (std::size_t i = 0; i < frame.gt.size(); ++i) {
    if (frame.gt[i] == cls) members.push_back(static_cast<int>(i));
  }
  std::vector<int> labels(frame.gt.size(), -1);
  if (static_cast<int>(members.size()) < min_pts) return labels;
  Points3d sub(static_cast<Eigen::Index>(members.size()), 3);
  for (std::size_t k = 0; k < members.size(); ++k) sub.row(static_cast<Eigen::Index>(k)) = frame.points.row(members[k]);
  const std::vector<int> local = dbscan(sub, eps, min_pts);
  for (std::size_t k = 0; k < members.size(); ++k) labels[static_cast<std::size_t>(members[k])] = local[k];
  return labels;
}

std::vector<std::vector<int>> group_instances(std::span<const int> labels) {
  int count = 0;
  for (int l : labels) count = std::max(count, l + 1);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) out[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  return out;
}

Box bounding_box(const Points3d& points, std::span<const int> indices) {
  if (indices.empty()) throw ConfigError("bounding box of an empty point set");
  Box box;
  box.min = points.row(indices.front()).transpose();
  box.max = box.min;
  for (int idx : indices) {
    box.min = box.min.cwiseMin(points.row(idx).transpose());
    box.max = box.max.cwiseMax(points.row(idx).transpose());
  }
  return box;
}

int sample_rounds(std::size_t instance_size, int lo, int hi, std::mt19937_64& rng) {
  const int n = static_cast<int>(std::min<std::size_t>(instance_size, std::numeric_limits<int>::max()));
  if (n < 1) throw ConfigError("cannot sample rounds for an empty instance");
  std::uniform_int_distribution<int> dist(std::min(lo, n), std::min(hi, n));
  return dist(rng);
}

Prompt simulate_prompt(const MultiModalFrame& frame, int cls, std::span<const int> instance, int rho,
                       const MaskFn& mask) {
  if (instance.empty()) throw ConfigError("cannot prompt an empty instance");
  Prompt p;
  p.t = frame.t;
  p.cls = cls;
  p.rho = std::clamp<int>(rho, 1, static_cast<int>(instance.size()));
  p.box = bounding_box(frame.points, instance);
  p.instance.assign(instance.begin(), instance.end());
  p.clicks.push_back(centroid_click(frame.points, instance));
  while (static_cast<int>(p.clicks.size()) < p.rho) {
    Eigen::VectorXd current;
    if (mask) current = mask(p.clicks);
    const int c = next_click(frame.points, instance, p.clicks, mask ? &current : nullptr, 0.5);
    if (c < 0) break;
    p.clicks.push_back(c);
  }
  return p;
}

PromptableHead PromptableHead::init(int input_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](RowMatrixXd& m, int rows, int cols, double scale) {
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
  };
  PromptableHead h;
  int in = input_dim;
  for (auto& s : h.bottleneck) {
    fill(s.weight, kDim, in, std::sqrt(2.0 / in));
    s.bias = Eigen::VectorXd::Zero(kDim);
    s.gamma = Eigen::VectorXd::Ones(kDim);
    s.beta = Eigen::VectorXd::Zero(kDim);
    in = kDim;
  }
  fill(h.dec_weight, kHidden, 2 * kDim + 2, std::sqrt(2.0 / (2 * kDim + 2)));
  h.dec_bias = Eigen::VectorXd::Zero(kHidden);
  RowMatrixXd ow;
  fill(ow, 1, kHidden, std::sqrt(1.0 / kHidden));
  h.out_weight = ow.row(0);
  h.out_bias = 0.0;
  return h;
}

PromptableHead PromptableHead::zeros_like(const PromptableHead& other) {
  PromptableHead h = other;
  h.for_each_tensor([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return h;
}

Eigen::VectorXd PromptableHead::flatten() const {
  std::vector<double> values;
  const_cast<PromptableHead*>(this)->for_each_tensor(
      [&](std::span<double> s) { values.insert(values.end(), s.begin(), s.end()); });
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void PromptableHead::unflatten(const Eigen::VectorXd& values) {
  Eigen::Index offset = 0;
  for_each_tensor([&](std::span<double> s) {
    if (offset + static_cast<Eigen::Index>(s.size()) > values.size()) throw ConfigError("head: vector too short");
    std::copy_n(values.data() + offset, s.size(), s.begin());
    offset += static_cast<Eigen::Index>(s.size());
  });
  if (offset != values.size()) throw ConfigError("head: vector too long");
}

HeadOutput head_forward(const PromptableHead& head, const RowMatrixXd& feat2d, std::span<const int> clicks,
                        const Eigen::VectorXd& in_box, const Eigen::VectorXd& prev_mask) {
  if (clicks.empty()) throw ConfigError("promptable mask needs at least one click");
  const Eigen::Index n = feat2d.rows();
  if (in_box.size() != n || prev_mask.size() != n) throw ConfigError("prompt inputs do not match the frame");
  HeadOutput out;
  HeadCache& c = out.cache;
  RowMatrixXd x = feat2d;
  for (std::size_t s = 0; s < head.bottleneck.size(); ++s) {
    const NormDense& layer = head.bottleneck[s];
    c.input[s] = x;
    RowMatrixXd a = x * layer.weight.transpose();
    a.rowwise() += layer.bias.transpose();
    c.normalized[s] = layer_norm(a, layer.gamma, layer.beta, &c.ln[s]);
    x = c.normalized[s].unaryExpr([](double v) { return gelu(v); });
  }
  c.features = x;
  Eigen::RowVectorXd mean_click = Eigen::RowVectorXd::Zero(x.cols());
  for (int idx : clicks) {
    if (idx < 0 || idx >= n) throw ConfigError("prompt click index out of range");
    mean_click += x.row(idx);
  }
  mean_click /= static_cast<double>(clicks.size());
  c.clicks.assign(clicks.begin(), clicks.end());

  const Eigen::Index d = x.cols();
  c.dec_input.resize(n, 2 * d + 2);
  c.dec_input.leftCols(d) = x;
  c.dec_input.middleCols(d, d) = mean_click.replicate(n, 1);
  c.dec_input.col(2 * d) = in_box;
  c.dec_input.col(2 * d + 1) = prev_mask;
  c.hidden_pre = c.dec_input * head.dec_weight.transpose();
  c.hidden_pre.rowwise() += head.dec_bias.transpose();
  out.logits = c.hidden_pre.cwiseMax(0.0) * head.out_weight.transpose();
  out.logits.array() += head.out_bias;
  if (!out.logits.allFinite()) throw DivergenceError("non-finite mask logit", 0);
  out.probs = out.logits.unaryExpr([](double v) { return sigmoid(v); });
  return out;
}

PromptableHead head_backward(const PromptableHead& head, const HeadCache& c, const Eigen::VectorXd& dlogits) {
  if (dlogits.size() != c.hidden_pre.rows()) throw ConfigError("mask gradient does not match the forward cache");
  PromptableHead g = PromptableHead::zeros_like(head);
  const RowMatrixXd hidden = c.hidden_pre.cwiseMax(0.0);
  g.out_bias = dlogits.sum();
  g.out_weight = dlogits.transpose() * hidden;
  RowMatrixXd dh = dlogits * head.out_weight;
  dh = (c.hidden_pre.array() > 0.0).select(dh, 0.0);
  g.dec_weight = dh.transpose() * c.dec_input;
  g.dec_bias = dh.colwise().sum().transpose();
  const RowMatrixXd dz = dh * head.dec_weight;
  const Eigen::Index d = c.features.cols();
  RowMatrixXd dx = dz.leftCols(d);
  const Eigen::RowVectorXd dmean = dz.middleCols(d, d).colwise().sum() / static_cast<double>(c.clicks.size());
  for (int idx : c.clicks) dx.row(idx) += dmean;

  for (std::size_t s = head.bottleneck.size(); s-- > 0;) {
    const NormDense& layer = head.bottleneck[s];
    const RowMatrixXd dy =
        (dx.array() * c.normalized[s].unaryExpr([](double v) { return gelu_grad(v); }).array()).matrix();
    Eigen::VectorXd dgamma, dbeta;
    const RowMatrixXd da = layer_norm_backward(dy, c.ln[s], layer.gamma, dgamma, dbeta);
    g.bottleneck[s].gamma = dgamma;
    g.bottleneck[s].beta = dbeta;
    g.bottleneck[s].weight = da.transpose() * c.input[s];
    g.bottleneck[s].bias = da.colwise().sum().transpose();
    if (s > 0) dx = da * layer.weight;
  }
  return g;
}

Eigen::VectorXd box_indicator(const Points3d& points, const std::optional<Box>& box) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(points.rows());
  if (!box) return out;
  for (Eigen::Index i = 0; i < points.rows(); ++i) out(i) = box->contains(points.row(i).transpose()) ? 1.0 : 0.0;
  return out;
}

Eigen::VectorXd promptable_mask(const PromptableHead& head, const MultiModalFrame& frame, Prompt& prompt) {
  return run_rounds(head, frame.feat2d, frame.points, prompt, 0.5).probs;
}

double mask_iou(const Eigen::VectorXd& probs, double threshold, std::span<const int> truth) {
  std::vector<std::uint8_t> in_truth(static_cast<std::size_t>(probs.size()), 0);
  for (int idx : truth) in_truth[static_cast<std::size_t>(idx)] = 1;
  std::int64_t inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const bool p = probs(i) > threshold;
    const bool t = in_truth[static_cast<std::size_t>(i)] != 0;
    inter += (p && t) ? 1 : 0;
    uni += (p || t) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

WarmupStats warmup_head(PromptableHead& head, std::span<const MultiModalFrame> frames, const ClassSet& classes,
                        const IttaConfig& config, std::uint64_t seed) {
  WarmupStats stats;
  if (config.warmup_iterations == 0) return stats;
  if (frames.empty()) throw ConfigError("warm-up needs at least one source frame");

  struct Candidate {
    std::size_t frame;
    int cls;
    std::vector<int> points;
  };
  std::vector<std::vector<Candidate>> by_class(classes.interest.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t k = 0; k < classes.interest.size(); ++k) {
      const int c = classes.interest[k];
      const auto labels = extract_instances(frames[f], c, config.dbscan_eps, config.dbscan_min_pts);
      for (auto& inst : group_instances(labels)) by_class[k].push_back({f, c, std::move(inst)});
    }
  }
  std::vector<std::size_t> usable;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    if (!by_class[k].empty()) usable.push_back(k);
  }
  if (usable.empty()) throw ConfigError("warm-up frames contain no instance of a class of interest");

  std::mt19937_64 rng(seed);
  AdamW opt(AdamWConfig{config.warmup_lr, 0.9, 0.999, 1e-8, 0.0});
  Eigen::VectorXd theta = head.flatten();
  constexpr double kMargin = 1.0;
  constexpr int kNegatives = 256;
  double tail = 0.0;
  int tail_count = 0;
  for (int it = 0; it < config.warmup_iterations; ++it) {
    const std::size_t k = usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)];
    const Candidate& cand = by_class[k][std::uniform_int_distribution<std::size_t>(0, by_class[k].size() - 1)(rng)];
    const MultiModalFrame& frame = frames[cand.frame];
    const Box box = bounding_box(frame.points, cand.points);

    // Working set: the dilated box plus random background points.
    std::vector<int> subset;
    std::vector<std::uint8_t> taken(static_cast<std::size_t>(frame.size()), 0);
    for (Eigen::Index i = 0; i < frame.size(); ++i) {
      const Eigen::Vector3d p = frame.points.row(i).transpose();
      if ((p.array() >= box.min.array() - kMargin).all() && (p.array() <= box.max.array() + kMargin).all()) {
        subset.push_back(static_cast<int>(i));
        taken[static_cast<std::size_t>(i)] = 1;
      }
    }
    std::uniform_int_distribution<Eigen::Index> any(0, frame.size() - 1);
    for (int j = 0; j < kNegatives; ++j) {
      const Eigen::Index i = any(rng);
      if (taken[static_cast<std::size_t>(i)] != 0) continue;
      taken[static_cast<std::size_t>(i)] = 1;
      subset.push_back(static_cast<int>(i));
    }
    std::sort(subset.begin(), subset.end());
    std::unordered_map<int, int> local;
    Points3d pts(static_cast<Eigen::Index>(subset.size()), 3);
    RowMatrixXd feats(static_cast<Eigen::Index>(subset.size()), frame.feat2d.cols());
    for (std::size_t j = 0; j < subset.size(); ++j) {
      local[subset[j]] = static_cast<int>(j);
      pts.row(static_cast<Eigen::Index>(j)) = frame.points.row(subset[j]);
      feats.row(static_cast<Eigen::Index>(j)) = frame.feat2d.row(subset[j]);
    }
    Prompt prompt;
    prompt.t = frame.t;
    prompt.cls = cand.cls;
    prompt.box = box;
    Eigen::VectorXd target = Eigen::VectorXd::Zero(pts.rows());
    for (int idx : cand.points) {
      prompt.instance.push_back(local.at(idx));
      target(local.at(idx)) = 1.0;
    }
    prompt.rho = sample_rounds(prompt.instance.size(), config.warmup_rho_min, config.warmup_rho_max, rng);

    const HeadOutput out = run_rounds(head, feats, pts, prompt, config.mask_threshold);
    const FocalLoss fl = focal_loss(out.logits, target, config.focal_gamma, config.focal_alpha);
    const PromptableHead grad = head_backward(head, out.cache, fl.dlogits);
    opt.step(theta, grad.flatten());
    head.unflatten(theta);
    if (it >= config.warmup_iterations - 100) {
      tail += fl.value;
      ++tail_count;
    }
  }
  stats.iterations = config.warmup_iterations;
  stats.mean_loss_last = tail_count > 0 ? tail / tail_count : 0.0;
  return stats;
}

Centroid generate_centroid(const RowMatrixXd& cls_weight, const Eigen::VectorXd& cls_bias, int cls,
                           const IttaConfig& config, std::uint64_t seed) {
  if (cls < 0 || cls >= cls_weight.rows()) throw ConfigError("centroid class out of range");
  const Eigen::Index n = static_cast<Eigen::Index>(config.centroid_batches) * config.centroid_batch_size;
  const Eigen::Index h = cls_weight.cols();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMatrixXd z(n, h);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);

  Centroid out;
  out.count = static_cast<int>(n);
  for (int step = 0;; ++step) {
    RowMatrixXd logits = z * cls_weight.transpose();
    logits.rowwise() += cls_bias.transpose();
    const RowMatrixXd probs = softmax_rows(logits);
    if (probs.col(cls).minCoeff() > config.centroid_threshold) {
      out.converged = true;
      out.steps = step;
      break;
    }
    if (step == config.centroid_max_steps) {
      out.steps = step;
      break;
    }
    // Ascent on log p_c: gradient W^T (e_c - p) for rows still below threshold.
    RowMatrixXd delta = -probs;
    delta.col(cls).array() += 1.0;
    const RowMatrixXd grad = delta * cls_weight;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (probs(i, cls) <= config.centroid_threshold) z.row(i) += config.centroid_lr * grad.row(i);
    }
  }
  const Eigen::RowVectorXd mean = z.colwise().mean();
  const RowMatrixXd centered = z.rowwise() - mean;
  out.covariance = centered.transpose() * centered / static_cast<double>(n - 1);
  const double norm = mean.norm();
  out.mean = norm > 0.0 ? Eigen::RowVectorXd(mean / norm) : mean;
  return out;
}

bool CentroidSet::has(Modality m, int cls) const {
  const auto& v = modality[index_of(m)];
  return cls >= 0 && static_cast<std::size_t>(cls) < v.size() && v[static_cast<std::size_t>(cls)].count > 0;
}

CentroidSet generate_centroids(const std::array<const MlpParams*, 2>& classifiers, std::span<const int> classes,
                               const IttaConfig& config, std::uint64_t seed) {
  CentroidSet set;
  for (Modality m : kModalities) {
    const MlpParams& p = *classifiers[index_of(m)];
    auto& slot = set.modality[index_of(m)];
    slot.assign(static_cast<std::size_t>(p.num_classes()), Centroid{});
    for (int c : classes) {
      const std::uint64_t s = splitmix(seed ^ (static_cast<std::uint64_t>(index_of(m)) << 32) ^ static_cast<std::uint64_t>(c));
      slot.at(static_cast<std::size_t>(c)) = generate_centroid(p.cls_weight, p.cls_bias, c, config, s);
    }
  }
  return set;
}

FocalLoss mask_refinement_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_probs,
                               const IttaConfig& config) {
  if (student_logits.size() != teacher_probs.size()) throw ConfigError("mask lengths differ");
  const Eigen::VectorXd target =
      (teacher_probs.array() > config.mask_threshold).select(Eigen::VectorXd::Ones(teacher_probs.size()), 0.0);
  FocalLoss fl = focal_loss(student_logits, target, config.focal_gamma, config.focal_alpha);
  fl.value *= config.lambda_p;
  fl.dlogits *= config.lambda_p;
  return fl;
}

ClusteringResult clustering_objective(const RowMatrixXd& raw_features, std::span<const int> mask,
                                      std::span<const int> predicted, int anchor_class,
                                      const Eigen::RowVectorXd& centroid, const IttaConfig& config) {
  if (mask.empty()) throw ConfigError("clustering objective needs a non-empty mask");
  const Eigen::Index n = raw_features.rows();
  if (static_cast<Eigen::Index>(predicted.size()) != n) throw ConfigError("prediction count does not match features");
  const bool literal = config.convention == Convention::kPaperLiteral;

  const Eigen::VectorXd norms = raw_features.rowwise().norm();
  RowMatrixXd f = raw_features;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (norms(i) > 0.0) f.row(i) /= norms(i);
  }
  Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(f.cols());
  for (int idx : mask) a += f.row(idx);
  a /= static_cast<double>(mask.size());
  const double a_norm = a.norm();

  ClusteringResult out;
  out.dfeatures = RowMatrixXd::Zero(n, raw_features.cols());
  if (a_norm == 0.0) return out;
  const Eigen::RowVectorXd a_hat = a / a_norm;
  // Projection removing the anchor direction, scaled for d(a_hat)/da.
  auto through_norm = [&](const Eigen::RowVectorXd& v) -> Eigen::RowVectorXd {
    return (v - a_hat * a_hat.dot(v)) / a_norm;
  };

  Eigen::RowVectorXd grad_a = Eigen::RowVectorXd::Zero(f.cols());
  const double mu_norm = centroid.norm();
  if (mu_norm > 0.0) {
    const Eigen::RowVectorXd mu_hat = centroid / mu_norm;
    const double cos_am = a_hat.dot(mu_hat);
    if (literal) {
      out.value += config.lambda_ac * cos_am;
      grad_a += config.lambda_ac * through_norm(mu_hat);
    } else {
      out.value += config.lambda_ac * (1.0 - cos_am);
      grad_a -= config.lambda_ac * through_norm(mu_hat);
    }
  }

  std::vector<double> cosine(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (predicted[static_cast<std::size_t>(i)] != anchor_class) continue;
    const double c = f.row(i).dot(a_hat);
    cosine[static_cast<std::size_t>(i)] = c;
    const double s = literal ? std::exp(c) : c;
    if (s > config.tau_in) out.inliers.push_back(static_cast<int>(i));
    if (s < config.tau_out) out.outliers.push_back(static_cast<int>(i));
  }
  // Intent: pull inliers toward the anchor, push outliers away. The literal
  // form flips both signs.
  const double in_sign = literal ? 1.0 : -1.0;
  auto add_term = [&](const std::vector<int>& set, double sign) {
    if (set.empty()) return;
    const double w = sign * config.lambda_cls / static_cast<double>(set.size());
    for (int i : set) {
      const double c = cosine[static_cast<std::size_t>(i)];
      const double ds = literal ? std::exp(c) : 1.0;
      out.value += w * (literal ? std::exp(c) : c);
      out.dfeatures.row(i) += w * ds * a_hat;
      grad_a += w * ds * through_norm(f.row(i));
    }
  };
  add_term(out.inliers, in_sign);
  add_term(out.outliers, -in_sign);

  const Eigen::RowVectorXd per_mask = grad_a / static_cast<double>(mask.size());
  for (int idx : mask) out.dfeatures.row(idx) += per_mask;
  // Back through row normalization.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (norms(i) == 0.0) {
      out.dfeatures.row(i).setZero();
      continue;
    }
    const Eigen::RowVectorXd g = out.dfeatures.row(i);
    out.dfeatures.row(i) = (g - f.row(i) * f.row(i).dot(g)) / norms(i);
  }
  return out;
}

MGRecord record_momentum_grad(const std::vector<Eigen::VectorXd>& g_mg, const std::vector<Eigen::VectorXd>& g,
                              std::int64_t step) {
  if (g_mg.size() != g.size()) throw ConfigError("momentum record: tensor count mismatch");
  MGRecord r;
  r.step = step;
  r.valid = true;
  r.grad = g_mg;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g_mg[i].size() != g[i].size()) throw ConfigError("momentum record: tensor size mismatch");
    if (!g_mg[i].allFinite() || !g[i].allFinite()) throw DivergenceError("non-finite gradient in momentum record", step);
    const double n1 = g_mg[i].norm();
    const double n2 = g[i].norm();
    if (n1 == 0.0 || n2 == 0.0) {
      r.cosine.push_back(0.0);
      r.degenerate.push_back(1);
    } else {
      r.cosine.push_back(std::clamp(g_mg[i].dot(g[i]) / (n1 * n2), -1.0, 1.0));
      r.degenerate.push_back(0);
    }
  }
  return r;
}

Eigen::VectorXd reuse_direction(const Eigen::VectorXd& g_mg, double cosine, const Eigen::VectorXd& g_k, double decay,
                                Convention convention) {
  const double gk_norm2 = g_k.squaredNorm();
  if (gk_norm2 == 0.0) return {};
  const double gk_norm = std::sqrt(gk_norm2);
  const double mg_norm = g_mg.norm();
  if (mg_norm == 0.0) return Eigen::VectorXd::Zero(g_k.size());
  const Eigen::VectorXd dir = convention == Convention::kPaperLiteral ? g_k : Eigen::VectorXd(g_k / gk_norm);
  const Eigen::VectorXd u = g_mg - (g_k.dot(g_mg) / gk_norm2) * g_k;
  const double u_norm = u.norm();
  if (u_norm <= 1e-12 * mg_norm) {
    const double sign = cosine > 0.0 ? 1.0 : (cosine < 0.0 ? -1.0 : 0.0);
    return decay * mg_norm * sign * dir;
  }
  const double sine = std::sqrt(std::max(0.0, 1.0 - cosine * cosine));
  return decay * mg_norm * (cosine * dir + sine * (u / u_norm));
}

std::vector<Eigen::VectorXd> reuse_momentum_grad(const MGRecord& record, const std::vector<Eigen::VectorXd>& g_k,
                                                 std::int64_t k, const IttaConfig& config) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(g_k.size());
  for (const auto& g : g_k) out.push_back(Eigen::VectorXd::Zero(g.size()));
  if (!record.valid) return out;
  const std::int64_t dt = k - record.step;
  if (dt < 1 || dt > config.dt_max) return out;
  if (record.grad.size() != g_k.size()) throw ConfigError("momentum reuse: tensor count mismatch");
  const double decay = std::pow(config.gamma_mg, static_cast<double>(dt));
  for (std::size_t i = 0; i < g_k.size(); ++i) {
    Eigen::VectorXd r = reuse_direction(record.grad[i], record.cosine[i], g_k[i], decay, config.convention);
    if (r.size() != 0) out[i] = std::move(r);
  }
  return out;
}

}  // namespace latte
