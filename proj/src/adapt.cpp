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

#include "latte/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <random>

#include "latte/losses.hpp"

namespace latte {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 6> kMethodNames = {{
    {Method::kSourceOnly, "source_only"},
    {Method::kOracle, "oracle"},
    {Method::kTentLike, "tent_like"},
    {Method::kPsLabel, "pslabel"},
    {Method::kLatte, "latte"},
    {Method::kLattePP, "latte_pp"},
}};

bool uses_voxels(Method m) { return m == Method::kLatte || m == Method::kLattePP; }
bool reports_teacher(Method m) { return uses_voxels(m) || m == Method::kPsLabel; }

RowMatrixXd stack_features(std::span<const MultiModalFrame* const> frames, Modality m) {
  Eigen::Index rows = 0;
  for (const auto* f : frames) rows += f->size();
  RowMatrixXd out(rows, frames.front()->features(m).cols());
  Eigen::Index r = 0;
  for (const auto* f : frames) {
    out.middleRows(r, f->size()) = f->features(m);
    r += f->size();
  }
  return out;
}

PredictionFrame slice(const std::array<RowMatrixXd, 2>& probs, const BatchLayout& layout, std::size_t f,
                      PredictionSource source) {
  PredictionFrame p;
  p.t = layout.t[f];
  p.source = source;
  for (Modality m : kModalities) p.probs(m) = probs[index_of(m)].middleRows(layout.offset[f], layout.rows[f]);
  return p;
}

std::vector<Eigen::VectorXd> concat(std::vector<Eigen::VectorXd> a, const std::vector<Eigen::VectorXd>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

int argmax_mean(const RowMatrixXd& probs, std::span<const int> rows) {
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(probs.cols());
  for (int r : rows) mean += probs.row(r);
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < mean.size(); ++c) {
    if (mean(c) > mean(best)) best = c;
  }
  return static_cast<int>(best);
}

}  // namespace

std::string method_name(MethodSpec method) {
  for (const auto& [m, name] : kMethodNames) {
    if (m == method.base) return std::string(name) + (method.itta ? "+itta" : "");
  }
  throw ConfigError("unknown method");
}

MethodSpec parse_method(std::string_view name) {
  MethodSpec spec;
  constexpr std::string_view kSuffix = "+itta";
  if (name.size() > kSuffix.size() && name.substr(name.size() - kSuffix.size()) == kSuffix) {
    spec.itta = true;
    name.remove_suffix(kSuffix.size());
  }
  for (const auto& [m, n] : kMethodNames) {
    if (n == name) {
      spec.base = m;
      return spec;
    }
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

void ema_update(ModelPair& pair, double lambda_s) {
  const Eigen::VectorXd s = flatten(pair.student, UpdateScope::kAll);
  const Eigen::VectorXd t = flatten(pair.teacher, UpdateScope::kAll);
  if (s.size() != t.size()) throw ConfigError("student and teacher shapes differ");
  unflatten(pair.teacher, lambda_s * t + (1.0 - lambda_s) * s, UpdateScope::kAll);
}

void AdaptConfig::validate() const {
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (!(lambda_s >= 0.0 && lambda_s < 1.0)) throw ConfigError("lambda_s must lie in [0, 1)");
  if (!(lambda_xm >= 0.0)) throw ConfigError("lambda_xm must be non-negative");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (!(pslabel_threshold >= 0.0 && pslabel_threshold <= 1.0)) throw ConfigError("pslabel threshold must lie in [0, 1]");
  windows.validate();
  if (method.base == Method::kLatte && windows.sizes.size() != 1) {
    throw ConfigError("latte uses exactly one window size");
  }
  if (method.itta) {
    if (method.base == Method::kSourceOnly || method.base == Method::kOracle) {
      throw ConfigError("interactive adaptation needs an adapting base method");
    }
    if (!itta) throw ConfigError("interactive method without itta configuration");
  }
  if (itta) itta->validate();
}

void BatchLayout::add(std::int64_t frame, Eigen::Index count) {
  offset.push_back(total_rows());
  t.push_back(frame);
  rows.push_back(count);
}

std::int64_t BatchLayout::find(std::int64_t frame) const {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == frame) return static_cast<std::int64_t>(i);
  }
  return -1;
}

LossTerms overall_loss(const std::array<RowMatrixXd, 2>& student_probs, const BatchLayout& layout,
                       const std::array<std::vector<std::vector<int>>, 2>& labels,
                       const std::vector<QueryFrameVoxels>& voxels, double lambda_xm, int batch,
                       Convention convention) {
  LossTerms out;
  std::array<RowMatrixXd, 2> dprobs;
  for (Modality m : kModalities) {
    const int mi = index_of(m);
    out.dlogits[mi] = RowMatrixXd::Zero(student_probs[mi].rows(), student_probs[mi].cols());
    dprobs[mi] = RowMatrixXd::Zero(student_probs[mi].rows(), student_probs[mi].cols());
    if (labels[mi].size() != layout.size()) throw ConfigError("labels do not match the batch layout");
    for (std::size_t f = 0; f < layout.size(); ++f) {
      const auto& y = labels[mi][f];
      if (y.empty()) continue;
      const LogitLoss ce = cross_entropy(student_probs[mi].middleRows(layout.offset[f], layout.rows[f]), y);
      out.ce += ce.value;
      out.dlogits[mi].middleRows(layout.offset[f], layout.rows[f]) += ce.dlogits;
    }
  }

  const double scale = lambda_xm / static_cast<double>(batch);
  bool any_voxel = false;
  for (const auto& qf : voxels) {
    const std::int64_t f = layout.find(qf.t);
    if (f < 0) throw ConfigError("voxels reference a frame outside the batch");
    const Eigen::Index base = layout.offset[static_cast<std::size_t>(f)];
    for (std::size_t k = 0; k < qf.voxels.size(); ++k) {
      const auto& query = qf.voxels[k].query;
      if (query.empty()) continue;
      std::array<Eigen::RowVectorXd, 2> mean;
      for (Modality m : kModalities) {
        mean[index_of(m)] = Eigen::RowVectorXd::Zero(student_probs[index_of(m)].cols());
        for (std::int32_t r : query) mean[index_of(m)] += student_probs[index_of(m)].row(base + r);
        mean[index_of(m)] /= static_cast<double>(query.size());
      }
      const XmLoss xm = xm_consistency_loss(mean[0], mean[1], query.size(), qf.records[k], convention);
      out.xm += scale * xm.value;
      for (Modality m : kModalities) {
        const auto& g = xm.grad_query_mean[index_of(m)];
        if (g.size() == 0) continue;
        any_voxel = true;
        const Eigen::RowVectorXd per_row = g * (scale / static_cast<double>(query.size()));
        for (std::int32_t r : query) dprobs[index_of(m)].row(base + r) += per_row;
      }
    }
  }
  if (any_voxel) {
    for (Modality m : kModalities) {
      out.dlogits[index_of(m)] += softmax_backward(student_probs[index_of(m)], dprobs[index_of(m)]);
    }
  }
  out.total = out.ce + out.xm;
  return out;
}

LossTerms entropy_objective(const std::array<RowMatrixXd, 2>& student_probs, const BatchLayout& layout) {
  LossTerms out;
  for (Modality m : kModalities) {
    const int mi = index_of(m);
    out.dlogits[mi] = RowMatrixXd::Zero(student_probs[mi].rows(), student_probs[mi].cols());
    for (std::size_t f = 0; f < layout.size(); ++f) {
      const LogitLoss e = entropy_loss(student_probs[mi].middleRows(layout.offset[f], layout.rows[f]));
      out.ce += e.value;
      out.dlogits[mi].middleRows(layout.offset[f], layout.rows[f]) = e.dlogits;
    }
  }
  out.total = out.ce;
  return out;
}

std::vector<int> confident_labels(const RowMatrixXd& probs, double threshold) {
  std::vector<int> labels = argmax_rows(probs);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (probs(i, labels[static_cast<std::size_t>(i)]) < threshold) labels[static_cast<std::size_t>(i)] = -1;
  }
  return labels;
}

Models pretrain_source(const World& world, const StreamSpec& spec, const PretrainConfig& config) {
  if (config.steps < 0 || config.batch_points < 1 || config.pool_frames < 1) {
    throw ConfigError("invalid pretraining configuration");
  }
  const StreamSpec source = spec.source();
  std::vector<MultiModalFrame> pool;
  for (int k = 0; k < config.pool_frames; ++k) {
    pool.push_back(render_frame(world, source, (k * source.length) / config.pool_frames));
  }
  const int k_classes = world.config.class_set.count();
  Models models;
  for (Modality m : kModalities) {
    const MlpParams p = MlpParams::init(world.config.feature_dim, config.hidden, k_classes,
                                        mix_seed(config.seed, 100 + static_cast<std::uint64_t>(index_of(m))));
    models[index_of(m)] = ModelPair::from(p, m);
  }
  std::array<AdamW, 2> opt{AdamW(config.optimizer), AdamW(config.optimizer)};
  std::mt19937_64 rng(mix_seed(config.seed, 200));
  std::uniform_int_distribution<std::size_t> pick_frame(0, pool.size() - 1);
  const int dim = world.config.feature_dim;
  for (int step = 0; step < config.steps; ++step) {
    std::array<RowMatrixXd, 2> x{RowMatrixXd(config.batch_points, dim), RowMatrixXd(config.batch_points, dim)};
    std::vector<int> y(static_cast<std::size_t>(config.batch_points));
    for (int i = 0; i < config.batch_points; ++i) {
      const MultiModalFrame& f = pool[pick_frame(rng)];
      const Eigen::Index row = std::uniform_int_distribution<Eigen::Index>(0, f.size() - 1)(rng);
      x[0].row(i) = f.feat2d.row(row);
      x[1].row(i) = f.feat3d.row(row);
      y[static_cast<std::size_t>(i)] = f.gt[static_cast<std::size_t>(row)];
    }
    for (Modality m : kModalities) {
      MlpParams& p = models[index_of(m)].student;
      const MlpCache cache = forward(p, x[index_of(m)]);
      const LogitLoss ce = cross_entropy(cache.probs, y);
      const MlpParams g = backward(p, cache, ce.dlogits, RowMatrixXd(), UpdateScope::kAll);
      Eigen::VectorXd theta = flatten(p, UpdateScope::kAll);
      opt[index_of(m)].step(theta, flatten(g, UpdateScope::kAll));
      unflatten(p, theta, UpdateScope::kAll);
    }
  }
  for (auto& pair : models) pair.teacher = pair.student;
  return models;
}

std::array<double, 2> evaluate_models(const Models& models, std::span<const MultiModalFrame> frames, int num_classes) {
  std::array<double, 2> out{};
  for (Modality m : kModalities) {
    ConfusionMatrix cm(num_classes);
    for (const auto& f : frames) cm.add(argmax_rows(predict(models[index_of(m)].student, f.features(m))), f.gt);
    out[index_of(m)] = cm.miou();
  }
  return out;
}

FrameStream make_stream(const World& world, const StreamSpec& spec) {
  spec.validate();
  return {spec.length, [&world, spec](std::int64_t t) { return render_frame(world, spec, t); }};
}

double RunLog::mean_miou_xm() const {
  if (frames.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : frames) total += r.miou_xm;
  return total / static_cast<double>(frames.size());
}

IttaAssets prepare_itta(const Models& models, const World& world, const StreamSpec& spec, const ClassSet& classes,
                        const IttaConfig& config, std::uint64_t seed) {
  config.validate();
  classes.validate(true);
  IttaAssets assets;
  assets.head = PromptableHead::init(world.config.feature_dim, mix_seed(seed, 300));
  const StreamSpec source = spec.source();
  std::vector<MultiModalFrame> frames;
  constexpr int kWarmupFrames = 40;
  for (int k = 0; k < kWarmupFrames; ++k) frames.push_back(render_frame(world, source, (k * source.length) / kWarmupFrames));
  assets.warmup = warmup_head(assets.head, frames, classes, config, mix_seed(seed, 301));
  assets.centroids = generate_centroids({&models[0].student, &models[1].student}, classes.interest, config,
                                        mix_seed(seed, 302));
  return assets;
}

SimulatedPrompts::SimulatedPrompts(ClassSet classes, IttaConfig config, std::uint64_t seed)
    : classes_(std::move(classes)), config_(config), seed_(seed) {}

std::vector<Prompt> SimulatedPrompts::collect(std::span<const MultiModalFrame* const> batch) {
  std::vector<Prompt> out;
  for (const MultiModalFrame* f : batch) {
    std::mt19937_64 rng(mix_seed(seed_, 0x70000000ULL + static_cast<std::uint64_t>(f->t)));
    if (std::bernoulli_distribution(config_.p_i)(rng)) {
      ++activations_;
      ++pending_;
    }
    if (pending_ == 0) continue;
    std::vector<std::pair<int, std::vector<std::vector<int>>>> options;
    for (int c : classes_.interest) {
      auto inst = group_instances(extract_instances(*f, c, config_.dbscan_eps, config_.dbscan_min_pts));
      if (!inst.empty()) options.emplace_back(c, std::move(inst));
    }
    if (options.empty()) continue;
    const auto& [cls, instances] = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
    const auto& inst = instances[std::uniform_int_distribution<std::size_t>(0, instances.size() - 1)(rng)];
    Prompt p;
    p.t = f->t;
    p.cls = cls;
    p.box = bounding_box(f->points, inst);
    p.instance = inst;
    p.rho = sample_rounds(inst.size(), config_.rho_min, config_.rho_max, rng);
    p.origin = PromptOrigin::kSimulated;
    out.push_back(std::move(p));
    --pending_;
  }
  return out;
}

namespace {

struct Slot {
  MultiModalFrame frame;
  PredictionFrame teacher;
};

// Per-modality forward state of frames that take part in an update.
struct Part {
  BatchLayout layout;
  std::array<MlpCache, 2> cache;
  std::array<RowMatrixXd, 2> dlogits;
  std::array<RowMatrixXd, 2> dfeatures;
};

void init_grads(Part& part) {
  for (int mi = 0; mi < 2; ++mi) {
    part.dlogits[mi] = RowMatrixXd::Zero(part.cache[mi].logits.rows(), part.cache[mi].logits.cols());
    part.dfeatures[mi] = RowMatrixXd::Zero(part.cache[mi].features.rows(), part.cache[mi].features.cols());
  }
}

}  // namespace

RunLog run_adaptation(const FrameStream& stream, Models& models, const AdaptConfig& config, const ClassSet& classes,
                      const IttaAssets* itta, PromptSource* prompts, AdaptObserver* observer) {
  config.validate();
  const bool interactive = config.method.itta;
  classes.validate(interactive);
  if (stream.length < config.batch) throw ConfigError("stream is shorter than one batch");
  if (interactive && itta == nullptr) throw ConfigError("interactive run needs prepared head and centroids");

  using Clock = std::chrono::steady_clock;
  const Method base = config.method.base;
  const bool adapts = base != Method::kSourceOnly;
  const bool voxel_method = uses_voxels(base);
  const int k_classes = classes.count();
  const int max_w = voxel_method ? config.windows.max_size() : 0;
  const std::size_t keep = static_cast<std::size_t>(std::max(max_w, config.batch) + config.batch);
  const IttaConfig icfg = config.itta.value_or(IttaConfig{});

  RunLog log;
  log.seed = config.seed;
  log.confusion.assign(3, ConfusionMatrix(k_classes));

  std::array<AdamW, 2> opt{AdamW(config.optimizer), AdamW(config.optimizer)};
  PromptableHead student_head, teacher_head;
  AdamW head_opt(config.optimizer);
  MGRecord record;
  if (interactive) {
    student_head = itta->head;
    teacher_head = itta->head;
  }

  std::deque<Slot> ring;
  const PredictionLookup teachers = [&ring](std::int64_t t) -> const PredictionFrame* {
    for (const auto& s : ring) {
      if (s.frame.t == t) return &s.teacher;
    }
    return nullptr;
  };
  auto buffered = [&ring](std::int64_t t) -> const MultiModalFrame* {
    for (const auto& s : ring) {
      if (s.frame.t == t) return &s.frame;
    }
    return nullptr;
  };

  for (std::int64_t b0 = 0; b0 < stream.length; b0 += config.batch) {
    const auto started = Clock::now();
    const std::int64_t b1 = std::min<std::int64_t>(b0 + config.batch, stream.length);
    for (std::int64_t t = b0; t < b1; ++t) {
      Slot s;
      s.frame = stream.frame(t);
      s.frame.validate(k_classes);
      ring.push_back(std::move(s));
    }
    std::vector<const MultiModalFrame*> batch;
    Part part;
    for (std::size_t i = ring.size() - static_cast<std::size_t>(b1 - b0); i < ring.size(); ++i) {
      batch.push_back(&ring[i].frame);
      part.layout.add(ring[i].frame.t, ring[i].frame.size());
    }
    const BatchLayout& layout = part.layout;
    const std::size_t nb = batch.size();

    // (a) student and teacher forward.
    std::array<RowMatrixXd, 2> student_probs, teacher_probs;
    try {
      for (Modality m : kModalities) {
        const int mi = index_of(m);
        const RowMatrixXd x = stack_features(batch, m);
        part.cache[mi] = forward(models[mi].student, x);
        student_probs[mi] = part.cache[mi].probs;
        teacher_probs[mi] = adapts ? predict(models[mi].teacher, x) : student_probs[mi];
      }
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.what(), b0);
    }
    for (std::size_t f = 0; f < nb; ++f) {
      ring[ring.size() - nb + f].teacher = slice(teacher_probs, layout, f, PredictionSource::kTeacher);
    }

    // (b)-(g) voxels, reliability, propagation and fusion.
    std::vector<QueryFrameVoxels> voxels;
    std::vector<PointReliability> reliability;
    std::vector<PredictionFrame> reported;
    std::vector<FusedFrame> fused;
    for (std::size_t f = 0; f < nb; ++f) {
      reported.push_back(reports_teacher(base) ? slice(teacher_probs, layout, f, PredictionSource::kTeacher)
                                               : slice(student_probs, layout, f, PredictionSource::kStudent));
    }
    if (voxel_method) {
      std::vector<const MultiModalFrame*> window_frames;
      for (const auto& s : ring) window_frames.push_back(&s.frame);
      for (std::size_t f = 0; f < nb; ++f) {
        const std::int64_t t = layout.t[f];
        const MergedCloud cloud = aggregate_window(window_frames, t, max_w);
        const VoxelGrid grid = voxelize(cloud, config.windows.voxel_size);
        const PredictionFrame student = slice(student_probs, layout, f, PredictionSource::kStudent);
        voxels.push_back({t, build_st_voxels(grid, cloud, student, teachers, config.windows), {}});
      }
      if (base == Method::kLatte) {
        assess_single_window(voxels, teachers, config.windows.alpha);
      } else {
        assess_multi_window(voxels, teachers, config.windows, config.convention);
      }
      reliability = propagate_point_entropy(voxels, teachers, layout.t);
      for (std::size_t f = 0; f < nb; ++f) fused.push_back(fuse_frame(reported[f], reliability[f], config.convention));
    } else {
      for (std::size_t f = 0; f < nb; ++f) fused.push_back(average_frame(reported[f]));
    }

    // Evaluation with the parameters of the previous updates.
    std::vector<FrameRecord> records(nb);
    for (std::size_t f = 0; f < nb; ++f) {
      const MultiModalFrame& frame = *batch[f];
      FrameRecord& r = records[f];
      r.t = frame.t;
      r.param_version = log.updates;
      std::array<ConfusionMatrix, 3> cm{ConfusionMatrix(k_classes), ConfusionMatrix(k_classes),
                                        ConfusionMatrix(k_classes)};
      cm[0].add(fused[f].labels, frame.gt);
      cm[1].add(argmax_rows(reported[f].probs2d), frame.gt);
      cm[2].add(argmax_rows(reported[f].probs3d), frame.gt);
      r.miou_xm = cm[0].miou();
      r.miou_2d = cm[1].miou();
      r.miou_3d = cm[2].miou();
      r.iou = cm[0].iou();
      for (int k = 0; k < 3; ++k) log.confusion[static_cast<std::size_t>(k)].merge(cm[static_cast<std::size_t>(k)]);
      log.events.push_back({LoopEvent::Kind::kEvaluate, frame.t, log.updates});
      if (observer != nullptr) {
        observer->on_evaluated({frame, reported[f], fused[f], voxel_method ? &reliability[f] : nullptr, log.updates});
      }
    }

    double loss_total = 0.0, loss_xm = 0.0;
    std::array<std::vector<std::vector<int>>, 2> labels;
    std::vector<Prompt> applied;
    if (adapts) {
      // Supervision for the batch.
      for (Modality m : kModalities) {
        auto& lm = labels[index_of(m)];
        for (std::size_t f = 0; f < nb; ++f) {
          switch (base) {
            case Method::kOracle:
              lm.push_back(batch[f]->gt);
              break;
            case Method::kLatte:
            case Method::kLattePP:
              lm.push_back(fused[f].labels);
              break;
            case Method::kPsLabel:
              lm.push_back(confident_labels(reported[f].probs(m), config.pslabel_threshold));
              break;
            default:
              lm.emplace_back();
              break;
          }
        }
      }

      // Prompts: teacher masks, student head refinement, label override and
      // feature clustering gradients.
      std::vector<Prompt> incoming;
      if (interactive && prompts != nullptr) incoming = prompts->collect(batch);
      Part extra;
      std::vector<std::pair<const MultiModalFrame*, std::vector<int>>> extra_masks;
      std::vector<int> extra_cls;
      Eigen::VectorXd head_grad;
      double loss_prompt = 0.0, loss_mg = 0.0;
      init_grads(part);
      struct Pending {
        Prompt prompt;
        std::vector<int> mask;
        const MultiModalFrame* frame;
        std::int64_t pos;
      };
      std::vector<Pending> pending;
      for (Prompt& p : incoming) {
        const MultiModalFrame* frame = buffered(p.t);
        const bool valid_cls = classes.is_interest(p.cls);
        if (frame == nullptr || !valid_cls || p.t > b1 - 1) {
          ++log.prompts_dropped;
          continue;
        }
        const Eigen::VectorXd teacher_mask = promptable_mask(teacher_head, *frame, p);
        std::vector<int> mask;
        for (Eigen::Index i = 0; i < teacher_mask.size(); ++i) {
          if (teacher_mask(i) > icfg.mask_threshold) mask.push_back(static_cast<int>(i));
        }
        if (mask.empty()) mask = p.clicks;
        std::sort(mask.begin(), mask.end());
        mask.erase(std::unique(mask.begin(), mask.end()), mask.end());

        const std::vector<int> first{p.clicks.front()};
        const HeadOutput student = head_forward(student_head, frame->feat2d, first,
                                                box_indicator(frame->points, p.box),
                                                Eigen::VectorXd::Zero(frame->size()));
        const FocalLoss lp = mask_refinement_loss(student.logits, teacher_mask, icfg);
        loss_prompt += lp.value;
        const Eigen::VectorXd g = head_backward(student_head, student.cache, lp.dlogits).flatten();
        head_grad = head_grad.size() == 0 ? g : Eigen::VectorXd(head_grad + g);

        const std::int64_t pos = layout.find(p.t);
        if (pos < 0) {
          extra_masks.emplace_back(frame, mask);
          extra_cls.push_back(p.cls);
        }
        pending.push_back({p, mask, frame, pos});
      }
      if (!extra_masks.empty()) {
        std::vector<const MultiModalFrame*> frames;
        for (const auto& [fr, mask] : extra_masks) {
          frames.push_back(fr);
          extra.layout.add(fr->t, fr->size());
        }
        for (Modality m : kModalities) {
          extra.cache[index_of(m)] = forward(models[index_of(m)].student, stack_features(frames, m));
        }
        init_grads(extra);
      }
      std::size_t extra_index = 0;
      for (const Pending& pd : pending) {
        const Prompt& p = pd.prompt;
        Part& owner = pd.pos >= 0 ? part : extra;
        const std::size_t f =
            pd.pos >= 0 ? static_cast<std::size_t>(pd.pos) : static_cast<std::size_t>(extra_index++);
        const Eigen::Index off = owner.layout.offset[f];
        const Eigen::Index rows = owner.layout.rows[f];
        if (pd.pos >= 0) {
          for (Modality m : kModalities) {
            auto& y = labels[index_of(m)][f];
            if (y.empty()) y.assign(static_cast<std::size_t>(rows), -1);
            for (int i : pd.mask) y[static_cast<std::size_t>(i)] = p.cls;
          }
        }
        for (Modality m : kModalities) {
          const int mi = index_of(m);
          const RowMatrixXd feats = owner.cache[mi].features.middleRows(off, rows);
          const RowMatrixXd probs = owner.cache[mi].probs.middleRows(off, rows);
          const int anchor = argmax_mean(probs, pd.mask);
          const Eigen::RowVectorXd centroid = itta->centroids.has(m, p.cls)
                                                  ? itta->centroids.at(m, p.cls).mean
                                                  : Eigen::RowVectorXd::Zero(feats.cols());
          const ClusteringResult cr =
              clustering_objective(feats, pd.mask, argmax_rows(probs), anchor, centroid, icfg);
          loss_mg += cr.value;
          owner.dfeatures[mi].middleRows(off, rows) += cr.dfeatures;
        }
        applied.push_back(p);
        applied.back().mask = pd.mask;
        if (p.origin == PromptOrigin::kHuman) {
          ++log.prompts_human;
        } else {
          ++log.prompts_simulated;
        }
      }

      // Base objective.
      LossTerms terms;
      const std::vector<QueryFrameVoxels> no_voxels;
      if (base == Method::kTentLike) {
        terms = entropy_objective(student_probs, layout);
        if (!applied.empty()) {
          const LossTerms masked = overall_loss(student_probs, layout, labels, no_voxels, 0.0, config.batch);
          for (int mi = 0; mi < 2; ++mi) terms.dlogits[mi] += masked.dlogits[mi];
          terms.ce += masked.ce;
          terms.total += masked.total;
        }
      } else {
        terms = overall_loss(student_probs, layout, labels, voxel_method ? voxels : no_voxels, config.lambda_xm,
                             config.batch, config.convention);
      }
      for (std::size_t e = 0; e < extra_masks.size(); ++e) {
        const auto& mask = extra_masks[e].second;
        std::vector<int> y(static_cast<std::size_t>(extra.layout.rows[e]), -1);
        for (int i : mask) y[static_cast<std::size_t>(i)] = extra_cls[e];
        for (int mi = 0; mi < 2; ++mi) {
          const LogitLoss ce =
              cross_entropy(extra.cache[mi].probs.middleRows(extra.layout.offset[e], extra.layout.rows[e]), y);
          terms.ce += ce.value;
          terms.total += ce.value;
          extra.dlogits[mi].middleRows(extra.layout.offset[e], extra.layout.rows[e]) = ce.dlogits;
        }
      }
      bool supervised = base == Method::kTentLike || terms.xm != 0.0;
      for (const auto& lm : labels) {
        for (const auto& y : lm) supervised = supervised || std::any_of(y.begin(), y.end(), [](int v) { return v >= 0; });
      }
      double reuse_norm = 0.0;
      loss_total = terms.total + loss_prompt + loss_mg;
      loss_xm = terms.xm;
      if (!std::isfinite(loss_total)) throw DivergenceError("non-finite loss", b1 - 1);

      // Gradients per modality, as a list of trainable tensors.
      std::array<std::vector<Eigen::VectorXd>, 2> g_base, g_mg;
      for (Modality m : kModalities) {
        const int mi = index_of(m);
        const MlpParams& p = models[mi].student;
        MlpParams g = backward(p, part.cache[mi], terms.dlogits[mi], RowMatrixXd(), config.scope);
        if (!extra_masks.empty()) {
          const MlpParams ge = backward(p, extra.cache[mi], extra.dlogits[mi], RowMatrixXd(), config.scope);
          unflatten(g, flatten(g, config.scope) + flatten(ge, config.scope), config.scope);
        }
        g_base[mi] = split_tensors(g, config.scope);
        if (!applied.empty()) {
          MlpParams gm = backward(p, part.cache[mi], part.dlogits[mi], part.dfeatures[mi], config.scope);
          if (!extra_masks.empty()) {
            const MlpParams ge = backward(p, extra.cache[mi], extra.dlogits[mi], extra.dfeatures[mi], config.scope);
            unflatten(gm, flatten(gm, config.scope) + flatten(ge, config.scope), config.scope);
          }
          g_mg[mi] = split_tensors(gm, config.scope);
        }
      }
      std::vector<Eigen::VectorXd> total = concat(g_base[0], g_base[1]);
      const std::size_t split = g_base[0].size();
      if (!applied.empty()) {
        const std::vector<Eigen::VectorXd> mg = concat(g_mg[0], g_mg[1]);
        record = record_momentum_grad(mg, total, log.updates);
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += mg[i];
      } else if (interactive && record.valid) {
        const std::int64_t dt = log.updates - record.step;
        if (dt >= 1 && dt <= icfg.dt_max) {
          const auto reuse = reuse_momentum_grad(record, total, log.updates, icfg);
          double sq = 0.0;
          for (std::size_t i = 0; i < total.size(); ++i) {
            total[i] += reuse[i];
            sq += reuse[i].squaredNorm();
          }
          reuse_norm = std::sqrt(sq);
        }
      }
      if (supervised || !applied.empty()) {
        try {
          for (Modality m : kModalities) {
            const int mi = index_of(m);
            const std::vector<Eigen::VectorXd> mine(total.begin() + (mi == 0 ? 0 : static_cast<std::ptrdiff_t>(split)),
                                                    mi == 0 ? total.begin() + static_cast<std::ptrdiff_t>(split)
                                                            : total.end());
            Eigen::VectorXd theta = flatten(models[mi].student, config.scope);
            opt[mi].step(theta, join_tensors(mine));
            unflatten(models[mi].student, theta, config.scope);
            ema_update(models[mi], config.lambda_s);
          }
          if (head_grad.size() != 0) {
            Eigen::VectorXd theta = student_head.flatten();
            head_opt.step(theta, head_grad);
            student_head.unflatten(theta);
            teacher_head.unflatten(config.lambda_s * teacher_head.flatten() + (1.0 - config.lambda_s) * theta);
          }
        } catch (const DivergenceError& e) {
          throw DivergenceError(e.what(), b1 - 1);
        }
        ++log.updates;
        log.events.push_back({LoopEvent::Kind::kUpdate, b1 - 1, log.updates});
        if (observer != nullptr) observer->on_updated({b0, b1 - 1, log.updates, labels, applied, reuse_norm});
      }
    }

    const double wall = std::chrono::duration<double, std::milli>(Clock::now() - started).count();
    for (std::size_t f = 0; f < nb; ++f) {
      FrameRecord& r = records[f];
      r.loss_total = loss_total;
      r.loss_xm = loss_xm;
      if (config.record_timing) r.wall_ms = wall;
    }
    for (const Prompt& p : applied) {
      const std::int64_t pos = layout.find(p.t);
      records[pos >= 0 ? static_cast<std::size_t>(pos) : nb - 1].n_prompts += 1;
    }
    for (auto& r : records) {
      if (observer != nullptr) observer->on_record(r);
      log.frames.push_back(std::move(r));
    }
    while (ring.size() > keep) ring.pop_front();
  }
  return log;
}

}  // namespace latte
