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

#include "latte/reliability.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

namespace latte {

double nearest_rank_quantile(std::span<const double> values, double alpha) {
  if (values.empty()) throw ConfigError("quantile of an empty population");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("quantile alpha must lie in (0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  // The tolerance keeps products such as 0.9 * 100 from rounding up a rank.
  auto rank = static_cast<std::size_t>(std::ceil(alpha * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

std::vector<std::uint8_t> quantile_filter(std::span<const double> entropies, double alpha) {
  const double q = nearest_rank_quantile(entropies, alpha);
  std::vector<std::uint8_t> keep(entropies.size());
  for (std::size_t i = 0; i < entropies.size(); ++i) keep[i] = entropies[i] <= q ? 1 : 0;
  return keep;
}

WindowMerge merge_windows(std::span<const double> window_entropy, std::span<const Eigen::RowVectorXd> window_mean,
                          std::span<const std::uint8_t> window_keep, std::span<const double> prior,
                          Convention convention) {
  const std::size_t nw = window_entropy.size();
  if (nw == 0 || window_mean.size() != nw || window_keep.size() != nw || prior.size() != nw) {
    throw ConfigError("merge_windows needs matching per-window inputs");
  }
  WindowMerge out;
  out.tau.assign(nw, 0.0);
  bool any_keep = false;
  for (std::size_t d = 0; d < nw; ++d) any_keep = any_keep || (window_keep[d] && !std::isnan(window_entropy[d]));
  out.keep = any_keep;

  auto active = [&](std::size_t d) {
    if (std::isnan(window_entropy[d])) return false;
    return any_keep ? window_keep[d] != 0 : true;
  };

  Eigen::Index k = 0;
  for (std::size_t d = 0; d < nw; ++d) {
    if (!std::isnan(window_entropy[d])) k = window_mean[d].size();
  }
  out.mean = Eigen::RowVectorXd::Zero(k);

  if (convention == Convention::kIntent) {
    // Softmin with the prior in numerator and denominator; shift by the
    // smallest entropy for numerical range.
    double e_min = std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < nw; ++d) {
      if (active(d)) e_min = std::min(e_min, window_entropy[d]);
    }
    double total = 0.0;
    for (std::size_t d = 0; d < nw; ++d) {
      if (!active(d)) continue;
      out.tau[d] = prior[d] * std::exp(-(window_entropy[d] - e_min));
      total += out.tau[d];
    }
    for (double& t : out.tau) t /= total;
    for (std::size_t d = 0; d < nw; ++d) {
      if (!active(d)) continue;
      out.entropy += out.tau[d] * window_entropy[d];
      out.mean += out.tau[d] * window_mean[d];
    }
  } else {
    double denom = 0.0;
    for (std::size_t d = 0; d < nw; ++d) {
      if (active(d)) denom += std::exp(window_entropy[d]);
    }
    for (std::size_t d = 0; d < nw; ++d) {
      if (!active(d)) continue;
      out.tau[d] = prior[d] * std::exp(window_entropy[d]) / denom;
      out.entropy += out.tau[d] * window_entropy[d];
      out.mean += out.tau[d] * window_mean[d];
    }
    // Keep the mean a distribution so KL stays defined.
    out.mean = out.mean.cwiseMax(kProbFloor);
    out.mean /= out.mean.sum();
  }
  return out;
}

std::pair<double, double> cross_modal_weights(double entropy2d, double entropy3d, Convention convention) {
  // Logistic form of exp(-a) / (exp(-a) + exp(-b)); finite for infinite inputs.
  const double diff = convention == Convention::kIntent ? entropy2d - entropy3d : entropy3d - entropy2d;
  double w2;
  if (std::isnan(diff)) {
    w2 = 0.5;
  } else if (diff >= 0) {
    const double e = std::exp(-diff);
    w2 = e / (1.0 + e);
  } else {
    w2 = 1.0 / (1.0 + std::exp(diff));
  }
  return {w2, 1.0 - w2};
}

XmLoss xm_consistency_loss(const Eigen::RowVectorXd& query_mean2d, const Eigen::RowVectorXd& query_mean3d,
                           std::size_t num_query, const ReliabilityRecord& record, Convention convention) {
  XmLoss out;
  const ModalReliability& r2 = record[Modality::k2D];
  const ModalReliability& r3 = record[Modality::k3D];
  const auto [w2, w3] = cross_modal_weights(r2.entropy, r3.entropy, convention);
  out.weight2d = w2;
  if (num_query == 0) return out;

  auto term = [&](const Eigen::RowVectorXd& q, const Eigen::RowVectorXd& ref, double w, Eigen::RowVectorXd& grad) {
    out.value += w * kl_divergence(q, ref);
    grad.resize(q.size());
    for (Eigen::Index c = 0; c < q.size(); ++c) {
      grad(c) = w * (std::log(std::max(q(c), kProbFloor)) - std::log(std::max(ref(c), kProbFloor)) + 1.0);
    }
  };
  // 3D queries follow the 2D references, weighted by 2D reliability, and vice versa.
  if (r2.keep) term(query_mean3d, r2.mean, w2, out.grad_query_mean[index_of(Modality::k3D)]);
  if (r3.keep) term(query_mean2d, r3.mean, w3, out.grad_query_mean[index_of(Modality::k2D)]);
  return out;
}

void assess_single_window(std::vector<QueryFrameVoxels>& batch, const PredictionLookup& teachers, double alpha) {
  for (auto m : kModalities) {
    std::vector<double> population;
    for (auto& frame : batch) {
      frame.records.resize(frame.voxels.size());
      for (std::size_t k = 0; k < frame.voxels.size(); ++k) {
        const STVoxel& v = frame.voxels[k];
        if (v.refs.size() != 1) throw ConfigError("single-window assessment needs exactly one reference set");
        ModalReliability& r = frame.records[k][m];
        const auto res = st_entropy(gather_refs(teachers, v.refs[0], m));
        r.window_entropy = {res.entropy};
        r.window_mean = {res.mean};
        r.entropy = res.entropy;
        r.mean = res.mean;
        r.tau = {1.0};
        population.push_back(res.entropy);
      }
    }
    if (population.empty()) continue;
    const double q = nearest_rank_quantile(population, alpha);
    for (auto& frame : batch) {
      for (auto& rec : frame.records) {
        ModalReliability& r = rec[m];
        r.keep = r.entropy <= q;
        r.window_keep = {static_cast<std::uint8_t>(r.keep)};
      }
    }
  }
}

void assess_multi_window(std::vector<QueryFrameVoxels>& batch, const PredictionLookup& teachers,
                         const WindowConfig& windows, Convention convention) {
  const std::size_t nw = windows.sizes.size();
  std::vector<double> prior(nw);
  for (std::size_t d = 0; d < nw; ++d) prior[d] = window_prior(windows.sizes[d]);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  for (auto m : kModalities) {
    std::vector<double> population;
    for (auto& frame : batch) {
      frame.records.resize(frame.voxels.size());
      for (std::size_t k = 0; k < frame.voxels.size(); ++k) {
        const STVoxel& v = frame.voxels[k];
        ModalReliability& r = frame.records[k][m];
        r.window_entropy.assign(nw, nan);
        r.window_mean.assign(nw, Eigen::RowVectorXd());
        for (std::size_t d = 0; d < nw; ++d) {
          if (v.refs[d].empty()) continue;
          const auto res = st_entropy(gather_refs(teachers, v.refs[d], m));
          r.window_entropy[d] = res.entropy;
          r.window_mean[d] = res.mean;
          population.push_back(res.entropy);
        }
      }
    }
    if (population.empty()) continue;
    const double q = nearest_rank_quantile(population, windows.alpha);
    for (auto& frame : batch) {
      for (auto& rec : frame.records) {
        ModalReliability& r = rec[m];
        r.window_keep.assign(nw, 0);
        for (std::size_t d = 0; d < nw; ++d) {
          r.window_keep[d] = !std::isnan(r.window_entropy[d]) && r.window_entropy[d] <= q ? 1 : 0;
        }
        WindowMerge merged = merge_windows(r.window_entropy, r.window_mean, r.window_keep, prior, convention);
        r.entropy = merged.entropy;
        r.mean = std::move(merged.mean);
        r.tau = std::move(merged.tau);
        r.keep = merged.keep;
      }
    }
  }
}

std::vector<PointReliability> propagate_point_entropy(const std::vector<QueryFrameVoxels>& batch,
                                                      const PredictionLookup& predictions,
                                                      std::span<const std::int64_t> frames) {
  std::map<std::int64_t, std::size_t> slot;
  std::vector<PointReliability> out(frames.size());
  std::array<std::vector<Eigen::VectorXd>, 2> sums;
  for (auto& s : sums) s.resize(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const PredictionFrame* p = predictions(frames[f]);
    if (p == nullptr) throw ConfigError("missing predictions for frame " + std::to_string(frames[f]));
    slot[frames[f]] = f;
    out[f].t = frames[f];
    const Eigen::Index n = p->probs2d.rows();
    for (auto m : kModalities) {
      sums[index_of(m)][f] = Eigen::VectorXd::Zero(n);
      out[f].contributors[index_of(m)] = Eigen::VectorXi::Zero(n);
    }
  }

  for (const auto& qf : batch) {
    for (std::size_t k = 0; k < qf.voxels.size(); ++k) {
      const STVoxel& v = qf.voxels[k];
      const auto& refs = v.refs.back();
      for (auto m : kModalities) {
        const ModalReliability& r = qf.records[k][m];
        if (!r.keep) continue;
        for (const PointRef& ref : refs) {
          auto it = slot.find(ref.frame);
          if (it == slot.end()) continue;
          sums[index_of(m)][it->second](ref.index) += r.entropy;
          out[it->second].contributors[index_of(m)](ref.index) += 1;
        }
      }
    }
  }

  for (std::size_t f = 0; f < frames.size(); ++f) {
    const PredictionFrame* p = predictions(frames[f]);
    for (auto m : kModalities) {
      const int mi = index_of(m);
      Eigen::VectorXd e(sums[mi][f].size());
      for (Eigen::Index i = 0; i < e.size(); ++i) {
        const int count = out[f].contributors[mi](i);
        e(i) = count > 0 ? sums[mi][f](i) / count : entropy(p->probs(m).row(i));
      }
      out[f].entropy[mi] = std::move(e);
    }
  }
  return out;
}

FusedFrame fuse_frame(const PredictionFrame& predictions, const PointReliability& reliability, Convention convention) {
  const Eigen::Index n = predictions.probs2d.rows();
  FusedFrame out;
  out.t = predictions.t;
  out.probs.resize(n, predictions.probs2d.cols());
  out.labels.resize(static_cast<std::size_t>(n));
  out.weights[0].resize(n);
  out.weights[1].resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const FusedRow row = fuse_predictions(predictions.probs2d.row(i), predictions.probs3d.row(i),
                                          reliability.entropy[0](i), reliability.entropy[1](i), convention);
    out.probs.row(i) = row.probs;
    out.labels[static_cast<std::size_t>(i)] = row.label;
    out.weights[0](i) = row.weight2d;
    out.weights[1](i) = 1.0 - row.weight2d;
  }
  return out;
}

FusedFrame average_frame(const PredictionFrame& predictions) {
  FusedFrame out;
  out.t = predictions.t;
  out.probs = 0.5 * (predictions.probs2d + predictions.probs3d);
  out.labels = argmax_rows(out.probs);
  const Eigen::Index n = out.probs.rows();
  out.weights[0] = Eigen::VectorXd::Constant(n, 0.5);
  out.weights[1] = Eigen::VectorXd::Constant(n, 0.5);
  return out;
}

}  // namespace latte
