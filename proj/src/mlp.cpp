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

#include "latte/mlp.hpp"

#include <cmath>
#include <random>

namespace latte {

MlpParams MlpParams::init(int input_dim, std::span<const int> widths, int num_classes, std::uint64_t seed) {
  if (widths.empty()) throw ConfigError("MLP needs at least one hidden layer");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MlpParams p;
  int in = input_dim;
  for (int width : widths) {
    NormDense layer;
    const double scale = std::sqrt(2.0 / in);
    layer.weight.resize(width, in);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = normal(rng) * scale;
    layer.bias = Eigen::VectorXd::Zero(width);
    layer.gamma = Eigen::VectorXd::Ones(width);
    layer.beta = Eigen::VectorXd::Zero(width);
    p.hidden.push_back(std::move(layer));
    in = width;
  }
  const double scale = std::sqrt(1.0 / in);
  p.cls_weight.resize(num_classes, in);
  for (Eigen::Index i = 0; i < p.cls_weight.size(); ++i) p.cls_weight.data()[i] = normal(rng) * scale;
  p.cls_bias = Eigen::VectorXd::Zero(num_classes);
  return p;
}

MlpParams MlpParams::zeros_like(const MlpParams& other) {
  MlpParams p = other;
  p.for_each_tensor([](TensorKind, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
  return p;
}

bool MlpParams::all_finite() const {
  bool ok = true;
  for_each_tensor([&](TensorKind, std::span<const double> s) {
    for (double v : s) ok = ok && std::isfinite(v);
  });
  return ok;
}

RowMatrixXd softmax_rows(const RowMatrixXd& logits) {
  RowMatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

RowMatrixXd softmax_backward(const RowMatrixXd& probs, const RowMatrixXd& dprobs) {
  const Eigen::VectorXd inner = (probs.array() * dprobs.array()).rowwise().sum();
  RowMatrixXd out = dprobs;
  out.colwise() -= inner;
  return (out.array() * probs.array()).matrix();
}

RowMatrixXd layer_norm(const RowMatrixXd& a, const Eigen::VectorXd& gamma, const Eigen::VectorXd& beta,
                       LayerNormCache* cache) {
  const double h = static_cast<double>(a.cols());
  RowMatrixXd centered = a;
  centered.colwise() -= a.rowwise().mean();
  const Eigen::VectorXd var = centered.array().square().rowwise().sum() / h;
  const Eigen::VectorXd rstd = (var.array() + kLayerNormEps).rsqrt();
  RowMatrixXd xhat = centered.array().colwise() * rstd.array();
  RowMatrixXd y = xhat.array().rowwise() * gamma.transpose().array();
  y.rowwise() += beta.transpose();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = rstd;
  }
  return y;
}

RowMatrixXd layer_norm_backward(const RowMatrixXd& dy, const LayerNormCache& cache, const Eigen::VectorXd& gamma,
                                Eigen::VectorXd& dgamma, Eigen::VectorXd& dbeta) {
  dgamma = (dy.array() * cache.xhat.array()).colwise().sum().transpose();
  dbeta = dy.colwise().sum().transpose();
  const RowMatrixXd dxhat = dy.array().rowwise() * gamma.transpose().array();
  const double h = static_cast<double>(dxhat.cols());
  const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum();
  RowMatrixXd da = h * dxhat;
  da.colwise() -= sum_d;
  da -= (cache.xhat.array().colwise() * sum_dx.array()).matrix();
  return (da.array().colwise() * (cache.rstd.array() / h)).matrix();
}

MlpCache forward(const MlpParams& params, const RowMatrixXd& input) {
  MlpCache cache;
  RowMatrixXd x = input;
  for (const auto& layer : params.hidden) {
    NormDenseCache lc;
    lc.input = x;
    RowMatrixXd a = x * layer.weight.transpose();
    a.rowwise() += layer.bias.transpose();
    LayerNormCache ln;
    lc.normalized = layer_norm(a, layer.gamma, layer.beta, &ln);
    lc.xhat = std::move(ln.xhat);
    lc.rstd = std::move(ln.rstd);
    x = lc.normalized.cwiseMax(0.0);
    cache.layers.push_back(std::move(lc));
  }
  cache.features = x;
  cache.logits = x * params.cls_weight.transpose();
  cache.logits.rowwise() += params.cls_bias.transpose();
  if (!cache.logits.allFinite()) throw DivergenceError("non-finite activation in forward pass", 0);
  cache.probs = softmax_rows(cache.logits);
  return cache;
}

RowMatrixXd predict(const MlpParams& params, const RowMatrixXd& input) { return forward(params, input).probs; }

MlpParams backward(const MlpParams& params, const MlpCache& cache, const RowMatrixXd& dlogits,
                   const RowMatrixXd& dfeatures, UpdateScope scope) {
  if (dlogits.rows() != cache.logits.rows() || dlogits.cols() != cache.logits.cols()) {
    throw ConfigError("upstream gradient shape does not match the forward cache");
  }
  if (dfeatures.size() != 0 && (dfeatures.rows() != cache.features.rows() || dfeatures.cols() != cache.features.cols())) {
    throw ConfigError("feature gradient shape does not match the forward cache");
  }
  MlpParams g = MlpParams::zeros_like(params);
  const bool all = scope == UpdateScope::kAll;
  if (all) {
    g.cls_weight = dlogits.transpose() * cache.features;
    g.cls_bias = dlogits.colwise().sum().transpose();
  }
  RowMatrixXd dx = dlogits * params.cls_weight;
  if (dfeatures.size() != 0) dx += dfeatures;

  for (std::size_t li = params.hidden.size(); li-- > 0;) {
    const NormDense& layer = params.hidden[li];
    const NormDenseCache& lc = cache.layers[li];
    const RowMatrixXd dy = (lc.normalized.array() > 0.0).select(dx, 0.0);
    const LayerNormCache ln{lc.xhat, lc.rstd};
    Eigen::VectorXd dgamma, dbeta;
    const RowMatrixXd da = layer_norm_backward(dy, ln, layer.gamma, dgamma, dbeta);
    g.hidden[li].gamma = dgamma;
    g.hidden[li].beta = dbeta;
    if (li == 0 && !all) break;
    if (all) {
      g.hidden[li].weight = da.transpose() * lc.input;
      g.hidden[li].bias = da.colwise().sum().transpose();
    }
    if (li > 0) dx = da * layer.weight;
  }
  return g;
}

Eigen::VectorXd flatten(const MlpParams& params, UpdateScope scope) {
  std::vector<double> values;
  params.for_each_tensor([&](TensorKind k, std::span<const double> s) {
    if (in_scope(k, scope)) values.insert(values.end(), s.begin(), s.end());
  });
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

void unflatten(MlpParams& params, const Eigen::VectorXd& values, UpdateScope scope) {
  Eigen::Index offset = 0;
  params.for_each_tensor([&](TensorKind k, std::span<double> s) {
    if (!in_scope(k, scope)) return;
    if (offset + static_cast<Eigen::Index>(s.size()) > values.size()) throw ConfigError("flattened size mismatch");
    for (double& v : s) v = values[offset++];
  });
  if (offset != values.size()) throw ConfigError("flattened size mismatch");
}

std::vector<Eigen::VectorXd> split_tensors(const MlpParams& params, UpdateScope scope) {
  std::vector<Eigen::VectorXd> out;
  params.for_each_tensor([&](TensorKind k, std::span<const double> s) {
    if (in_scope(k, scope)) out.emplace_back(Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())));
  });
  return out;
}

Eigen::VectorXd join_tensors(const std::vector<Eigen::VectorXd>& tensors) {
  Eigen::Index total = 0;
  for (const auto& t : tensors) total += t.size();
  Eigen::VectorXd out(total);
  Eigen::Index offset = 0;
  for (const auto& t : tensors) {
    out.segment(offset, t.size()) = t;
    offset += t.size();
  }
  return out;
}

}  // namespace latte
