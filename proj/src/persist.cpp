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

#include "latte/persist.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace latte {

namespace {

OrderedJson matrix_json(const RowMatrixXd& m) {
  OrderedJson rows = OrderedJson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    OrderedJson row = OrderedJson::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

OrderedJson vector_json(const Eigen::VectorXd& v) {
  OrderedJson a = OrderedJson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

RowMatrixXd matrix_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j.front().is_array()) throw ConfigError(what + " must be a non-empty matrix");
  RowMatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.front().size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != static_cast<std::size_t>(m.cols())) throw ConfigError(what + " is ragged");
    for (std::size_t c = 0; c < j[r].size(); ++c) {
      if (!j[r][c].is_number()) throw ConfigError(what + " must hold numbers");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from(const Json& j, Eigen::Index size, const std::string& what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(size)) throw ConfigError(what + " has the wrong length");
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    const Json& e = j[static_cast<std::size_t>(i)];
    if (!e.is_number()) throw ConfigError(what + " must hold numbers");
    v(i) = e.get<double>();
  }
  return v;
}

OrderedJson params_json(const MlpParams& p) {
  OrderedJson hidden = OrderedJson::array();
  for (const auto& l : p.hidden) {
    hidden.push_back({{"weight", matrix_json(l.weight)},
                      {"bias", vector_json(l.bias)},
                      {"gamma", vector_json(l.gamma)},
                      {"beta", vector_json(l.beta)}});
  }
  return {{"hidden", hidden}, {"cls_weight", matrix_json(p.cls_weight)}, {"cls_bias", vector_json(p.cls_bias)}};
}

MlpParams params_from(const Json& j) {
  MlpParams p;
  if (!j.is_object() || !j.contains("hidden") || !j["hidden"].is_array()) throw ConfigError("malformed classifier");
  Eigen::Index in = -1;
  for (const auto& l : j["hidden"]) {
    NormDense d;
    d.weight = matrix_from(l.at("weight"), "hidden weight");
    if (in >= 0 && d.weight.cols() != in) throw ConfigError("hidden layer widths do not chain");
    d.bias = vector_from(l.at("bias"), d.weight.rows(), "hidden bias");
    d.gamma = vector_from(l.at("gamma"), d.weight.rows(), "hidden gamma");
    d.beta = vector_from(l.at("beta"), d.weight.rows(), "hidden beta");
    in = d.weight.rows();
    p.hidden.push_back(std::move(d));
  }
  if (p.hidden.empty()) throw ConfigError("classifier needs a hidden layer");
  p.cls_weight = matrix_from(j.at("cls_weight"), "cls_weight");
  if (p.cls_weight.cols() != in) throw ConfigError("classifier width does not match the last hidden layer");
  p.cls_bias = vector_from(j.at("cls_bias"), p.cls_weight.rows(), "cls_bias");
  if (!p.all_finite()) throw ConfigError("classifier has non-finite parameters");
  return p;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

double mean_or_zero(double total, std::size_t n) { return n == 0 ? 0.0 : total / static_cast<double>(n); }

OrderedJson iou_json(const std::vector<std::optional<double>>& iou) {
  OrderedJson a = OrderedJson::array();
  for (const auto& v : iou) a.push_back(v ? OrderedJson(*v) : OrderedJson(nullptr));
  return a;
}

}  // namespace

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << bytes;
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

OrderedJson record_json(const FrameRecord& r) {
  OrderedJson j;
  j["t"] = r.t;
  j["miou_xm"] = r.miou_xm;
  j["miou_2d"] = r.miou_2d;
  j["miou_3d"] = r.miou_3d;
  j["iou"] = iou_json(r.iou);
  j["loss_total"] = r.loss_total;
  j["loss_xm"] = r.loss_xm;
  j["n_prompts"] = r.n_prompts;
  j["wall_ms"] = r.wall_ms ? OrderedJson(*r.wall_ms) : OrderedJson(nullptr);
  return j;
}

FrameRecord record_from_json(const Json& j) {
  try {
    FrameRecord r;
    r.t = j.at("t").get<std::int64_t>();
    r.miou_xm = j.at("miou_xm").get<double>();
    r.miou_2d = j.at("miou_2d").get<double>();
    r.miou_3d = j.at("miou_3d").get<double>();
    for (const auto& v : j.at("iou")) r.iou.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
    r.loss_total = j.at("loss_total").is_null() ? 0.0 : j.at("loss_total").get<double>();
    r.loss_xm = j.at("loss_xm").is_null() ? 0.0 : j.at("loss_xm").get<double>();
    r.n_prompts = j.at("n_prompts").get<int>();
    if (!j.at("wall_ms").is_null()) r.wall_ms = j.at("wall_ms").get<double>();
    return r;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed run record: ") + e.what());
  }
}

OrderedJson summary_json(const RunLog& log, const RunConfig& config) {
  double xm = 0.0, m2 = 0.0, m3 = 0.0;
  int prompts = 0;
  for (const auto& r : log.frames) {
    xm += r.miou_xm;
    m2 += r.miou_2d;
    m3 += r.miou_3d;
    prompts += r.n_prompts;
  }
  const std::size_t n = log.frames.size();
  OrderedJson j;
  j["method"] = method_name(config.adapt.method);
  j["frames"] = n;
  j["mean_miou"] = {{"xm", mean_or_zero(xm, n)}, {"2d", mean_or_zero(m2, n)}, {"3d", mean_or_zero(m3, n)}};
  if (log.confusion.size() == 3) {
    j["accumulated_miou"] = {
        {"xm", log.confusion[0].miou()}, {"2d", log.confusion[1].miou()}, {"3d", log.confusion[2].miou()}};
    j["per_class_iou"] = iou_json(log.confusion[0].iou());
  } else {
    j["accumulated_miou"] = {{"xm", 0.0}, {"2d", 0.0}, {"3d", 0.0}};
    j["per_class_iou"] = OrderedJson::array();
  }
  j["classes"] = config.stream.world.class_set.names;
  j["prompts"] = {{"applied", prompts},
                  {"simulated", log.prompts_simulated},
                  {"human", log.prompts_human},
                  {"dropped", log.prompts_dropped}};
  j["updates"] = log.updates;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  return j;
}

void persist_run(const RunLog& log, const RunConfig& config, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const auto runlog = dir / "run.jsonl";
  if (log.frames.empty()) {
    std::filesystem::remove(runlog, ec);
  } else {
    std::string lines;
    for (const auto& r : log.frames) {
      lines += dump_json(record_json(r));
      lines += '\n';
    }
    write_file(runlog, lines);
  }
  write_file(dir / "config.resolved.json", dump_json(resolved_config(config), 2) + "\n");
  write_file(dir / "summary.json", dump_json(summary_json(log, config), 2) + "\n");
}

RunLogStats read_runlog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read run log " + path.string());
  RunLogStats s;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    const FrameRecord r = record_from_json(j);
    ++s.frames;
    s.miou_xm += r.miou_xm;
    s.miou_2d += r.miou_2d;
    s.miou_3d += r.miou_3d;
    s.prompts += r.n_prompts;
  }
  s.miou_xm = mean_or_zero(s.miou_xm, s.frames);
  s.miou_2d = mean_or_zero(s.miou_2d, s.frames);
  s.miou_3d = mean_or_zero(s.miou_3d, s.frames);
  return s;
}

OrderedJson models_json(const Models& models) {
  OrderedJson mods = OrderedJson::array();
  for (const auto& pair : models) {
    mods.push_back({{"modality", pair.modality == Modality::k2D ? "2d" : "3d"},
                    {"student", params_json(pair.student)},
                    {"teacher", params_json(pair.teacher)}});
  }
  return {{"format", "latte-models/1"}, {"models", mods}};
}

Models models_from_json(const Json& j) {
  try {
    if (j.at("format") != "latte-models/1") throw ConfigError("unsupported checkpoint format");
    const Json& mods = j.at("models");
    if (!mods.is_array() || mods.size() != 2) throw ConfigError("checkpoint needs two modalities");
    Models out;
    for (Modality m : kModalities) {
      const Json& e = mods[static_cast<std::size_t>(index_of(m))];
      if (e.at("modality") != (m == Modality::k2D ? "2d" : "3d")) throw ConfigError("checkpoint modalities out of order");
      out[index_of(m)] = {params_from(e.at("student")), params_from(e.at("teacher")), m};
      if (flatten(out[index_of(m)].student, UpdateScope::kAll).size() !=
          flatten(out[index_of(m)].teacher, UpdateScope::kAll).size()) {
        throw ConfigError("student and teacher shapes differ");
      }
    }
    return out;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_models(const Models& models, const std::filesystem::path& path) {
  write_file(path, dump_json(models_json(models)) + "\n");
}

Models load_models(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  try {
    return models_from_json(Json::parse(text));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

OrderedJson frame_json(const MultiModalFrame& f) {
  OrderedJson pose = OrderedJson::array();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) pose.push_back(f.pose.matrix()(r, c));
  }
  OrderedJson j;
  j["t"] = f.t;
  j["pose"] = pose;
  j["points"] = matrix_json(f.points);
  j["gt"] = f.gt;
  j["feat_2d"] = matrix_json(f.feat2d);
  j["feat_3d"] = matrix_json(f.feat3d);
  return j;
}

void write_stream(const World& world, const StreamSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::int64_t t = 0; t < spec.length; ++t) out << dump_json(frame_json(render_frame(world, spec, t))) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace latte
