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

#include "latte/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace latte {

namespace {

// One JSON object being read; remembers which keys were consumed so that
// leftovers can be rejected.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void number(const std::string& key, double& out) {
    if (const Json* v = find(key)) out = as_number(*v, at(key));
  }
  void integer(const std::string& key, int& out) {
    if (const Json* v = find(key)) out = static_cast<int>(as_integer(*v, at(key)));
  }
  void integer(const std::string& key, std::int64_t& out) {
    if (const Json* v = find(key)) out = as_integer(*v, at(key));
  }
  void unsigned_integer(const std::string& key, std::uint64_t& out) {
    if (const Json* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        throw ConfigError(at(key) + " must be a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void boolean(const std::string& key, bool& out) {
    if (const Json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(at(key) + " must be a boolean");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (const Json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(at(key) + " must be a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + at(it.key()));
    }
  }

  static double as_number(const Json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + " must be a number");
    return v.get<double>();
  }
  static std::int64_t as_integer(const Json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
    return v.get<std::int64_t>();
  }
  static const Json& as_array(const Json& v, const std::string& path, std::size_t size = 0) {
    if (!v.is_array()) throw ConfigError(path + " must be an array");
    if (size != 0 && v.size() != size) throw ConfigError(path + " must have " + std::to_string(size) + " entries");
    return v;
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<double> numbers(const Json& v, const std::string& path, std::size_t size = 0) {
  std::vector<double> out;
  std::size_t i = 0;
  for (const auto& e : Section::as_array(v, path, size)) {
    out.push_back(Section::as_number(e, path + "[" + std::to_string(i++) + "]"));
  }
  return out;
}

std::vector<int> integers(const Json& v, const std::string& path) {
  std::vector<int> out;
  std::size_t i = 0;
  for (const auto& e : Section::as_array(v, path)) {
    out.push_back(static_cast<int>(Section::as_integer(e, path + "[" + std::to_string(i++) + "]")));
  }
  return out;
}

Eigen::Vector3d vec3(const Json& v, const std::string& path) {
  const auto n = numbers(v, path, 3);
  return {n[0], n[1], n[2]};
}

template <typename E>
E enum_value(const std::string& text, const std::string& path, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (text == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(path + " must be one of: " + names);
}

constexpr std::initializer_list<std::pair<const char*, Shape>> kShapes = {
    {"plane", Shape::kPlane}, {"box", Shape::kBox}, {"facade", Shape::kFacade},
    {"cylinder", Shape::kCylinder}, {"blob", Shape::kBlob}};
constexpr std::initializer_list<std::pair<const char*, UpdateScope>> kScopes = {{"norm_only", UpdateScope::kNormOnly},
                                                                               {"all", UpdateScope::kAll}};
constexpr std::initializer_list<std::pair<const char*, Convention>> kConventions = {
    {"intent", Convention::kIntent}, {"paper_literal", Convention::kPaperLiteral}};
constexpr std::initializer_list<std::pair<const char*, PromptMode>> kPromptModes = {{"human", PromptMode::kHuman},
                                                                                   {"hybrid", PromptMode::kHybrid}};

template <typename E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, v] : options) {
    if (v == value) return name;
  }
  throw ConfigError("unnamed enum value");
}

ClassLayout parse_layout(const Json& j, const std::string& path) {
  Section s(j, path);
  ClassLayout l;
  std::string shape = "box";
  s.string("shape", shape);
  l.shape = enum_value(shape, s.at("shape"), kShapes);
  s.integer("instances", l.instances);
  if (const Json* v = s.find("size_min")) l.size_min = vec3(*v, s.at("size_min"));
  if (const Json* v = s.find("size_max")) l.size_max = vec3(*v, s.at("size_max"));
  s.number("lateral_min", l.lateral_min);
  s.number("lateral_max", l.lateral_max);
  s.number("speed_min", l.speed_min);
  s.number("speed_max", l.speed_max);
  s.boolean("lane_directed", l.lane_directed);
  s.number("elevation", l.elevation);
  s.finish();
  return l;
}

void parse_world(const Json& j, WorldConfig& w) {
  Section s(j, "world");
  s.unsigned_integer("seed", w.seed);
  s.number("extent", w.extent);
  s.integer("points_per_frame", w.points_per_frame);
  s.integer("feature_dim", w.feature_dim);
  s.number("prototype_scale", w.prototype_scale);
  if (const Json* v = s.find("noise_sigma")) {
    const auto n = numbers(*v, s.at("noise_sigma"), 2);
    w.noise_sigma = {n[0], n[1]};
  }
  s.number("surface_density", w.surface_density);
  s.number("sensor_radius", w.sensor_radius);
  s.number("site_jitter", w.site_jitter);
  if (const Json* v = s.find("classes")) {
    Section c(*v, "world.classes");
    if (const Json* names = c.find("names")) {
      w.class_set.names.clear();
      for (const auto& n : Section::as_array(*names, c.at("names"))) {
        if (!n.is_string()) throw ConfigError(c.at("names") + " must hold strings");
        w.class_set.names.push_back(n.get<std::string>());
      }
    }
    if (const Json* interest = c.find("interest")) w.class_set.interest = integers(*interest, c.at("interest"));
    c.finish();
  }
  if (const Json* v = s.find("layout")) {
    w.layout.clear();
    std::size_t i = 0;
    for (const auto& e : Section::as_array(*v, s.at("layout"))) {
      w.layout.push_back(parse_layout(e, "world.layout[" + std::to_string(i++) + "]"));
    }
  } else {
    w.layout = WorldConfig::default_layout(w.extent);
  }
  s.finish();
}

Corruption parse_corruption(const Json& j, const std::string& path, int dim) {
  Section s(j, path);
  Corruption c;
  s.number("sigma", c.extra_sigma);
  s.number("drop", c.drop_prob);
  if (const Json* v = s.find("bias"); v != nullptr && !v->is_null()) {
    const auto b = numbers(*v, s.at("bias"), static_cast<std::size_t>(dim));
    c.bias = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
  s.finish();
  return c;
}

void parse_shift(const Json& j, RunConfig& c, bool& explicit_segments) {
  Section s(j, "shift");
  std::string preset = "two_phase";
  const bool has_preset = s.find("preset") != nullptr;
  s.string("preset", preset);
  enum_value<int>(preset, s.at("preset"), {{"two_phase", 0}, {"identity", 1}});
  if (const Json* v = s.find("segments")) {
    if (has_preset) throw ConfigError("shift.preset and shift.segments are mutually exclusive");
    ShiftSchedule schedule;
    std::size_t i = 0;
    for (const auto& e : Section::as_array(*v, s.at("segments"))) {
      const std::string path = "shift.segments[" + std::to_string(i++) + "]";
      Section seg(e, path);
      ShiftSegment out;
      seg.integer("start", out.start);
      seg.integer("end", out.end);
      for (Modality m : kModalities) {
        const std::string key = m == Modality::k2D ? "2d" : "3d";
        if (const Json* mv = seg.find(key)) {
          out.modality[index_of(m)] = parse_corruption(*mv, seg.at(key), c.stream.world.feature_dim);
        }
      }
      seg.finish();
      schedule.segments.push_back(std::move(out));
    }
    c.stream.shift = std::move(schedule);
    explicit_segments = true;
  } else {
    explicit_segments = false;
    c.stream.shift = preset == "identity" ? ShiftSchedule::identity(c.stream.length)
                                          : ShiftSchedule::two_phase(c.stream.length, c.stream.world.feature_dim, c.seed);
  }
  s.finish();
}

void parse_stream(const Json& j, StreamSpec& st) {
  Section s(j, "stream");
  s.integer("length", st.length);
  if (const Json* v = s.find("waypoints")) {
    st.waypoints.clear();
    std::size_t i = 0;
    for (const auto& e : Section::as_array(*v, s.at("waypoints"))) {
      const auto xy = numbers(e, "stream.waypoints[" + std::to_string(i++) + "]", 2);
      st.waypoints.emplace_back(xy[0], xy[1]);
    }
  }
  s.number("heading_noise_deg", st.heading_noise_deg);
  s.number("sensor_height", st.sensor_height);
  s.boolean("pose_noise", st.pose_noise);
  s.number("pose_noise_translation", st.pose_noise_translation);
  s.number("pose_noise_rotation_deg", st.pose_noise_rotation_deg);
  s.finish();
}

void parse_windows(const Json& j, RunConfig& c) {
  Section s(j, "windows");
  if (const Json* v = s.find("sizes")) {
    c.adapt.windows.sizes = integers(*v, s.at("sizes"));
    c.windows_explicit = true;
  }
  s.number("voxel_size", c.adapt.windows.voxel_size);
  s.number("alpha", c.adapt.windows.alpha);
  s.finish();
}

void parse_model(const Json& j, RunConfig& c) {
  Section s(j, "model");
  if (const Json* v = s.find("hidden")) c.model.hidden = integers(*v, s.at("hidden"));
  s.integer("pretrain_steps", c.model.steps);
  s.integer("batch_points", c.model.batch_points);
  s.integer("pool_frames", c.model.pool_frames);
  s.number("lr", c.model.optimizer.lr);
  s.number("weight_decay", c.model.optimizer.weight_decay);
  if (const Json* v = s.find("checkpoint")) {
    if (v->is_null()) {
      c.checkpoint.reset();
    } else if (v->is_string()) {
      c.checkpoint = v->get<std::string>();
    } else {
      throw ConfigError("model.checkpoint must be a string or null");
    }
  }
  s.finish();
}

void parse_optimizer(const Json& j, AdaptConfig& a) {
  Section s(j, "optimizer");
  s.number("lr", a.optimizer.lr);
  s.number("beta1", a.optimizer.beta1);
  s.number("beta2", a.optimizer.beta2);
  s.number("eps", a.optimizer.eps);
  s.number("weight_decay", a.optimizer.weight_decay);
  std::string scope = enum_name(a.scope, kScopes);
  s.string("scope", scope);
  a.scope = enum_value(scope, s.at("scope"), kScopes);
  s.finish();
}

void parse_method(const Json& j, RunConfig& c, std::string& name) {
  Section s(j, "method");
  s.string("name", name);
  s.integer("batch", c.adapt.batch);
  s.number("lambda_xm", c.adapt.lambda_xm);
  s.number("lambda_s", c.adapt.lambda_s);
  s.number("pslabel_threshold", c.adapt.pslabel_threshold);
  std::string convention = enum_name(c.adapt.convention, kConventions);
  s.string("convention", convention);
  c.adapt.convention = enum_value(convention, s.at("convention"), kConventions);
  s.boolean("record_timing", c.adapt.record_timing);
  s.finish();
}

void parse_itta(const Json& j, IttaConfig& t) {
  Section s(j, "itta");
  s.number("p_i", t.p_i);
  s.number("tau_in", t.tau_in);
  s.number("tau_out", t.tau_out);
  s.number("lambda_p", t.lambda_p);
  s.number("lambda_ac", t.lambda_ac);
  s.number("lambda_cls", t.lambda_cls);
  s.number("gamma_mg", t.gamma_mg);
  s.integer("dt_max", t.dt_max);
  s.number("focal_gamma", t.focal_gamma);
  s.number("focal_alpha", t.focal_alpha);
  s.number("mask_threshold", t.mask_threshold);
  s.integer("rho_min", t.rho_min);
  s.integer("rho_max", t.rho_max);
  s.integer("warmup_rho_min", t.warmup_rho_min);
  s.integer("warmup_rho_max", t.warmup_rho_max);
  s.integer("warmup_iterations", t.warmup_iterations);
  s.number("warmup_lr", t.warmup_lr);
  s.number("dbscan_eps", t.dbscan_eps);
  s.integer("dbscan_min_pts", t.dbscan_min_pts);
  s.integer("centroid_batches", t.centroid_batches);
  s.integer("centroid_batch_size", t.centroid_batch_size);
  s.number("centroid_threshold", t.centroid_threshold);
  s.number("centroid_lr", t.centroid_lr);
  s.integer("centroid_max_steps", t.centroid_max_steps);
  s.finish();
}

void parse_service(const Json& j, ServiceConfig& v) {
  Section s(j, "service");
  s.integer("port", v.port);
  s.number("fps", v.fps);
  std::string mode = enum_name(v.prompt_mode, kPromptModes);
  s.string("prompt_mode", mode);
  v.prompt_mode = enum_value(mode, s.at("prompt_mode"), kPromptModes);
  s.integer("history", v.history);
  s.number("prompt_timeout_s", v.prompt_timeout_s);
  s.finish();
}

OrderedJson vec_json(const Eigen::VectorXd& v) {
  OrderedJson a = OrderedJson::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

}  // namespace

void RunConfig::validate() const {
  stream.validate(adapt.windows.max_size());
  adapt.validate();
  itta.validate();
  stream.world.class_set.validate(adapt.method.itta);
  if (model.hidden.empty()) throw ConfigError("model.hidden needs at least one layer");
  for (int h : model.hidden) {
    if (h < 1) throw ConfigError("model.hidden widths must be positive");
  }
  if (model.steps < 0 || model.batch_points < 1 || model.pool_frames < 1) {
    throw ConfigError("model pretraining settings must be positive");
  }
  if (service.port < 0 || service.port > 65535) throw ConfigError("service.port must lie in [0, 65535]");
  if (!(service.fps >= 0)) throw ConfigError("service.fps must be non-negative");
  if (service.history < adapt.batch + 1) throw ConfigError("service.history must exceed the batch size");
  if (!(service.prompt_timeout_s > 0)) throw ConfigError("service.prompt_timeout_s must be positive");
}

void set_method(RunConfig& config, const std::string& name) {
  config.adapt.method = latte::parse_method(name);
  if (!config.windows_explicit) {
    const double voxel = config.adapt.windows.voxel_size;
    const double alpha = config.adapt.windows.alpha;
    config.adapt.windows = config.adapt.method.base == Method::kLattePP ? WindowConfig::latte_pp() : WindowConfig::latte();
    config.adapt.windows.voxel_size = voxel;
    config.adapt.windows.alpha = alpha;
  }
  if (config.adapt.method.itta) {
    config.adapt.itta = config.itta;
  } else {
    config.adapt.itta.reset();
  }
}

void set_paper_literal(RunConfig& config) {
  config.adapt.convention = Convention::kPaperLiteral;
  config.itta.convention = Convention::kPaperLiteral;
  if (config.adapt.itta) config.adapt.itta->convention = Convention::kPaperLiteral;
}

RunConfig parse_config(const Json& document) {
  RunConfig c;
  Section root(document, "");
  root.unsigned_integer("seed", c.seed);
  c.stream.world.seed = c.seed;
  c.model.seed = c.seed;
  c.adapt.seed = c.seed;
  if (const Json* v = root.find("world")) {
    parse_world(*v, c.stream.world);
  } else {
    c.stream.world.layout = WorldConfig::default_layout(c.stream.world.extent);
  }
  if (const Json* v = root.find("stream")) parse_stream(*v, c.stream);
  bool explicit_segments = false;
  if (const Json* v = root.find("shift")) {
    parse_shift(*v, c, explicit_segments);
  } else {
    c.stream.shift = ShiftSchedule::two_phase(c.stream.length, c.stream.world.feature_dim, c.seed);
  }
  if (const Json* v = root.find("windows")) parse_windows(*v, c);
  if (const Json* v = root.find("model")) parse_model(*v, c);
  if (const Json* v = root.find("optimizer")) parse_optimizer(*v, c.adapt);
  std::string method = method_name(c.adapt.method);
  if (const Json* v = root.find("method")) parse_method(*v, c, method);
  if (const Json* v = root.find("itta")) parse_itta(*v, c.itta);
  if (const Json* v = root.find("service")) parse_service(*v, c.service);
  root.finish();
  c.itta.convention = c.adapt.convention;
  set_method(c, method);
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Json doc;
  try {
    doc = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return parse_config(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

OrderedJson resolved_config(const RunConfig& c) {
  OrderedJson j;
  j["seed"] = c.seed;

  const WorldConfig& w = c.stream.world;
  OrderedJson world;
  world["seed"] = w.seed;
  world["extent"] = w.extent;
  world["points_per_frame"] = w.points_per_frame;
  world["feature_dim"] = w.feature_dim;
  world["prototype_scale"] = w.prototype_scale;
  world["noise_sigma"] = {w.noise_sigma[0], w.noise_sigma[1]};
  world["surface_density"] = w.surface_density;
  world["sensor_radius"] = w.sensor_radius;
  world["site_jitter"] = w.site_jitter;
  world["classes"] = {{"names", w.class_set.names}, {"interest", w.class_set.interest}};
  OrderedJson layout = OrderedJson::array();
  for (const auto& l : w.layout) {
    OrderedJson e;
    e["shape"] = enum_name(l.shape, kShapes);
    e["instances"] = l.instances;
    e["size_min"] = {l.size_min.x(), l.size_min.y(), l.size_min.z()};
    e["size_max"] = {l.size_max.x(), l.size_max.y(), l.size_max.z()};
    e["lateral_min"] = l.lateral_min;
    e["lateral_max"] = l.lateral_max;
    e["speed_min"] = l.speed_min;
    e["speed_max"] = l.speed_max;
    e["lane_directed"] = l.lane_directed;
    e["elevation"] = l.elevation;
    layout.push_back(e);
  }
  world["layout"] = layout;
  j["world"] = world;

  OrderedJson segments = OrderedJson::array();
  for (const auto& s : c.stream.shift.segments) {
    OrderedJson e;
    e["start"] = s.start;
    e["end"] = s.end;
    for (Modality m : kModalities) {
      const Corruption& cor = s.modality[index_of(m)];
      OrderedJson mj;
      mj["sigma"] = cor.extra_sigma;
      mj["drop"] = cor.drop_prob;
      mj["bias"] = cor.bias.size() == 0 ? OrderedJson(nullptr) : vec_json(cor.bias);
      e[m == Modality::k2D ? "2d" : "3d"] = mj;
    }
    segments.push_back(e);
  }
  j["shift"] = {{"segments", segments}};

  OrderedJson waypoints = OrderedJson::array();
  for (const auto& p : c.stream.waypoints) waypoints.push_back({p.x(), p.y()});
  j["stream"] = {{"length", c.stream.length},
                 {"waypoints", waypoints},
                 {"heading_noise_deg", c.stream.heading_noise_deg},
                 {"sensor_height", c.stream.sensor_height},
                 {"pose_noise", c.stream.pose_noise},
                 {"pose_noise_translation", c.stream.pose_noise_translation},
                 {"pose_noise_rotation_deg", c.stream.pose_noise_rotation_deg}};

  j["windows"] = {{"sizes", c.adapt.windows.sizes},
                  {"voxel_size", c.adapt.windows.voxel_size},
                  {"alpha", c.adapt.windows.alpha}};
  j["model"] = {{"hidden", c.model.hidden},
                {"pretrain_steps", c.model.steps},
                {"batch_points", c.model.batch_points},
                {"pool_frames", c.model.pool_frames},
                {"lr", c.model.optimizer.lr},
                {"weight_decay", c.model.optimizer.weight_decay},
                {"checkpoint", c.checkpoint ? OrderedJson(*c.checkpoint) : OrderedJson(nullptr)}};
  j["optimizer"] = {{"lr", c.adapt.optimizer.lr},
                    {"beta1", c.adapt.optimizer.beta1},
                    {"beta2", c.adapt.optimizer.beta2},
                    {"eps", c.adapt.optimizer.eps},
                    {"weight_decay", c.adapt.optimizer.weight_decay},
                    {"scope", enum_name(c.adapt.scope, kScopes)}};
  j["method"] = {{"name", method_name(c.adapt.method)},
                 {"batch", c.adapt.batch},
                 {"lambda_xm", c.adapt.lambda_xm},
                 {"lambda_s", c.adapt.lambda_s},
                 {"pslabel_threshold", c.adapt.pslabel_threshold},
                 {"convention", enum_name(c.adapt.convention, kConventions)},
                 {"record_timing", c.adapt.record_timing}};
  const IttaConfig& t = c.itta;
  j["itta"] = {{"p_i", t.p_i},
               {"tau_in", t.tau_in},
               {"tau_out", t.tau_out},
               {"lambda_p", t.lambda_p},
               {"lambda_ac", t.lambda_ac},
               {"lambda_cls", t.lambda_cls},
               {"gamma_mg", t.gamma_mg},
               {"dt_max", t.dt_max},
               {"focal_gamma", t.focal_gamma},
               {"focal_alpha", t.focal_alpha},
               {"mask_threshold", t.mask_threshold},
               {"rho_min", t.rho_min},
               {"rho_max", t.rho_max},
               {"warmup_rho_min", t.warmup_rho_min},
               {"warmup_rho_max", t.warmup_rho_max},
               {"warmup_iterations", t.warmup_iterations},
               {"warmup_lr", t.warmup_lr},
               {"dbscan_eps", t.dbscan_eps},
               {"dbscan_min_pts", t.dbscan_min_pts},
               {"centroid_batches", t.centroid_batches},
               {"centroid_batch_size", t.centroid_batch_size},
               {"centroid_threshold", t.centroid_threshold},
               {"centroid_lr", t.centroid_lr},
               {"centroid_max_steps", t.centroid_max_steps}};
  j["service"] = {{"port", c.service.port},
                  {"fps", c.service.fps},
                  {"prompt_mode", enum_name(c.service.prompt_mode, kPromptModes)},
                  {"history", c.service.history},
                  {"prompt_timeout_s", c.service.prompt_timeout_s}};
  return j;
}

std::string config_hash(const RunConfig& config) { return sha256_hex(dump_json(resolved_config(config))); }

}  // namespace latte
