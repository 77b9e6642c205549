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

#include "latte/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace latte {

namespace {

using Clock = std::chrono::steady_clock;

struct Stopped {};

bool is_int(const Json& j) { return j.is_number_integer() || j.is_number_unsigned(); }

Eigen::Vector3d corner(const Json& j, const char* name) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string("box.") + name + " must be an array of 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!j[static_cast<std::size_t>(i)].is_number()) {
      throw ConfigError(std::string("box.") + name + " must be an array of 3 numbers");
    }
    v(i) = j[static_cast<std::size_t>(i)].get<double>();
    if (!std::isfinite(v(i))) throw ConfigError(std::string("box.") + name + " must be finite");
  }
  return v;
}

double round_mm(double v) { return std::round(v * 1000.0) / 1000.0; }

std::vector<double> row_entropy(const RowMatrixXd& probs) {
  std::vector<double> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) out[static_cast<std::size_t>(i)] = entropy(probs.row(i).transpose());
  return out;
}

OrderedJson error_body(const std::string& message) { return {{"error", message}}; }

void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, error_body(message).dump());
}

}  // namespace

PromptRequest parse_prompt_request(const Json& body) {
  if (!body.is_object()) throw ConfigError("prompt must be a JSON object");
  for (const auto& [key, value] : body.items()) {
    if (key != "t" && key != "class_id" && key != "point_indices" && key != "box" && key != "client_id") {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  for (const char* key : {"t", "class_id", "point_indices", "client_id"}) {
    if (!body.contains(key)) throw ConfigError(std::string("missing key '") + key + "'");
  }
  PromptRequest r;
  if (!is_int(body["t"])) throw ConfigError("t must be an integer");
  r.t = body["t"].get<std::int64_t>();
  if (!is_int(body["class_id"])) throw ConfigError("class_id must be an integer");
  const auto cls = body["class_id"].get<std::int64_t>();
  if (cls < std::numeric_limits<int>::min() || cls > std::numeric_limits<int>::max()) {
    throw ConfigError("class_id out of range");
  }
  r.class_id = static_cast<int>(cls);
  if (!body["point_indices"].is_array()) throw ConfigError("point_indices must be an array");
  for (const auto& e : body["point_indices"]) {
    if (!is_int(e)) throw ConfigError("point_indices must hold integers");
    const auto i = e.get<std::int64_t>();
    if (i < 0 || i > std::numeric_limits<int>::max()) throw ConfigError("point index out of range");
    r.point_indices.push_back(static_cast<int>(i));
  }
  if (!body["client_id"].is_string()) throw ConfigError("client_id must be a string");
  r.client_id = body["client_id"].get<std::string>();
  if (body.contains("box") && !body["box"].is_null()) {
    const Json& b = body["box"];
    if (!b.is_object() || b.size() != 2 || !b.contains("min") || !b.contains("max")) {
      throw ConfigError("box must be null or {min, max}");
    }
    Box box{corner(b["min"], "min"), corner(b["max"], "max")};
    if (!(box.min.array() <= box.max.array()).all()) throw ConfigError("box.min must not exceed box.max");
    r.box = box;
  }
  return r;
}

OrderedJson frame_payload(const FrameView& view, const ClassSet& classes) {
  const MultiModalFrame& f = view.frame;
  OrderedJson j;
  j["t"] = f.t;
  OrderedJson points = OrderedJson::array();
  for (Eigen::Index i = 0; i < f.points.rows(); ++i) {
    points.push_back({round_mm(f.points(i, 0)), round_mm(f.points(i, 1)), round_mm(f.points(i, 2))});
  }
  j["points"] = std::move(points);
  j["pred_xm"] = view.fused.labels;
  j["pred_2d"] = argmax_rows(view.predictions.probs2d);
  j["pred_3d"] = argmax_rows(view.predictions.probs3d);
  j["gt"] = f.gt;
  for (Modality m : kModalities) {
    const char* key = m == Modality::k2D ? "ent_2d" : "ent_3d";
    if (view.reliability != nullptr) {
      const Eigen::VectorXd& e = view.reliability->entropy[static_cast<std::size_t>(index_of(m))];
      j[key] = std::vector<double>(e.data(), e.data() + e.size());
    } else {
      j[key] = row_entropy(view.predictions.probs(m));
    }
  }
  OrderedJson pose = OrderedJson::array();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) pose.push_back(f.pose.matrix()(r, c));
  }
  j["pose"] = std::move(pose);
  j["classes"] = classes.names;
  j["interest"] = classes.interest;
  return j;
}

struct FrameSnapshot {
  std::int64_t t = 0;
  Points3d points;
  std::string payload;
};

struct LiveService::State {
  httplib::Server server;
  mutable std::mutex mutex;
  std::condition_variable changed;
  std::deque<std::shared_ptr<const FrameSnapshot>> frames;
  std::deque<std::pair<std::int64_t, std::string>> events;
  OrderedJson metrics;
  std::int64_t latest = -1;
  bool done = false;
  bool stopping = false;
  std::atomic<int> subscribers{0};
  std::optional<SimulatedPrompts> sim;
  std::unique_ptr<LivePrompts> prompts;
  std::string config_json;
};

// Observer on the loop thread: paces frames and publishes snapshots.
class LiveService::Loop : public AdaptObserver {
 public:
  Loop(LiveService& owner)
      : owner_(owner),
        classes_(owner.session_.world.config.class_set),
        confusion_{ConfusionMatrix(classes_.count()), ConfusionMatrix(classes_.count()),
                   ConfusionMatrix(classes_.count())},
        started_(Clock::now()) {}

  void on_evaluated(const FrameView& view) override {
    State& st = *owner_.state_;
    const double fps = owner_.session_.config.service.fps;
    if (fps > 0.0) {
      const auto due = started_ + std::chrono::duration_cast<Clock::duration>(
                                      std::chrono::duration<double>(static_cast<double>(view.frame.t + 1) / fps));
      std::unique_lock lock(st.mutex);
      st.changed.wait_until(lock, due, [&] { return st.stopping; });
      if (st.stopping) throw Stopped{};
    }
    auto snap = std::make_shared<FrameSnapshot>();
    snap->t = view.frame.t;
    snap->points = view.frame.points;
    snap->payload = frame_payload(view, classes_).dump();

    confusion_[0].add(view.fused.labels, view.frame.gt);
    confusion_[1].add(argmax_rows(view.predictions.probs2d), view.frame.gt);
    confusion_[2].add(argmax_rows(view.predictions.probs3d), view.frame.gt);
    ++frames_;
    const double elapsed = std::chrono::duration<double>(Clock::now() - started_).count();
    OrderedJson metrics;
    metrics["t"] = view.frame.t;
    metrics["miou_xm"] = confusion_[0].miou();
    metrics["miou_2d"] = confusion_[1].miou();
    metrics["miou_3d"] = confusion_[2].miou();
    OrderedJson iou = OrderedJson::array();
    for (const auto& v : confusion_[0].iou()) iou.push_back(v ? OrderedJson(*v) : OrderedJson(nullptr));
    metrics["per_class_iou"] = std::move(iou);
    metrics["prompts_consumed"] = prompts_;
    metrics["frames_per_sec"] = elapsed > 0.0 ? static_cast<double>(frames_) / elapsed : 0.0;
    metrics["status"] = "running";
    const std::string event = OrderedJson{{"t", view.frame.t}, {"metrics", metrics}}.dump();

    const auto history = static_cast<std::size_t>(owner_.session_.config.service.history);
    {
      std::lock_guard lock(st.mutex);
      st.frames.push_back(std::move(snap));
      while (st.frames.size() > history) st.frames.pop_front();
      st.events.emplace_back(view.frame.t, event);
      while (st.events.size() > history) st.events.pop_front();
      st.metrics = std::move(metrics);
      st.latest = view.frame.t;
    }
    st.changed.notify_all();
    if (owner_.options_.observer != nullptr) owner_.options_.observer->on_evaluated(view);
  }

  void on_updated(const UpdateView& view) override {
    owner_.state_->prompts->on_updated(view);
    prompts_ += static_cast<int>(view.prompts.size());
    if (owner_.options_.observer != nullptr) owner_.options_.observer->on_updated(view);
  }

  void on_record(const FrameRecord& record) override {
    owner_.state_->prompts->on_record(record);
    if (owner_.options_.observer != nullptr) owner_.options_.observer->on_record(record);
  }

 private:
  LiveService& owner_;
  const ClassSet& classes_;
  std::array<ConfusionMatrix, 3> confusion_;
  Clock::time_point started_;
  std::int64_t frames_ = 0;
  int prompts_ = 0;
};

LiveService::LiveService(Session session, ServiceOptions options)
    : session_(std::move(session)), options_(std::move(options)), state_(std::make_unique<State>()) {
  State& st = *state_;
  const RunConfig& c = session_.config;
  st.config_json = dump_json(resolved_config(c));
  st.metrics = {{"t", nullptr},       {"miou_xm", 0.0},          {"miou_2d", 0.0},       {"miou_3d", 0.0},
                {"per_class_iou", OrderedJson::array()}, {"prompts_consumed", 0}, {"frames_per_sec", 0.0},
                {"status", "starting"}};
  if (c.adapt.method.itta) st.sim.emplace(session_.world.config.class_set, c.itta, c.seed);
  // Human mode hands the prompting to connected clients; nobody listening
  // means the run proceeds exactly as headless.
  const bool hybrid = c.service.prompt_mode == PromptMode::kHybrid;
  State* raw = state_.get();
  st.prompts = std::make_unique<LivePrompts>(st.sim ? &*st.sim : nullptr,
                                             [raw, hybrid] { return hybrid || raw->subscribers.load() == 0; });

  httplib::Server& srv = st.server;
  // Plain SO_REUSEADDR: a port already served by another process must fail
  // to bind rather than be shared.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  srv.Get("/api/frame/latest", [raw](const httplib::Request&, httplib::Response& res) {
    std::shared_ptr<const FrameSnapshot> snap;
    {
      std::lock_guard lock(raw->mutex);
      if (!raw->frames.empty()) snap = raw->frames.back();
    }
    if (!snap) return send_error(res, 404, "no frame has been evaluated yet");
    send_json(res, 200, snap->payload);
  });

  srv.Get(R"(/api/frame/(-?\d+))", [raw](const httplib::Request& req, httplib::Response& res) {
    std::int64_t t = 0;
    try {
      t = std::stoll(req.matches[1].str());
    } catch (const std::exception&) {
      return send_error(res, 404, "unknown frame");
    }
    std::shared_ptr<const FrameSnapshot> snap;
    {
      std::lock_guard lock(raw->mutex);
      for (const auto& s : raw->frames) {
        if (s->t == t) snap = s;
      }
    }
    if (!snap) return send_error(res, 404, "frame " + std::to_string(t) + " is not available");
    send_json(res, 200, snap->payload);
  });

  srv.Get("/api/metrics", [raw](const httplib::Request&, httplib::Response& res) {
    std::string body;
    {
      std::lock_guard lock(raw->mutex);
      body = raw->metrics.dump();
    }
    send_json(res, 200, body);
  });

  srv.Get("/api/config", [raw](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, raw->config_json);
  });

  srv.Get("/api/events", [raw](const httplib::Request&, httplib::Response& res) {
    auto last = std::make_shared<std::int64_t>(-1);
    {
      std::lock_guard lock(raw->mutex);
      // A new subscriber starts from the current frame.
      if (!raw->events.empty()) *last = raw->events.back().first - 1;
    }
    ++raw->subscribers;
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [raw, last](std::size_t, httplib::DataSink& sink) {
          std::string out;
          bool end = false;
          {
            std::unique_lock lock(raw->mutex);
            raw->changed.wait_for(lock, std::chrono::seconds(15), [&] {
              return raw->stopping || raw->done || (!raw->events.empty() && raw->events.back().first > *last);
            });
            if (raw->stopping) {
              lock.unlock();
              sink.done();
              return true;
            }
            for (const auto& [t, e] : raw->events) {
              if (t <= *last) continue;
              out += "data: " + e + "\n\n";
              *last = t;
            }
            end = raw->done && out.empty();
          }
          if (end) out = "event: end\ndata: " + raw->metrics.dump() + "\n\n";
          if (out.empty()) out = ": keep-alive\n\n";
          if (!sink.write(out.data(), out.size())) return false;
          if (end) sink.done();
          return true;
        },
        [raw](bool) { --raw->subscribers; });
  });

  srv.Post("/api/prompt", [this, raw](const httplib::Request& req, httplib::Response& res) {
    PromptRequest pr;
    try {
      pr = parse_prompt_request(Json::parse(req.body));
    } catch (const Json::parse_error& e) {
      return send_error(res, 400, std::string("body is not valid JSON: ") + e.what());
    } catch (const ConfigError& e) {
      return send_error(res, 400, e.what());
    }
    const RunConfig& c = session_.config;
    const ClassSet& classes = session_.world.config.class_set;
    if (!c.adapt.method.itta) return send_error(res, 400, "method " + method_name(c.adapt.method) + " takes no prompts");
    if (!classes.is_interest(pr.class_id)) {
      return send_error(res, 400, "class_id " + std::to_string(pr.class_id) + " is not a class of interest");
    }
    std::shared_ptr<const FrameSnapshot> snap;
    std::int64_t latest = -1;
    {
      std::lock_guard lock(raw->mutex);
      latest = raw->latest;
      for (const auto& s : raw->frames) {
        if (s->t == pr.t) snap = s;
      }
    }
    if (pr.t < 0 || pr.t > latest) return send_error(res, 404, "frame " + std::to_string(pr.t) + " is not live");
    if (latest - pr.t > c.adapt.batch) {
      return send_error(res, 409, "frame " + std::to_string(pr.t) + " is older than the consumption window");
    }
    if (!snap) return send_error(res, 404, "frame " + std::to_string(pr.t) + " is not available");

    const auto n = static_cast<int>(snap->points.rows());
    std::vector<int> seen;
    for (int i : pr.point_indices) {
      if (i >= n) return send_error(res, 400, "point index " + std::to_string(i) + " out of range");
      if (std::find(seen.begin(), seen.end(), i) != seen.end()) {
        return send_error(res, 400, "point index " + std::to_string(i) + " repeated");
      }
      seen.push_back(i);
    }
    Prompt p;
    p.t = pr.t;
    p.cls = pr.class_id;
    p.box = pr.box;
    p.clicks = pr.point_indices;
    if (p.clicks.empty()) {
      // A box alone is seeded with the enclosed point closest to its centre.
      if (!p.box) return send_error(res, 400, "prompt needs point_indices or a box");
      const Eigen::Vector3d centre = 0.5 * (p.box->min + p.box->max);
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d q = snap->points.row(i).transpose();
        if (!p.box->contains(q)) continue;
        const double d = (q - centre).squaredNorm();
        if (d < best) {
          best = d;
          p.clicks.assign(1, i);
        }
      }
      if (p.clicks.empty()) return send_error(res, 400, "box encloses no point of frame " + std::to_string(pr.t));
    }
    p.rho = static_cast<int>(p.clicks.size());

    auto future = raw->prompts->submit(std::move(p));
    const auto timeout = std::chrono::duration<double>(c.service.prompt_timeout_s);
    if (future.wait_for(timeout) != std::future_status::ready) {
      return send_error(res, 503, "prompt was not consumed in time");
    }
    const PromptOutcome out = future.get();
    OrderedJson body;
    body["accepted"] = out.accepted;
    body["applied_at_t"] = out.applied_at_t ? OrderedJson(*out.applied_at_t) : OrderedJson(nullptr);
    send_json(res, 200, body.dump());
  });
}

LiveService::~LiveService() { stop(); }

int LiveService::start(int port) {
  State& st = *state_;
  int bound = port;
  if (port == 0) {
    bound = st.server.bind_to_any_port(options_.host);
    if (bound < 0) throw std::runtime_error("cannot bind " + options_.host);
  } else if (!st.server.bind_to_port(options_.host, port)) {
    throw std::runtime_error("cannot bind " + options_.host + ":" + std::to_string(port));
  }
  server_thread_ = std::thread([&st] { st.server.listen_after_bind(); });
  loop_thread_ = std::thread([this] { run_loop(); });
  return bound;
}

void LiveService::run_loop() {
  State& st = *state_;
  Loop loop(*this);
  const RunConfig& c = session_.config;
  std::optional<std::string> error;
  bool config_error = false;
  try {
    log_ = run_adaptation(session_.stream(), session_.models, c.adapt, session_.world.config.class_set,
                          session_.itta ? &*session_.itta : nullptr, st.prompts.get(), &loop);
    log_.config_hash = config_hash(c);
  } catch (const Stopped&) {
    error = "stopped before the stream ended";
  } catch (const ConfigError& e) {
    error = e.what();
    config_error = true;
  } catch (const std::exception& e) {
    error = e.what();
  }
  st.prompts->close();
  {
    std::lock_guard lock(st.mutex);
    error_ = error;
    config_error_ = config_error;
    st.done = true;
    st.metrics["status"] = error ? "aborted" : "finished";
  }
  st.changed.notify_all();
}

void LiveService::wait_finished() {
  State& st = *state_;
  std::unique_lock lock(st.mutex);
  st.changed.wait(lock, [&] { return st.done || !loop_thread_.joinable(); });
}

bool LiveService::finished() const {
  std::lock_guard lock(state_->mutex);
  return state_->done;
}

void LiveService::stop() {
  State& st = *state_;
  {
    std::lock_guard lock(st.mutex);
    st.stopping = true;
  }
  st.changed.notify_all();
  if (loop_thread_.joinable()) loop_thread_.join();
  st.server.stop();
  if (server_thread_.joinable()) server_thread_.join();
}

const RunLog& LiveService::log() const { return log_; }

std::optional<std::string> LiveService::error() const {
  std::lock_guard lock(state_->mutex);
  return error_;
}

}  // namespace latte
