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

#include "latte/session.hpp"

#include <algorithm>

#include "latte/persist.hpp"

namespace latte {

Models pretrain_models(const RunConfig& config, const World& world) {
  return pretrain_source(world, config.stream, config.model);
}

Session open_session(const RunConfig& config) {
  config.validate();
  Session s;
  s.config = config;
  s.world = generate_world(config.stream.world);
  s.models = config.checkpoint ? load_models(*config.checkpoint) : pretrain_models(config, s.world);
  const auto& classes = s.world.config.class_set;
  for (const auto& pair : s.models) {
    if (pair.student.num_classes() != classes.count() ||
        pair.student.input_dim() != s.world.config.feature_dim) {
      throw ConfigError("checkpoint does not match the world's classes or feature size");
    }
  }
  if (config.adapt.method.itta) {
    s.itta = prepare_itta(s.models, s.world, config.stream, classes, config.itta, config.seed);
  }
  return s;
}

RunLog run_headless(Session& session, AdaptObserver* observer) {
  const RunConfig& c = session.config;
  const FrameStream stream = session.stream();
  std::optional<SimulatedPrompts> sim;
  if (c.adapt.method.itta) sim.emplace(session.world.config.class_set, c.itta, c.seed);
  RunLog log = run_adaptation(stream, session.models, c.adapt, session.world.config.class_set,
                              session.itta ? &*session.itta : nullptr, sim ? &*sim : nullptr, observer);
  log.config_hash = config_hash(c);
  return log;
}

LivePrompts::LivePrompts(PromptSource* simulated, std::function<bool()> use_simulator)
    : simulated_(simulated), use_simulator_(std::move(use_simulator)) {}

std::future<PromptOutcome> LivePrompts::submit(Prompt prompt) {
  std::lock_guard lock(mutex_);
  std::promise<PromptOutcome> promise;
  auto future = promise.get_future();
  if (closed_) {
    promise.set_value({});
    return future;
  }
  prompt.ticket = next_ticket_++;
  prompt.origin = PromptOrigin::kHuman;
  waiting_.emplace(prompt.ticket, std::move(promise));
  queue_.push_back(std::move(prompt));
  return future;
}

void LivePrompts::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  queue_.clear();
  in_flight_.clear();
  for (auto& [ticket, promise] : waiting_) promise.set_value({});
  waiting_.clear();
}

int LivePrompts::submitted() const {
  std::lock_guard lock(mutex_);
  return static_cast<int>(next_ticket_);
}

std::vector<Prompt> LivePrompts::collect(std::span<const MultiModalFrame* const> batch) {
  std::vector<Prompt> out;
  // The simulator's activation draws are keyed by frame, so skipping it while
  // a client is connected does not shift later activations.
  if (simulated_ != nullptr && (!use_simulator_ || use_simulator_())) out = simulated_->collect(batch);
  std::lock_guard lock(mutex_);
  batch_last_ = batch.empty() ? -1 : batch.back()->t;
  while (!queue_.empty()) {
    in_flight_.push_back(queue_.front().ticket);
    out.push_back(std::move(queue_.front()));
    queue_.pop_front();
  }
  return out;
}

void LivePrompts::resolve(std::int64_t ticket, PromptOutcome outcome) {
  auto it = waiting_.find(ticket);
  if (it == waiting_.end()) return;
  it->second.set_value(outcome);
  waiting_.erase(it);
  in_flight_.erase(std::remove(in_flight_.begin(), in_flight_.end(), ticket), in_flight_.end());
}

void LivePrompts::on_updated(const UpdateView& view) {
  std::lock_guard lock(mutex_);
  for (const Prompt& p : view.prompts) {
    if (p.origin != PromptOrigin::kHuman || p.ticket < 0) continue;
    // Same attribution as the run log: the prompt's own frame when it is in
    // the batch, else the batch's last frame.
    const bool inside = p.t >= view.first_t && p.t <= view.last_t;
    resolve(p.ticket, {true, inside ? p.t : view.last_t});
  }
}

void LivePrompts::on_record(const FrameRecord& record) {
  std::lock_guard lock(mutex_);
  if (record.t != batch_last_) return;
  const std::vector<std::int64_t> dropped = in_flight_;
  for (std::int64_t ticket : dropped) resolve(ticket, {});
  in_flight_.clear();
}

}  // namespace latte
