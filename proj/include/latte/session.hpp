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

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>

#include "latte/config.hpp"

namespace latte {

/// A generated world with its source models and, for interactive methods,
/// the warmed-up head and centroids.
struct Session {
  RunConfig config;
  World world;
  Models models;
  std::optional<IttaAssets> itta;

  FrameStream stream() const { return make_stream(world, config.stream); }
};

/// Generates the world and pretrains the source models, or loads them from
/// config.checkpoint.
Session open_session(const RunConfig& config);

/// Source models of a config (the `pretrain` subcommand).
Models pretrain_models(const RunConfig& config, const World& world);

/// Runs the configured method with simulated prompts. Models in the session
/// are adapted in place.
RunLog run_headless(Session& session, AdaptObserver* observer = nullptr);

struct PromptOutcome {
  bool accepted = false;
  std::optional<std::int64_t> applied_at_t;
};

/// Prompts from any number of producers, consumed by the adaptation loop at
/// batch boundaries. Each submission resolves once the batch that consumed it
/// has been updated: accepted with the frame its prompt count was logged at,
/// or rejected when the loop dropped it. Must also be registered as the
/// loop's observer (or be forwarded its callbacks).
class LivePrompts : public PromptSource, public AdaptObserver {
 public:
  /// `simulated` (may be null) runs alongside while `use_simulator` says so.
  LivePrompts(PromptSource* simulated, std::function<bool()> use_simulator);

  std::future<PromptOutcome> submit(Prompt prompt);
  /// Rejects everything queued or in flight; later submissions reject at once.
  void close();

  std::vector<Prompt> collect(std::span<const MultiModalFrame* const> batch) override;
  void on_updated(const UpdateView& view) override;
  void on_record(const FrameRecord& record) override;

  int submitted() const;

 private:
  void resolve(std::int64_t ticket, PromptOutcome outcome);

  PromptSource* simulated_;
  std::function<bool()> use_simulator_;
  mutable std::mutex mutex_;
  bool closed_ = false;
  std::int64_t next_ticket_ = 0;
  std::deque<Prompt> queue_;
  std::map<std::int64_t, std::promise<PromptOutcome>> waiting_;
  // Tickets handed to the loop for the current batch.
  std::vector<std::int64_t> in_flight_;
  std::int64_t batch_last_ = -1;
};

}  // namespace latte
