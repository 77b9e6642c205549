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

#include <atomic>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "latte/session.hpp"

namespace latte {

/// Validated POST /api/prompt body.
struct PromptRequest {
  std::int64_t t = 0;
  int class_id = 0;
  std::vector<int> point_indices;
  std::optional<Box> box;
  std::string client_id;
};

/// Schema check only (types, required and unknown keys, box shape). Throws
/// ConfigError describing the violation.
PromptRequest parse_prompt_request(const Json& body);

/// Wire form of a frame as served by /api/frame.
OrderedJson frame_payload(const FrameView& view, const ClassSet& classes);

struct ServiceOptions {
  std::string host = "127.0.0.1";
  // Extra observer on the loop thread (tests).
  AdaptObserver* observer = nullptr;
};

/// Live run behind a local HTTP service. The adaptation loop runs on its own
/// thread; handlers only read snapshots published per frame and push prompts
/// into a queue.
class LiveService {
 public:
  LiveService(Session session, ServiceOptions options = {});
  ~LiveService();
  LiveService(const LiveService&) = delete;
  LiveService& operator=(const LiveService&) = delete;

  /// Binds (port 0 picks a free one), starts serving and the loop. Returns
  /// the bound port. Throws std::runtime_error when the port is unavailable.
  int start(int port);
  /// Blocks until the loop has finished or aborted.
  void wait_finished();
  bool finished() const;
  /// Stops the loop (if still running) and the server.
  void stop();

  /// Valid once finished without error.
  const RunLog& log() const;
  /// Set when the loop aborted; `config_error` tells which kind.
  std::optional<std::string> error() const;
  bool config_error() const { return config_error_; }

 private:
  struct State;
  class Loop;
  void run_loop();

  Session session_;
  ServiceOptions options_;
  std::unique_ptr<State> state_;
  std::thread loop_thread_;
  std::thread server_thread_;
  RunLog log_;
  std::optional<std::string> error_;
  bool config_error_ = false;
};

}  // namespace latte
