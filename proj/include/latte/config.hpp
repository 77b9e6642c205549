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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "latte/adapt.hpp"
#include "latte/json.hpp"

namespace latte {

enum class PromptMode { kHuman, kHybrid };

struct ServiceConfig {
  int port = 8080;
  double fps = 5.0;  // 0 runs unpaced
  PromptMode prompt_mode = PromptMode::kHuman;
  int history = 64;  // frames kept for /api/frame/{t}
  double prompt_timeout_s = 30.0;
};

/// Everything a run needs. Sections not present in the document keep the
/// defaults of the owning modules.
struct RunConfig {
  std::uint64_t seed = 42;
  StreamSpec stream;
  PretrainConfig model;
  std::optional<std::string> checkpoint;
  AdaptConfig adapt;
  IttaConfig itta;
  ServiceConfig service;
  // Window sizes were given in the document rather than implied by the method.
  bool windows_explicit = false;

  void validate() const;
};

/// Strict parse: unknown keys, wrong types and invalid values throw
/// ConfigError naming the offending key path.
RunConfig parse_config(const Json& document);

/// Reads and parses a config file. A missing or unreadable file throws
/// ConfigError naming the path.
RunConfig load_config(const std::filesystem::path& path);

/// Applies a method name (e.g. "latte_pp+itta") and the windows that go with
/// it unless the document fixed them explicitly.
void set_method(RunConfig& config, const std::string& name);

/// Both the reliability and interactive formulas in their printed form.
void set_paper_literal(RunConfig& config);

/// Fully resolved document; parse_config(resolved_config(c)) reproduces c.
OrderedJson resolved_config(const RunConfig& config);

/// SHA-256 of the single-line resolved document.
std::string config_hash(const RunConfig& config);

}  // namespace latte
