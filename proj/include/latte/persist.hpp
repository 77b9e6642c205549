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

#include <filesystem>
#include <string>

#include "latte/config.hpp"

namespace latte {

/// One run.jsonl line: t, miou_xm, miou_2d, miou_3d, iou, loss_total,
/// loss_xm, n_prompts, wall_ms.
OrderedJson record_json(const FrameRecord& record);
FrameRecord record_from_json(const Json& line);

/// Means of the per-frame records, accumulated IoUs, prompt counts, hash and seed.
OrderedJson summary_json(const RunLog& log, const RunConfig& config);

/// Writes run.jsonl (omitted when there are no frames), config.resolved.json
/// and summary.json into `dir`, creating it if needed. Throws std::runtime_error
/// naming the path on I/O failure.
void persist_run(const RunLog& log, const RunConfig& config, const std::filesystem::path& dir);

struct RunLogStats {
  std::size_t frames = 0;
  double miou_xm = 0.0;
  double miou_2d = 0.0;
  double miou_3d = 0.0;
  int prompts = 0;
};

/// Re-reads a run.jsonl and averages its records.
RunLogStats read_runlog(const std::filesystem::path& path);

OrderedJson models_json(const Models& models);
Models models_from_json(const Json& document);
void save_models(const Models& models, const std::filesystem::path& path);
Models load_models(const std::filesystem::path& path);

/// Stream record of one frame: t, pose, points, gt, feat_2d, feat_3d.
OrderedJson frame_json(const MultiModalFrame& frame);

/// Writes every frame of the stream as one JSON line.
void write_stream(const World& world, const StreamSpec& spec, const std::filesystem::path& path);

/// Whole-file write; throws std::runtime_error naming the path on failure.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace latte
