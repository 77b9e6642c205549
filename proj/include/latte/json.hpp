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

#if __has_include(<nlohmann/json.hpp>)
#include <nlohmann/json.hpp>
#else
#include "json.hpp"
#endif

#include <string>

namespace latte {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Serializes with every floating-point number printed to 17 significant
/// digits, so identical values always give identical bytes. Non-finite
/// numbers become null. `indent` < 0 gives a single line.
std::string dump_json(const OrderedJson& value, int indent = -1);
std::string dump_json(const Json& value, int indent = -1);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(const std::string& bytes);

}  // namespace latte
