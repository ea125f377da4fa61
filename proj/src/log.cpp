// Copyright 2026 The kmft Authors
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

#include "kmft/logging.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>

#include "log.hpp"

namespace kmft {

void init_logging() {
  const char* env = std::getenv("KMFT_LOG");
  auto level = spdlog::level::warn;
  if (env != nullptr && *env != '\0') {
    level = spdlog::level::from_str(env);
  }
  if (!spdlog::get("kmft")) spdlog::set_default_logger(spdlog::stderr_color_mt("kmft"));
  spdlog::set_level(level);
}

}  // namespace kmft
