/*
 * Copyright (c) 2026, the lipfill authors. All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <string>
#include <vector>

#include "lipfill/tensor.hpp"

namespace lipfill {

constexpr uint32_t kCheckpointVersion = 1;

/// Versioned, checksummed parameter container. Serialization is fully
/// deterministic: save -> load -> save produces identical bytes.
struct CheckpointData {
  std::string kind;  // e.g. "trainer", "sync-scorer"
  std::string config_text;
  std::string rng_state;
  int64_t step = 0;

  std::vector<std::pair<std::string, Tensor>> params;

  struct OptimizerState {
    std::string name;
    int64_t step_count = 0;
    std::vector<Tensor> m, v;
  };
  std::vector<OptimizerState> optimizers;
};

/// Writes via a temp file + rename; the payload carries a CRC32 trailer.
void save_checkpoint_file(const std::string& path, const CheckpointData& data);

/// Verifies magic, version, and checksum before any content is returned;
/// truncation or corruption never yields a partial load.
CheckpointData load_checkpoint_file(const std::string& path,
                                    const std::string& expected_kind);

uint32_t crc32(const unsigned char* data, size_t len);

}  // namespace lipfill
