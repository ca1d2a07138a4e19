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

#include <cstdint>
#include <string>
#include <vector>

namespace lipfill {

/// Flat key=value run configuration. Defaults match the reference settings
/// (256x256 frames, 16 px side margins, stage blocks {2,3,4,3,2}, window
/// sizes {8,16,16,16,8}, lambda_vgg 1, lambda_sync 1e-4).
struct RunConfig {
  // frame geometry
  int image_size = 256;
  int mask_side_margin = 16;

  // backbone
  int base_channels = 128;  // encoder output channels
  int heads = 4;
  int mlp_ratio = 4;
  std::vector<int> blocks_per_stage = {2, 3, 4, 3, 2};
  std::vector<int> window_sizes = {8, 16, 16, 16, 8};
  bool use_rel_pos_bias = true;
  bool disable_audio_injection = false;  // ablation: no audio into the attention stages
  bool disable_mma = false;              // ablation: self-attention only
  bool inject_audio_all_stages = false;  // ablation: audio into every stage

  // audio branch
  int audio_dim = 256;
  int audio_base_channels = 16;

  // refinement network
  int refine_levels = 3;
  int refine_base_channels = 32;
  double eps_modulation = 1e-8;

  // objectives
  double lambda_vgg = 1.0;
  double lambda_sync = 1e-4;
  int n_perceptual_layers = 4;
  std::string gan_form = "nonsaturating";  // or "minimax"
  int disc_base_channels = 32;
  int percep_base_channels = 16;

  // sync scorer
  int sync_embed_dim = 128;
  int sync_base_channels = 16;

  // training
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 8;
  bool force_window_samples = false;  // train on 5-frame windows even without the sync term
  int64_t steps = 20000;
  uint64_t seed = 1234;
  int64_t log_every = 100;
  int64_t checkpoint_every = 5000;
  std::string sync_checkpoint;  // path to a pretrained sync scorer (required if lambda_sync > 0)

  static RunConfig from_file(const std::string& path);
  static RunConfig from_string(const std::string& text);
  /// Canonical serialization; equal configs produce identical strings.
  std::string to_string() const;
  void validate() const;

  int mask_margin_scaled() const { return mask_side_margin; }
};

}  // namespace lipfill
