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

#include "lipfill/config.hpp"
#include "lipfill/nn.hpp"

namespace lipfill {

/// Per-input-channel weight modulation with per-output-channel normalization:
///   W'_{mnq} = s_m * W_{mnq} / sqrt(sum_{m,q} (s_m * W_{mnq})^2 + eps)
/// w is (out, in, k, k); s has one entry per input channel.
Var modulate_weights(Var w, Var s, double eps);

/// Convolution whose kernel is modulated by a style vector derived from the
/// audio code through a private linear map (bias-initialized to 1 so the
/// initial modulation is near neutral).
struct ModulatedConv2d {
  Var weight;  // (out, in, k, k)
  Var bias;    // (out)
  Linear style;
  int stride = 1, pad = 1;

  ModulatedConv2d() = default;
  ModulatedConv2d(int in, int out, int k, int audio_dim, Rng& rng);
  /// Single-sample forward: x (1,in,H,W), audio (1,D).
  Var operator()(Var x, Var audio, double eps) const;
  void params(const std::string& prefix, ParamList& out) const;
};

/// Audio-modulated UNet refiner. Every convolution is modulated by its own
/// style map of the audio code. Output is sigmoid-squashed to [0,1].
class RefinerUNet {
 public:
  RefinerUNet() = default;
  RefinerUNet(const RunConfig& cfg, Rng& rng);

  /// x (B,3,S,S) composited frames, audio (B,D). S must be divisible by
  /// 2^(levels-1).
  Var operator()(Var x, Var audio) const;
  void params(const std::string& prefix, ParamList& out) const;
  int levels() const { return levels_; }
  const std::vector<ModulatedConv2d>& encoder_convs() const { return enc_; }

 private:
  Var forward_one(Var x, Var audio) const;

  int levels_ = 0;
  double eps_ = 1e-8;
  std::vector<ModulatedConv2d> enc_;  // two per encoder level
  std::vector<ModulatedConv2d> mid_;
  std::vector<ModulatedConv2d> dec_;  // two per decoder level
  ModulatedConv2d out_;
};

}  // namespace lipfill
