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

#include <memory>

#include "lipfill/audio.hpp"
#include "lipfill/backbone.hpp"
#include "lipfill/config.hpp"
#include "lipfill/mask.hpp"
#include "lipfill/refine.hpp"

namespace lipfill {

/// The full generator: shared frame encoder, five fused attention stages
/// with a reference branch, convolutional decoder, audio encoder, and the
/// audio-modulated refiner. One frame is processed at a time at inference;
/// training batches share a reference per sample.
class Generator {
 public:
  Generator(const RunConfig& cfg, Rng& rng);

  const RunConfig& config() const { return cfg_; }
  const MaskSpec& mask() const { return mask_; }
  const Backbone& backbone() const { return backbone_; }
  Backbone& backbone() { return backbone_; }
  const FrameEncoder& encoder() const { return encoder_; }
  const RefinerUNet& refiner() const { return refiner_; }
  const AudioEncoder& audio_encoder() const { return audio_encoder_; }

  struct Forward {
    Var backbone_pred;  // decoder output
    Var composited;     // masked target + predicted alteration region
    Var refined;        // refiner output
    Var final;          // refined, re-composited so kept pixels are exact
    Var audio_code;
  };

  /// masked: (B,3,S,S) frames already masked (kept pixels = originals);
  /// reference: (Br,3,S,S) with B divisible by Br (each reference serves
  /// B/Br consecutive frames); mels: (B,1,80,16).
  Forward forward(const Tensor& masked, const Tensor& reference, const Tensor& mels,
                  std::vector<Tensor>* stage_trace = nullptr) const;

  /// Masks `frame` itself and runs a single-frame forward without autodiff.
  Tensor infer_frame(const Tensor& frame, const Tensor& reference,
                     const MelWindow& mel) const;

  void params(ParamList& out) const;

 private:
  RunConfig cfg_;
  MaskSpec mask_;
  FrameEncoder encoder_;
  Backbone backbone_;
  FrameDecoder decoder_;
  AudioEncoder audio_encoder_;
  RefinerUNet refiner_;
};

/// Rebuilds a generator from a trainer checkpoint (configuration snapshot
/// plus the g.* parameter set). The discriminator and optimizer state are
/// ignored.
std::unique_ptr<Generator> load_generator(const std::string& trainer_checkpoint,
                                          RunConfig* cfg_out = nullptr);

}  // namespace lipfill
