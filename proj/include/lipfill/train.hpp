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
#include <optional>

#include "lipfill/losses.hpp"
#include "lipfill/model.hpp"
#include "lipfill/syncnet.hpp"
#include "lipfill/synth.hpp"

namespace lipfill {

/// One clip plus its precomputed log-mel spectrogram (mel extraction is pure
/// input preprocessing, cached once per clip).
struct Clip {
  SynthClip data;
  Tensor mel_full;  // (80, columns)
};

class Dataset {
 public:
  /// Renders a deterministic corpus in memory.
  static Dataset synth_corpus(const CorpusSpec& spec);
  /// Loads a corpus directory written by generate_corpus / write_clip.
  static Dataset load_dir(const std::string& dir);

  const std::vector<Clip>& clips() const { return clips_; }
  int image_size() const;
  int frames_per_clip() const;

 private:
  std::vector<Clip> clips_;
};

/// A training draw: a target position inside a clip plus a reference
/// timestamp from the same clip, never equal to any generated frame.
struct TrainSample {
  int clip_index = 0;
  int t = 0;      // target frame (window start when sync training is on)
  int ref_t = 0;  // reference timestamp
};

/// End-to-end training state: generator, frame discriminator, fixed
/// perceptual tower, optional frozen sync scorer, and both optimizers.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const SyncScorer* frozen_sync = nullptr);

  /// Frames per sample: 5 when the sync term is active (or when window
  /// sampling is forced for controlled comparisons), else 1.
  int frames_per_sample() const {
    return cfg_.lambda_sync > 0 || cfg_.force_window_samples ? 5 : 1;
  }

  TrainSample draw_sample(const Dataset& data);
  std::vector<TrainSample> draw_batch(const Dataset& data);

  /// One discriminator update followed by one generator update.
  LossReport train_step(const Dataset& data);
  LossReport train_step_on(const Dataset& data, const std::vector<TrainSample>& batch);

  int64_t step() const { return step_; }
  Generator& generator() { return *gen_; }
  const Generator& generator() const { return *gen_; }
  PatchDiscriminator& discriminator() { return disc_; }
  const ParamList& gen_params() const { return gen_params_; }
  const ParamList& disc_params() const { return disc_params_; }
  Rng& rng() { return rng_; }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  RunConfig cfg_;
  Rng rng_;
  std::unique_ptr<Generator> gen_;
  PatchDiscriminator disc_;
  PerceptualExtractor percep_;
  const SyncScorer* sync_ = nullptr;  // frozen, not owned
  ParamList gen_params_, disc_params_;
  Adam opt_g_, opt_d_;
  int64_t step_ = 0;

  friend struct TrainerCheckpointAccess;
};

}  // namespace lipfill
