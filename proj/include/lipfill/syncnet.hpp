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

#include "lipfill/audio.hpp"
#include "lipfill/config.hpp"
#include "lipfill/mask.hpp"
#include "lipfill/nn.hpp"

namespace lipfill {

/// Audio-visual synchronization scorer: a mouth-region video tower over five
/// stacked frames and a mel tower, joined by cosine similarity through a
/// learnable logistic link. Used both as a training signal and as the
/// sync-confidence metric (self-trained scale; not comparable to any
/// externally trained scorer).
class SyncScorer {
 public:
  SyncScorer() = default;
  SyncScorer(const RunConfig& cfg, Rng& rng);

  int crop_height() const { return rh_; }
  int crop_width() const { return rw_; }

  /// frames: (B, 15, rh, rw) mouth crops of 5 consecutive frames; mel:
  /// (B,1,80,16) covering the same span. Returns scores in [0,1], shape (B).
  Var score(Var frames, Var mel) const { return sigmoid(logit(std::move(frames), std::move(mel))); }
  Var logit(Var frames, Var mel) const;

  /// Stacks the mouth crops of exactly 5 frames (each (3,H,W)) channelwise.
  static Tensor crop_stack(const std::vector<Tensor>& frames, const MaskSpec& m);
  /// Autodiff variant on a (5,3,H,W) batch of predicted frames.
  static Var crop_stack_var(Var frames, const MaskSpec& m);

  void params(const std::string& prefix, ParamList& out) const;

 private:
  Conv2d v1, v2, v3;
  Linear vhead;
  Conv2d a1, a2, a3;
  Linear ahead;
  Var link_scale, link_bias;
  int rh_ = 0, rw_ = 0;
};

struct SyncTrainOptions {
  int steps = 2000;
  int batch = 16;       // pairs per step, half matched / half offset
  double lr = 1e-4;
  int min_offset = 2;   // frames; negatives are at least this far off
  uint64_t seed = 7;
  int overfit_pairs = 0;  // > 0: draw this many pairs once and train on them only
};

class Dataset;  // defined in train.hpp

/// Binary-contrastive pretraining on matched vs. offset pairs. Returns the
/// per-step losses. Throws if the corpus cannot provide offset negatives.
std::vector<double> train_sync_scorer(SyncScorer& scorer, const Dataset& data,
                                      const MaskSpec& mask, const SyncTrainOptions& opts);

/// Matched-vs-offset classification AUC on a dataset (higher is better).
double sync_scorer_auc(const SyncScorer& scorer, const Dataset& data, const MaskSpec& mask,
                       int min_offset, int pairs, uint64_t seed);

/// Versioned checkpoint I/O for the scorer (same container format as the
/// trainer checkpoints; kind "sync-scorer", config snapshot embedded).
void save_sync_scorer(const std::string& path, const SyncScorer& scorer,
                      const RunConfig& cfg);
SyncScorer load_sync_scorer(const std::string& path, RunConfig* cfg_out = nullptr);

}  // namespace lipfill
