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

#include "lipfill/model.hpp"

#include <cstring>

#include "lipfill/checkpoint.hpp"

namespace lipfill {

Generator::Generator(const RunConfig& cfg, Rng& rng)
    : cfg_(cfg),
      mask_(make_mask(cfg.image_size, cfg.image_size, cfg.mask_side_margin)),
      encoder_(cfg.base_channels, rng),
      backbone_(cfg, rng),
      decoder_(cfg.base_channels, StagePlan::make(cfg).stages[4].side, rng),
      audio_encoder_(cfg.audio_base_channels, cfg.audio_dim, rng),
      refiner_(cfg, rng) {}

Generator::Forward Generator::forward(const Tensor& masked, const Tensor& reference,
                                      const Tensor& mels,
                                      std::vector<Tensor>* stage_trace) const {
  if (masked.rank() != 4 || masked.dim(1) != 3 || masked.dim(2) != cfg_.image_size ||
      masked.dim(3) != cfg_.image_size)
    fail("generator: masked frames must be (B,3," + std::to_string(cfg_.image_size) + "," +
         std::to_string(cfg_.image_size) + "), got " + shape_str(masked.shape()));
  const int64_t B = masked.dim(0);
  if (reference.rank() != 4 || B % reference.dim(0) != 0)
    fail("generator: reference batch " + shape_str(reference.shape()) +
         " does not divide frame batch " + std::to_string(B));
  if (mels.rank() != 4 || mels.dim(0) != B)
    fail("generator: mel batch " + shape_str(mels.shape()) + " != frame batch " +
         std::to_string(B));
  const int64_t Br = reference.dim(0);

  Forward f;
  f.audio_code = audio_encoder_(constant(mels));

  Var target_tokens = encoder_(constant(masked));
  Var ref_tokens = encoder_(constant(reference));
  std::vector<Var> ref_feats = backbone_.run_reference_branch(std::move(ref_tokens));

  if (Br != B) {
    // repeat each reference sample for its group of consecutive frames
    const int64_t group = B / Br;
    for (Var& feat : ref_feats) {
      const int64_t N = feat->value.dim(1), C = feat->value.dim(2);
      auto idx = std::make_shared<std::vector<int64_t>>(B * N);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t n = 0; n < N; ++n) (*idx)[b * N + n] = (b / group) * N + n;
      feat = gather_rows(std::move(feat), idx, C, {B, N, C});
    }
  }

  Var core = backbone_.run_main_branch(std::move(target_tokens), ref_feats, f.audio_code,
                                       stage_trace);
  f.backbone_pred = decoder_(std::move(core));
  f.composited = composite_var(masked, f.backbone_pred, mask_);
  f.refined = refiner_(f.composited, f.audio_code);
  f.final = composite_var(masked, f.refined, mask_);
  return f;
}

Tensor Generator::infer_frame(const Tensor& frame, const Tensor& reference,
                              const MelWindow& mel) const {
  NoGrad guard;
  if (frame.rank() != 3 || reference.rank() != 3)
    fail("infer: single (3,S,S) frames expected");
  Tensor masked = apply_mask(frame, mask_);
  Tensor masked_b = masked.reshaped({1, 3, frame.dim(1), frame.dim(2)});
  Tensor ref_b = reference.clone().reshaped({1, 3, reference.dim(1), reference.dim(2)});
  Tensor mel_b = mel_batch({mel});
  Forward f = forward(masked_b, ref_b, mel_b);
  return f.final->value.reshaped({3, frame.dim(1), frame.dim(2)}).clone();
}

void Generator::params(ParamList& out) const {
  encoder_.params("encoder", out);
  backbone_.params("backbone", out);
  decoder_.params("decoder", out);
  audio_encoder_.params("audio", out);
  refiner_.params("refiner", out);
}

std::unique_ptr<Generator> load_generator(const std::string& trainer_checkpoint,
                                          RunConfig* cfg_out) {
  CheckpointData d = load_checkpoint_file(trainer_checkpoint, "trainer");
  RunConfig cfg = RunConfig::from_string(d.config_text);
  Rng rng(1);
  auto gen = std::make_unique<Generator>(cfg, rng);
  ParamList pl;
  gen->params(pl);
  size_t applied = 0;
  for (const auto& [name, t] : d.params) {
    if (name.rfind("g.", 0) != 0) continue;
    Var v = pl.find(name.substr(2));
    if (!v) throw std::runtime_error("checkpoint: unknown generator parameter " + name);
    if (!t.same_shape(v->value))
      throw std::runtime_error("checkpoint: generator parameter shape mismatch for " + name);
    std::memcpy(v->value.data(), t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
    ++applied;
  }
  if (applied != pl.size())
    throw std::runtime_error("checkpoint: generator parameter set incomplete");
  if (cfg_out) *cfg_out = cfg;
  return gen;
}

}  // namespace lipfill
