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

#include "lipfill/backbone.hpp"

namespace lipfill {

Backbone::Backbone(const RunConfig& cfg, Rng& rng) : cfg_(cfg), plan_(StagePlan::make(cfg)) {
  const int c0 = cfg.base_channels;
  down_[0] = Conv2d(c0, 2 * c0, 2, 2, 0, rng);
  down_[1] = Conv2d(2 * c0, 4 * c0, 2, 2, 0, rng);
  down_[2] = Conv2d(4 * c0, 8 * c0, 2, 2, 0, rng);
  up_[0] = ConvTranspose2d(8 * c0, 4 * c0, 2, 2, 0, rng);
  up_[1] = ConvTranspose2d(4 * c0, 2 * c0, 2, 2, 0, rng);

  for (int s = 0; s < 5; ++s) {
    const auto& st = plan_.stages[s];
    blocks_[s].reserve(st.blocks);
    for (int l = 0; l < st.blocks; ++l)
      blocks_[s].emplace_back(st.channels, cfg.heads, st.window, cfg.mlp_ratio,
                              cfg.use_rel_pos_bias, st.audio, cfg.audio_dim, s + 1, rng);
  }
}

int Backbone::total_blocks() const {
  int n = 0;
  for (const auto& st : plan_.stages) n += st.blocks;
  return n;
}

int Backbone::audio_blocks() const {
  int n = 0;
  for (const auto& st : plan_.stages)
    if (st.audio) n += st.blocks;
  return n;
}

const WindowPartition& Backbone::partition(int batch, int stage, bool shifted) const {
  const auto& st = plan_.stages[stage];
  const bool can_shift = st.window < st.side;
  const int shift = (shifted && can_shift) ? st.window / 2 : 0;
  const auto key = std::make_tuple(batch, stage, shift);
  std::lock_guard<std::mutex> lock(part_mutex_);
  auto it = partitions_.find(key);
  if (it == partitions_.end()) {
    auto part = std::make_shared<WindowPartition>(batch, st.side, st.side, st.window, shift);
    it = partitions_.emplace(key, std::move(part)).first;
  }
  return *it->second;
}

Var Backbone::resample(Var grid, int stage) const {
  switch (stage) {
    case 0: return down_[0](std::move(grid));
    case 1: return down_[1](std::move(grid));
    case 2: return down_[2](std::move(grid));
    case 3: return up_[0](std::move(grid));
    default: return up_[1](std::move(grid));
  }
}

std::vector<Var> Backbone::run_reference_branch(Var tokens) const {
  const Tensor& v = tokens->value;
  if (v.rank() != 4 || v.dim(1) != cfg_.base_channels || v.dim(2) != plan_.token_side ||
      v.dim(3) != plan_.token_side)
    fail("reference branch: expected (B," + std::to_string(cfg_.base_channels) + "," +
         std::to_string(plan_.token_side) + "," + std::to_string(plan_.token_side) +
         ") encoder output, got " + shape_str(v.shape()));
  const int B = static_cast<int>(v.dim(0));

  std::vector<Var> feats;
  feats.reserve(total_blocks());
  Var g = std::move(tokens);
  for (int s = 0; s < 5; ++s) {
    const auto& st = plan_.stages[s];
    g = resample(std::move(g), s);
    Var tok = grid_to_tokens(std::move(g));
    for (int l = 0; l < st.blocks; ++l) {
      const WindowPartition& part = partition(B, s, l % 2 == 1);
      feats.push_back(tok);
      tok = blocks_[s][l].reference_forward(std::move(tok), part);
    }
    g = tokens_to_grid(std::move(tok), st.side, st.side);
  }
  return feats;
}

Var Backbone::run_main_branch(Var tokens, const std::vector<Var>& ref_feats, Var audio,
                              std::vector<Tensor>* stage_trace) const {
  const Tensor& v = tokens->value;
  if (v.rank() != 4 || v.dim(1) != cfg_.base_channels || v.dim(2) != plan_.token_side ||
      v.dim(3) != plan_.token_side)
    fail("main branch: expected (B," + std::to_string(cfg_.base_channels) + "," +
         std::to_string(plan_.token_side) + "," + std::to_string(plan_.token_side) +
         ") encoder output, got " + shape_str(v.shape()));
  if (static_cast<int>(ref_feats.size()) != total_blocks())
    fail("main branch: expected " + std::to_string(total_blocks()) +
         " reference features, got " + std::to_string(ref_feats.size()));
  const int B = static_cast<int>(v.dim(0));

  bool needs_audio = false;
  for (const auto& st : plan_.stages) needs_audio = needs_audio || st.audio;
  if (needs_audio && !audio) fail("main branch: audio code required but absent");
  if (audio && audio->value.dim(0) != v.dim(0))
    fail("main branch: audio batch does not match frame batch");

  Var g = std::move(tokens);
  size_t bi = 0;
  for (int s = 0; s < 5; ++s) {
    const auto& st = plan_.stages[s];
    g = resample(std::move(g), s);
    Var tok = grid_to_tokens(std::move(g));
    for (int l = 0; l < st.blocks; ++l, ++bi) {
      const WindowPartition& part = partition(B, s, l % 2 == 1);
      tok = blocks_[s][l].fused_forward(std::move(tok), ref_feats[bi],
                                        st.audio ? audio : nullptr, part, cfg_.disable_mma);
    }
    g = tokens_to_grid(std::move(tok), st.side, st.side);
    if (stage_trace) stage_trace->push_back(g->value.clone());
  }
  return g;
}

void Backbone::params(const std::string& prefix, ParamList& out) const {
  down_[0].params(prefix + ".down1", out);
  down_[1].params(prefix + ".down2", out);
  down_[2].params(prefix + ".down3", out);
  up_[0].params(prefix + ".up4", out);
  up_[1].params(prefix + ".up5", out);
  for (int s = 0; s < 5; ++s)
    for (size_t l = 0; l < blocks_[s].size(); ++l)
      blocks_[s][l].params(prefix + ".stage" + std::to_string(s + 1) + ".block" +
                               std::to_string(l + 1),
                           out);
}

}  // namespace lipfill
