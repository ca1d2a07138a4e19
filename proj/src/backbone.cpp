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

FrameEncoder::FrameEncoder(int base_channels, Rng& rng) : out_channels(base_channels) {
  const int c = base_channels;
  c1 = Conv2d(3, c / 2, 3, 1, 1, rng);
  c2 = Conv2d(c / 2, c / 2, 3, 2, 1, rng);
  c3 = Conv2d(c / 2, c, 3, 1, 1, rng);
  c4 = Conv2d(c, c, 3, 2, 1, rng);
}

Var FrameEncoder::operator()(Var img) const {
  const Tensor& v = img->value;
  if (v.rank() != 4 || v.dim(1) != 3)
    fail("encode: expected (B,3,H,W) frames, got " + shape_str(v.shape()));
  if (v.dim(2) % 4 != 0 || v.dim(3) % 4 != 0)
    fail("encode: image sides must be divisible by 4, got " + shape_str(v.shape()));
  Var h = gelu(c1(std::move(img)));
  h = gelu(c2(std::move(h)));
  h = gelu(c3(std::move(h)));
  return gelu(c4(std::move(h)));
}

void FrameEncoder::params(const std::string& prefix, ParamList& out) const {
  c1.params(prefix + ".c1", out);
  c2.params(prefix + ".c2", out);
  c3.params(prefix + ".c3", out);
  c4.params(prefix + ".c4", out);
}

FrameDecoder::FrameDecoder(int base_channels, int expected_side_, Rng& rng)
    : in_channels(2 * base_channels), expected_side(expected_side_) {
  const int c = base_channels;
  u1 = ConvTranspose2d(2 * c, c, 4, 2, 1, rng);
  u2 = ConvTranspose2d(c, c / 2, 4, 2, 1, rng);
  u3 = ConvTranspose2d(c / 2, c / 2, 4, 2, 1, rng);
  proj = Conv2d(c / 2, 3, 3, 1, 1, rng);
}

Var FrameDecoder::operator()(Var feat) const {
  const Tensor& v = feat->value;
  if (v.rank() != 4 || v.dim(1) != in_channels || v.dim(2) != expected_side ||
      v.dim(3) != expected_side)
    fail("decode: expected (B," + std::to_string(in_channels) + "," +
         std::to_string(expected_side) + "," + std::to_string(expected_side) +
         ") final-stage features, got " + shape_str(v.shape()));
  Var h = gelu(u1(std::move(feat)));
  h = gelu(u2(std::move(h)));
  h = gelu(u3(std::move(h)));
  return sigmoid(proj(std::move(h)));
}

void FrameDecoder::params(const std::string& prefix, ParamList& out) const {
  u1.params(prefix + ".u1", out);
  u2.params(prefix + ".u2", out);
  u3.params(prefix + ".u3", out);
  proj.params(prefix + ".proj", out);
}

StagePlan StagePlan::make(const RunConfig& cfg) {
  StagePlan plan;
  plan.token_side = cfg.image_size / 4;
  const int divisors[5] = {2, 4, 8, 4, 2};
  const int ch_mult[5] = {2, 4, 8, 4, 2};
  for (int s = 0; s < 5; ++s) {
    Stage& st = plan.stages[s];
    st.side = plan.token_side / divisors[s];
    st.channels = cfg.base_channels * ch_mult[s];
    st.blocks = cfg.blocks_per_stage[s];
    st.down = s < 3;
    st.window = std::min(cfg.window_sizes[s], st.side);
    if (st.side % st.window != 0)
      fail("stage " + std::to_string(s + 1) + ": window " + std::to_string(st.window) +
           " does not divide feature side " + std::to_string(st.side));
    if (st.channels % cfg.heads != 0)
      fail("stage " + std::to_string(s + 1) + ": heads " + std::to_string(cfg.heads) +
           " do not divide channels " + std::to_string(st.channels));
    const bool audio_stage = cfg.inject_audio_all_stages ? true : s >= 2;
    st.audio = audio_stage && !cfg.disable_audio_injection;
  }
  return plan;
}

Var grid_to_tokens(Var x) {
  const Tensor& v = x->value;
  if (v.rank() != 4) fail("grid_to_tokens: rank-4 input required");
  const int64_t B = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
  return reshape(permute(std::move(x), {0, 2, 3, 1}), {B, H * W, C});
}

Var tokens_to_grid(Var x, int h, int w) {
  const Tensor& v = x->value;
  if (v.rank() != 3) fail("tokens_to_grid: rank-3 input required");
  const int64_t B = v.dim(0), C = v.dim(2);
  if (v.dim(1) != static_cast<int64_t>(h) * w)
    fail("tokens_to_grid: token count " + std::to_string(v.dim(1)) + " != " +
         std::to_string(h) + "x" + std::to_string(w));
  return permute(reshape(std::move(x), {B, h, w, C}), {0, 3, 1, 2});
}

}  // namespace lipfill
