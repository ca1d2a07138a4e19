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

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "lipfill/config.hpp"
#include "lipfill/nn.hpp"

namespace lipfill {

// ---------------------------------------------------------------------------
// Convolutional codec
// ---------------------------------------------------------------------------

/// Four convolution layers downsampling a frame to 1/4 resolution. The same
/// instance encodes both the masked target and the reference frame.
struct FrameEncoder {
  Conv2d c1, c2, c3, c4;
  int out_channels = 0;

  FrameEncoder() = default;
  FrameEncoder(int base_channels, Rng& rng);
  /// (B,3,S,S) -> (B,C0,S/4,S/4); S must be divisible by 4.
  Var operator()(Var img) const;
  void params(const std::string& prefix, ParamList& out) const;
};

/// Three transposed convolutions plus a final projection, mapping the last
/// stage's 1/8-resolution features back to a full-resolution frame in [0,1].
struct FrameDecoder {
  ConvTranspose2d u1, u2, u3;
  Conv2d proj;
  int in_channels = 0;
  int expected_side = 0;  // feature side of the final stage

  FrameDecoder() = default;
  FrameDecoder(int base_channels, int expected_side, Rng& rng);
  /// (B,2*C0,S/8,S/8) -> (B,3,S,S), sigmoid-squashed.
  Var operator()(Var feat) const;
  void params(const std::string& prefix, ParamList& out) const;
};

// ---------------------------------------------------------------------------
// Stage geometry
// ---------------------------------------------------------------------------

/// Resolved five-stage geometry: three downsampling stages then two
/// upsampling stages. The effective window never exceeds the feature side;
/// the alternate-block shift is active only when the window tiles more than
/// one window per side.
struct StagePlan {
  struct Stage {
    int side = 0;
    int channels = 0;
    int blocks = 0;
    int window = 0;
    bool down = true;
    bool audio = false;  // receives the audio code (last three stages)
  };
  int token_side = 0;  // encoder output side
  std::array<Stage, 5> stages;

  static StagePlan make(const RunConfig& cfg);
};

// ---------------------------------------------------------------------------
// Window partition
// ---------------------------------------------------------------------------

/// Token-to-window bijection for an (H, W) grid with an optional cyclic
/// shift, plus the derived attention mask and relative-position index.
class WindowPartition {
 public:
  WindowPartition(int batch, int h, int w, int window, int shift);

  int batch() const { return batch_; }
  int grid_h() const { return h_; }
  int grid_w() const { return w_; }
  int window_size() const { return window_; }
  int shift() const { return shift_; }
  int windows_per_image() const { return nw_; }
  int tokens_per_window() const { return window_ * window_; }

  /// Token rows (B*H*W) -> window-ordered rows (B*nW*L).
  IndexMap forward_map() const { return fwd_; }
  /// Window-ordered rows -> token rows (the inverse permutation).
  IndexMap inverse_map() const { return inv_; }
  /// Additive mask (nW, L, L) with 0 / -1e9 entries; defined when shifted.
  const Tensor& attention_mask() const { return mask_; }
  bool has_mask() const { return shift_ > 0; }
  /// Slice map distributing the mask over (B*nW*heads) attention matrices.
  IndexMap mask_map(int heads) const;
  /// (L*L) relative-position indices into a (2w-1)^2 bias table.
  IndexMap relative_index() const { return rel_; }

 private:
  int batch_, h_, w_, window_, shift_, nw_;
  IndexMap fwd_, inv_, rel_;
  Tensor mask_;
};

// ---------------------------------------------------------------------------
// Attention and blocks
// ---------------------------------------------------------------------------

/// Multi-head attention over window partitions. Queries come from q_src and
/// keys/values from kv_src; self-attention is the q_src == kv_src case and
/// mutual attention the general one, sharing all projections and the
/// relative-position table.
struct WindowAttention {
  Linear q, k, v, out;
  Var rel_bias;  // (heads, (2w-1)^2), null when disabled
  int dim = 0, heads = 0, window = 0;

  WindowAttention() = default;
  WindowAttention(int dim, int heads, int window, bool use_rel_bias, Rng& rng);
  /// q_src, kv_src: (B, N, C) token grids with matching shapes.
  Var operator()(Var q_src, Var kv_src, const WindowPartition& part) const;
  void params(const std::string& prefix, ParamList& out) const;
};

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(int dim, int ratio, Rng& rng);
  Var operator()(Var x) const;
  void params(const std::string& prefix, ParamList& out) const;
};

/// One fused block. The attention and MLP sub-modules are shared verbatim
/// with the reference branch; the fusion and audio projections are private
/// to the fused path.
struct FusionBlock {
  WindowAttention attn;
  Mlp mlp;
  Linear fuse;       // 2C -> C after [self, mutual] concatenation
  Linear audio_fc;   // C -> C, audio stages only
  Linear audio_map;  // audio code -> C, audio stages only
  bool has_audio = false;
  int stage_index = 0;  // 1-based

  FusionBlock() = default;
  FusionBlock(int dim, int heads, int window, int mlp_ratio, bool use_rel_bias,
              bool with_audio, int audio_dim, int stage_index, Rng& rng);

  /// Reference path: x + MSA(x), then + MLP (no normalization layers).
  Var reference_forward(Var x, const WindowPartition& part) const;
  /// Fused path per the block equations. audio is (B, D_a) or null and must
  /// be present exactly when the block is audio-receiving.
  Var fused_forward(Var x, Var ref, Var audio, const WindowPartition& part,
                    bool disable_mma) const;

  void params(const std::string& prefix, ParamList& out) const;
};

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

/// The five-stage core: shared resampling convolutions and fused blocks,
/// run either in reference mode (self-attention only, capturing per-block
/// features) or in fused mode (consuming those features plus audio).
class Backbone {
 public:
  Backbone(const RunConfig& cfg, Rng& rng);

  const StagePlan& plan() const { return plan_; }
  int total_blocks() const;
  int audio_blocks() const;

  /// tokens (B, C0, t, t) from the shared encoder; returns one feature per
  /// block: the tensor entering that block, resolution-matched to the fused
  /// branch.
  std::vector<Var> run_reference_branch(Var tokens) const;

  /// tokens: encoder output for the masked target; ref_feats: one entry per
  /// block (tiled to this batch if needed); audio: (B, D_a) code. Returns the
  /// final stage output (B, 2*C0, S/8, S/8). stage_trace, when provided,
  /// captures each stage's output values.
  Var run_main_branch(Var tokens, const std::vector<Var>& ref_feats, Var audio,
                      std::vector<Tensor>* stage_trace = nullptr) const;

  void params(const std::string& prefix, ParamList& out) const;

  /// Stage blocks are exposed for weight-sharing and identity tests.
  const std::vector<FusionBlock>& blocks(int stage) const { return blocks_[stage]; }
  const WindowPartition& partition(int batch, int stage, bool shifted) const;

 private:
  Var resample(Var grid, int stage) const;
  Var stage_forward_tokens(Var grid, int stage, bool to_tokens) const;

  RunConfig cfg_;
  StagePlan plan_;
  std::array<Conv2d, 3> down_;
  std::array<ConvTranspose2d, 2> up_;
  std::array<std::vector<FusionBlock>, 5> blocks_;

  mutable std::mutex part_mutex_;
  mutable std::map<std::tuple<int, int, int>, std::shared_ptr<WindowPartition>> partitions_;
};

// Token layout helpers.
Var grid_to_tokens(Var x);                 // (B,C,H,W) -> (B,H*W,C)
Var tokens_to_grid(Var x, int h, int w);   // (B,N,C) -> (B,C,h,w)

}  // namespace lipfill
