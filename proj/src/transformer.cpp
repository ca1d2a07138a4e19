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

#include <cmath>

namespace lipfill {

namespace {
constexpr double kMaskNegative = -1e9;
}

WindowPartition::WindowPartition(int batch, int h, int w, int window, int shift)
    : batch_(batch), h_(h), w_(w), window_(window), shift_(shift) {
  if (window < 1 || h % window != 0 || w % window != 0)
    fail("partition: window " + std::to_string(window) + " does not tile grid (" +
         std::to_string(h) + "," + std::to_string(w) + ")");
  if (shift < 0 || shift >= window) fail("partition: shift must be in [0, window)");
  if (shift > 0 && window >= std::min(h, w))
    fail("partition: shift requires more than one window per side");
  nw_ = (h / window) * (w / window);
  const int L = window * window;
  const int64_t rows = static_cast<int64_t>(batch) * h * w;

  auto fwd = std::make_shared<std::vector<int64_t>>(rows);
  auto inv = std::make_shared<std::vector<int64_t>>(rows);
  int64_t o = 0;
  for (int b = 0; b < batch; ++b)
    for (int wy = 0; wy < h / window; ++wy)
      for (int wx = 0; wx < w / window; ++wx)
        for (int iy = 0; iy < window; ++iy)
          for (int ix = 0; ix < window; ++ix) {
            const int y = (wy * window + iy + shift) % h;
            const int x = (wx * window + ix + shift) % w;
            const int64_t src = (static_cast<int64_t>(b) * h + y) * w + x;
            (*fwd)[o] = src;
            (*inv)[src] = o;
            ++o;
          }
  fwd_ = fwd;
  inv_ = inv;

  auto rel = std::make_shared<std::vector<int64_t>>(static_cast<int64_t>(L) * L);
  const int span = 2 * window - 1;
  for (int iy = 0; iy < window; ++iy)
    for (int ix = 0; ix < window; ++ix)
      for (int jy = 0; jy < window; ++jy)
        for (int jx = 0; jx < window; ++jx) {
          const int i = iy * window + ix, j = jy * window + jx;
          (*rel)[static_cast<int64_t>(i) * L + j] =
              static_cast<int64_t>(iy - jy + window - 1) * span + (ix - jx + window - 1);
        }
  rel_ = rel;

  if (shift_ > 0) {
    // Region ids on the rolled grid; tokens from different regions within a
    // window must not attend to each other across the wrap seam.
    auto region = [&](int coord, int size) {
      return coord < size - window ? 0 : (coord < size - shift ? 1 : 2);
    };
    std::vector<int> id(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) id[y * w + x] = region(y, h) * 3 + region(x, w);
    mask_ = Tensor({nw_, L, L});
    int wi = 0;
    for (int wy = 0; wy < h / window; ++wy)
      for (int wx = 0; wx < w / window; ++wx, ++wi) {
        std::vector<int> tid(L);
        for (int iy = 0; iy < window; ++iy)
          for (int ix = 0; ix < window; ++ix)
            tid[iy * window + ix] = id[(wy * window + iy) * w + wx * window + ix];
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < L; ++j)
            mask_[(static_cast<int64_t>(wi) * L + i) * L + j] =
                tid[i] == tid[j] ? 0.0 : kMaskNegative;
      }
  }
}

IndexMap WindowPartition::mask_map(int heads) const {
  auto map = std::make_shared<std::vector<int64_t>>(
      static_cast<int64_t>(batch_) * nw_ * heads);
  int64_t i = 0;
  for (int b = 0; b < batch_; ++b)
    for (int wdx = 0; wdx < nw_; ++wdx)
      for (int hd = 0; hd < heads; ++hd) (*map)[i++] = wdx;
  return map;
}

WindowAttention::WindowAttention(int dim_, int heads_, int window_, bool use_rel_bias,
                                 Rng& rng)
    : dim(dim_), heads(heads_), window(window_) {
  if (dim % heads != 0) fail("attention: heads must divide the channel count");
  q = Linear(dim, dim, rng, 0.02);
  k = Linear(dim, dim, rng, 0.02);
  v = Linear(dim, dim, rng, 0.02);
  out = Linear(dim, dim, rng, 0.005);
  if (use_rel_bias) {
    const int span = 2 * window - 1;
    rel_bias = make_param_const({heads, static_cast<int64_t>(span) * span}, 0.0);
  }
}

Var WindowAttention::operator()(Var q_src, Var kv_src, const WindowPartition& part) const {
  const Tensor& qs = q_src->value;
  const Tensor& ks = kv_src->value;
  if (!qs.same_shape(ks))
    fail("attention: query/key-value grids differ, " + shape_str(qs.shape()) + " vs " +
         shape_str(ks.shape()));
  if (qs.rank() != 3 || qs.dim(2) != dim)
    fail("attention: expected (B,N," + std::to_string(dim) + ") tokens, got " +
         shape_str(qs.shape()));
  const int64_t B = qs.dim(0), N = qs.dim(1);
  if (B != part.batch() ||
      N != static_cast<int64_t>(part.grid_h()) * part.grid_w())
    fail("attention: partition geometry does not match tokens");

  const int64_t L = part.tokens_per_window();
  const int64_t G = B * part.windows_per_image();
  const int64_t d = dim / heads;

  Var qp = q(q_src), kp = k(kv_src), vp = v(kv_src);
  auto to_heads = [&](Var t) {
    t = gather_rows(std::move(t), part.forward_map(), dim, {G, L, dim});
    t = reshape(std::move(t), {G, L, heads, d});
    t = permute(std::move(t), {0, 2, 1, 3});
    return reshape(std::move(t), {G * heads, L, d});
  };
  Var Q = to_heads(std::move(qp));
  Var K = to_heads(std::move(kp));
  Var V = to_heads(std::move(vp));

  Var logits = mul_scalar(bmm_nt(std::move(Q), std::move(K)),
                          1.0 / std::sqrt(static_cast<double>(d)));
  if (rel_bias) {
    Var bias = gather_cols(rel_bias, part.relative_index());  // (heads, L*L)
    auto hmap = std::make_shared<std::vector<int64_t>>(G * heads);
    for (int64_t i = 0; i < G * heads; ++i) (*hmap)[i] = i % heads;
    logits = add_slices(std::move(logits), std::move(bias), hmap, L * L);
  }
  if (part.has_mask())
    logits = add_const_slices(std::move(logits), part.attention_mask(),
                              part.mask_map(heads), L * L);

  Var attn = softmax_rows(std::move(logits));
  Var ctx = bmm(std::move(attn), std::move(V));  // (G*heads, L, d)
  ctx = reshape(std::move(ctx), {G, heads, L, d});
  ctx = permute(std::move(ctx), {0, 2, 1, 3});
  ctx = gather_rows(std::move(ctx), part.inverse_map(), dim, {B, N, dim});
  return out(std::move(ctx));
}

void WindowAttention::params(const std::string& prefix, ParamList& outp) const {
  q.params(prefix + ".q", outp);
  k.params(prefix + ".k", outp);
  v.params(prefix + ".v", outp);
  out.params(prefix + ".out", outp);
  if (rel_bias) outp.add(prefix + ".rel_bias", rel_bias);
}

Mlp::Mlp(int dim, int ratio, Rng& rng) {
  fc1 = Linear(dim, static_cast<int64_t>(dim) * ratio, rng, 0.02);
  fc2 = Linear(static_cast<int64_t>(dim) * ratio, dim, rng, 0.005);
}

Var Mlp::operator()(Var x) const { return fc2(gelu(fc1(std::move(x)))); }

void Mlp::params(const std::string& prefix, ParamList& out) const {
  fc1.params(prefix + ".fc1", out);
  fc2.params(prefix + ".fc2", out);
}

FusionBlock::FusionBlock(int dim, int heads, int window, int mlp_ratio, bool use_rel_bias,
                         bool with_audio, int audio_dim, int stage_index_, Rng& rng)
    : attn(dim, heads, window, use_rel_bias, rng),
      mlp(dim, mlp_ratio, rng),
      fuse(2 * dim, dim, rng, 0.005),
      has_audio(with_audio),
      stage_index(stage_index_) {
  if (with_audio) {
    audio_fc = Linear(dim, dim, rng, 0.005);
    audio_map = Linear(audio_dim, dim, rng, 0.02);
  }
}

Var FusionBlock::reference_forward(Var x, const WindowPartition& part) const {
  Var z = add(attn(x, x, part), x);
  return add(mlp(z), z);
}

Var FusionBlock::fused_forward(Var x, Var ref, Var audio, const WindowPartition& part,
                               bool disable_mma) const {
  if (!ref) fail("fused block: missing reference features");
  if (!x->value.same_shape(ref->value))
    fail("fused block: reference features " + shape_str(ref->value.shape()) +
         " do not match target " + shape_str(x->value.shape()));
  if (has_audio && !audio)
    fail("fused block (stage " + std::to_string(stage_index) +
         "): audio code required but absent");
  if (!has_audio && audio)
    fail("fused block (stage " + std::to_string(stage_index) +
         "): audio code supplied to a non-audio stage");

  Var msa = attn(x, x, part);
  Var mma = disable_mma ? constant(Tensor(msa->value.shape())) : attn(x, ref, part);
  Var z1 = fuse(concat({msa, mma}, 2));
  if (has_audio) {
    const int64_t B = x->value.dim(0), N = x->value.dim(1), C = x->value.dim(2);
    Var mapped = audio_map(audio);  // (B, C)
    if (mapped->value.dim(0) != B)
      fail("fused block: audio batch " + std::to_string(mapped->value.dim(0)) +
           " does not match token batch " + std::to_string(B));
    auto rows = std::make_shared<std::vector<int64_t>>(B * N);
    for (int64_t i = 0; i < B * N; ++i) (*rows)[i] = i / N;
    z1 = audio_fc(add_slices(std::move(z1), std::move(mapped), rows, C));
  }
  Var z2 = add(std::move(z1), x);
  return add(mlp(z2), z2);
}

void FusionBlock::params(const std::string& prefix, ParamList& out) const {
  attn.params(prefix + ".attn", out);
  mlp.params(prefix + ".mlp", out);
  fuse.params(prefix + ".fuse", out);
  if (has_audio) {
    audio_fc.params(prefix + ".audio_fc", out);
    audio_map.params(prefix + ".audio_map", out);
  }
}

}  // namespace lipfill
