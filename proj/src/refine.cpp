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

#include "lipfill/refine.hpp"

namespace lipfill {

Var modulate_weights(Var w, Var s, double eps) {
  const Tensor& wv = w->value;
  if (wv.rank() != 4) fail("modulate_weights: kernel must be (out,in,k,k)");
  const int64_t O = wv.dim(0), I = wv.dim(1), K2 = wv.dim(2) * wv.dim(3);
  if (s->value.numel() != I)
    fail("modulate_weights: style length " + std::to_string(s->value.numel()) +
         " != input channels " + std::to_string(I));
  if (eps <= 0) fail("modulate_weights: eps must be positive");
  Shape orig = wv.shape();
  Var scaled = mul_mid(reshape(std::move(w), {O, I, K2}), reshape(std::move(s), {I}));
  Var flat = reshape(std::move(scaled), {O, I * K2});
  Var denom = sqrt_op(add_scalar(sumsq_rows(flat), eps));
  return reshape(div_rows(std::move(flat), std::move(denom)), std::move(orig));
}

ModulatedConv2d::ModulatedConv2d(int in, int out, int k, int audio_dim, Rng& rng) {
  weight = make_param({out, in, k, k}, rng, he_std(static_cast<int64_t>(in) * k * k));
  bias = make_param_const({out}, 0.0);
  style = Linear(audio_dim, in, rng, 0.02, true, 1.0);
  stride = 1;
  pad = (k - 1) / 2;
}

Var ModulatedConv2d::operator()(Var x, Var audio, double eps) const {
  if (x->value.dim(0) != 1 || audio->value.dim(0) != 1)
    fail("modulated conv: single-sample forward expected");
  Var s = reshape(style(std::move(audio)), {weight->value.dim(1)});
  Var wmod = modulate_weights(weight, std::move(s), eps);
  return conv2d(std::move(x), std::move(wmod), bias, stride, pad);
}

void ModulatedConv2d::params(const std::string& prefix, ParamList& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
  style.params(prefix + ".style", out);
}

RefinerUNet::RefinerUNet(const RunConfig& cfg, Rng& rng)
    : levels_(cfg.refine_levels), eps_(cfg.eps_modulation) {
  const int base = cfg.refine_base_channels;
  const int ad = cfg.audio_dim;
  auto width = [&](int lvl) { return base << lvl; };

  int prev = 3;
  for (int lvl = 0; lvl < levels_ - 1; ++lvl) {
    enc_.emplace_back(prev, width(lvl), 3, ad, rng);
    enc_.emplace_back(width(lvl), width(lvl), 3, ad, rng);
    prev = width(lvl);
  }
  mid_.emplace_back(prev, width(levels_ - 1), 3, ad, rng);
  mid_.emplace_back(width(levels_ - 1), width(levels_ - 1), 3, ad, rng);
  for (int lvl = levels_ - 2; lvl >= 0; --lvl) {
    dec_.emplace_back(width(lvl + 1) + width(lvl), width(lvl), 3, ad, rng);
    dec_.emplace_back(width(lvl), width(lvl), 3, ad, rng);
  }
  out_ = ModulatedConv2d(base, 3, 3, ad, rng);
}

Var RefinerUNet::forward_one(Var x, Var audio) const {
  std::vector<Var> skips;
  Var h = std::move(x);
  for (int lvl = 0; lvl < levels_ - 1; ++lvl) {
    h = gelu(enc_[2 * lvl](std::move(h), audio, eps_));
    h = gelu(enc_[2 * lvl + 1](std::move(h), audio, eps_));
    skips.push_back(h);
    h = avg_pool2x2(std::move(h));
  }
  h = gelu(mid_[0](std::move(h), audio, eps_));
  h = gelu(mid_[1](std::move(h), audio, eps_));
  for (int lvl = levels_ - 2; lvl >= 0; --lvl) {
    const size_t di = 2 * (levels_ - 2 - lvl);
    h = upsample_nearest2x(std::move(h));
    h = concat({h, skips[lvl]}, 1);
    h = gelu(dec_[di](std::move(h), audio, eps_));
    h = gelu(dec_[di + 1](std::move(h), audio, eps_));
  }
  return sigmoid(out_(std::move(h), audio, eps_));
}

Var RefinerUNet::operator()(Var x, Var audio) const {
  const Tensor& v = x->value;
  if (v.rank() != 4 || v.dim(1) != 3)
    fail("refine: expected (B,3,S,S) composited frames, got " + shape_str(v.shape()));
  const int64_t B = v.dim(0);
  if (audio->value.rank() != 2 || audio->value.dim(0) != B)
    fail("refine: audio code batch " + shape_str(audio->value.shape()) +
         " does not match frames " + shape_str(v.shape()));
  const int64_t div = 1LL << (levels_ - 1);
  if (v.dim(2) % div != 0 || v.dim(3) % div != 0)
    fail("refine: image side must be divisible by " + std::to_string(div));
  if (B == 1) return forward_one(std::move(x), std::move(audio));
  std::vector<Var> outs;
  outs.reserve(B);
  for (int64_t b = 0; b < B; ++b)
    outs.push_back(forward_one(slice(x, 0, b, 1), slice(audio, 0, b, 1)));
  return concat(outs, 0);
}

void RefinerUNet::params(const std::string& prefix, ParamList& out) const {
  for (size_t i = 0; i < enc_.size(); ++i)
    enc_[i].params(prefix + ".enc" + std::to_string(i + 1), out);
  for (size_t i = 0; i < mid_.size(); ++i)
    mid_[i].params(prefix + ".mid" + std::to_string(i + 1), out);
  for (size_t i = 0; i < dec_.size(); ++i)
    dec_[i].params(prefix + ".dec" + std::to_string(i + 1), out);
  out_.params(prefix + ".out", out);
}

}  // namespace lipfill
