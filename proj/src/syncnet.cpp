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

#include "lipfill/syncnet.hpp"

#include <algorithm>
#include <cstring>

#include "lipfill/checkpoint.hpp"
#include "lipfill/train.hpp"

namespace lipfill {

SyncScorer::SyncScorer(const RunConfig& cfg, Rng& rng) {
  rh_ = cfg.image_size / 2;
  rw_ = cfg.image_size - 2 * cfg.mask_side_margin;
  const int b = cfg.sync_base_channels;
  const int e = cfg.sync_embed_dim;
  v1 = Conv2d(15, b, 3, 2, 1, rng);
  v2 = Conv2d(b, 2 * b, 3, 2, 1, rng);
  v3 = Conv2d(2 * b, 4 * b, 3, 2, 1, rng);
  vhead = Linear(4 * b, e, rng, he_std(4 * b));
  a1 = Conv2d(1, b, 3, 2, 1, rng);
  a2 = Conv2d(b, 2 * b, 3, 2, 1, rng);
  a3 = Conv2d(2 * b, 4 * b, 3, 2, 1, rng);
  ahead = Linear(4 * b, e, rng, he_std(4 * b));
  link_scale = make_param_const({1}, 5.0);
  link_bias = make_param_const({1}, 0.0);
}

Var SyncScorer::logit(Var frames, Var mel) const {
  const Tensor& fv = frames->value;
  if (fv.rank() != 4 || fv.dim(1) != 15 || fv.dim(2) != rh_ || fv.dim(3) != rw_)
    fail("sync_score: expected (B,15," + std::to_string(rh_) + "," + std::to_string(rw_) +
         ") stacked mouth crops, got " + shape_str(fv.shape()));
  const Tensor& mv = mel->value;
  if (mv.rank() != 4 || mv.dim(0) != fv.dim(0) || mv.dim(1) != 1 || mv.dim(2) != kMelBins ||
      mv.dim(3) != kMelWidth)
    fail("sync_score: expected (B,1,80,16) mel window, got " + shape_str(mv.shape()));

  Var hv = gelu(v1(std::move(frames)));
  hv = gelu(v2(std::move(hv)));
  hv = gelu(v3(std::move(hv)));
  Var ev = vhead(mean_spatial(std::move(hv)));  // (B, E)

  Var ha = gelu(a1(normalize_mel(std::move(mel))));
  ha = gelu(a2(std::move(ha)));
  ha = gelu(a3(std::move(ha)));
  Var ea = ahead(mean_spatial(std::move(ha)));  // (B, E)

  Var num = sum_rows(mul(ev, ea));                              // (B)
  Var nv = sqrt_op(add_scalar(sumsq_rows(std::move(ev)), 1e-24));
  Var na = sqrt_op(add_scalar(sumsq_rows(std::move(ea)), 1e-24));
  Var cos = div_elem(std::move(num), mul(std::move(nv), std::move(na)));
  return add_scalar_var(mul_scalar_var(std::move(cos), link_scale), link_bias);
}

Tensor SyncScorer::crop_stack(const std::vector<Tensor>& frames, const MaskSpec& m) {
  if (frames.size() != 5)
    fail("sync pair: exactly 5 consecutive frames required, got " +
         std::to_string(frames.size()));
  const int H = m.height(), W = m.width();
  const int rh = m.bottom - m.top, rw = m.right - m.left;
  Tensor out({15, rh, rw});
  for (int f = 0; f < 5; ++f) {
    const Tensor& fr = frames[f];
    if (fr.rank() != 3 || fr.dim(0) != 3 || fr.dim(1) != H || fr.dim(2) != W)
      fail("sync pair: frame " + std::to_string(f) + " has shape " + shape_str(fr.shape()));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < rh; ++y)
        for (int x = 0; x < rw; ++x)
          out[(static_cast<int64_t>(f * 3 + c) * rh + y) * rw + x] =
              fr[(static_cast<int64_t>(c) * H + m.top + y) * W + m.left + x];
  }
  return out;
}

Var SyncScorer::crop_stack_var(Var frames, const MaskSpec& m) {
  const Tensor& v = frames->value;
  if (v.rank() != 4 || v.dim(0) != 5 || v.dim(1) != 3)
    fail("sync pair: expected (5,3,H,W) predicted frames, got " + shape_str(v.shape()));
  const int rh = m.bottom - m.top, rw = m.right - m.left;
  Var crop = slice(std::move(frames), 2, m.top, rh);
  crop = slice(std::move(crop), 3, m.left, rw);
  return reshape(std::move(crop), {1, 15, rh, rw});
}

void SyncScorer::params(const std::string& prefix, ParamList& out) const {
  v1.params(prefix + ".v1", out);
  v2.params(prefix + ".v2", out);
  v3.params(prefix + ".v3", out);
  vhead.params(prefix + ".vhead", out);
  a1.params(prefix + ".a1", out);
  a2.params(prefix + ".a2", out);
  a3.params(prefix + ".a3", out);
  ahead.params(prefix + ".ahead", out);
  out.add(prefix + ".link_scale", link_scale);
  out.add(prefix + ".link_bias", link_bias);
}

namespace {

struct SyncDraw {
  int clip = 0;
  int t = 0;        // video window start
  int mel_center = 0;
};

// Window starts valid for both video frames and a full mel window.
int max_window_start(const Dataset& data) {
  const int T = data.frames_per_clip();
  const auto& clip0 = data.clips().front();
  const int maxf = MelExtractor::max_frame(static_cast<int64_t>(clip0.data.wave.samples.size()));
  return std::min(T - 5, maxf - 2);
}

Tensor stack_crops(const Dataset& data, const std::vector<SyncDraw>& draws,
                   const MaskSpec& mask) {
  const int rh = mask.bottom - mask.top, rw = mask.right - mask.left;
  Tensor out({static_cast<int64_t>(draws.size()), 15, rh, rw});
  for (size_t i = 0; i < draws.size(); ++i) {
    const auto& clip = data.clips()[draws[i].clip];
    std::vector<Tensor> frames(clip.data.frames.begin() + draws[i].t,
                               clip.data.frames.begin() + draws[i].t + 5);
    Tensor crop = SyncScorer::crop_stack(frames, mask);
    std::memcpy(out.data() + static_cast<int64_t>(i) * crop.numel(), crop.data(),
                crop.numel() * sizeof(double));
  }
  return out;
}

Tensor stack_mels(const Dataset& data, const std::vector<SyncDraw>& draws) {
  const MelExtractor& mel = shared_mel();
  std::vector<MelWindow> windows;
  windows.reserve(draws.size());
  for (const auto& d : draws)
    windows.push_back(mel.window_clamped(data.clips()[d.clip].mel_full, d.mel_center));
  return mel_batch(windows);
}

}  // namespace

std::vector<double> train_sync_scorer(SyncScorer& scorer, const Dataset& data,
                                      const MaskSpec& mask, const SyncTrainOptions& opts) {
  if (data.clips().empty()) fail("sync training: empty corpus");
  const int T = data.frames_per_clip();
  const int hi = max_window_start(data);
  if (hi < opts.min_offset)
    fail("sync training: clips too short to draw offset negatives (need window starts up to " +
         std::to_string(opts.min_offset) + ", have " + std::to_string(hi) + ")");
  if (T < 5 + opts.min_offset)
    fail("sync training: corpus cannot provide negatives at offset " +
         std::to_string(opts.min_offset));

  ParamList pl;
  scorer.params("sync", pl);
  Adam opt(pl.vars(), opts.lr, 0.5, 0.999);
  Rng rng(opts.seed);

  std::vector<double> losses;
  losses.reserve(opts.steps);
  const int half = std::max(1, (opts.overfit_pairs > 0 ? opts.overfit_pairs : opts.batch) / 2);
  auto draw_half = [&](std::vector<SyncDraw>& pos_draws, std::vector<SyncDraw>& neg_draws) {
    for (int i = 0; i < half; ++i) {
      SyncDraw d;
      d.clip = static_cast<int>(rng() % data.clips().size());
      d.t = static_cast<int>(rng() % (hi + 1));
      d.mel_center = d.t + 2;
      pos_draws.push_back(d);
      // negative: same frames, audio window at least min_offset frames away
      SyncDraw n = d;
      int t2 = d.t;
      while (std::abs(t2 - d.t) < opts.min_offset)
        t2 = static_cast<int>(rng() % (hi + 1));
      n.mel_center = t2 + 2;
      neg_draws.push_back(n);
    }
  };
  std::vector<SyncDraw> fixed_pos, fixed_neg;
  if (opts.overfit_pairs > 0) draw_half(fixed_pos, fixed_neg);
  for (int step = 0; step < opts.steps; ++step) {
    std::vector<SyncDraw> pos_draws = fixed_pos, neg_draws = fixed_neg;
    if (opts.overfit_pairs == 0) draw_half(pos_draws, neg_draws);
    std::vector<SyncDraw> all = pos_draws;
    all.insert(all.end(), neg_draws.begin(), neg_draws.end());

    Var frames = constant(stack_crops(data, all, mask));
    Var mels = constant(stack_mels(data, all));
    Var logits = scorer.logit(std::move(frames), std::move(mels));
    Var lp = slice(logits, 0, 0, half);
    Var ln = slice(logits, 0, half, half);
    Var loss = add(mean_all(softplus(neg(std::move(lp)))), mean_all(softplus(std::move(ln))));

    opt.zero_grad();
    backward(loss);
    opt.step();
    losses.push_back(loss->value[0]);
  }
  return losses;
}

double sync_scorer_auc(const SyncScorer& scorer, const Dataset& data, const MaskSpec& mask,
                       int min_offset, int pairs, uint64_t seed) {
  NoGrad guard;
  const int hi = max_window_start(data);
  Rng rng(seed);
  std::vector<SyncDraw> pos_draws, neg_draws;
  for (int i = 0; i < pairs; ++i) {
    SyncDraw d;
    d.clip = static_cast<int>(rng() % data.clips().size());
    d.t = static_cast<int>(rng() % (hi + 1));
    d.mel_center = d.t + 2;
    pos_draws.push_back(d);
    SyncDraw n = d;
    int t2 = d.t;
    while (std::abs(t2 - d.t) < min_offset) t2 = static_cast<int>(rng() % (hi + 1));
    n.mel_center = t2 + 2;
    neg_draws.push_back(n);
  }
  auto scores = [&](const std::vector<SyncDraw>& draws) {
    Var s = scorer.score(constant(stack_crops(data, draws, mask)),
                         constant(stack_mels(data, draws)));
    std::vector<double> out(s->value.numel());
    for (int64_t i = 0; i < s->value.numel(); ++i) out[i] = s->value[i];
    return out;
  };
  auto sp = scores(pos_draws);
  auto sn = scores(neg_draws);
  double wins = 0;
  for (double p : sp)
    for (double n : sn) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(sp.size()) * sn.size());
}

void save_sync_scorer(const std::string& path, const SyncScorer& scorer,
                      const RunConfig& cfg) {
  CheckpointData d;
  d.kind = "sync-scorer";
  d.config_text = cfg.to_string();
  ParamList pl;
  scorer.params("sync", pl);
  for (const auto& [n, v] : pl.items()) d.params.emplace_back(n, v->value.clone());
  save_checkpoint_file(path, d);
}

SyncScorer load_sync_scorer(const std::string& path, RunConfig* cfg_out) {
  CheckpointData d = load_checkpoint_file(path, "sync-scorer");
  RunConfig cfg = RunConfig::from_string(d.config_text);
  Rng rng(1);
  SyncScorer scorer(cfg, rng);
  ParamList pl;
  scorer.params("sync", pl);
  if (pl.size() != d.params.size())
    throw std::runtime_error("checkpoint: sync scorer parameter count mismatch");
  for (const auto& [name, t] : d.params) {
    Var v = pl.find(name);
    if (!v) throw std::runtime_error("checkpoint: unknown sync parameter " + name);
    if (!t.same_shape(v->value))
      throw std::runtime_error("checkpoint: sync parameter shape mismatch for " + name);
    std::memcpy(v->value.data(), t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
  }
  if (cfg_out) *cfg_out = cfg;
  return scorer;
}

}  // namespace lipfill
