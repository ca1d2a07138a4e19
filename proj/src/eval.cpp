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

#include "lipfill/eval.hpp"

#include <cmath>

#include "json.hpp"

namespace lipfill {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& gaussian_window() {
  static const std::vector<double> w = [] {
    std::vector<double> g(kWin * kWin);
    double sum = 0;
    for (int y = 0; y < kWin; ++y)
      for (int x = 0; x < kWin; ++x) {
        const double dy = y - (kWin - 1) / 2.0, dx = x - (kWin - 1) / 2.0;
        g[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
        sum += g[y * kWin + x];
      }
    for (double& v : g) v /= sum;
    return g;
  }();
  return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    fail("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 3 || a.dim(0) != 3) fail("ssim: expected (3,H,W) images");
  const int64_t H = a.dim(1), W = a.dim(2);
  if (H < kWin || W < kWin) fail("ssim: image smaller than the 11x11 window");
  const auto& g = gaussian_window();

  double total = 0;
  int64_t windows = 0;
  for (int c = 0; c < 3; ++c) {
    const double* pa = a.data() + c * H * W;
    const double* pb = b.data() + c * H * W;
    for (int64_t y = 0; y + kWin <= H; ++y)
      for (int64_t x = 0; x + kWin <= W; ++x) {
        double ma = 0, mb = 0, ea2 = 0, eb2 = 0, eab = 0;
        for (int wy = 0; wy < kWin; ++wy)
          for (int wx = 0; wx < kWin; ++wx) {
            const double wgt = g[wy * kWin + wx];
            const double va = pa[(y + wy) * W + x + wx];
            const double vb = pb[(y + wy) * W + x + wx];
            ma += wgt * va;
            mb += wgt * vb;
            ea2 += wgt * va * va;
            eb2 += wgt * vb * vb;
            eab += wgt * va * vb;
          }
        const double sa2 = ea2 - ma * ma;
        const double sb2 = eb2 - mb * mb;
        const double sab = eab - ma * mb;
        const double num = (2 * ma * mb + kC1) * (2 * sab + kC2);
        const double den = (ma * ma + mb * mb + kC1) * (sa2 + sb2 + kC2);
        total += num / den;
        ++windows;
      }
  }
  return total / static_cast<double>(windows);
}

double psnr(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    fail("psnr: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double mse = 0;
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

EvalReport evaluate(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth,
                    const Waveform& wave, const SyncScorer& sync, const MaskSpec& mask) {
  if (pred.size() != truth.size())
    fail("evaluate: prediction count " + std::to_string(pred.size()) +
         " != ground truth count " + std::to_string(truth.size()));
  if (pred.empty()) fail("evaluate: empty clip");

  EvalReport r;
  r.note =
      "sync_conf is computed with the self-trained sync scorer; values are on its own "
      "scale and not comparable to externally trained synchronization scorers";

  for (size_t t = 0; t < pred.size(); ++t) {
    r.ssim_series.push_back(ssim(pred[t], truth[t]));
    r.psnr_series.push_back(psnr(pred[t], truth[t]));
  }
  double ssum = 0, psum = 0;
  for (double v : r.ssim_series) ssum += v;
  for (double v : r.psnr_series) psum += v;
  r.ssim_mean = ssum / r.ssim_series.size();
  r.psnr_mean = psum / r.psnr_series.size();

  if (pred.size() >= 5) {
    NoGrad guard;
    const Tensor spec = shared_mel().spectrogram(wave);
    std::vector<MelWindow> windows;
    std::vector<Tensor> crops;
    for (size_t t = 0; t + 5 <= pred.size(); ++t) {
      std::vector<Tensor> five(pred.begin() + t, pred.begin() + t + 5);
      crops.push_back(SyncScorer::crop_stack(five, mask));
      windows.push_back(shared_mel().window_clamped(spec, static_cast<int>(t) + 2));
    }
    const int64_t n = static_cast<int64_t>(crops.size());
    Tensor fb({n, 15, crops[0].dim(1), crops[0].dim(2)});
    for (int64_t i = 0; i < n; ++i)
      std::memcpy(fb.data() + i * crops[0].numel(), crops[i].data(),
                  crops[0].numel() * sizeof(double));
    Var scores = sync.score(constant(fb), constant(mel_batch(windows)));
    double sum = 0;
    for (int64_t i = 0; i < n; ++i) {
      r.sync_series.push_back(scores->value[i]);
      sum += scores->value[i];
    }
    r.sync_conf_mean = sum / static_cast<double>(n);
  }
  return r;
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::json j;
  j["note"] = r.note;
  j["ssim"] = r.ssim_mean;
  j["psnr"] = r.psnr_mean;
  j["sync_conf"] = r.sync_conf_mean;
  j["ssim_series"] = r.ssim_series;
  j["psnr_series"] = r.psnr_series;
  j["sync_series"] = r.sync_series;
  return j.dump(2);
}

std::vector<Tensor> infer_clip(const Generator& gen, const std::vector<Tensor>& frames,
                               const Waveform& wave, ReferencePolicy policy) {
  if (frames.empty()) fail("infer: empty clip");
  const int64_t T = static_cast<int64_t>(frames.size());
  const int64_t needed = T * kSamplesPerFrame;
  if (static_cast<int64_t>(wave.samples.size()) < needed)
    fail("infer: audio (" + std::to_string(wave.samples.size()) + " samples) shorter than video (" +
         std::to_string(T) + " frames need " + std::to_string(needed) + ")");

  const Tensor spec = shared_mel().spectrogram(wave);
  std::vector<Tensor> out;
  out.reserve(frames.size());
  for (int64_t t = 0; t < T; ++t) {
    const MelWindow mw = shared_mel().window_clamped(spec, static_cast<int>(t));
    const Tensor& ref = policy == ReferencePolicy::Self ? frames[t] : frames[0];
    out.push_back(gen.infer_frame(frames[t], ref, mw));
  }
  return out;
}

}  // namespace lipfill
