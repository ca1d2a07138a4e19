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

#include <vector>

#include "lipfill/model.hpp"
#include "lipfill/syncnet.hpp"

namespace lipfill {

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5), unit
/// dynamic range, default stabilizers, valid-region average over channels.
/// Exactly 1.0 for identical inputs.
double ssim(const Tensor& a, const Tensor& b);

/// 10*log10(1/MSE) with unit peak, capped at the 100.0 dB sentinel used for
/// identical inputs.
double psnr(const Tensor& a, const Tensor& b);

struct EvalReport {
  std::string note;  // sync scale disclaimer
  double ssim_mean = 0;
  double psnr_mean = 0;
  double sync_conf_mean = 0;
  std::vector<double> ssim_series, psnr_series, sync_series;
};

/// Self-reconstruction protocol: per-frame SSIM/PSNR of pred vs truth and
/// the mean sync score over sliding 5-frame windows of pred with the audio.
EvalReport evaluate(const std::vector<Tensor>& pred, const std::vector<Tensor>& truth,
                    const Waveform& wave, const SyncScorer& sync, const MaskSpec& mask);

std::string eval_report_json(const EvalReport& r);

enum class ReferencePolicy { Self, FirstFrame };

/// Frame-independent inference over a clip; audio must cover every frame.
/// Kept pixels of each output match the input frame exactly.
std::vector<Tensor> infer_clip(const Generator& gen, const std::vector<Tensor>& frames,
                               const Waveform& wave, ReferencePolicy policy);

}  // namespace lipfill
