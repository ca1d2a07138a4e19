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

#include <string>

#include "lipfill/nn.hpp"
#include "lipfill/tensor.hpp"

namespace lipfill {

constexpr int kSampleRate = 16000;
constexpr int kFps = 25;
constexpr int kSamplesPerFrame = kSampleRate / kFps;  // 640
constexpr int kFftSize = 1280;
constexpr int kHop = 160;
constexpr int kMelBins = 80;
constexpr int kMelWidth = 16;              // columns per window
constexpr int kHopsPerFrame = kSamplesPerFrame / kHop;  // 4
constexpr double kMelFloor = 1e-5;         // energy clamp before log
constexpr double kMelFloorLog = -11.512925464970229;  // log(kMelFloor)

/// Shifts/scales log-mel values so the silence floor maps to 0 and speech
/// energies land near unit scale; applied inside every mel-consuming tower.
inline Var normalize_mel(Var mel) {
  return mul_scalar(add_scalar(std::move(mel), -kMelFloorLog), 0.25);
}

struct Waveform {
  std::vector<double> samples;  // mono, [-1, 1]
  int sample_rate = kSampleRate;
};

/// Reads a mono 16 kHz WAV file (16-bit PCM or 32-bit float). Other sample
/// rates or channel counts are rejected, not converted.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

struct MelWindow {
  Tensor bins;  // (80, 16) log-mel energies
  int center_frame = 0;
};

/// Log-mel spectrogram front end: Hann-windowed 1280-point DFT at hop 160,
/// 80 HTK triangular filters spanning 0-8 kHz, natural log with a 1e-5
/// energy floor. Column g covers samples [g*160, g*160+1280).
class MelExtractor {
 public:
  MelExtractor();

  /// Number of full analysis columns for a waveform of n samples.
  static int64_t column_count(int64_t n_samples);
  /// Frame range for which a full 16-column window exists.
  static int min_frame();
  static int max_frame(int64_t n_samples);

  /// All columns: (80, column_count).
  Tensor spectrogram(const Waveform& w) const;

  /// 16-column window centered on frame t (columns [4t-6, 4t+10)).
  /// Throws if t is outside [min_frame, max_frame].
  MelWindow window(const Tensor& spec, int t) const;
  /// Same, but slides the window inward at clip edges instead of throwing.
  MelWindow window_clamped(const Tensor& spec, int t) const;

  MelWindow extract(const Waveform& w, int t) const;

  const Tensor& filterbank() const { return filterbank_; }  // (80, 641)

 private:
  Tensor hann_;        // (1280)
  Tensor cos_table_;   // (1280, 641)
  Tensor sin_table_;   // (1280, 641)
  Tensor filterbank_;  // (80, 641)
};

/// Audio window encoder: four stride-2 convolutions over the 80x16 grid,
/// global average pooling, and a linear head to the code dimension.
struct AudioEncoder {
  Conv2d c1, c2, c3, c4;
  Linear head;
  int out_dim = 0;

  AudioEncoder() = default;
  AudioEncoder(int base_channels, int out_dim, Rng& rng);

  /// mel (B,1,80,16) -> code (B, out_dim)
  Var operator()(Var mel) const;
  void params(const std::string& prefix, ParamList& out) const;
};

/// Stacks MelWindow bins into the (B,1,80,16) encoder input layout.
Tensor mel_batch(const std::vector<MelWindow>& windows);

/// Process-wide extractor instance (the DFT/filterbank tables are large).
const MelExtractor& shared_mel();

}  // namespace lipfill
