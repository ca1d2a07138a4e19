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
#include <vector>

#include "lipfill/audio.hpp"
#include "lipfill/tensor.hpp"

namespace lipfill {

/// Deterministic synthetic audio-visual clip: procedural face frames whose
/// mouth opening is a known function of the per-frame audio energy.
struct SynthClip {
  int identity_seed = 0;
  int image_size = 0;
  std::vector<Tensor> frames;    // T x (3,S,S), values in [0,1]
  Waveform wave;                 // 640*T samples at 16 kHz
  std::vector<double> aperture;  // T values in [0,1]
};

/// Identity-derived face geometry (mouth box etc.), reproducible from the
/// seed alone so measurement does not need the renderer state.
struct FaceLayout {
  double mouth_cx = 0, mouth_cy = 0;  // pixel center
  double mouth_half_w = 0, mouth_half_h_max = 0;
  int jitter_x = 0, jitter_y = 0;
};

FaceLayout face_layout(int identity_seed, int size);

/// Renders one frame with the given mouth aperture in [0,1].
Tensor render_face(int identity_seed, double aperture, int size);

/// Builds a clip from a per-frame amplitude envelope in [0,1] (size T >= 5):
/// the waveform is an amplitude-modulated band-limited carrier and
/// aperture[t] is the per-frame RMS normalized by the clip maximum.
SynthClip synth_clip(int identity_seed, const std::vector<double>& script, int T, int size);

/// Mouth openness estimate: counts mouth-colored pixels inside the known
/// mouth box, normalized by the full-aperture count. Best effort, in [0,1].
double measure_aperture(const Tensor& frame, int identity_seed);

/// Smooth random amplitude envelope with occasional silent stretches.
std::vector<double> random_script(Rng& rng, int T);

// ---- corpus files ----
// One directory per clip: zero-padded frame_###.ppm images, audio.wav, and
// manifest.json (seed, fps, aperture series).

void write_clip(const std::string& dir, const SynthClip& clip);
SynthClip read_clip(const std::string& dir);

struct CorpusSpec {
  int clips = 200;
  int frames = 25;
  int image_size = 32;
  uint64_t seed = 1;
};

/// Generates clip directories plus a top-level manifest.json; returns the
/// manifest text (whose FNV-1a hash is stable across runs for a given spec).
std::string generate_corpus(const std::string& out_dir, const CorpusSpec& spec);

uint64_t fnv1a(const std::string& text);

}  // namespace lipfill
