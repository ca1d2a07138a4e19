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

#include "lipfill/synth.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "lipfill/image_io.hpp"

namespace lipfill {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kMouthColor[3] = {0.45, 0.05, 0.10};
constexpr int kCarrierPartials = 8;

struct Identity {
  int jitter_x = 0, jitter_y = 0;
  double skin[3];
  double bg_a[3], bg_b[3];
  double bg_fx, bg_fy, bg_px, bg_py;
};

Identity make_identity(int seed, int size) {
  Rng rng(static_cast<uint64_t>(seed) * 0x9E3779B97F4A7C15ULL + 0x5EED);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Identity id;
  const int jamp = std::max(1, 4 * size / 256);
  id.jitter_x = static_cast<int>(rng() % (2 * jamp + 1)) - jamp;
  id.jitter_y = static_cast<int>(rng() % (2 * jamp + 1)) - jamp;
  const double skin_base[3] = {0.82, 0.64, 0.52};
  for (int c = 0; c < 3; ++c) id.skin[c] = skin_base[c] + 0.06 * u(rng);
  const double bga[3] = {0.30, 0.40, 0.55}, bgb[3] = {0.45, 0.55, 0.65};
  for (int c = 0; c < 3; ++c) id.bg_a[c] = bga[c] + 0.10 * u(rng);
  for (int c = 0; c < 3; ++c) id.bg_b[c] = bgb[c] + 0.10 * u(rng);
  id.bg_fx = 2.0 + 2.0 * (u(rng) + 1.0);
  id.bg_fy = 2.0 + 2.0 * (u(rng) + 1.0);
  id.bg_px = kPi * u(rng);
  id.bg_py = kPi * u(rng);
  return id;
}

inline bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  if (rx <= 0 || ry <= 0) return false;
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

int64_t mouth_pixel_count(const FaceLayout& lay, double aperture, int size) {
  if (aperture <= 0) return 0;
  const double hh = aperture * lay.mouth_half_h_max;
  const int y0 = std::max(0, static_cast<int>(std::floor(lay.mouth_cy - hh - 1)));
  const int y1 = std::min(size - 1, static_cast<int>(std::ceil(lay.mouth_cy + hh + 1)));
  const int x0 = std::max(0, static_cast<int>(std::floor(lay.mouth_cx - lay.mouth_half_w - 1)));
  const int x1 = std::min(size - 1, static_cast<int>(std::ceil(lay.mouth_cx + lay.mouth_half_w + 1)));
  int64_t count = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (in_ellipse(x + 0.5, y + 0.5, lay.mouth_cx, lay.mouth_cy, lay.mouth_half_w, hh))
        ++count;
  return count;
}

}  // namespace

FaceLayout face_layout(int identity_seed, int size) {
  Identity id = make_identity(identity_seed, size);
  FaceLayout lay;
  lay.mouth_cx = 0.50 * size + id.jitter_x;
  lay.mouth_cy = 0.74 * size + id.jitter_y;
  lay.mouth_half_w = 0.16 * size;
  lay.mouth_half_h_max = 0.09 * size;
  lay.jitter_x = id.jitter_x;
  lay.jitter_y = id.jitter_y;
  return lay;
}

Tensor render_face(int identity_seed, double aperture, int size) {
  if (size < 16) fail("render_face: image size too small");
  aperture = std::min(1.0, std::max(0.0, aperture));
  const Identity id = make_identity(identity_seed, size);
  const FaceLayout lay = face_layout(identity_seed, size);
  const double S = size;
  Tensor img({3, size, size});

  const double face_cx = 0.50 * S, face_cy = 0.55 * S;
  const double face_rx = 0.34 * S, face_ry = 0.40 * S;
  const double eye_y = 0.38 * S, eye_dx = 0.14 * S, eye_r = 0.05 * S;
  const double nose_cx = 0.50 * S, nose_cy = 0.58 * S;
  const double mouth_hh = aperture * lay.mouth_half_h_max;

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      double rgb[3];
      const double v = static_cast<double>(y) / S;
      const double tex = 0.04 * std::sin(2 * kPi * id.bg_fx * px / S + id.bg_px) *
                         std::sin(2 * kPi * id.bg_fy * py / S + id.bg_py);
      for (int c = 0; c < 3; ++c) rgb[c] = id.bg_a[c] + (id.bg_b[c] - id.bg_a[c]) * v + tex;

      if (in_ellipse(px, py, face_cx, face_cy, face_rx, face_ry)) {
        for (int c = 0; c < 3; ++c) rgb[c] = id.skin[c];
        if (in_ellipse(px, py, face_cx - eye_dx, eye_y, eye_r, eye_r) ||
            in_ellipse(px, py, face_cx + eye_dx, eye_y, eye_r, eye_r)) {
          rgb[0] = 0.12;
          rgb[1] = 0.10;
          rgb[2] = 0.10;
        } else if (in_ellipse(px, py, nose_cx, nose_cy, 0.035 * S, 0.055 * S)) {
          for (int c = 0; c < 3; ++c) rgb[c] = id.skin[c] * 0.88;
        }
        // closed-lip seam, kept distinct from the mouth color
        if (std::abs(py - lay.mouth_cy) <= 0.5 &&
            std::abs(px - lay.mouth_cx) <= 0.9 * lay.mouth_half_w)
          for (int c = 0; c < 3; ++c) rgb[c] = id.skin[c] * 0.75;
        if (in_ellipse(px, py, lay.mouth_cx, lay.mouth_cy, lay.mouth_half_w, mouth_hh)) {
          rgb[0] = kMouthColor[0];
          rgb[1] = kMouthColor[1];
          rgb[2] = kMouthColor[2];
        }
      }
      for (int c = 0; c < 3; ++c)
        img[(static_cast<int64_t>(c) * size + y) * size + x] =
            std::min(1.0, std::max(0.0, rgb[c]));
    }
  return img;
}

SynthClip synth_clip(int identity_seed, const std::vector<double>& script, int T, int size) {
  if (T < 5) fail("synth_clip: at least 5 frames required, got " + std::to_string(T));
  if (static_cast<int>(script.size()) != T)
    fail("synth_clip: script length " + std::to_string(script.size()) + " != T " +
         std::to_string(T));

  // Band-limited carrier, one frame long and frame-periodic by construction
  // (all partial frequencies are multiples of the 25 Hz frame rate).
  Rng rng(static_cast<uint64_t>(identity_seed) * 0x9E3779B97F4A7C15ULL + 0xA0D10);
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * kPi);
  std::vector<double> carrier(kSamplesPerFrame, 0.0);
  const double amp = 0.9 / kCarrierPartials;
  for (int p = 0; p < kCarrierPartials; ++p) {
    const int k = 8 + static_cast<int>(rng() % 73);  // 200..2000 Hz in 25 Hz steps
    const double phase = uphase(rng);
    for (int n = 0; n < kSamplesPerFrame; ++n)
      carrier[n] += amp * std::sin(2.0 * kPi * k * n / kSamplesPerFrame + phase);
  }

  SynthClip clip;
  clip.identity_seed = identity_seed;
  clip.image_size = size;
  clip.wave.sample_rate = kSampleRate;
  clip.wave.samples.resize(static_cast<size_t>(T) * kSamplesPerFrame);
  for (int64_t n = 0; n < static_cast<int64_t>(clip.wave.samples.size()); ++n) {
    const double u = (n + 0.5) / kSamplesPerFrame - 0.5;
    const int i0 = std::min(T - 1, std::max(0, static_cast<int>(std::floor(u))));
    const int i1 = std::min(T - 1, i0 + 1);
    double env;
    if (script[i0] == script[i1]) {
      env = script[i0];
    } else {
      const double frac = std::min(1.0, std::max(0.0, u - i0));
      env = script[i0] * (1.0 - frac) + script[i1] * frac;
    }
    clip.wave.samples[n] = env * carrier[n % kSamplesPerFrame];
  }

  // aperture: per-frame RMS, normalized by the clip maximum
  std::vector<double> rms(T, 0.0);
  double peak = 0.0;
  for (int t = 0; t < T; ++t) {
    double acc = 0;
    for (int n = 0; n < kSamplesPerFrame; ++n) {
      const double s = clip.wave.samples[static_cast<int64_t>(t) * kSamplesPerFrame + n];
      acc += s * s;
    }
    rms[t] = std::sqrt(acc / kSamplesPerFrame);
    peak = std::max(peak, rms[t]);
  }
  clip.aperture.resize(T);
  for (int t = 0; t < T; ++t) clip.aperture[t] = peak > 0 ? rms[t] / peak : 0.0;

  clip.frames.reserve(T);
  for (int t = 0; t < T; ++t)
    clip.frames.push_back(render_face(identity_seed, clip.aperture[t], size));
  return clip;
}

double measure_aperture(const Tensor& frame, int identity_seed) {
  if (frame.rank() != 3 || frame.dim(0) != 3 || frame.dim(1) != frame.dim(2))
    fail("measure_aperture: expected a square (3,S,S) frame");
  const int S = static_cast<int>(frame.dim(1));
  const FaceLayout lay = face_layout(identity_seed, S);
  const int64_t full = mouth_pixel_count(lay, 1.0, S);
  if (full == 0) return 0.0;

  const int y0 = std::max(0, static_cast<int>(std::floor(lay.mouth_cy - lay.mouth_half_h_max - 2)));
  const int y1 = std::min(S - 1, static_cast<int>(std::ceil(lay.mouth_cy + lay.mouth_half_h_max + 2)));
  const int x0 = std::max(0, static_cast<int>(std::floor(lay.mouth_cx - lay.mouth_half_w - 2)));
  const int x1 = std::min(S - 1, static_cast<int>(std::ceil(lay.mouth_cx + lay.mouth_half_w + 2)));
  int64_t count = 0;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double diff = frame[(static_cast<int64_t>(c) * S + y) * S + x] - kMouthColor[c];
        d2 += diff * diff;
      }
      if (d2 < 0.25 * 0.25) ++count;
    }
  return std::min(1.0, static_cast<double>(count) / static_cast<double>(full));
}

std::vector<double> random_script(Rng& rng, int T) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> step(0.0, 0.18);
  for (int attempt = 0; attempt < 16; ++attempt) {
    std::vector<double> s(T);
    double v = u01(rng);
    int silent = 0;
    double mx = 0;
    for (int t = 0; t < T; ++t) {
      if (silent > 0) {
        --silent;
        s[t] = 0.0;
        continue;
      }
      if (u01(rng) < 0.08) {
        silent = 2 + static_cast<int>(rng() % 4);
        s[t] = 0.0;
        continue;
      }
      v = std::min(1.0, std::max(0.0, v + step(rng)));
      s[t] = v;
      mx = std::max(mx, v);
    }
    if (mx >= 0.5) return s;
  }
  // deterministic fallback: a simple ramp
  std::vector<double> s(T);
  for (int t = 0; t < T; ++t) s[t] = static_cast<double>(t % 5) / 4.0;
  return s;
}

void write_clip(const std::string& dir, const SynthClip& clip) {
  std::filesystem::create_directories(dir);
  char name[64];
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "frame_%03zu.ppm", t);
    write_ppm(dir + "/" + name, clip.frames[t]);
  }
  write_wav(dir + "/audio.wav", clip.wave);
  nlohmann::json j;
  j["identity_seed"] = clip.identity_seed;
  j["image_size"] = clip.image_size;
  j["fps"] = kFps;
  j["frames"] = clip.frames.size();
  j["aperture"] = clip.aperture;
  std::ofstream out(dir + "/manifest.json");
  if (!out) fail("write_clip: cannot write manifest in " + dir);
  out << j.dump(2) << "\n";
}

SynthClip read_clip(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) fail("read_clip: missing manifest.json in " + dir);
  nlohmann::json j = nlohmann::json::parse(in);
  SynthClip clip;
  clip.identity_seed = j.at("identity_seed").get<int>();
  clip.image_size = j.at("image_size").get<int>();
  clip.aperture = j.at("aperture").get<std::vector<double>>();
  const size_t T = j.at("frames").get<size_t>();
  char name[64];
  clip.frames.reserve(T);
  for (size_t t = 0; t < T; ++t) {
    std::snprintf(name, sizeof(name), "frame_%03zu.ppm", t);
    clip.frames.push_back(read_ppm(dir + "/" + name));
  }
  clip.wave = read_wav(dir + "/audio.wav");
  return clip;
}

std::string generate_corpus(const std::string& out_dir, const CorpusSpec& spec) {
  std::filesystem::create_directories(out_dir);
  Rng master(spec.seed);
  nlohmann::json top;
  top["clips"] = spec.clips;
  top["frames"] = spec.frames;
  top["image_size"] = spec.image_size;
  top["seed"] = spec.seed;
  std::vector<std::string> dirs;
  std::string combined;
  for (int i = 0; i < spec.clips; ++i) {
    const int identity = static_cast<int>(master() % 1000000000ULL);
    auto script = random_script(master, spec.frames);
    SynthClip clip = synth_clip(identity, script, spec.frames, spec.image_size);
    char name[64];
    std::snprintf(name, sizeof(name), "clip_%04d", i);
    write_clip(out_dir + "/" + name, clip);
    dirs.push_back(name);
    nlohmann::json cj;
    cj["identity_seed"] = clip.identity_seed;
    cj["aperture"] = clip.aperture;
    combined += cj.dump();
  }
  top["clip_dirs"] = dirs;
  const std::string text = top.dump(2) + "\n" + combined;
  std::ofstream out(out_dir + "/manifest.json");
  out << top.dump(2) << "\n";
  return text;
}

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace lipfill
