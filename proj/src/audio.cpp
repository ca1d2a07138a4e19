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

#include "lipfill/audio.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <fstream>

namespace lipfill {

namespace {

constexpr int kFreqBins = kFftSize / 2 + 1;  // 641
constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

uint32_t read_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (uint32_t(p[3]) << 24);
}
uint16_t read_u16(const unsigned char* p) { return p[0] | (p[1] << 8); }

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("wav: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    fail("wav: " + path + " is not a RIFF/WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  size_t data_off = 0, data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const uint32_t chunk_len = read_u32(buf.data() + pos + 4);
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
      if (pos + 8 + 16 > buf.size()) fail("wav: truncated fmt chunk in " + path);
      format = read_u16(buf.data() + pos + 8);
      channels = read_u16(buf.data() + pos + 10);
      rate = read_u32(buf.data() + pos + 12);
      bits = read_u16(buf.data() + pos + 22);
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      data_off = pos + 8;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  if (data_off == 0) fail("wav: no data chunk in " + path);
  if (data_off + data_len > buf.size()) fail("wav: truncated data chunk in " + path);
  if (channels != 1) fail("wav: " + path + " has " + std::to_string(channels) +
                          " channels; only mono is accepted");
  if (rate != kSampleRate)
    fail("wav: " + path + " has sample rate " + std::to_string(rate) +
         "; only 16000 Hz is accepted (no resampling)");

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  const unsigned char* d = buf.data() + data_off;
  if (format == 1 && bits == 16) {
    const size_t n = data_len / 2;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      const int16_t v = static_cast<int16_t>(read_u16(d + 2 * i));
      w.samples[i] = static_cast<double>(v) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    const size_t n = data_len / 4;
    w.samples.resize(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t u = read_u32(d + 4 * i);
      float f;
      std::memcpy(&f, &u, 4);
      w.samples[i] = f;
    }
  } else {
    fail("wav: " + path + " uses unsupported format (need 16-bit PCM or 32-bit float)");
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("wav: cannot write " + path);
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t data_len = n * 2;
  auto u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(kSampleRate);
  u32(kSampleRate * 2);
  u16(2);
  u16(16);
  out.write("data", 4);
  u32(data_len);
  for (uint32_t i = 0; i < n; ++i) {
    double v = std::min(1.0, std::max(-1.0, w.samples[i]));
    const int16_t s = static_cast<int16_t>(std::lrint(v * 32767.0));
    u16(static_cast<uint16_t>(s));
  }
}

MelExtractor::MelExtractor() {
  hann_ = Tensor({kFftSize});
  for (int i = 0; i < kFftSize; ++i)
    hann_[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / kFftSize));

  cos_table_ = Tensor({kFftSize, kFreqBins});
  sin_table_ = Tensor({kFftSize, kFreqBins});
  for (int i = 0; i < kFftSize; ++i)
    for (int k = 0; k < kFreqBins; ++k) {
      const double a = 2.0 * kPi * i * k / kFftSize;
      cos_table_[i * kFreqBins + k] = std::cos(a);
      sin_table_[i * kFreqBins + k] = std::sin(a);
    }

  filterbank_ = Tensor({kMelBins, kFreqBins});
  const double mel_hi = hz_to_mel(kSampleRate / 2.0);
  std::vector<double> edges(kMelBins + 2);
  for (int i = 0; i < kMelBins + 2; ++i)
    edges[i] = mel_to_hz(mel_hi * i / (kMelBins + 1));
  for (int m = 0; m < kMelBins; ++m) {
    const double fl = edges[m], fc = edges[m + 1], fr = edges[m + 2];
    for (int k = 0; k < kFreqBins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / kFftSize;
      double wgt = 0.0;
      if (f > fl && f < fr)
        wgt = f <= fc ? (f - fl) / (fc - fl) : (fr - f) / (fr - fc);
      filterbank_[m * kFreqBins + k] = wgt;
    }
  }
}

int64_t MelExtractor::column_count(int64_t n_samples) {
  return n_samples < kFftSize ? 0 : (n_samples - kFftSize) / kHop + 1;
}

int MelExtractor::min_frame() { return 2; }

int MelExtractor::max_frame(int64_t n_samples) {
  // Last frame t whose columns [4t-6, 4t+10) are all available.
  const int64_t cols = column_count(n_samples);
  return static_cast<int>((cols - kMelWidth + 6) / kHopsPerFrame);
}

Tensor MelExtractor::spectrogram(const Waveform& w) const {
  if (w.sample_rate != kSampleRate)
    fail("mel: waveform sample rate " + std::to_string(w.sample_rate) + " != 16000");
  const int64_t cols = column_count(static_cast<int64_t>(w.samples.size()));
  if (cols < 1)
    fail("mel: waveform too short (" + std::to_string(w.samples.size()) +
         " samples < one 1280-sample analysis window)");

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> ct(cos_table_.data(), kFftSize, kFreqBins);
  Eigen::Map<const RowMat> st(sin_table_.data(), kFftSize, kFreqBins);
  Eigen::Map<const RowMat> fb(filterbank_.data(), kMelBins, kFreqBins);

  // One column at a time so a column's values depend only on its own samples
  // (hop-shifted waveforms then reproduce columns bit-for-bit).
  Tensor out({kMelBins, cols});
  Eigen::RowVectorXd frame(kFftSize), re(kFreqBins), im(kFreqBins), power(kFreqBins),
      mel(kMelBins);
  for (int64_t g = 0; g < cols; ++g) {
    for (int i = 0; i < kFftSize; ++i) frame(i) = w.samples[g * kHop + i] * hann_[i];
    re.noalias() = frame * ct;
    im.noalias() = frame * st;
    power = re.array().square() + im.array().square();
    mel.noalias() = power * fb.transpose();
    for (int m = 0; m < kMelBins; ++m)
      out[m * cols + g] = std::log(std::max(mel(m), kMelFloor));
  }
  return out;
}

MelWindow MelExtractor::window(const Tensor& spec, int t) const {
  const int64_t cols = spec.dim(1);
  const int64_t n_samples = (cols - 1) * kHop + kFftSize;
  const int lo = min_frame(), hi = max_frame(n_samples);
  if (t < lo || t > hi)
    fail("extract_mel: frame " + std::to_string(t) + " outside valid range [" +
         std::to_string(lo) + ", " + std::to_string(hi) + "]");
  const int64_t start = static_cast<int64_t>(kHopsPerFrame) * t + 2 - kMelWidth / 2;
  MelWindow mw;
  mw.center_frame = t;
  mw.bins = Tensor({kMelBins, kMelWidth});
  for (int m = 0; m < kMelBins; ++m)
    for (int j = 0; j < kMelWidth; ++j) mw.bins[m * kMelWidth + j] = spec[m * cols + start + j];
  return mw;
}

MelWindow MelExtractor::window_clamped(const Tensor& spec, int t) const {
  const int64_t cols = spec.dim(1);
  if (cols < kMelWidth) fail("extract_mel: spectrogram has fewer than 16 columns");
  int64_t start = static_cast<int64_t>(kHopsPerFrame) * t + 2 - kMelWidth / 2;
  start = std::max<int64_t>(0, std::min(start, cols - kMelWidth));
  MelWindow mw;
  mw.center_frame = t;
  mw.bins = Tensor({kMelBins, kMelWidth});
  for (int m = 0; m < kMelBins; ++m)
    for (int j = 0; j < kMelWidth; ++j) mw.bins[m * kMelWidth + j] = spec[m * cols + start + j];
  return mw;
}

MelWindow MelExtractor::extract(const Waveform& w, int t) const {
  return window(spectrogram(w), t);
}

AudioEncoder::AudioEncoder(int base_channels, int out_dim_, Rng& rng) : out_dim(out_dim_) {
  const int b = base_channels;
  c1 = Conv2d(1, b, 3, 2, 1, rng);
  c2 = Conv2d(b, 2 * b, 3, 2, 1, rng);
  c3 = Conv2d(2 * b, 4 * b, 3, 2, 1, rng);
  c4 = Conv2d(4 * b, 8 * b, 3, 2, 1, rng);
  head = Linear(8 * b, out_dim, rng, he_std(8 * b));
}

Var AudioEncoder::operator()(Var mel) const {
  const Tensor& v = mel->value;
  if (v.rank() != 4 || v.dim(1) != 1 || v.dim(2) != kMelBins || v.dim(3) != kMelWidth)
    fail("encode_audio: expected (B,1,80,16) mel window, got " + shape_str(v.shape()));
  Var h = gelu(c1(normalize_mel(std::move(mel))));
  h = gelu(c2(std::move(h)));
  h = gelu(c3(std::move(h)));
  h = gelu(c4(std::move(h)));
  return head(mean_spatial(std::move(h)));
}

void AudioEncoder::params(const std::string& prefix, ParamList& out) const {
  c1.params(prefix + ".c1", out);
  c2.params(prefix + ".c2", out);
  c3.params(prefix + ".c3", out);
  c4.params(prefix + ".c4", out);
  head.params(prefix + ".head", out);
}

Tensor mel_batch(const std::vector<MelWindow>& windows) {
  if (windows.empty()) fail("mel_batch: empty window list");
  const int64_t B = static_cast<int64_t>(windows.size());
  Tensor out({B, 1, kMelBins, kMelWidth});
  for (int64_t i = 0; i < B; ++i) {
    const Tensor& b = windows[i].bins;
    if (b.rank() != 2 || b.dim(0) != kMelBins || b.dim(1) != kMelWidth)
      fail("mel_batch: window " + std::to_string(i) + " has shape " + shape_str(b.shape()) +
           ", expected (80,16)");
    std::memcpy(out.data() + i * kMelBins * kMelWidth, b.data(),
                kMelBins * kMelWidth * sizeof(double));
  }
  return out;
}

const MelExtractor& shared_mel() {
  static const MelExtractor instance;
  return instance;
}

}  // namespace lipfill
