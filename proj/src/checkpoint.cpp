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

#include "lipfill/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace lipfill {

namespace {

constexpr char kMagic[4] = {'L', 'F', 'C', 'K'};

[[noreturn]] void corrupt(const std::string& why) {
  throw std::runtime_error("checkpoint: corrupt file (" + why + ")");
}

struct Writer {
  std::vector<unsigned char> buf;
  void bytes(const void* p, size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void i64(int64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    i64(static_cast<int64_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<uint32_t>(t.rank()));
    for (size_t i = 0; i < t.rank(); ++i) i64(t.dim(i));
    bytes(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
  }
};

struct Reader {
  const unsigned char* p;
  size_t len, pos = 0;
  void bytes(void* out, size_t n) {
    if (pos + n > len) corrupt("truncated");
    std::memcpy(out, p + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  int64_t i64() {
    int64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const int64_t n = i64();
    if (n < 0 || pos + static_cast<size_t>(n) > len) corrupt("bad string length");
    std::string s(reinterpret_cast<const char*>(p + pos), static_cast<size_t>(n));
    pos += static_cast<size_t>(n);
    return s;
  }
  Tensor tensor() {
    const uint32_t rank = u32();
    if (rank > 8) corrupt("bad tensor rank");
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      shape[i] = i64();
      if (shape[i] < 0 || shape[i] > (1LL << 40)) corrupt("bad tensor dimension");
      numel *= shape[i];
    }
    if (pos + static_cast<size_t>(numel) * sizeof(double) > len) corrupt("truncated tensor");
    Tensor t(shape);
    bytes(t.data(), static_cast<size_t>(numel) * sizeof(double));
    return t;
  }
};

}  // namespace

uint32_t crc32(const unsigned char* data, size_t len) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint_file(const std::string& path, const CheckpointData& data) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(data.kind);
  w.str(data.config_text);
  w.str(data.rng_state);
  w.i64(data.step);
  w.i64(static_cast<int64_t>(data.params.size()));
  for (const auto& [name, t] : data.params) {
    w.str(name);
    w.tensor(t);
  }
  w.i64(static_cast<int64_t>(data.optimizers.size()));
  for (const auto& o : data.optimizers) {
    w.str(o.name);
    w.i64(o.step_count);
    w.i64(static_cast<int64_t>(o.m.size()));
    for (const auto& t : o.m) w.tensor(t);
    for (const auto& t : o.v) w.tensor(t);
  }
  const uint32_t crc = crc32(w.buf.data(), w.buf.size());
  w.u32(crc);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("checkpoint: cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(w.buf.data()), w.buf.size());
    if (!out) fail("checkpoint: short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint_file(const std::string& path,
                                    const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0)
    corrupt("not a checkpoint file");

  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc) corrupt("checksum mismatch");

  Reader r{buf.data(), buf.size() - 4};
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version " + std::to_string(version) +
                             " not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");

  CheckpointData d;
  d.kind = r.str();
  if (!expected_kind.empty() && d.kind != expected_kind)
    throw std::runtime_error("checkpoint: kind '" + d.kind + "' does not match expected '" +
                             expected_kind + "'");
  d.config_text = r.str();
  d.rng_state = r.str();
  d.step = r.i64();
  const int64_t np = r.i64();
  if (np < 0 || np > 1000000) corrupt("bad parameter count");
  d.params.reserve(static_cast<size_t>(np));
  for (int64_t i = 0; i < np; ++i) {
    std::string name = r.str();
    d.params.emplace_back(std::move(name), r.tensor());
  }
  const int64_t no = r.i64();
  if (no < 0 || no > 64) corrupt("bad optimizer count");
  for (int64_t i = 0; i < no; ++i) {
    CheckpointData::OptimizerState o;
    o.name = r.str();
    o.step_count = r.i64();
    const int64_t nt = r.i64();
    if (nt < 0 || nt > 1000000) corrupt("bad moment count");
    o.m.reserve(static_cast<size_t>(nt));
    o.v.reserve(static_cast<size_t>(nt));
    for (int64_t j = 0; j < nt; ++j) o.m.push_back(r.tensor());
    for (int64_t j = 0; j < nt; ++j) o.v.push_back(r.tensor());
    d.optimizers.push_back(std::move(o));
  }
  if (r.pos != r.len) corrupt("trailing bytes");
  return d;
}

}  // namespace lipfill
