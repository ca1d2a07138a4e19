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

#include "lipfill/image_io.hpp"

#include <cmath>
#include <fstream>

namespace lipfill {

void write_ppm(const std::string& path, const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3)
    fail("write_ppm: expected (3,H,W) image, got " + shape_str(img.shape()));
  const int64_t H = img.dim(1), W = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("write_ppm: cannot write " + path);
  out << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(W) * 3);
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = img[(c * H + y) * W + x];
        v = std::min(1.0, std::max(0.0, v));
        row[x * 3 + c] = static_cast<unsigned char>(std::lrint(v * 255.0));
      }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") fail("read_ppm: " + path + " is not a binary PPM");
  auto next_int = [&]() {
    int v;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        continue;
      }
      if (!(in >> v)) fail("read_ppm: malformed header in " + path);
      return v;
    }
  };
  const int W = next_int(), H = next_int(), maxval = next_int();
  if (maxval != 255) fail("read_ppm: only 8-bit PPM supported, got maxval " +
                          std::to_string(maxval));
  in.get();  // single whitespace after header
  std::vector<unsigned char> data(static_cast<size_t>(W) * H * 3);
  in.read(reinterpret_cast<char*>(data.data()), data.size());
  if (!in) fail("read_ppm: truncated pixel data in " + path);
  Tensor img({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c)
        img[(static_cast<int64_t>(c) * H + y) * W + x] =
            data[(static_cast<size_t>(y) * W + x) * 3 + c] / 255.0;
  return img;
}

}  // namespace lipfill
