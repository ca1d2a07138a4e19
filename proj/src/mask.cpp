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

#include "lipfill/mask.hpp"

namespace lipfill {

namespace {

// Validates that img is (..., 3, H, W) matching the mask and returns the
// number of leading image planes (N*3).
int64_t check_image(const Tensor& img, const MaskSpec& m, const char* op) {
  const size_t r = img.rank();
  if (r != 3 && r != 4)
    fail(std::string(op) + ": image must be (3,H,W) or (N,3,H,W), got " +
         shape_str(img.shape()));
  const int64_t H = img.dim(r - 2), W = img.dim(r - 1);
  if (H != m.height() || W != m.width())
    fail(std::string(op) + ": image " + shape_str(img.shape()) + " does not match mask (" +
         std::to_string(m.height()) + "," + std::to_string(m.width()) + ")");
  return img.numel() / (H * W);
}

}  // namespace

double MaskSpec::masked_fraction() const {
  return static_cast<double>((bottom - top) * (right - left)) /
         static_cast<double>(height() * width());
}

MaskSpec MaskSpec::downsample(int factor) const {
  if (factor < 1 || height() % factor != 0 || width() % factor != 0)
    fail("mask downsample: factor " + std::to_string(factor) + " does not divide (" +
         std::to_string(height()) + "," + std::to_string(width()) + ")");
  const int H = height() / factor, W = width() / factor;
  MaskSpec out;
  out.mask = Tensor({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double keep = 1.0;
      for (int dy = 0; dy < factor && keep > 0; ++dy)
        for (int dx = 0; dx < factor; ++dx)
          if (mask[(y * factor + dy) * width() + x * factor + dx] == 0.0) {
            keep = 0.0;
            break;
          }
      out.mask[y * W + x] = keep;
    }
  // Token rectangle: any partially covered token counts as masked.
  out.top = top / factor;
  out.bottom = (bottom + factor - 1) / factor;
  out.left = left / factor;
  out.right = (right + factor - 1) / factor;
  return out;
}

MaskSpec make_mask(int h, int w, int side_margin) {
  if (h < 4 || w < 4 || h % 4 != 0 || w % 4 != 0)
    fail("make_mask: height and width must be positive multiples of 4, got (" +
         std::to_string(h) + "," + std::to_string(w) + ")");
  if (side_margin < 0 || side_margin >= w / 2)
    fail("make_mask: side_margin must be in [0, " + std::to_string(w / 2) + "), got " +
         std::to_string(side_margin));
  MaskSpec m;
  m.top = h / 2;
  m.bottom = h;
  m.left = side_margin;
  m.right = w - side_margin;
  m.mask = Tensor::full({h, w}, 1.0);
  for (int y = m.top; y < m.bottom; ++y)
    for (int x = m.left; x < m.right; ++x) m.mask[y * w + x] = 0.0;
  return m;
}

Tensor apply_mask(const Tensor& img, const MaskSpec& m) {
  const int64_t planes = check_image(img, m, "apply_mask");
  const int64_t HW = static_cast<int64_t>(m.height()) * m.width();
  Tensor out(img.shape());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < HW; ++i) out[p * HW + i] = img[p * HW + i] * m.mask[i];
  return out;
}

Tensor composite(const Tensor& original, const Tensor& predicted, const MaskSpec& m) {
  if (!original.same_shape(predicted))
    fail("composite: shape mismatch " + shape_str(original.shape()) + " vs " +
         shape_str(predicted.shape()));
  const int64_t planes = check_image(original, m, "composite");
  const int64_t HW = static_cast<int64_t>(m.height()) * m.width();
  Tensor out(original.shape());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < HW; ++i)
      out[p * HW + i] = m.mask[i] == 1.0 ? original[p * HW + i] : predicted[p * HW + i];
  return out;
}

Var apply_mask_var(Var img, const MaskSpec& m) {
  const int64_t planes = check_image(img->value, m, "apply_mask");
  const int64_t HW = static_cast<int64_t>(m.height()) * m.width();
  Tensor full(img->value.shape());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < HW; ++i) full[p * HW + i] = m.mask[i];
  return mul(std::move(img), constant(std::move(full)));
}

Var composite_var(const Tensor& original, Var predicted, const MaskSpec& m) {
  if (!original.same_shape(predicted->value))
    fail("composite: shape mismatch " + shape_str(original.shape()) + " vs " +
         shape_str(predicted->value.shape()));
  const int64_t planes = check_image(original, m, "composite");
  const int64_t HW = static_cast<int64_t>(m.height()) * m.width();
  Tensor inv(original.shape());
  Tensor kept(original.shape());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t i = 0; i < HW; ++i) {
      const bool keep = m.mask[i] == 1.0;
      inv[p * HW + i] = keep ? 0.0 : 1.0;
      kept[p * HW + i] = keep ? original[p * HW + i] : 0.0;
    }
  return add(mul(std::move(predicted), constant(std::move(inv))), constant(std::move(kept)));
}

}  // namespace lipfill
