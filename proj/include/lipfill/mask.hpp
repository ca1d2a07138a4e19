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

#include "lipfill/autodiff.hpp"
#include "lipfill/tensor.hpp"

namespace lipfill {

/// Rectangular keep/alter mask. mask(y,x) is 1 where the original pixels are
/// kept and exactly 0 inside the rectangle [top,bottom) x [left,right).
struct MaskSpec {
  Tensor mask;  // (H, W)
  int top = 0, bottom = 0, left = 0, right = 0;

  int height() const { return static_cast<int>(mask.dim(0)); }
  int width() const { return static_cast<int>(mask.dim(1)); }
  double masked_fraction() const;

  /// Feature-resolution mask: a token is masked (0) if any covered pixel is
  /// masked. factor must divide both sides.
  MaskSpec downsample(int factor) const;
};

/// Lower-half mask with unmasked side margins:
/// rect = (h/2, h, side_margin, w - side_margin).
MaskSpec make_mask(int h, int w, int side_margin);

/// Elementwise product; img is (3,H,W) or (N,3,H,W).
Tensor apply_mask(const Tensor& img, const MaskSpec& m);

/// original where mask==1, predicted where mask==0; exact in both regions.
Tensor composite(const Tensor& original, const Tensor& predicted, const MaskSpec& m);

// Autodiff variants for the training path. `original` is a constant; gradients
// flow into `predicted` only through the altered region.
Var apply_mask_var(Var img, const MaskSpec& m);
Var composite_var(const Tensor& original, Var predicted, const MaskSpec& m);

}  // namespace lipfill
