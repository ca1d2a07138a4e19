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

#include "lipfill/config.hpp"
#include "lipfill/nn.hpp"

namespace lipfill {

/// Patch-level convolutional discriminator over full frames.
struct PatchDiscriminator {
  Conv2d c1, c2, c3, c4;

  PatchDiscriminator() = default;
  PatchDiscriminator(int base_channels, Rng& rng);
  /// (B,3,S,S) -> (B,1,s,s) patch logits.
  Var logits(Var img) const;
  /// Patch probabilities in (0,1).
  Var prob_map(Var img) const { return sigmoid(logits(std::move(img))); }
  void params(const std::string& prefix, ParamList& out) const;
};

/// Fixed random-weight feature tower (seeded, non-trainable). The first
/// layer is affine so its feature distance is exactly linear in image
/// blends; deeper layers interleave GELU and stride-2 convolutions.
class PerceptualExtractor {
 public:
  explicit PerceptualExtractor(int base_channels);
  static constexpr int kDepth = 4;

  /// Features of layers 1..n_layers.
  std::vector<Var> features(Var img, int n_layers) const;

 private:
  std::vector<Conv2d> convs_;
};

struct GanLossPair {
  Var g;  // generator term
  Var d;  // discriminator term (fake detached)
};

/// Binary cross-entropy GAN losses computed from patch logits via stable
/// softplus forms. d = -[log D(real) + log(1-D(fake))]; g is the
/// non-saturating -log D(fake) by default, or the literal minimax
/// +log(1-D(fake)) when form == "minimax".
GanLossPair gan_losses(Var real, Var fake, const PatchDiscriminator& disc,
                       const std::string& form = "nonsaturating");
Var discriminator_loss(const PatchDiscriminator& disc, Var real, Var fake);
Var generator_gan_loss(const PatchDiscriminator& disc, Var fake, const std::string& form);

/// Sum over layers 1..n_layers of mean absolute feature differences.
Var perceptual_loss(Var target, Var pred, const PerceptualExtractor& extractor,
                    int n_layers);

struct LossReport {
  double gan_g = 0, gan_d = 0, perceptual = 0, sync = 0, total = 0;
  double lambda_vgg = 1.0, lambda_sync = 1e-4;
};

/// Weighted total: gan_g + lambda_vgg * perceptual + lambda_sync * sync.
/// Throws (naming the offending term) on non-finite parts.
LossReport total_loss(double gan_g, double gan_d, double perceptual, double sync,
                      double lambda_vgg, double lambda_sync);

}  // namespace lipfill
