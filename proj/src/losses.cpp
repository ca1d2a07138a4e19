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

#include "lipfill/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace lipfill {

PatchDiscriminator::PatchDiscriminator(int base_channels, Rng& rng) {
  const int b = base_channels;
  c1 = Conv2d(3, b, 4, 2, 1, rng);
  c2 = Conv2d(b, 2 * b, 4, 2, 1, rng);
  c3 = Conv2d(2 * b, 4 * b, 3, 1, 1, rng);
  c4 = Conv2d(4 * b, 1, 3, 1, 1, rng);
}

Var PatchDiscriminator::logits(Var img) const {
  const Tensor& v = img->value;
  if (v.rank() != 4 || v.dim(1) != 3)
    fail("discriminator: expected (B,3,S,S) frames, got " + shape_str(v.shape()));
  Var h = gelu(c1(std::move(img)));
  h = gelu(c2(std::move(h)));
  h = gelu(c3(std::move(h)));
  Var out = c4(std::move(h));
  if (!out->value.all_finite())
    throw std::runtime_error("discriminator produced a non-finite output");
  return out;
}

void PatchDiscriminator::params(const std::string& prefix, ParamList& out) const {
  c1.params(prefix + ".c1", out);
  c2.params(prefix + ".c2", out);
  c3.params(prefix + ".c3", out);
  c4.params(prefix + ".c4", out);
}

PerceptualExtractor::PerceptualExtractor(int base_channels) {
  // Fixed seed: the extractor ships with the code and never trains.
  Rng rng(0xC0FFEE5EEDULL);
  const int b = base_channels;
  convs_.emplace_back(3, b, 3, 1, 1, rng);
  convs_.emplace_back(b, 2 * b, 3, 2, 1, rng);
  convs_.emplace_back(2 * b, 4 * b, 3, 2, 1, rng);
  convs_.emplace_back(4 * b, 8 * b, 3, 2, 1, rng);
  for (auto& c : convs_) {
    c.weight->requires_grad = false;
    c.bias->requires_grad = false;
  }
}

std::vector<Var> PerceptualExtractor::features(Var img, int n_layers) const {
  if (n_layers < 1 || n_layers > kDepth)
    fail("perceptual_loss: layer count " + std::to_string(n_layers) +
         " outside extractor depth 1.." + std::to_string(kDepth));
  std::vector<Var> feats;
  Var h = convs_[0](std::move(img));  // layer 1 kept affine
  feats.push_back(h);
  for (int n = 1; n < n_layers; ++n) {
    h = convs_[n](gelu(std::move(h)));
    feats.push_back(h);
  }
  return feats;
}

Var discriminator_loss(const PatchDiscriminator& disc, Var real, Var fake) {
  if (!real->value.same_shape(fake->value))
    fail("gan_losses: real/fake shape mismatch " + shape_str(real->value.shape()) + " vs " +
         shape_str(fake->value.shape()));
  Var lr = disc.logits(std::move(real));
  Var lf = disc.logits(detach(fake));
  // -log D(real) - log(1 - D(fake)), with D = sigmoid(logit)
  return add(mean_all(softplus(neg(std::move(lr)))), mean_all(softplus(std::move(lf))));
}

Var generator_gan_loss(const PatchDiscriminator& disc, Var fake, const std::string& form) {
  Var lf = disc.logits(std::move(fake));
  if (form == "nonsaturating") return mean_all(softplus(neg(std::move(lf))));
  if (form == "minimax") return neg(mean_all(softplus(std::move(lf))));
  fail("gan_losses: unknown form '" + form + "'");
  return nullptr;
}

GanLossPair gan_losses(Var real, Var fake, const PatchDiscriminator& disc,
                       const std::string& form) {
  GanLossPair out;
  out.d = discriminator_loss(disc, std::move(real), fake);
  out.g = generator_gan_loss(disc, std::move(fake), form);
  return out;
}

Var perceptual_loss(Var target, Var pred, const PerceptualExtractor& extractor,
                    int n_layers) {
  if (!target->value.same_shape(pred->value))
    fail("perceptual_loss: shape mismatch " + shape_str(target->value.shape()) + " vs " +
         shape_str(pred->value.shape()));
  auto ft = extractor.features(std::move(target), n_layers);
  auto fp = extractor.features(std::move(pred), n_layers);
  Var total;
  for (int n = 0; n < n_layers; ++n) {
    Var term = mean_all(abs_op(sub(ft[n], fp[n])));
    total = total ? add(std::move(total), std::move(term)) : std::move(term);
  }
  return total;
}

LossReport total_loss(double gan_g, double gan_d, double perceptual, double sync,
                      double lambda_vgg, double lambda_sync) {
  auto guard = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("total_loss: non-finite term '") + name + "'");
  };
  guard(gan_g, "gan_g");
  guard(gan_d, "gan_d");
  guard(perceptual, "perceptual");
  guard(sync, "sync");
  LossReport r;
  r.gan_g = gan_g;
  r.gan_d = gan_d;
  r.perceptual = perceptual;
  r.sync = sync;
  r.lambda_vgg = lambda_vgg;
  r.lambda_sync = lambda_sync;
  r.total = gan_g + lambda_vgg * perceptual + lambda_sync * sync;
  guard(r.total, "total");
  return r;
}

}  // namespace lipfill
