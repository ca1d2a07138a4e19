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

#include "lipfill/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "lipfill/checkpoint.hpp"

namespace lipfill {

Dataset Dataset::synth_corpus(const CorpusSpec& spec) {
  Rng master(spec.seed);
  Dataset d;
  d.clips_.reserve(spec.clips);
  for (int i = 0; i < spec.clips; ++i) {
    const int identity = static_cast<int>(master() % 1000000000ULL);
    auto script = random_script(master, spec.frames);
    Clip c;
    c.data = synth_clip(identity, script, spec.frames, spec.image_size);
    c.mel_full = shared_mel().spectrogram(c.data.wave);
    d.clips_.push_back(std::move(c));
  }
  return d;
}

Dataset Dataset::load_dir(const std::string& dir) {
  std::ifstream in(dir + "/manifest.json");
  if (!in) fail("dataset: missing manifest.json in " + dir);
  nlohmann::json j = nlohmann::json::parse(in);
  Dataset d;
  for (const auto& name : j.at("clip_dirs")) {
    Clip c;
    c.data = read_clip(dir + "/" + name.get<std::string>());
    c.mel_full = shared_mel().spectrogram(c.data.wave);
    d.clips_.push_back(std::move(c));
  }
  if (d.clips_.empty()) fail("dataset: no clips listed in " + dir);
  return d;
}

int Dataset::image_size() const {
  if (clips_.empty()) fail("dataset: empty");
  return clips_.front().data.image_size;
}

int Dataset::frames_per_clip() const {
  if (clips_.empty()) fail("dataset: empty");
  return static_cast<int>(clips_.front().data.frames.size());
}

Trainer::Trainer(const RunConfig& cfg, const SyncScorer* frozen_sync)
    : cfg_(cfg), rng_(cfg.seed), percep_(cfg.percep_base_channels), sync_(frozen_sync) {
  cfg_.validate();
  if (cfg_.lambda_sync > 0 && !sync_)
    fail("trainer: lambda_sync > 0 requires a pretrained sync scorer");
  Rng init_rng(cfg.seed ^ 0x517CC1B727220A95ULL);
  gen_ = std::make_unique<Generator>(cfg_, init_rng);
  disc_ = PatchDiscriminator(cfg_.disc_base_channels, init_rng);
  gen_->params(gen_params_);
  disc_.params("disc", disc_params_);
  opt_g_ = Adam(gen_params_.vars(), cfg_.lr_g, cfg_.beta1, cfg_.beta2);
  opt_d_ = Adam(disc_params_.vars(), cfg_.lr_d, cfg_.beta1, cfg_.beta2);
}

TrainSample Trainer::draw_sample(const Dataset& data) {
  const auto& clips = data.clips();
  if (clips.empty()) fail("trainer: empty dataset");
  TrainSample s;
  s.clip_index = static_cast<int>(rng_() % clips.size());
  const auto& clip = clips[s.clip_index];
  const int T = static_cast<int>(clip.data.frames.size());
  const int span = frames_per_sample();
  const int maxf =
      MelExtractor::max_frame(static_cast<int64_t>(clip.data.wave.samples.size()));
  const int lo = MelExtractor::min_frame();
  const int hi = std::min(T - span, maxf - (span - 1));
  if (hi < lo)
    fail("trainer: clip too short to sample a " + std::to_string(span) + "-frame window");
  s.t = lo + static_cast<int>(rng_() % static_cast<uint64_t>(hi - lo + 1));
  // reference: any timestamp outside the generated window
  const int choices = T - span;
  if (choices < 1) fail("trainer: clip has no valid reference timestamp");
  const int r = static_cast<int>(rng_() % static_cast<uint64_t>(choices));
  s.ref_t = r < s.t ? r : r + span;
  return s;
}

std::vector<TrainSample> Trainer::draw_batch(const Dataset& data) {
  std::vector<TrainSample> batch(cfg_.batch_size);
  for (auto& s : batch) s = draw_sample(data);
  return batch;
}

LossReport Trainer::train_step(const Dataset& data) {
  return train_step_on(data, draw_batch(data));
}

LossReport Trainer::train_step_on(const Dataset& data, const std::vector<TrainSample>& batch) {
  if (batch.empty()) fail("train_step: empty batch");
  const int span = frames_per_sample();
  const int S = cfg_.image_size;
  if (data.image_size() != S)
    fail("train_step: dataset frames are " + std::to_string(data.image_size()) +
         "px but the config expects " + std::to_string(S));
  const int64_t ns = static_cast<int64_t>(batch.size());
  const int64_t B = ns * span;
  const int64_t plane = static_cast<int64_t>(3) * S * S;

  Tensor originals({B, 3, S, S});
  Tensor masked({B, 3, S, S});
  Tensor refs({ns, 3, S, S});
  std::vector<MelWindow> mel_windows;
  mel_windows.reserve(B);
  const MelExtractor& mel = shared_mel();

  for (int64_t i = 0; i < ns; ++i) {
    const auto& sample = batch[i];
    const Clip& clip = data.clips().at(sample.clip_index);
    std::memcpy(refs.data() + i * plane, clip.data.frames.at(sample.ref_t).data(),
                plane * sizeof(double));
    for (int f = 0; f < span; ++f) {
      const int t = sample.t + f;
      const int64_t b = i * span + f;
      const Tensor& frame = clip.data.frames.at(t);
      std::memcpy(originals.data() + b * plane, frame.data(), plane * sizeof(double));
      Tensor m = apply_mask(frame, gen_->mask());
      std::memcpy(masked.data() + b * plane, m.data(), plane * sizeof(double));
      mel_windows.push_back(mel.window(clip.mel_full, t));
    }
  }
  Tensor mels = mel_batch(mel_windows);

  Generator::Forward fwd = gen_->forward(masked, refs, mels);

  auto term_guard = [](const Var& v, const char* name) {
    if (!v->value.all_finite())
      throw std::runtime_error(std::string("train_step: non-finite loss term '") + name +
                               "'");
    return v->value[0];
  };

  // discriminator update (fake frames detached inside)
  opt_d_.zero_grad();
  Var d_loss = discriminator_loss(disc_, constant(originals), fwd.final);
  const double d_val = term_guard(d_loss, "gan_d");
  backward(d_loss);
  opt_d_.step();

  // generator update against the refreshed discriminator
  opt_g_.zero_grad();
  opt_d_.zero_grad();
  Var g_gan = generator_gan_loss(disc_, fwd.final, cfg_.gan_form);
  Var perc = perceptual_loss(constant(originals), fwd.final, percep_, cfg_.n_perceptual_layers);
  Var total = add(g_gan, mul_scalar(perc, cfg_.lambda_vgg));

  double sync_val = 0.0;
  if (cfg_.lambda_sync > 0) {
    std::vector<Var> terms;
    terms.reserve(ns);
    for (int64_t i = 0; i < ns; ++i) {
      const auto& sample = batch[i];
      const Clip& clip = data.clips().at(sample.clip_index);
      Var frames5 = slice(fwd.final, 0, i * span, 5);
      Var crops = SyncScorer::crop_stack_var(std::move(frames5), gen_->mask());
      Tensor melw = mel_batch({mel.window(clip.mel_full, sample.t + 2)});
      Var logit = sync_->logit(std::move(crops), constant(melw));
      terms.push_back(softplus(neg(std::move(logit))));
    }
    Var sync_loss = mean_all(concat(terms, 0));
    sync_val = term_guard(sync_loss, "sync");
    total = add(std::move(total), mul_scalar(std::move(sync_loss), cfg_.lambda_sync));
  }

  const double g_val = term_guard(g_gan, "gan_g");
  const double p_val = term_guard(perc, "perceptual");
  term_guard(total, "total");

  backward(total);
  opt_g_.step();
  opt_d_.zero_grad();  // discard discriminator gradients from the generator pass

  ++step_;
  return total_loss(g_val, d_val, p_val, sync_val, cfg_.lambda_vgg, cfg_.lambda_sync);
}

namespace {

CheckpointData::OptimizerState opt_state(const std::string& name, const Adam& opt) {
  CheckpointData::OptimizerState o;
  o.name = name;
  o.step_count = opt.step_count();
  for (const auto& t : const_cast<Adam&>(opt).moment1()) o.m.push_back(t.clone());
  for (const auto& t : const_cast<Adam&>(opt).moment2()) o.v.push_back(t.clone());
  return o;
}

void restore_opt(Adam& opt, const CheckpointData::OptimizerState& o) {
  if (o.m.size() != opt.moment1().size() || o.v.size() != opt.moment2().size())
    throw std::runtime_error("checkpoint: optimizer state size mismatch for " + o.name);
  for (size_t i = 0; i < o.m.size(); ++i) {
    if (!o.m[i].same_shape(opt.moment1()[i]))
      throw std::runtime_error("checkpoint: optimizer moment shape mismatch for " + o.name);
    opt.moment1()[i] = o.m[i].clone();
    opt.moment2()[i] = o.v[i].clone();
  }
  opt.set_step_count(o.step_count);
}

}  // namespace

void Trainer::save(const std::string& path) const {
  CheckpointData d;
  d.kind = "trainer";
  d.config_text = cfg_.to_string();
  std::ostringstream os;
  os << rng_;
  d.rng_state = os.str();
  d.step = step_;
  for (const auto& [n, v] : gen_params_.items()) d.params.emplace_back("g." + n, v->value.clone());
  for (const auto& [n, v] : disc_params_.items()) d.params.emplace_back("d." + n, v->value.clone());
  d.optimizers.push_back(opt_state("opt_g", opt_g_));
  d.optimizers.push_back(opt_state("opt_d", opt_d_));
  save_checkpoint_file(path, d);
}

void Trainer::load(const std::string& path) {
  CheckpointData d = load_checkpoint_file(path, "trainer");
  if (d.config_text != cfg_.to_string())
    throw std::runtime_error(
        "checkpoint: stored configuration does not match the current run configuration");

  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : d.params) by_name[n] = &t;
  auto apply = [&](const std::string& prefix, const ParamList& pl) {
    for (const auto& [n, v] : pl.items()) {
      auto it = by_name.find(prefix + n);
      if (it == by_name.end())
        throw std::runtime_error("checkpoint: missing parameter " + prefix + n);
      if (!it->second->same_shape(v->value))
        throw std::runtime_error("checkpoint: shape mismatch for " + prefix + n);
      std::memcpy(v->value.data(), it->second->data(),
                  static_cast<size_t>(v->value.numel()) * sizeof(double));
    }
  };
  apply("g.", gen_params_);
  apply("d.", disc_params_);

  bool got_g = false, got_d = false;
  for (const auto& o : d.optimizers) {
    if (o.name == "opt_g") {
      restore_opt(opt_g_, o);
      got_g = true;
    } else if (o.name == "opt_d") {
      restore_opt(opt_d_, o);
      got_d = true;
    }
  }
  if (!got_g || !got_d) throw std::runtime_error("checkpoint: missing optimizer state");

  std::istringstream is(d.rng_state);
  is >> rng_;
  if (!is) throw std::runtime_error("checkpoint: invalid RNG state");
  step_ = d.step;
}

}  // namespace lipfill
