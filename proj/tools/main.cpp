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

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "lipfill/checkpoint.hpp"
#include "lipfill/eval.hpp"
#include "lipfill/image_io.hpp"
#include "lipfill/train.hpp"

namespace fs = std::filesystem;
using namespace lipfill;

namespace {

std::vector<std::string> list_ppm(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm")
      names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) fail("no .ppm frames found in " + dir);
  return names;
}

std::vector<Tensor> read_frames(const std::string& dir) {
  std::vector<Tensor> frames;
  for (const auto& n : list_ppm(dir)) frames.push_back(read_ppm(dir + "/" + n));
  return frames;
}

int run_synth_data(int clips, int frames, uint64_t seed, int image_size,
                   const std::string& out) {
  CorpusSpec spec;
  spec.clips = clips;
  spec.frames = frames;
  spec.seed = seed;
  spec.image_size = image_size;
  const std::string manifest = generate_corpus(out, spec);
  std::printf("wrote %d clips (%d frames, %dpx) to %s\n", clips, frames, image_size,
              out.c_str());
  std::printf("corpus manifest hash: %016llx\n",
              static_cast<unsigned long long>(fnv1a(manifest)));
  return 0;
}

int run_pretrain_syncnet(const std::string& data_dir, const std::string& out,
                         const std::string& config_path, int steps, int batch, double lr,
                         uint64_t seed) {
  Dataset data = Dataset::load_dir(data_dir);
  RunConfig cfg;
  if (!config_path.empty()) {
    cfg = RunConfig::from_file(config_path);
  } else {
    cfg.image_size = data.image_size();
    cfg.mask_side_margin = data.image_size() / 16;
  }
  if (cfg.image_size != data.image_size())
    fail("configured image_size " + std::to_string(cfg.image_size) +
         " does not match the dataset (" + std::to_string(data.image_size()) + ")");

  MaskSpec mask = make_mask(cfg.image_size, cfg.image_size, cfg.mask_side_margin);
  Rng rng(seed);
  SyncScorer scorer(cfg, rng);
  SyncTrainOptions opts;
  opts.steps = steps;
  opts.batch = batch;
  opts.lr = lr;
  opts.seed = seed;
  auto losses = train_sync_scorer(scorer, data, mask, opts);
  const double auc = sync_scorer_auc(scorer, data, mask, opts.min_offset, 128, seed + 1);
  save_sync_scorer(out, scorer, cfg);
  std::printf("sync scorer trained for %d steps (final loss %.4f), AUC %.4f\n", steps,
              losses.empty() ? 0.0 : losses.back(), auc);
  std::printf("saved %s\n", out.c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume,
              const std::string& sync_ckpt_flag) {
  RunConfig cfg = RunConfig::from_file(config_path);
  Dataset data = Dataset::load_dir(data_dir);
  fs::create_directories(out_dir);

  SyncScorer scorer;
  const SyncScorer* scorer_ptr = nullptr;
  if (cfg.lambda_sync > 0) {
    const std::string path = !sync_ckpt_flag.empty() ? sync_ckpt_flag : cfg.sync_checkpoint;
    if (path.empty())
      fail("lambda_sync > 0: pass --sync-ckpt or set sync_checkpoint in the config");
    RunConfig sync_cfg;
    scorer = load_sync_scorer(path, &sync_cfg);
    if (sync_cfg.image_size != cfg.image_size ||
        sync_cfg.mask_side_margin != cfg.mask_side_margin)
      fail("sync scorer geometry (" + std::to_string(sync_cfg.image_size) + "px, margin " +
           std::to_string(sync_cfg.mask_side_margin) + ") does not match the run config");
    scorer_ptr = &scorer;
  }

  Trainer trainer(cfg, scorer_ptr);
  if (!resume.empty()) {
    trainer.load(resume);
    std::printf("resumed from %s at step %lld\n", resume.c_str(),
                static_cast<long long>(trainer.step()));
  }

  const auto started = std::chrono::steady_clock::now();
  while (trainer.step() < cfg.steps) {
    LossReport r = trainer.train_step(data);
    const int64_t s = trainer.step();
    if (cfg.log_every > 0 && s % cfg.log_every == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      std::printf("step %6lld  total %.4f  gan_g %.4f  gan_d %.4f  vgg %.4f  sync %.4f  (%.1fs)\n",
                  static_cast<long long>(s), r.total, r.gan_g, r.gan_d, r.perceptual, r.sync,
                  secs);
      std::fflush(stdout);
    }
    if (cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0 && s < cfg.steps) {
      char name[64];
      std::snprintf(name, sizeof(name), "/ckpt_%08lld.lfck", static_cast<long long>(s));
      trainer.save(out_dir + name);
    }
  }
  trainer.save(out_dir + "/ckpt_final.lfck");
  std::printf("saved %s/ckpt_final.lfck\n", out_dir.c_str());
  return 0;
}

int run_infer(const std::string& ckpt, const std::string& frames_dir,
              const std::string& audio, const std::string& reference,
              const std::string& out_dir) {
  if (reference != "self" && reference != "first")
    fail("--reference must be 'self' or 'first'");
  auto gen = load_generator(ckpt);
  auto names = list_ppm(frames_dir);
  std::vector<Tensor> frames;
  for (const auto& n : names) frames.push_back(read_ppm(frames_dir + "/" + n));
  Waveform wave = read_wav(audio);
  auto out = infer_clip(*gen, frames, wave,
                        reference == "self" ? ReferencePolicy::Self
                                            : ReferencePolicy::FirstFrame);
  fs::create_directories(out_dir);
  for (size_t i = 0; i < out.size(); ++i) write_ppm(out_dir + "/" + names[i], out[i]);
  std::printf("wrote %zu frames to %s\n", out.size(), out_dir.c_str());
  return 0;
}

int run_evaluate(const std::string& pred_dir, const std::string& truth_dir,
                 const std::string& audio, const std::string& sync_ckpt,
                 const std::string& report_path) {
  RunConfig sync_cfg;
  SyncScorer scorer = load_sync_scorer(sync_ckpt, &sync_cfg);
  MaskSpec mask =
      make_mask(sync_cfg.image_size, sync_cfg.image_size, sync_cfg.mask_side_margin);
  auto pred = read_frames(pred_dir);
  auto truth = read_frames(truth_dir);
  Waveform wave = read_wav(audio);
  EvalReport r = evaluate(pred, truth, wave, scorer, mask);
  std::ofstream out(report_path);
  if (!out) fail("cannot write report to " + report_path);
  out << eval_report_json(r) << "\n";
  std::printf("note: %s\n", r.note.c_str());
  std::printf("ssim %.4f   psnr %.2f   sync_conf %.4f\n", r.ssim_mean, r.psnr_mean,
              r.sync_conf_mean);
  std::printf("report written to %s\n", report_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-driven masked lower-face inpainting"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic audio-visual corpus");
  int clips = 200, frames = 25, image_size = 32;
  uint64_t seed = 1;
  std::string out_dir;
  synth->add_option("--clips", clips, "number of clips");
  synth->add_option("--frames", frames, "frames per clip");
  synth->add_option("--seed", seed, "corpus seed");
  synth->add_option("--image-size", image_size, "frame side in pixels");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* presync = app.add_subcommand("pretrain-syncnet", "train the sync scorer");
  std::string ps_data, ps_out, ps_config;
  int ps_steps = 2500, ps_batch = 32;
  double ps_lr = 1e-3;
  uint64_t ps_seed = 7;
  presync->add_option("--data", ps_data, "corpus directory")->required();
  presync->add_option("--out", ps_out, "output checkpoint path")->required();
  presync->add_option("--config", ps_config, "run config (defaults derived from the data)");
  presync->add_option("--steps", ps_steps, "training steps");
  presync->add_option("--batch", ps_batch, "pairs per step");
  presync->add_option("--lr", ps_lr, "learning rate");
  presync->add_option("--seed", ps_seed, "training seed");

  auto* train = app.add_subcommand("train", "train the generator");
  std::string tr_config, tr_data, tr_out, tr_resume, tr_sync;
  train->add_option("--config", tr_config, "run config file")->required();
  train->add_option("--data", tr_data, "corpus directory")->required();
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_option("--resume", tr_resume, "checkpoint to resume from");
  train->add_option("--sync-ckpt", tr_sync, "sync scorer checkpoint (overrides config)");

  auto* infer = app.add_subcommand("infer", "drive a clip with audio");
  std::string in_ckpt, in_frames, in_audio, in_ref = "self", in_out;
  infer->add_option("--ckpt", in_ckpt, "trainer checkpoint")->required();
  infer->add_option("--frames", in_frames, "input frame directory (.ppm)")->required();
  infer->add_option("--audio", in_audio, "driving audio (16 kHz mono WAV)")->required();
  infer->add_option("--reference", in_ref, "reference policy: self | first");
  infer->add_option("--out", in_out, "output frame directory")->required();

  auto* evalc = app.add_subcommand("evaluate", "score predictions against ground truth");
  std::string ev_pred, ev_truth, ev_audio, ev_sync, ev_report;
  evalc->add_option("--pred", ev_pred, "predicted frame directory")->required();
  evalc->add_option("--truth", ev_truth, "ground-truth frame directory")->required();
  evalc->add_option("--audio", ev_audio, "audio WAV")->required();
  evalc->add_option("--sync-ckpt", ev_sync, "sync scorer checkpoint")->required();
  evalc->add_option("--report", ev_report, "output JSON report path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth_data(clips, frames, seed, image_size, out_dir);
    if (presync->parsed())
      return run_pretrain_syncnet(ps_data, ps_out, ps_config, ps_steps, ps_batch, ps_lr,
                                  ps_seed);
    if (train->parsed()) return run_train(tr_config, tr_data, tr_out, tr_resume, tr_sync);
    if (infer->parsed()) return run_infer(in_ckpt, in_frames, in_audio, in_ref, in_out);
    if (evalc->parsed()) return run_evaluate(ev_pred, ev_truth, ev_audio, ev_sync, ev_report);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
