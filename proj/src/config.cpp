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

#include "lipfill/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lipfill/tensor.hpp"

namespace lipfill {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) fail("config: empty element in list for " + key);
    out.push_back(std::stoi(item));
  }
  if (out.empty()) fail("config: empty list for " + key);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail("config: boolean expected for " + key + ", got '" + v + "'");
  return false;
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    if (key == "image_size") c.image_size = std::stoi(val);
    else if (key == "mask_side_margin") c.mask_side_margin = std::stoi(val);
    else if (key == "base_channels") c.base_channels = std::stoi(val);
    else if (key == "heads") c.heads = std::stoi(val);
    else if (key == "mlp_ratio") c.mlp_ratio = std::stoi(val);
    else if (key == "blocks_per_stage") c.blocks_per_stage = parse_int_list(val, key);
    else if (key == "window_sizes") c.window_sizes = parse_int_list(val, key);
    else if (key == "use_rel_pos_bias") c.use_rel_pos_bias = parse_bool(val, key);
    else if (key == "disable_audio_injection") c.disable_audio_injection = parse_bool(val, key);
    else if (key == "disable_mma") c.disable_mma = parse_bool(val, key);
    else if (key == "inject_audio_all_stages") c.inject_audio_all_stages = parse_bool(val, key);
    else if (key == "audio_dim") c.audio_dim = std::stoi(val);
    else if (key == "audio_base_channels") c.audio_base_channels = std::stoi(val);
    else if (key == "refine_levels") c.refine_levels = std::stoi(val);
    else if (key == "refine_base_channels") c.refine_base_channels = std::stoi(val);
    else if (key == "eps_modulation") c.eps_modulation = std::stod(val);
    else if (key == "lambda_vgg") c.lambda_vgg = std::stod(val);
    else if (key == "lambda_sync") c.lambda_sync = std::stod(val);
    else if (key == "n_perceptual_layers") c.n_perceptual_layers = std::stoi(val);
    else if (key == "gan_form") c.gan_form = val;
    else if (key == "disc_base_channels") c.disc_base_channels = std::stoi(val);
    else if (key == "percep_base_channels") c.percep_base_channels = std::stoi(val);
    else if (key == "sync_embed_dim") c.sync_embed_dim = std::stoi(val);
    else if (key == "sync_base_channels") c.sync_base_channels = std::stoi(val);
    else if (key == "lr_g") c.lr_g = std::stod(val);
    else if (key == "lr_d") c.lr_d = std::stod(val);
    else if (key == "beta1") c.beta1 = std::stod(val);
    else if (key == "beta2") c.beta2 = std::stod(val);
    else if (key == "batch_size") c.batch_size = std::stoi(val);
    else if (key == "force_window_samples") c.force_window_samples = parse_bool(val, key);
    else if (key == "steps") c.steps = std::stoll(val);
    else if (key == "seed") c.seed = std::stoull(val);
    else if (key == "log_every") c.log_every = std::stoll(val);
    else if (key == "checkpoint_every") c.checkpoint_every = std::stoll(val);
    else if (key == "sync_checkpoint") c.sync_checkpoint = val;
    else fail("config: unknown key '" + key + "' on line " + std::to_string(lineno));
  }
  c.validate();
  return c;
}

std::string RunConfig::to_string() const {
  std::ostringstream os;
  os << "image_size=" << image_size << "\n";
  os << "mask_side_margin=" << mask_side_margin << "\n";
  os << "base_channels=" << base_channels << "\n";
  os << "heads=" << heads << "\n";
  os << "mlp_ratio=" << mlp_ratio << "\n";
  os << "blocks_per_stage=" << fmt_int_list(blocks_per_stage) << "\n";
  os << "window_sizes=" << fmt_int_list(window_sizes) << "\n";
  os << "use_rel_pos_bias=" << (use_rel_pos_bias ? "true" : "false") << "\n";
  os << "disable_audio_injection=" << (disable_audio_injection ? "true" : "false") << "\n";
  os << "disable_mma=" << (disable_mma ? "true" : "false") << "\n";
  os << "inject_audio_all_stages=" << (inject_audio_all_stages ? "true" : "false") << "\n";
  os << "audio_dim=" << audio_dim << "\n";
  os << "audio_base_channels=" << audio_base_channels << "\n";
  os << "refine_levels=" << refine_levels << "\n";
  os << "refine_base_channels=" << refine_base_channels << "\n";
  os << "eps_modulation=" << fmt_double(eps_modulation) << "\n";
  os << "lambda_vgg=" << fmt_double(lambda_vgg) << "\n";
  os << "lambda_sync=" << fmt_double(lambda_sync) << "\n";
  os << "n_perceptual_layers=" << n_perceptual_layers << "\n";
  os << "gan_form=" << gan_form << "\n";
  os << "disc_base_channels=" << disc_base_channels << "\n";
  os << "percep_base_channels=" << percep_base_channels << "\n";
  os << "sync_embed_dim=" << sync_embed_dim << "\n";
  os << "sync_base_channels=" << sync_base_channels << "\n";
  os << "lr_g=" << fmt_double(lr_g) << "\n";
  os << "lr_d=" << fmt_double(lr_d) << "\n";
  os << "beta1=" << fmt_double(beta1) << "\n";
  os << "beta2=" << fmt_double(beta2) << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "force_window_samples=" << (force_window_samples ? "true" : "false") << "\n";
  os << "steps=" << steps << "\n";
  os << "seed=" << seed << "\n";
  os << "log_every=" << log_every << "\n";
  os << "checkpoint_every=" << checkpoint_every << "\n";
  os << "sync_checkpoint=" << sync_checkpoint << "\n";
  return os.str();
}

void RunConfig::validate() const {
  if (image_size < 32 || image_size % 32 != 0)
    fail("config: image_size must be a positive multiple of 32 (4x conv encoder plus "
         "three stage downsamples), got " + std::to_string(image_size));
  if (mask_side_margin < 0 || mask_side_margin >= image_size / 2)
    fail("config: mask_side_margin must be in [0, image_size/2)");
  if (base_channels < 4 || base_channels % 2 != 0)
    fail("config: base_channels must be an even number >= 4");
  if (heads < 1 || (2 * base_channels) % heads != 0)
    fail("config: heads must divide the narrowest stage width " +
         std::to_string(2 * base_channels));
  if (mlp_ratio < 1) fail("config: mlp_ratio must be >= 1");
  if (blocks_per_stage.size() != 5) fail("config: blocks_per_stage must have 5 entries");
  if (window_sizes.size() != 5) fail("config: window_sizes must have 5 entries");
  for (int b : blocks_per_stage)
    if (b < 1) fail("config: blocks_per_stage entries must be >= 1");
  for (int w : window_sizes)
    if (w < 1) fail("config: window_sizes entries must be >= 1");
  if (audio_dim < 1) fail("config: audio_dim must be >= 1");
  if (refine_levels < 2) fail("config: refine_levels must be >= 2");
  if (refine_base_channels < 2) fail("config: refine_base_channels must be >= 2");
  if (eps_modulation <= 0) fail("config: eps_modulation must be positive");
  if (n_perceptual_layers < 1) fail("config: n_perceptual_layers must be >= 1");
  if (gan_form != "nonsaturating" && gan_form != "minimax")
    fail("config: gan_form must be 'nonsaturating' or 'minimax', got '" + gan_form + "'");
  if (lambda_sync < 0 || lambda_vgg < 0) fail("config: loss weights must be non-negative");
  if (batch_size < 1) fail("config: batch_size must be >= 1");
  const int min_side = image_size / 32;  // narrowest stage feature side
  if (min_side < 1) fail("config: image too small for the 5-stage geometry");
}

}  // namespace lipfill
