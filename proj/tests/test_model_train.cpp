#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "lipfill/checkpoint.hpp"
#include "lipfill/train.hpp"
#include "support.hpp"

using namespace lipfill;

namespace {

RunConfig desk32(double lambda_sync = 0.0) {
  RunConfig c;
  c.image_size = 32;
  c.mask_side_margin = 2;
  c.base_channels = 8;
  c.heads = 2;
  c.audio_dim = 32;
  c.audio_base_channels = 8;
  c.refine_levels = 3;
  c.refine_base_channels = 8;
  c.disc_base_channels = 8;
  c.percep_base_channels = 8;
  c.sync_base_channels = 8;
  c.sync_embed_dim = 32;
  c.batch_size = 2;
  c.lambda_sync = lambda_sync;
  c.seed = 77;
  return c;
}

Dataset small_data(uint64_t seed = 31, int clips = 4) {
  CorpusSpec spec;
  spec.clips = clips;
  spec.frames = 25;
  spec.image_size = 32;
  spec.seed = seed;
  return Dataset::synth_corpus(spec);
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("generator forward: shapes and exact kept pixels") {
  RunConfig cfg = desk32();
  Rng rng(cfg.seed);
  Generator gen(cfg, rng);
  Dataset data = small_data();
  const Clip& clip = data.clips()[0];

  Tensor masked({2, 3, 32, 32});
  Tensor refs({2, 3, 32, 32});
  std::vector<MelWindow> mels;
  for (int i = 0; i < 2; ++i) {
    Tensor m = apply_mask(clip.data.frames[4 + i], gen.mask());
    std::memcpy(masked.data() + i * m.numel(), m.data(), m.numel() * sizeof(double));
    std::memcpy(refs.data() + i * m.numel(), clip.data.frames[10 + i].data(),
                m.numel() * sizeof(double));
    mels.push_back(shared_mel().window(clip.mel_full, 4 + i));
  }
  std::vector<Tensor> trace;
  auto fwd = gen.forward(masked, refs, mel_batch(mels), &trace);
  CHECK(fwd.backbone_pred->value.shape() == Shape{2, 3, 32, 32});
  CHECK(fwd.composited->value.shape() == Shape{2, 3, 32, 32});
  CHECK(fwd.refined->value.shape() == Shape{2, 3, 32, 32});
  CHECK(fwd.final->value.shape() == Shape{2, 3, 32, 32});
  CHECK(trace.size() == 5);

  // kept pixels of composited and final match the masked original exactly
  const MaskSpec& m = gen.mask();
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          if (m.mask[y * 32 + x] != 1.0) continue;
          const int64_t i = (((b * 3) + c) * 32 + y) * 32 + x;
          CHECK(std::abs(fwd.composited->value[i] - masked[i]) == 0.0);
          CHECK(std::abs(fwd.final->value[i] - masked[i]) == 0.0);
        }

  // outputs stay in [0,1]
  for (int64_t i = 0; i < fwd.final->value.numel(); ++i) {
    CHECK(fwd.backbone_pred->value[i] >= 0.0);
    CHECK(fwd.backbone_pred->value[i] <= 1.0);
    CHECK(fwd.final->value[i] >= 0.0);
    CHECK(fwd.final->value[i] <= 1.0);
  }

  CHECK_THROWS(gen.forward(Tensor({2, 3, 16, 16}), refs, mel_batch(mels)));
  CHECK_THROWS(gen.forward(masked, Tensor({3, 3, 32, 32}), mel_batch(mels)));
}

TEST_CASE("zeroed block projections make the attention core transparent") {
  RunConfig cfg = desk32();
  Rng rng(5);
  Generator gen(cfg, rng);
  Backbone& bb = gen.backbone();
  for (int s = 0; s < 5; ++s)
    for (const auto& blk : bb.blocks(s)) {
      blk.attn.out.weight->value.zero();
      blk.attn.out.bias->value.zero();
      blk.mlp.fc2.weight->value.zero();
      blk.mlp.fc2.bias->value.zero();
      blk.fuse.weight->value.zero();
      blk.fuse.bias->value.zero();
      if (blk.has_audio) {
        blk.audio_fc.weight->value.zero();
        blk.audio_fc.bias->value.zero();
      }
    }

  Rng drng(6);
  Tensor frame = testutil::random_tensor({1, 3, 32, 32}, drng, 0.0, 1.0);
  Tensor mel = testutil::random_tensor({1, 1, 80, 16}, drng, -11.5, 0.0);
  Var tokens = gen.encoder()(constant(frame));
  auto feats = bb.run_reference_branch(gen.encoder()(constant(frame)));
  Rng arng(7);
  Var audio = testutil::random_leaf({1, 32}, arng);
  Var core = bb.run_main_branch(tokens, feats, audio, nullptr);

  // with transparent blocks the core equals the bare resampling chain
  Var expect = tokens;
  {
    ParamList pl;
    bb.params("bb", pl);
    expect = conv2d(tokens, pl.find("bb.down1.weight"), pl.find("bb.down1.bias"), 2, 0);
    expect = conv2d(expect, pl.find("bb.down2.weight"), pl.find("bb.down2.bias"), 2, 0);
    expect = conv2d(expect, pl.find("bb.down3.weight"), pl.find("bb.down3.bias"), 2, 0);
    expect = conv_transpose2d(expect, pl.find("bb.up4.weight"), pl.find("bb.up4.bias"), 2, 0);
    expect = conv_transpose2d(expect, pl.find("bb.up5.weight"), pl.find("bb.up5.bias"), 2, 0);
  }
  REQUIRE(core->value.same_shape(expect->value));
  for (int64_t i = 0; i < core->value.numel(); ++i)
    CHECK(core->value[i] == doctest::Approx(expect->value[i]).epsilon(1e-12));
}

TEST_CASE("sampler never reuses a generated timestamp as reference") {
  RunConfig cfg = desk32(1e-4);  // 5-frame windows
  Rng srng(1);
  SyncScorer sync(cfg, srng);
  Trainer tr(cfg, &sync);
  Dataset data = small_data();
  for (int i = 0; i < 300; ++i) {
    TrainSample s = tr.draw_sample(data);
    CHECK(s.t >= 2);
    CHECK(s.t + 4 <= 20);
    CHECK((s.ref_t < s.t || s.ref_t >= s.t + 5));
    CHECK(s.ref_t >= 0);
    CHECK(s.ref_t < 25);
  }
}

TEST_CASE("training is deterministic under a fixed seed") {
  Dataset data = small_data();
  RunConfig cfg = desk32();
  std::vector<LossReport> a, b;
  for (int run = 0; run < 2; ++run) {
    Trainer tr(cfg, nullptr);
    auto& out = run == 0 ? a : b;
    for (int i = 0; i < 3; ++i) out.push_back(tr.train_step(data));
  }
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].total == b[i].total);
    CHECK(a[i].gan_d == b[i].gan_d);
    CHECK(a[i].perceptual == b[i].perceptual);
  }
  // losses move: training does something
  CHECK(a[0].total != a[2].total);
}

TEST_CASE("lambda_sync gating and the frozen sync scorer") {
  Dataset data = small_data();

  // lambda_sync = 0: no scorer needed, sync term reported as zero
  Trainer plain(desk32(0.0), nullptr);
  LossReport r = plain.train_step(data);
  CHECK(r.sync == 0.0);

  // lambda_sync > 0 without a scorer is a configuration error
  CHECK_THROWS(Trainer(desk32(1e-4), nullptr));

  // with a scorer: sync participates and its parameters stay bitwise frozen
  RunConfig cfg = desk32(1e-4);
  Rng srng(9);
  SyncScorer sync(cfg, srng);
  ParamList sp;
  sync.params("sync", sp);
  std::vector<Tensor> before;
  for (const auto& [_, v] : sp.items()) before.push_back(v->value.clone());

  Trainer tr(cfg, &sync);
  LossReport rs = tr.train_step(data);
  CHECK(rs.sync != 0.0);
  CHECK(std::isfinite(rs.sync));
  size_t k = 0;
  for (const auto& [_, v] : sp.items()) CHECK(same_bits(v->value, before[k++]));

  // report invariant
  CHECK(std::abs(rs.total - (rs.gan_g + rs.lambda_vgg * rs.perceptual +
                             rs.lambda_sync * rs.sync)) < 1e-12);
}

TEST_CASE("non-finite parameters abort with the offending term named") {
  Dataset data = small_data();
  RunConfig cfg = desk32();
  Trainer tr(cfg, nullptr);
  // poison one generator weight
  tr.gen_params().items()[0].second->value[0] = std::nan("");
  CHECK_THROWS_AS(tr.train_step(data), std::runtime_error);
}

TEST_CASE("checkpoint: byte-identical re-save and bit-identical forward") {
  namespace fs = std::filesystem;
  Dataset data = small_data();
  RunConfig cfg = desk32();
  const std::string p1 = "test_tmp_ck1.lfck", p2 = "test_tmp_ck2.lfck";

  Trainer tr(cfg, nullptr);
  tr.train_step(data);
  tr.save(p1);

  Tensor probe_frame = data.clips()[0].data.frames[5];
  Tensor probe_ref = data.clips()[0].data.frames[9];
  MelWindow probe_mel = shared_mel().window(data.clips()[0].mel_full, 5);
  Tensor before = tr.generator().infer_frame(probe_frame, probe_ref, probe_mel);

  Trainer tr2(cfg, nullptr);
  tr2.load(p1);
  tr2.save(p2);
  {
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
  }
  Tensor after = tr2.generator().infer_frame(probe_frame, probe_ref, probe_mel);
  CHECK(same_bits(before, after));

  // the loaded trainer continues identically to the original
  LossReport ra = tr.train_step(data);
  LossReport rb = tr2.train_step(data);
  CHECK(ra.total == rb.total);

  // truncation is rejected without partial effects
  {
    std::ifstream in(p1, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out("test_tmp_trunc.lfck", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  Trainer tr3(cfg, nullptr);
  CHECK_THROWS_WITH_AS(tr3.load("test_tmp_trunc.lfck"), doctest::Contains("corrupt"),
                       std::runtime_error);

  // bit corruption fails the checksum
  {
    std::fstream f(p1, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(200);
    char c;
    f.seekg(200);
    f.get(c);
    c ^= 0x40;
    f.seekp(200);
    f.put(c);
  }
  CHECK_THROWS_WITH_AS(tr3.load(p1), doctest::Contains("checksum"), std::runtime_error);

  // version tag mismatch is a distinct error
  {
    std::ifstream in(p2, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes[4] = 9;  // version field
    const uint32_t crc =
        crc32(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 4);
    std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
    std::ofstream out("test_tmp_ver.lfck", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_WITH_AS(tr3.load("test_tmp_ver.lfck"), doctest::Contains("version"),
                       std::runtime_error);

  // config mismatch is rejected
  RunConfig other = cfg;
  other.base_channels = 16;
  Trainer tr4(other, nullptr);
  CHECK_THROWS_WITH_AS(tr4.load(p2), doctest::Contains("config"), std::runtime_error);

  for (const char* p : {p1.c_str(), p2.c_str(), "test_tmp_trunc.lfck", "test_tmp_ver.lfck"})
    fs::remove(p);
}

TEST_CASE("generator checkpoint loader reproduces inference") {
  Dataset data = small_data();
  RunConfig cfg = desk32();
  Trainer tr(cfg, nullptr);
  tr.train_step(data);
  tr.save("test_tmp_gen.lfck");

  auto gen = load_generator("test_tmp_gen.lfck");
  Tensor frame = data.clips()[1].data.frames[6];
  Tensor ref = data.clips()[1].data.frames[2];
  MelWindow mw = shared_mel().window(data.clips()[1].mel_full, 6);
  Tensor a = tr.generator().infer_frame(frame, ref, mw);
  Tensor b = gen->infer_frame(frame, ref, mw);
  CHECK(same_bits(a, b));
  std::filesystem::remove("test_tmp_gen.lfck");
}

TEST_CASE("short overfit run reduces the perceptual loss") {
  CorpusSpec spec;
  spec.clips = 1;
  spec.frames = 25;
  spec.image_size = 32;
  spec.seed = 13;
  Dataset data = Dataset::synth_corpus(spec);

  RunConfig cfg = desk32();
  cfg.lr_g = 4e-4;
  cfg.lr_d = 1e-4;
  Trainer tr(cfg, nullptr);
  std::vector<TrainSample> batch = {{0, 5, 12}, {0, 9, 3}};
  double first = 0, last = 0;
  for (int i = 0; i < 90; ++i) {
    LossReport r = tr.train_step_on(data, batch);
    if (i == 0) first = r.perceptual;
    last = r.perceptual;
  }
  CHECK(last < 0.6 * first);
}
