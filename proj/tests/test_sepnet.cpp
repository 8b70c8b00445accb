// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <gtest/gtest.h>

#include <set>

#include "quantsep/mixgen.hpp"
#include "quantsep/sepnet.hpp"
#include "test_util.hpp"

namespace {

using namespace quantsep;
using namespace quantsep::sepnet;

ArchConfig tiny_arch() {
  ArchConfig a;
  a.tcn_blocks = 2;
  a.blocks_per_tcn = 2;
  a.bottleneck = 8;
  a.hidden = 16;
  return a;
}

const std::vector<Example>& scenes() {
  static const std::vector<Example> data = [] {
    std::vector<mixgen::MixtureScene> s;
    for (std::uint64_t i = 0; i < 4; ++i) s.push_back(mixgen::simulate(mixgen::SceneConfig{}, 100 + i));
    return make_examples(s, FeatureConfig{});
  }();
  return data;
}

SepModel initialized(ArchConfig a, std::uint64_t seed = 1, bool zero_head = false) {
  SepModel m(a);
  m.initialize(seed, zero_head);
  return m;
}

TEST(SepNet, DeskParameterCountMatchesLayerArithmetic) {
  const ArchConfig a;
  const std::size_t F = 257, B = 64, H = 128, P = 3, blocks = 8;
  const std::size_t input = B * F * 5 + B;
  const std::size_t block = (H * B + H) + 1 + 2 * H + (H * P + H) + 1 + 2 * H + (B * H + B);
  const std::size_t head = 1 + 2 * F * B + 2 * F;
  const SepModel m(a);
  EXPECT_EQ(m.param_count(), input + blocks * block + head);
  EXPECT_EQ(m.param_count(), 256531u);
  EXPECT_EQ(SepModel(a).param_count(), m.param_count());
}

TEST(SepNet, ZeroHeadGivesZeroMask) {
  const auto m = initialized(tiny_arch(), 3, true);
  const auto r = forward(m, Tensor::zeros({m.arch().input_channels(), 20}));
  for (float v : r.mask_real.data()) EXPECT_EQ(v, 0.0f);
  for (float v : r.mask_imag.data()) EXPECT_EQ(v, 0.0f);
}

TEST(SepNet, PreservesFrameCount) {
  const auto m = initialized(tiny_arch(), 4);
  SceneFeatures f;
  f.bins = 257;
  f.frames = 100;
  f.lps = qs_test::random_floats(257 * 100, 1);
  f.ipds = {qs_test::random_floats(257 * 100, 2), qs_test::random_floats(257 * 100, 3),
            qs_test::random_floats(257 * 100, 4)};
  f.af = qs_test::random_floats(257 * 100, 5);
  const auto mask = forward(m, f);
  EXPECT_EQ(mask.frames, 100u);
  EXPECT_EQ(mask.bins, 257u);
  EXPECT_TRUE(all_finite(mask.real) && all_finite(mask.imag));
  f.ipds.pop_back();
  EXPECT_THROW(forward(m, f), ShapeError);
  EXPECT_THROW(forward(m, Tensor::zeros({10, 100})), ShapeError);
}

TEST(SepNet, ForwardIsDeterministic) {
  const auto m = initialized(tiny_arch(), 5);
  const auto a = forward(m, scenes()[0].input), b = forward(m, scenes()[0].input);
  EXPECT_EQ(a.head.values(), b.head.values());
}

TEST(SepNet, CensusPartitionsEveryParameter) {
  const SepModel m(ArchConfig{});
  for (auto g : {Granularity::Sublayer, Granularity::Block})
    for (bool io : {false, true}) {
      const auto c = census(m, {.granularity = g, .quantize_io = io});
      std::set<std::size_t> seen;
      std::size_t total = 0;
      for (const auto& e : c) {
        std::size_t count = 0;
        for (std::size_t i : e.params) {
          EXPECT_TRUE(seen.insert(i).second) << "parameter " << i << " in two clusters";
          count += m.params()[i].numel();
        }
        EXPECT_EQ(count, e.count) << e.id;
        total += e.count;
      }
      EXPECT_EQ(seen.size(), m.params().size());
      EXPECT_EQ(total, m.param_count());
      const auto q = quantized_clusters(c);
      const std::size_t expected = g == Granularity::Block ? 8 : 24;
      EXPECT_EQ(q.size(), expected + (io ? 2 : 0));
    }
}

TEST(SepNet, SublayerCensusListsThreeWeightClustersPerConvBlock) {
  const auto q = quantized_clusters(census(SepModel(ArchConfig{})));
  ASSERT_EQ(q.size(), 24u);
  EXPECT_EQ(q[0].id, "tcn1.block1.conv_in");
  EXPECT_EQ(q[0].count, 128u * 64u);
  EXPECT_EQ(q[1].id, "tcn1.block1.dconv");
  EXPECT_EQ(q[1].count, 128u * 3u);
  EXPECT_EQ(q[2].id, "tcn1.block1.conv_out");
  EXPECT_EQ(q[23].id, "tcn2.block4.conv_out");
  const auto blocks = quantized_clusters(census(SepModel(ArchConfig{}), {.granularity = Granularity::Block}));
  EXPECT_EQ(blocks[0].id, "tcn1.block1");
  EXPECT_EQ(blocks[0].count, q[0].count + q[1].count + q[2].count);
}

TEST(SepNet, OneStepMovesEveryTcnBlock) {
  auto m = initialized(tiny_arch(), 7);
  const auto before = m.flat_values();
  train(m, {scenes()[0]}, {.epochs = 1, .batch_size = 1, .adam = {.lr = 1e-3}}, dsp::Stft{});
  const auto after = m.flat_values();
  std::map<std::size_t, bool> moved;
  std::size_t off = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& info = m.info()[i];
    for (std::size_t j = 0; j < m.params()[i].numel(); ++j)
      if (info.tcn > 0 && before[off + j] != after[off + j]) moved[info.tcn] = true;
    off += m.params()[i].numel();
  }
  EXPECT_TRUE(moved[1]);
  EXPECT_TRUE(moved[2]);
}

TEST(SepNet, ZeroLearningRateLeavesParametersUntouched) {
  auto m = initialized(tiny_arch(), 8);
  const auto before = m.flat_values();
  train(m, scenes(), {.epochs = 1, .batch_size = 2, .adam = {.lr = 0.0}}, dsp::Stft{});
  EXPECT_EQ(m.flat_values(), before);
}

TEST(SepNet, FixedSeedGivesIdenticalLossCurves) {
  auto run = [](std::uint64_t order_seed) {
    auto m = initialized(tiny_arch(), 9);
    sepnet::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 1;
    tc.seed = order_seed;
    return train(m, scenes(), tc, dsp::Stft{}).step_loss;
  };
  const auto a = run(1), b = run(1), c = run(2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SepNet, TrainingLossDecreases) {
  auto m = initialized(tiny_arch(), 10);
  const auto r = train(m, scenes(), {.epochs = 6, .batch_size = 2, .adam = {.lr = 3e-3}}, dsp::Stft{});
  ASSERT_EQ(r.epoch_loss.size(), 6u);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(SepNet, OverfitsOneSceneToTwentyDecibels) {
  auto m = initialized(ArchConfig{}, 11);
  const auto& ex = scenes()[1];
  Adam opt(m.params(), {.lr = 1e-3});
  const dsp::Stft stft;
  double best = -INFINITY;
  std::size_t step = 0;
  for (; step < 500 && best < 20.0; ++step) {
    m.zero_grad();
    auto out = scene_loss(m, ex, stft);
    best = std::max(best, -static_cast<double>(out.loss.item()));
    out.loss.backward();
    opt.step();
  }
  EXPECT_GE(best, 20.0) << "after " << step << " steps";
}

TEST(SepNet, CheckpointRoundTripIsExactAndHashChecked) {
  const auto dir = qs_test::scratch_dir("checkpoint");
  const auto m = initialized(tiny_arch(), 12);
  const std::string stem = (dir / "model").string();
  const auto hash = save_checkpoint(m, stem);
  EXPECT_EQ(hash, sha256_hex(read_file(stem + ".bin")));
  const auto back = load_checkpoint(stem);
  EXPECT_EQ(back.flat_values(), m.flat_values());
  EXPECT_EQ(back.arch().to_json(), m.arch().to_json());
  auto blob = read_file(stem + ".bin");
  blob[10] ^= 1;
  write_file(stem + ".bin", blob);
  EXPECT_THROW(load_checkpoint(stem), ConfigError);
}

}  // namespace
