#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

namespace {

using trn::FusionVariant;

TEST(Checkpoint, RoundTripsParamsConfigAndAdamState) {
  std::mt19937_64 rng(90);
  auto cfg = trn::testing::tiny_config(FusionVariant::fused_two_stream, 5, 3, 4);
  cfg.chunk_size = 16;
  cfg.fps = 29.97;
  trn::Checkpoint ckpt{cfg, trn::TrainConfig{}, trn::testing::random_params(rng, cfg), trn::AdamState::zeros(cfg)};
  ckpt.adam->step = 12;
  ckpt.adam->first_moment = trn::testing::random_params(rng, cfg);
  trn::testing::ScratchDir dir("ckpt");
  trn::save_checkpoint(dir / "m.ckpt", ckpt);
  const auto back = trn::load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.params.flatten(), ckpt.params.flatten());
  EXPECT_EQ(back.config.fusion, FusionVariant::fused_two_stream);
  EXPECT_EQ(back.config.hidden_size, 5u);
  EXPECT_EQ(back.config.decoder_steps, 3u);
  EXPECT_EQ(back.config.fps, 29.97);
  ASSERT_TRUE(back.train_config);
  EXPECT_EQ(back.train_config->learning_rate, 5e-4);
  EXPECT_EQ(back.train_config->batch_size, 2u);
  ASSERT_TRUE(back.adam);
  EXPECT_EQ(back.adam->step, 12u);
  EXPECT_EQ(back.adam->first_moment.flatten(), ckpt.adam->first_moment.flatten());
}

TEST(Checkpoint, WithoutAdamState) {
  auto cfg = trn::testing::tiny_config(FusionVariant::one_stream);
  const trn::Checkpoint ckpt{cfg, std::nullopt, trn::TrnParams<double>::init(cfg, 3), std::nullopt};
  const auto back = trn::parse_checkpoint(trn::serialize_checkpoint(ckpt));
  EXPECT_FALSE(back.adam);
  EXPECT_FALSE(back.train_config);
  EXPECT_EQ(back.params.flatten(), ckpt.params.flatten());
}

TEST(Checkpoint, CorruptionIsRejected) {
  auto cfg = trn::testing::tiny_config(FusionVariant::two_stream);
  const auto good = trn::serialize_checkpoint({cfg, std::nullopt, trn::TrnParams<double>::init(cfg, 1), std::nullopt});
  auto bad_magic = good;
  bad_magic[0] = std::byte{'X'};
  EXPECT_THROW(trn::parse_checkpoint(bad_magic), trn::CheckpointError);
  auto bad_version = good;
  bad_version[4] = std::byte{9};
  EXPECT_THROW(trn::parse_checkpoint(bad_version), trn::CheckpointError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, good.size() / 2, good.size() - 1}) {
    EXPECT_THROW(trn::parse_checkpoint(std::span<const std::byte>(good).first(cut)), trn::CheckpointError) << cut;
  }
  auto trailing = good;
  trailing.push_back(std::byte{0});
  EXPECT_THROW(trn::parse_checkpoint(trailing), trn::CheckpointError);
}

}  // namespace
