#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ctr/checkpoint.hpp"
#include "ctr/errors.hpp"
#include "ctr/gradcheck.hpp"

namespace {

struct Fixture {
  ctr::ModelConfig cfg = ctr::tiny_config();
  ctr::ModelParams params = ctr::gradcheck_params(cfg, 0.5, false);
};

std::string saved(const Fixture& f) {
  std::stringstream out;
  ctr::save_checkpoint(out, f.cfg, f.params);
  return out.str();
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  Fixture f;
  f.cfg.ln_eps = 3e-7;
  f.cfg.head = ctr::FirstOrderHead::LR;
  f.cfg.dnn_fusion = false;
  std::stringstream buf(saved(f));
  const auto ck = ctr::load_checkpoint(buf);
  EXPECT_EQ(ck.config, f.cfg);
  const auto a = f.params.all();
  const auto b = ck.params.all();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }
  EXPECT_TRUE(ck.params.fuse_dnn.frozen);

  const auto batch = ctr::tiny_batch(f.cfg, 8, 3);
  EXPECT_EQ(ctr::predict(batch, ck.params, ck.config), ctr::predict(batch, f.params, f.cfg));
}

TEST(Checkpoint, StartsWithMagic) {
  Fixture f;
  EXPECT_EQ(saved(f).substr(0, 8), "CTRCKPT1");
}

TEST(Checkpoint, BadMagicRejected) {
  Fixture f;
  std::string bytes = saved(f);
  bytes[7] = '2';
  std::stringstream buf(bytes);
  EXPECT_THROW(ctr::load_checkpoint(buf), ctr::CheckpointError);
}

TEST(Checkpoint, TruncationRejectedAtEveryCut) {
  Fixture f;
  const std::string bytes = saved(f);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t cut = rng() % (bytes.size() - 1);
    std::stringstream buf(bytes.substr(0, cut));
    EXPECT_THROW(ctr::load_checkpoint(buf), ctr::CheckpointError) << "cut at " << cut;
  }
}

TEST(Checkpoint, MissingFileRejected) {
  EXPECT_THROW(ctr::load_checkpoint(std::string("/nonexistent/dir/model.ckpt")), ctr::CheckpointError);
}
