#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support/gmlp_oracles.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/gmlp.hpp"
#include "xmodal/synthetic.hpp"

using namespace xmodal;
using namespace xmodal::gmlp;

namespace {

PairedDataset rotation_dataset(std::size_t groups, std::size_t dim, std::uint64_t seed) {
  synthetic::RotationPairsOptions o;
  o.n_groups = groups;
  o.dim = dim;
  o.seed = seed;
  const auto data = synthetic::rotation_pairs(o);
  return align_pairs(data.text, data.image, data.manifest);
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.learning_rate = 1e-3;
  t.tau = 0.1;
  t.seed = 5;
  return t;
}

}  // namespace

TEST(TrainHead, ZeroEpochsReturnsInitialization) {
  const auto ds = rotation_dataset(20, 4, 1);
  const auto gcfg = GmlpConfig::defaults(1, 4);
  const auto r = train_head(ds, gcfg, quick(0));
  const auto init = initial_heads(gcfg, quick(0));
  EXPECT_TRUE(r.heads.src == init.src);
  EXPECT_TRUE(r.heads.tgt == init.tgt);
  EXPECT_TRUE(r.epoch_losses.empty());
}

TEST(TrainHead, SeedDeterminesEverything) {
  const auto ds = rotation_dataset(40, 4, 2);
  const auto gcfg = GmlpConfig::defaults(2, 2);
  const auto a = train_head(ds, gcfg, quick(3));
  const auto b = train_head(ds, gcfg, quick(3));
  EXPECT_TRUE(a.heads.src == b.heads.src);
  EXPECT_TRUE(a.heads.tgt == b.heads.tgt);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  auto other = quick(3);
  other.seed = 6;
  EXPECT_FALSE(train_head(ds, gcfg, other).heads.src == a.heads.src);
}

TEST(TrainHead, LossDecreasesAndRetrievalImproves) {
  const auto all = rotation_dataset(400, 8, 3);
  const auto parts = split(all, 100, 3);
  const auto gcfg = GmlpConfig::defaults(1, 8);
  const auto tcfg = quick(10);
  std::vector<double> seen;
  const auto r = train_head(parts.train, gcfg, tcfg,
                            [&](std::size_t, double loss) { seen.push_back(loss); });
  ASSERT_EQ(r.epoch_losses.size(), 10u);
  EXPECT_EQ(seen, r.epoch_losses);
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());

  const std::vector<std::size_t> ks = {1, 10};
  const auto before = evaluate_heads(parts.test, initial_heads(gcfg, tcfg), gcfg,
                                     Direction::text_to_image, ks);
  const auto after = evaluate_heads(parts.test, r.heads, gcfg, Direction::text_to_image, ks);
  EXPECT_GE(after.per_k.at(1), before.per_k.at(1));
  EXPECT_GT(after.per_k.at(10), before.per_k.at(10));
}

TEST(TrainHead, SharedHeadStaysTied) {
  const auto ds = rotation_dataset(30, 4, 4);
  const auto gcfg = GmlpConfig::defaults(1, 4);
  auto tcfg = quick(2);
  tcfg.shared_head = true;
  const auto r = train_head(ds, gcfg, tcfg);
  EXPECT_TRUE(r.heads.src == r.heads.tgt);
  EXPECT_FALSE(r.heads.src == initial_heads(gcfg, tcfg).src);
}

TEST(TrainHead, DivergenceRaisesWithEpoch) {
  const auto ds = rotation_dataset(30, 4, 5);
  const auto gcfg = GmlpConfig::defaults(1, 4);
  auto tcfg = quick(5);
  tcfg.learning_rate = 1e300;
  try {
    train_head(ds, gcfg, tcfg);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_LT(e.epoch(), 5u);
  }
}

TEST(TrainHead, RejectsBadConfigs) {
  const auto ds = rotation_dataset(10, 4, 6);
  const auto gcfg = GmlpConfig::defaults(1, 4);
  auto t = quick(1);
  t.batch_size = 1;
  EXPECT_THROW(train_head(ds, gcfg, t), ArgumentError);
  t = quick(1);
  t.tau = 0.0;
  EXPECT_THROW(train_head(ds, gcfg, t), ArgumentError);
  EXPECT_THROW(train_head(ds, GmlpConfig::defaults(1, 5), quick(1)), ArgumentError);
}
