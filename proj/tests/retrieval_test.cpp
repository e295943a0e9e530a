#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmodal/errors.hpp"
#include "xmodal/random.hpp"
#include "xmodal/retrieval.hpp"
#include "xmodal/synthetic.hpp"

using namespace xmodal;
using synthetic::gaussian;

namespace {

std::vector<std::string> labels(std::size_t n, const std::string& prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

RetrievalIndex index_of(const Eigen::MatrixXd& g) {
  const auto n = static_cast<std::size_t>(g.rows());
  return build_index(g, labels(n, "r"), labels(n, "g"));
}

// Brute force: cosine of every row computed independently, then a full sort.
std::vector<std::size_t> brute_force_ranking(const Eigen::VectorXd& q, const Eigen::MatrixXd& g) {
  std::vector<double> scores;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    double dot = 0.0;
    double nq = 0.0;
    double ng = 0.0;
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      dot += q(j) * g(i, j);
      nq += q(j) * q(j);
      ng += g(i, j) * g(i, j);
    }
    scores.push_back(dot / std::sqrt(nq * ng));
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

TEST(BuildIndex, NormalizesCopies) {
  Eigen::MatrixXd g(3, 2);
  g << 3, 4, 1, 0, 0, 1;
  const auto index = index_of(g);
  EXPECT_EQ(index.size(), 3u);
  EXPECT_NEAR(index.gallery()(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(index.gallery()(0, 1), 0.8, 1e-15);
  EXPECT_EQ(g(0, 0), 3.0);
}

TEST(BuildIndex, ZeroRowNamesTheRow) {
  Eigen::MatrixXd g(2, 2);
  g << 1, 0, 0, 0;
  try {
    build_index(g, {"keep", "empty"}, {"a", "b"});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("empty"), std::string::npos);
  }
  EXPECT_THROW(build_index(g, {"a"}, {"a", "b"}), ArgumentError);
  EXPECT_NO_THROW(build_index(g, {"a", "b"}, {"a", "b"}, Similarity::inner_product));
}

TEST(TopK, ExactSelfMatch) {
  Rng rng(1);
  const Eigen::MatrixXd g = gaussian(6, 4, rng);
  const auto index = index_of(g);
  const Eigen::VectorXd q = g.row(2).transpose();
  const auto hits = topk(as_span(q), index, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].row, 2u);
  EXPECT_EQ(hits[0].id, "r2");
  EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
}

TEST(TopK, TiesGoToLowerRow) {
  Eigen::MatrixXd g(3, 2);
  g << 0, 1, 1, 0, 1, 0;
  const auto index = index_of(g);
  const Eigen::VectorXd q = Eigen::Vector2d(1, 0);
  const auto hits = topk(as_span(q), index, 3);
  EXPECT_EQ(hits[0].row, 1u);
  EXPECT_EQ(hits[1].row, 2u);
  EXPECT_EQ(hits[0].score, hits[1].score);
  EXPECT_EQ(hits[2].row, 0u);
}

TEST(TopK, MatchesBruteForce) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 1 + rng.index(200);
    const auto d = 1 + rng.index(16);
    const Eigen::MatrixXd g = gaussian(n, d, rng);
    const Eigen::VectorXd q = gaussian(1, d, rng).row(0).transpose();
    const auto index = index_of(g);
    const auto k = 1 + rng.index(n);
    const auto hits = topk(as_span(q), index, k);
    const auto ref = brute_force_ranking(q, g);
    ASSERT_EQ(hits.size(), k);
    const auto ref_score = [&](std::size_t row) {
      return g.row(static_cast<Eigen::Index>(row)).dot(q) / (g.row(static_cast<Eigen::Index>(row)).norm() * q.norm());
    };
    for (std::size_t i = 0; i < k; ++i) {
      // Rows whose scores agree to rounding may swap; everything else must match.
      EXPECT_NEAR(hits[i].score, ref_score(ref[i]), 1e-12) << "trial " << trial << " rank " << i;
      if (hits[i].row != ref[i]) {
        EXPECT_NEAR(ref_score(hits[i].row), ref_score(ref[i]), 1e-12) << "trial " << trial;
      }
    }
    for (std::size_t i = 1; i < k; ++i) ASSERT_GE(hits[i - 1].score, hits[i].score);
  }
}

TEST(TopK, Random20RowGalleryTop5) {
  Rng rng(20);
  const Eigen::MatrixXd g = gaussian(20, 8, rng);
  const Eigen::VectorXd q = gaussian(1, 8, rng).row(0).transpose();
  const auto hits = topk(as_span(q), index_of(g), 5);
  const auto ref = brute_force_ranking(q, g);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(hits[i].row, ref[i]);
}

TEST(TopK, KOutOfRange) {
  const auto index = index_of(Eigen::MatrixXd::Identity(3, 3));
  const Eigen::VectorXd q = Eigen::Vector3d(1, 0, 0);
  EXPECT_THROW(topk(as_span(q), index, 0), ArgumentError);
  EXPECT_THROW(topk(as_span(q), index, 4), ArgumentError);
  const Eigen::VectorXd wrong = Eigen::Vector2d(1, 0);
  EXPECT_THROW(topk(as_span(wrong), index, 1), ArgumentError);
}

TEST(TopK, ScaleInvariant) {
  Rng rng(3);
  const Eigen::MatrixXd g = gaussian(50, 6, rng);
  const auto index = index_of(g);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = gaussian(1, 6, rng).row(0).transpose();
    const Eigen::VectorXd scaled = q * rng.uniform(0.01, 100.0);
    const auto a = topk(as_span(q), index, 50);
    const auto b = topk(as_span(scaled), index, 50);
    for (std::size_t i = 0; i < 50; ++i) ASSERT_EQ(a[i].row, b[i].row);
  }
}

TEST(TopK, OrthogonalTransformPreservesRanking) {
  Rng rng(4);
  const Eigen::MatrixXd g = gaussian(40, 5, rng);
  const Eigen::MatrixXd r = synthetic::random_orthogonal(5, rng);
  const auto plain = index_of(g);
  const auto rotated = index_of(g * r);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = gaussian(1, 5, rng).row(0).transpose();
    const Eigen::VectorXd qr = (q.transpose() * r).transpose();
    const auto a = topk(as_span(q), plain, 40);
    const auto b = topk(as_span(qr), rotated, 40);
    for (std::size_t i = 0; i < 40; ++i) ASSERT_EQ(a[i].row, b[i].row);
  }
}

TEST(RecallAtK, PerfectAlignment) {
  Rng rng(5);
  const Eigen::MatrixXd g = gaussian(30, 8, rng);
  const auto index = index_of(g);
  const auto groups = labels(30, "g");
  const auto report = recall_at_k(g, groups, index, std::vector<std::size_t>{1, 5, 10});
  for (const auto& [k, r] : report.per_k) EXPECT_EQ(r, 1.0) << "k=" << k;
  EXPECT_EQ(report.n_queries, 30u);
}

TEST(RecallAtK, AbsentGroupIsAMiss) {
  const auto index = index_of(Eigen::MatrixXd::Identity(3, 3));
  const Eigen::MatrixXd q = Eigen::RowVector3d(1, 0, 0);
  const std::vector<std::string> groups = {"nowhere"};
  const auto report = recall_at_k(q, groups, index, std::vector<std::size_t>{1, 3});
  EXPECT_EQ(report.per_k.at(1), 0.0);
  EXPECT_EQ(report.per_k.at(3), 0.0);
}

TEST(RecallAtK, AnyGroupMemberCounts) {
  // Gallery of captions: rows 0..2 belong to group A, 3..4 to group B.
  Eigen::MatrixXd g(5, 2);
  g << 1, 0.1, 1, 0.2, 0.9, 1, -1, 0.05, 0, -1;
  const auto index = build_index(g, labels(5, "c"), {"A", "A", "A", "B", "B"});
  Eigen::MatrixXd q(2, 2);
  q << 0, 1, 1, 0;
  const std::vector<std::string> qg = {"B", "A"};
  const auto report = recall_at_k(q, qg, index, std::vector<std::size_t>{1, 3, 5});
  // Query B = (0,1): ranking rows 2,1,0,3,4 -> first B at rank 3 (0-based).
  EXPECT_EQ(report.per_k.at(1), 0.5);
  EXPECT_EQ(report.per_k.at(3), 0.5);
  EXPECT_EQ(report.per_k.at(5), 1.0);
}

TEST(RecallAtK, AgreesWithTopkMembership) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 60;
    const Eigen::MatrixXd g = gaussian(n, 4, rng);
    std::vector<std::string> gallery_groups;
    for (std::size_t i = 0; i < n; ++i) gallery_groups.push_back("g" + std::to_string(i % 20));
    const auto index = build_index(g, labels(n, "r"), gallery_groups);
    const Eigen::MatrixXd q = gaussian(40, 4, rng);
    std::vector<std::string> qg;
    for (int i = 0; i < 40; ++i) qg.push_back("g" + std::to_string(rng.index(25)));
    const std::vector<std::size_t> ks = {1, 2, 5, 13, 60};
    const auto report = recall_at_k(q, qg, index, ks);
    for (auto k : ks) {
      std::size_t hits = 0;
      for (Eigen::Index i = 0; i < q.rows(); ++i) {
        const Eigen::VectorXd qi = q.row(i).transpose();
        for (const auto& h : topk(as_span(qi), index, k)) {
          if (gallery_groups[h.row] == qg[static_cast<std::size_t>(i)]) {
            ++hits;
            break;
          }
        }
      }
      EXPECT_DOUBLE_EQ(report.per_k.at(k), static_cast<double>(hits) / 40.0);
    }
    double prev = 0.0;
    for (const auto& [k, r] : report.per_k) {
      EXPECT_GE(r, prev);
      EXPECT_LE(r, 1.0);
      prev = r;
    }
  }
}

TEST(RecallAtK, RandomRankingExpectation) {
  // 1,000 single-member groups, 5,000 unrelated queries: recall@k ~ k/1000.
  Rng rng(7);
  const std::size_t n = 1000;
  const std::size_t d = 16;
  const Eigen::MatrixXd g = gaussian(n, d, rng);
  const auto index = index_of(g);
  const Eigen::MatrixXd q = gaussian(5000, d, rng);
  std::vector<std::string> qg;
  for (int i = 0; i < 5000; ++i) qg.push_back("g" + std::to_string(rng.index(n)));
  const std::vector<std::size_t> ks = {1, 5, 10, 20, 100};
  const auto report = recall_at_k(q, qg, index, ks);
  for (auto k : ks) {
    const double p = static_cast<double>(k) / n;
    const double se = std::sqrt(p * (1 - p) / 5000.0);
    EXPECT_NEAR(report.per_k.at(k), p, 3 * se) << "k=" << k;
  }
}

TEST(RecallAtK, ArgumentErrors) {
  const auto index = index_of(Eigen::MatrixXd::Identity(3, 3));
  const std::vector<std::string> none;
  EXPECT_THROW(recall_at_k(Eigen::MatrixXd(0, 3), none, index, kDefaultKs), ArgumentError);
  const Eigen::MatrixXd q = Eigen::RowVector3d(1, 0, 0);
  const std::vector<std::string> one = {"g0"};
  EXPECT_THROW(recall_at_k(q, one, index, std::vector<std::size_t>{4}), ArgumentError);
  EXPECT_THROW(recall_at_k(q, none, index, std::vector<std::size_t>{1}), ArgumentError);
}

TEST(RecallReport, JsonShape) {
  RecallReport r;
  r.direction = Direction::image_to_text;
  r.n_queries = 4;
  r.per_k = {{1, 0.25}, {10, 0.75}};
  EXPECT_EQ(r.to_json().dump(),
            R"({"direction":"image_to_text","n_queries":4,"recall":{"1":0.25,"10":0.75}})");
}

TEST(BestOf, PerCellMaximum) {
  RecallReport a;
  a.n_queries = 10;
  a.per_k = {{1, 0.2}, {5, 0.9}};
  RecallReport b = a;
  b.per_k = {{1, 0.4}, {5, 0.5}};
  const std::vector<RecallReport> both = {a, b};
  const auto best = best_of(both);
  EXPECT_EQ(best.per_k.at(1), 0.4);
  EXPECT_EQ(best.per_k.at(5), 0.9);
  b.direction = Direction::image_to_text;
  const std::vector<RecallReport> mixed = {a, b};
  EXPECT_THROW(best_of(mixed), ArgumentError);
}

TEST(EvaluateDirection, ProcrustesOnAlignedDataIsPerfect) {
  synthetic::RotationPairsOptions o;
  o.n_groups = 80;
  o.dim = 8;
  o.noise = 0.0;
  auto pairs = synthetic::rotation_pairs(o);
  const auto ds = align_pairs(pairs.text, pairs.image, pairs.manifest);
  const auto fwd = fit_procrustes(ds.src.cast<double>(), ds.tgt.cast<double>());
  const auto r = evaluate_direction(ds, fwd, Direction::text_to_image, std::vector<std::size_t>{1, 5});
  EXPECT_EQ(r.per_k.at(1), 1.0);
  const auto back = fit_procrustes(ds.tgt.cast<double>(), ds.src.cast<double>());
  EXPECT_EQ(evaluate_direction(ds, back, Direction::image_to_text, std::vector<std::size_t>{1})
                .per_k.at(1),
            1.0);
}

TEST(EvaluateDirection, MultiCaptionGalleries) {
  synthetic::RotationPairsOptions o;
  o.n_groups = 30;
  o.captions_per_group = 5;
  o.dim = 6;
  o.noise = 0.01;
  o.caption_spread = 0.05;
  auto pairs = synthetic::rotation_pairs(o);
  const auto ds = align_pairs(pairs.text, pairs.image, pairs.manifest);

  const auto t2i = direction_view(ds, Direction::text_to_image);
  EXPECT_EQ(t2i.queries.rows(), 150);
  EXPECT_EQ(t2i.gallery.rows(), 30);
  const auto i2t = direction_view(ds, Direction::image_to_text);
  EXPECT_EQ(i2t.queries.rows(), 30);
  EXPECT_EQ(i2t.gallery.rows(), 150);

  const auto back = fit_procrustes(ds.tgt.cast<double>(), ds.src.cast<double>());
  const auto r = evaluate_direction(ds, back, Direction::image_to_text, std::vector<std::size_t>{1, 5});
  EXPECT_EQ(r.n_queries, 30u);
  EXPECT_EQ(r.per_k.at(5), 1.0);
}

TEST(EvaluateDirection, IdentityMapOnUnrelatedDataIsNearChance) {
  Rng rng(9);
  const std::size_t n = 400;
  PairedDataset ds;
  ds.src = gaussian(n, 8, rng).cast<float>();
  ds.tgt = gaussian(n, 8, rng).cast<float>();
  ds.src_ids = labels(n, "t");
  ds.tgt_ids = labels(n, "i");
  ds.groups = labels(n, "g");
  const LinearMap id(Eigen::MatrixXd::Identity(8, 8), MapMethod::procrustes);
  const auto r = evaluate_direction(ds, id, Direction::text_to_image, std::vector<std::size_t>{10, 40});
  for (auto k : {10u, 40u}) {
    const double p = static_cast<double>(k) / n;
    EXPECT_NEAR(r.per_k.at(k), p, 3 * std::sqrt(p * (1 - p) / n));
  }
}

TEST(EvaluateDirection, DimensionMismatch) {
  PairedDataset ds;
  ds.src = RowMatrixF::Ones(2, 3);
  ds.tgt = RowMatrixF::Ones(2, 2);
  ds.src_ids = {"a", "b"};
  ds.tgt_ids = {"x", "y"};
  ds.groups = {"g1", "g2"};
  const LinearMap wrong(Eigen::MatrixXd::Ones(3, 3), MapMethod::least_squares);
  EXPECT_THROW(evaluate_direction(ds, wrong, Direction::text_to_image, std::vector<std::size_t>{1}),
               ArgumentError);
}
