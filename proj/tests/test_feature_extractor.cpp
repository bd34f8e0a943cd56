// SPDX-License-Identifier: Apache-2.0
#include "simeq/audit.hpp"
#include "simeq/feature_extractor.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace simeq {
namespace {

using testing::random_cloud;

TransformDistribution wide_sim3(std::uint64_t seed) {
  return TransformDistribution::sim3(seed, 0.1, 10.0, 10.0 / std::sqrt(3.0));
}

Tensor rows(std::initializer_list<double> values, std::size_t out, std::size_t in) {
  return Tensor({out, in, 1}, std::vector<double>(values));
}

// All-pairs oracle: other points sorted by (squared distance, index).
std::vector<std::size_t> brute_knn(const PointCloud& pc, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < pc.size(); ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (pc.points[a] - pc.points[i]).squaredNorm() < (pc.points[b] - pc.points[i]).squaredNorm();
    });
    out.insert(out.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return out;
}

TEST(Knn, CollinearExample) {
  PointCloud pc{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)}, ""};
  const KnnGraph g = build_knn(pc, 1);
  EXPECT_EQ(g.indices, (std::vector<std::size_t>{1, 0, 1}));
  EXPECT_FALSE(g.self_padded);
}

TEST(Knn, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PointCloud pc = random_cloud(64, seed);
    EXPECT_EQ(build_knn(pc, 8).indices, brute_knn(pc, 8));
  }
}

TEST(Knn, DistanceTiesGoToLowerIndex) {
  PointCloud pc{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0), Vec3(5, 5, 5)}, ""};
  const KnnGraph g = build_knn(pc, 3);
  EXPECT_EQ(std::vector<std::size_t>(g.neighbors(0).begin(), g.neighbors(0).end()), (std::vector<std::size_t>{1, 2, 3}));
}

TEST(Knn, IndicesInvariantUnderSim3) {
  const auto dist = wide_sim3(3);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const PointCloud pc = random_cloud(50, 100 + i);
    const KnnGraph g = build_knn(pc, 16);
    for (std::uint64_t t = 0; t < 5; ++t) {
      EXPECT_EQ(build_knn(apply_transform(sample_transform(dist, i * 5 + t), pc), 16).indices, g.indices);
    }
  }
}

TEST(Knn, SelfPaddingOnlyWhenAllowed) {
  const PointCloud pc = random_cloud(3, 4);
  EXPECT_THROW(build_knn(pc, 3), std::invalid_argument);
  const KnnGraph g = build_knn(pc, 4, true);
  EXPECT_TRUE(g.self_padded);
  for (std::size_t i = 0; i < 3; ++i) {
    auto n = g.neighbors(i);
    EXPECT_EQ(std::count(n.begin(), n.end(), i), 2);
    for (std::size_t j : n) EXPECT_LT(j, 3u);
  }
  EXPECT_THROW(build_knn(pc, 0), std::invalid_argument);
  EXPECT_THROW(build_knn(random_cloud(1, 1), 1, true), std::invalid_argument);
}

TEST(NearestNeighbors, KdTreeAgreesWithBruteForceBitwise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PointCloud targets = random_cloud(700, seed);
    // Exact duplicates and a lattice force distance ties.
    for (int i = 0; i < 50; ++i) targets.points.push_back(targets.points[static_cast<std::size_t>(i)]);
    for (int x = -2; x <= 2; ++x)
      for (int y = -2; y <= 2; ++y) targets.points.emplace_back(x, y, 0);
    PointCloud queries = random_cloud(300, seed + 50);
    queries.points.emplace_back(0.5, 0.5, 0);
    queries.points.emplace_back(0, 0, 0);
    const auto a = nearest_brute_force(queries.points, targets.points);
    const auto b = nearest_kdtree(queries.points, targets.points);
    const auto c = nearest_neighbors(queries.points, targets.points);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].index, b[i].index);
      EXPECT_EQ(a[i].distance_sq, b[i].distance_sq);
      EXPECT_EQ(a[i].index, c[i].index);
    }
  }
}

TEST(NearestNeighbors, TieGoesToLowestIndex) {
  PointCloud targets{{Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(0, 1, 0)}, ""};
  const Vec3 q(0, 0, 0);
  EXPECT_EQ(nearest_brute_force(std::span<const Vec3>(&q, 1), targets.points)[0].index, 0u);
  EXPECT_EQ(nearest_kdtree(std::span<const Vec3>(&q, 1), targets.points)[0].index, 0u);
}

TEST(FarthestPointSample, HandExampleAndContract) {
  PointCloud pc{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(10, 0, 0), Vec3(4, 0, 0), Vec3(6, 0, 0)}, ""};
  // Start at x=0, then x=10. Remaining distances to {0, 10}: x=1 -> 1, x=4 -> 4, x=6 -> 4; the tie goes to index 3.
  EXPECT_EQ(farthest_point_sample(pc.points, 3), (std::vector<std::size_t>{0, 2, 3}));
  EXPECT_EQ(farthest_point_sample(pc.points, 2, 2), (std::vector<std::size_t>{2, 0}));
  EXPECT_THROW(farthest_point_sample(pc.points, 6), std::invalid_argument);
  EXPECT_THROW(farthest_point_sample(pc.points, 1, 5), std::invalid_argument);
}

TEST(FarthestPointSample, DistinctDeterministicAndSim3Invariant) {
  const PointCloud pc = random_cloud(200, 7);
  const auto a = farthest_point_sample(pc.points, 32);
  EXPECT_EQ(a, farthest_point_sample(pc.points, 32));
  std::vector<std::size_t> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(std::adjacent_find(sorted.begin(), sorted.end()), sorted.end());
  EXPECT_EQ(farthest_point_sample(apply_transform(sample_transform(wide_sim3(7), 0), pc).points, 32), a);
}

TEST(KnnGroups, CenterFirstThenNearest) {
  const PointCloud pc = random_cloud(40, 8);
  const std::vector<std::size_t> centers{3, 17};
  const auto groups = knn_groups(pc.points, centers, 5);
  ASSERT_EQ(groups.size(), 10u);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(groups[c * 5], centers[c]);
    std::vector<std::size_t> expected{centers[c]};
    const auto others = brute_knn(pc, 4);
    for (std::size_t k = 0; k < 4; ++k) expected.push_back(others[centers[c] * 4 + k]);
    EXPECT_EQ(std::vector<std::size_t>(groups.begin() + static_cast<std::ptrdiff_t>(c * 5),
                                       groups.begin() + static_cast<std::ptrdiff_t>(c * 5 + 5)),
              expected);
  }
}

// D = 1, k = 1, explicit maps: out_i = relu/leaky(F, B, O) of the edge [V_j + Vbar - V_i ; V_i].
TEST(DgcnnLayer, HandTranscribedTwoTokenExample) {
  const double alpha = 0.2;
  const Tensor wf = rows({0.8, 0.2}, 1, 2), wb = rows({-0.5, 1.5}, 1, 2), wo = rows({0.3, 0.7}, 1, 2);
  VnNonlinear edge(VnLinear::from_weights("f", wf), VnLinear::from_weights("b", wb), VnLinear::from_weights("o", wo),
                   alpha);
  VnMax pool(VnLinear::from_weights("pb", rows({1}, 1, 1)), VnLinear::from_weights("po", rows({1}, 1, 1)));
  DgcnnLayer layer(edge, pool);
  VectorFeatureSet v(2, 1);
  v.set_row(0, 0, Vec3(1, 2, 0));
  v.set_row(1, 0, Vec3(-1, 0, 3));
  const KnnGraph graph = build_knn(PointCloud{{Vec3(0, 0, 0), Vec3(1, 0, 0)}, ""}, 1);
  const VectorFeatureSet out = layer(v, graph);
  const Vec3 mean = 0.5 * (v.row(0, 0) + v.row(1, 0));
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t j = 1 - i;
    const Vec3 e0 = v.row(j, 0) + mean - v.row(i, 0), e1 = v.row(i, 0);
    const Vec3 f = wf[0] * e0 + wf[1] * e1, b = wb[0] * e0 + wb[1] * e1, o = wo[0] * e0 + wo[1] * e1;
    const Vec3 fo = f - o, bo = b - o;
    const double inner = fo.dot(bo);
    const Vec3 relu = inner >= 0 ? f : Vec3(f - inner / bo.squaredNorm() * bo);
    const Vec3 expected = alpha * f + (1 - alpha) * relu;
    EXPECT_LT((out.row(i, 0) - expected).norm(), 1e-14) << i;
  }
}

TEST(DgcnnLayer, IdenticalTokensIgnoreTheGraph) {
  Rng rng(9);
  DgcnnLayer layer("dg", 3, 5, rng);
  VectorFeatureSet one = VectorFeatureSet::random(1, 3, rng);
  Tensor t({6, 3, 3});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 9; ++k) t[i * 9 + k] = one.tensor()[k];
  const VectorFeatureSet v(t);
  const KnnGraph a = build_knn(random_cloud(6, 1), 2);
  const KnnGraph b = build_knn(random_cloud(6, 2), 2);
  ASSERT_NE(a.indices, b.indices);
  EXPECT_EQ(layer(v, a).tensor(), layer(v, b).tensor());
}

TEST(DgcnnLayer, EquivariantWithGraphFixed) {
  Rng rng(10);
  DgcnnLayer layer("dg", 4, 6, rng);
  const auto dist = wide_sim3(10);
  for (std::uint64_t i = 0; i < 100; ++i) {
    const PointCloud pc = random_cloud(12, 200 + i);
    const KnnGraph graph = build_knn(pc, 4);
    VectorFeatureSet v = VectorFeatureSet::random(12, 4, rng);
    const Sim3Transform g = sample_transform(dist, i);
    EXPECT_LT(relative_error(layer(v.transformed(g), graph).tensor(), layer(v, graph).transformed(g).tensor()), 1e-8);
  }
}

TEST(DgcnnLayer, RejectsMismatchedGraph) {
  Rng rng(11);
  DgcnnLayer layer("dg", 1, 2, rng);
  VectorFeatureSet v = VectorFeatureSet::random(5, 1, rng);
  EXPECT_THROW(layer(v, build_knn(random_cloud(6, 1), 2)), std::invalid_argument);
}

ExtractorOptions small_options() {
  ExtractorOptions o;
  o.patches = 4;
  o.knn_k = 6;
  o.patch_size = 8;
  o.widths = {4, 4};
  o.out_channels = 8;
  return o;
}

TEST(FeatureExtractor, ShapeContract) {
  Rng rng(12);
  FeatureExtractor fx("fx", small_options(), rng);
  const VectorFeatureSet out = fx(random_cloud(32, 12));
  EXPECT_EQ(out.tokens(), 4u);
  EXPECT_EQ(out.channels(), 8u);
  EXPECT_EQ(fx.min_points(), 8u);
  EXPECT_THROW(fx(random_cloud(7, 1)), std::invalid_argument);
}

TEST(FeatureExtractor, DeterministicAcrossRuns) {
  Rng rng(13);
  FeatureExtractor fx("fx", small_options(), rng);
  const PointCloud pc = random_cloud(40, 13);
  EXPECT_EQ(fx(pc).tensor(), fx(pc).tensor());
}

TEST(FeatureExtractor, EquivariantEndToEnd) {
  Rng rng(14);
  FeatureExtractor fx("fx", small_options(), rng);
  const auto dist = wide_sim3(14);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const PointCloud pc = random_cloud(40, 300 + i);
    const Sim3Transform g = sample_transform(dist, i);
    worst = std::max(worst, relative_error(fx(apply_transform(g, pc)).tensor(), fx(pc).transformed(g).tensor()));
  }
  EXPECT_LT(worst, 1e-7);
}

TEST(FeatureExtractor, PermutationKeepingTheStartPointKeepsPatches) {
  Rng rng(15);
  FeatureExtractor fx("fx", small_options(), rng);
  const PointCloud pc = random_cloud(40, 15);
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuffle(16);
  std::shuffle(perm.begin() + 1, perm.end(), shuffle);
  PointCloud permuted;
  for (std::size_t i : perm) permuted.points.push_back(pc.points[i]);
  EXPECT_LT(max_abs_diff(fx(permuted).tensor(), fx(pc).tensor()), 1e-9);
}

}  // namespace
}  // namespace simeq
