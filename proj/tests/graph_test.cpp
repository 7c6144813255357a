#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "atmgcn/errors.hpp"
#include "atmgcn/graph.hpp"

using namespace atmgcn;

namespace {

// Direct reading of the three edge-set definitions, applied pair by pair.
bool oracle_has_edge(std::size_t L, std::size_t apex, std::size_t w, std::size_t i,
                     std::size_t j) {
  const long li = static_cast<long>(i), lj = static_cast<long>(j), lw = static_cast<long>(w);
  if (i == apex) return true;                                   // global -> every node, and itself
  const bool in_window = lj >= std::max(2L, li - lw) && lj <= std::min(static_cast<long>(L), li + lw);
  return in_window || j == apex;                                // window edges, local -> global
}

std::set<Edge> oracle_edges(std::size_t L, std::size_t apex, std::size_t w) {
  std::set<Edge> out;
  for (std::size_t i = 2; i <= L; ++i)
    for (std::size_t j = 2; j <= L; ++j)
      if (oracle_has_edge(L, apex, w, i, j)) out.emplace(i, j);
  return out;
}

Tensor random_features(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t({n, d});
  for (double& v : t.values()) v = u(rng);
  return t;
}

}  // namespace

TEST(Topology, HandEnumeratedSeventeenEdges) {
  const GraphTopology g = build_topology(6, 4, 1);
  const std::set<Edge> expected{{2, 2}, {2, 3}, {3, 2}, {3, 3}, {3, 4}, {5, 4}, {5, 5}, {5, 6}, {6, 5},
                                {6, 6}, {2, 4}, {6, 4}, {4, 2}, {4, 3}, {4, 5}, {4, 6}, {4, 4}};
  ASSERT_EQ(g.edges().size(), 17u);
  EXPECT_EQ(std::set<Edge>(g.edges().begin(), g.edges().end()), expected);
  EXPECT_EQ(g.num_nodes(), 5u);
  EXPECT_EQ(g.global_index(), 4u);
}

TEST(Topology, MatchesMembershipOracleExhaustively) {
  for (std::size_t L = 3; L <= 20; ++L)
    for (std::size_t apex = 2; apex <= L; ++apex)
      for (std::size_t w = 1; w <= 4; ++w) {
        const GraphTopology g = build_topology(L, apex, w);
        const std::set<Edge> got(g.edges().begin(), g.edges().end());
        ASSERT_EQ(got.size(), g.edges().size()) << "duplicate edges";
        ASSERT_EQ(got, oracle_edges(L, apex, w)) << "L=" << L << " apex=" << apex << " w=" << w;
      }
}

TEST(Topology, EveryLocalNodeReachesGlobal) {
  const GraphTopology g = build_topology(12, 7, 2);
  for (std::size_t i = 2; i <= 12; ++i) {
    EXPECT_TRUE(g.has_edge(i, 7)) << i;
    EXPECT_TRUE(g.has_edge(7, i)) << i;
  }
  const auto from_local = g.edges_from(3);
  EXPECT_NE(std::find(from_local.begin(), from_local.end(), Edge{3, 7}), from_local.end());
}

TEST(Topology, WideWindowIsCompleteGraph) {
  for (std::size_t L = 3; L <= 10; ++L) {
    const GraphTopology g = build_topology(L, 2 + L / 3, L - 2);
    const std::size_t n = L - 1;
    EXPECT_EQ(g.edges().size(), n * n) << L;
  }
}

TEST(Topology, InputErrors) {
  EXPECT_THROW(build_topology(2, 2, 1), InputError);
  EXPECT_THROW(build_topology(6, 1, 1), InputError);
  EXPECT_THROW(build_topology(6, 7, 1), InputError);
  EXPECT_THROW(build_topology(6, 3, 0), InputError);
}

TEST(Topology, SelfLoopsCanBeDisabled) {
  const GraphTopology g = build_topology(6, 4, 1, false);
  EXPECT_FALSE(g.has_edge(2, 2));
  EXPECT_TRUE(g.has_edge(4, 4));
  EXPECT_EQ(g.edges().size(), 13u);
}

TEST(EdgeWeights, AngularSimilarityAnchors) {
  const std::vector<double> a{1.0, 2.0, -0.5};
  const std::vector<double> neg{-1.0, -2.0, 0.5};
  EXPECT_NEAR(angular_similarity(a, a), 1.0 - std::acos(1.0 - 1e-6) / std::numbers::pi, 1e-12);
  EXPECT_NEAR(angular_similarity(a, a), 0.99955, 5e-6);
  EXPECT_NEAR(angular_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 3}), 0.5, 1e-15);
  EXPECT_NEAR(angular_similarity(a, neg), std::acos(1.0 - 1e-6) / std::numbers::pi, 1e-12);
  EXPECT_LT(angular_similarity(a, neg), 1e-3);
  EXPECT_THROW(angular_similarity(a, std::vector<double>{0, 0, 0}), DomainError);
}

TEST(EdgeWeights, DecayedWeight) {
  EXPECT_EQ(decayed_weight(0.7, 5, 5, 10.0), 0.7);
  EXPECT_NEAR(decayed_weight(1.0, 3, 13, 10.0), std::exp(-1.0), 1e-9);
  EXPECT_NEAR(decayed_weight(1.0, 13, 3, 10.0), 0.36788, 5e-6);
  double prev = 1.0;
  for (std::size_t gap = 1; gap < 30; ++gap) {
    const double w = decayed_weight(0.8, 2, 2 + gap, 10.0);
    EXPECT_LT(w, prev);
    prev = w;
  }
}

TEST(Adjacency, IdenticalFeaturesClosedForm) {
  const GraphTopology g = build_topology(8, 5, 2);
  Tensor feats({7, 4});
  for (std::size_t r = 0; r < 7; ++r) feats.at(r, 0) = feats.at(r, 1) = 1.0;
  const Tensor a = assemble_adjacency(constant(feats), g, {10.0, 1.0, 2.0}).value();
  const double sim = 1.0 - std::acos(1.0 - 1e-6) / std::numbers::pi;
  for (std::size_t i = 2; i <= 8; ++i)
    for (std::size_t j = 2; j <= 8; ++j) {
      const double v = a.at(i - 2, j - 2);
      if (!g.has_edge(i, j)) {
        EXPECT_EQ(v, 0.0);
        continue;
      }
      const double gap = std::abs(static_cast<double>(i) - static_cast<double>(j));
      const double lambda = i == 5 ? 2.0 : 1.0;
      EXPECT_NEAR(v, lambda * sim * std::exp(-gap / 10.0), 1e-12);
      EXPECT_NEAR(v, lambda * std::exp(-gap / 10.0), 1e-3);
    }
}

TEST(Adjacency, MatchesScalarEdgeWeightFunctions) {
  std::mt19937_64 rng(21);
  const GraphTopology g = build_topology(9, 3, 2);
  const Tensor feats = random_features(rng, 8, 5);
  const EdgeWeighting wt{10.0, 0.5, 1.5};
  const Tensor a = assemble_adjacency(constant(feats), g, wt).value();
  for (const auto& [i, j] : g.edges()) {
    const std::span<const double> hi(feats.data() + (i - 2) * 5, 5);
    const std::span<const double> hj(feats.data() + (j - 2) * 5, 5);
    const double lambda = i == 3 ? 1.5 : 0.5;
    EXPECT_NEAR(a.at(i - 2, j - 2), lambda * decayed_weight(angular_similarity(hi, hj), i, j, 10.0),
                1e-12);
  }
}

TEST(Adjacency, SymmetricBeforeReweighting) {
  std::mt19937_64 rng(22);
  const GraphTopology g = build_topology(10, 6, 3);
  const Tensor feats = random_features(rng, 9, 6);
  const Tensor a = assemble_adjacency(constant(feats), g, {10.0, 1.0, 2.0}).value();
  for (const auto& [i, j] : g.edges()) {
    if (!g.has_edge(j, i)) continue;
    const double li = i == 6 ? 2.0 : 1.0;
    const double lj = j == 6 ? 2.0 : 1.0;
    EXPECT_NEAR(a.at(i - 2, j - 2) / li, a.at(j - 2, i - 2) / lj, 1e-12);
  }
}

TEST(Adjacency, EntriesBoundedBySourceLambda) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const GraphTopology g = build_topology(12, 2 + trial % 11, 1 + trial % 4);
    const Tensor a =
        assemble_adjacency(constant(random_features(rng, 11, 4)), g, {10.0, 0.7, 1.9}).value();
    for (std::size_t i = 2; i <= 12; ++i)
      for (std::size_t j = 2; j <= 12; ++j) {
        const double v = a.at(i - 2, j - 2);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, i == g.global_index() ? 1.9 : 0.7);
        if (!g.has_edge(i, j)) EXPECT_EQ(v, 0.0);
      }
  }
}

TEST(Adjacency, RejectsLambdaOrdering) {
  const GraphTopology g = build_topology(6, 4, 1);
  const Var f = constant(Tensor({5, 3}, 1.0));
  EXPECT_THROW(assemble_adjacency(f, g, {10.0, 2.0, 2.0}), ConfigError);
  EXPECT_THROW(assemble_adjacency(f, g, {10.0, 3.0, 2.0}), ConfigError);
  EXPECT_THROW(assemble_adjacency(f, g, {0.0, 1.0, 2.0}), ConfigError);
}

TEST(Adjacency, ZeroNormFeatureIsDomainError) {
  const GraphTopology g = build_topology(4, 3, 1);
  Tensor f({3, 2}, 1.0);
  f.at(1, 0) = f.at(1, 1) = 0.0;
  EXPECT_THROW(assemble_adjacency(constant(f), g, {}), DomainError);
}

TEST(Adjacency, ScaleInvariant) {
  std::mt19937_64 rng(24);
  const GraphTopology g = build_topology(8, 4, 2);
  const Tensor f = random_features(rng, 7, 5);
  Tensor scaled = f;
  for (double& v : scaled.values()) v *= 3.75;
  const Tensor a = assemble_adjacency(constant(f), g, {}).value();
  const Tensor b = assemble_adjacency(constant(scaled), g, {}).value();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}

TEST(Adjacency, GradientCheck) {
  std::mt19937_64 rng(25);
  const GraphTopology g = build_topology(8, 5, 2);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor f = random_features(rng, 7, 4);
    const Tensor weights = random_features(rng, 7, 7);
    const double err = check_gradients(
        [&](std::span<const Var> v) {
          return ops::sum(ops::mul(assemble_adjacency(v[0], g, {}), constant(weights)));
        },
        std::vector<Tensor>{f}, 1e-5);
    EXPECT_LT(err, 1e-4);
  }
}
