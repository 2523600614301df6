#include <gtest/gtest.h>

#include <cmath>

#include "pixrel/affinity.hpp"
#include "pixrel/rng.hpp"

using namespace pixrel;

namespace {

AffinityGraph from_dense(const std::vector<std::vector<double>>& a) {
  AffinityGraph g;
  g.shape = GridShape(1, static_cast<int>(a.size()));
  g.radius = 1e9;
  CsrMatrix& m = g.entries;
  m.n = a.size();
  m.row_start.push_back(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      m.cols.push_back(static_cast<std::uint32_t>(j));
      m.values.push_back(a[i][j]);
    }
    m.row_start.push_back(m.cols.size());
  }
  return g;
}

BoundaryMap random_b(Xoshiro256& rng, GridShape s) {
  BoundaryMap b(s);
  for (auto& v : b.values()) v = rng.uniform() < 0.3 ? rng.uniform() : 0.0;
  return b;
}

}  // namespace

TEST(AffinityGraph, ConstantBoundaries) {
  const GridShape s(4, 5);
  const auto open = build_affinity_graph(BoundaryMap(s, 0.0), 2.5);
  for (double v : open.entries.values) EXPECT_EQ(v, 1.0);
  const auto wall = build_affinity_graph(BoundaryMap(s, 1.0), 2.5);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto cols = wall.entries.row_cols(i);
    const auto vals = wall.entries.row_values(i);
    for (std::size_t k = 0; k < cols.size(); ++k) EXPECT_EQ(vals[k], cols[k] == i ? 1.0 : 0.0);
  }
}

TEST(AffinityGraph, RowExample) {
  const BoundaryMap b(GridShape(1, 5), std::vector<double>{0, 0.2, 0.7, 0.1, 0});
  const auto g = build_affinity_graph(b, 2.5);
  EXPECT_NEAR(g.entries.at(0, 2), 0.3, 1e-15);
  EXPECT_NEAR(g.entries.at(3, 4), 0.9, 1e-15);
  EXPECT_EQ(g.entries.at(0, 3), 0.0);  // distance 3 is outside the radius
  EXPECT_THROW(build_affinity_graph(b, 0.5), InputError);
}

TEST(AffinityGraph, MatchesDenseOracle) {
  Xoshiro256 rng(19);
  for (int trial = 0; trial < 6; ++trial) {
    const GridShape s(1 + static_cast<int>(rng.below(24)), 1 + static_cast<int>(rng.below(24)));
    const double radius = trial % 2 == 0 ? 5.0 : 2.5;
    const BoundaryMap b = random_b(rng, s);
    const auto g = build_affinity_graph(b, radius);
    std::size_t expected_nnz = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (std::size_t j = 0; j < s.size(); ++j) {
        const Coord a = s.coords(i), c = s.coords(j);
        const double d = std::hypot(a.y - c.y, a.x - c.x);
        if (i == j) {
          ASSERT_EQ(g.entries.at(i, j), 1.0);
          ++expected_nnz;
        } else if (d < radius) {
          ASSERT_EQ(g.entries.at(i, j), pair_affinity(b, i, j));
          ASSERT_EQ(g.entries.at(i, j), g.entries.at(j, i));
          ++expected_nnz;
        }
      }
    }
    EXPECT_EQ(g.entries.nnz(), expected_nnz);
  }
}

TEST(AffinityGraph, OneMinusBoundaryDiagonal) {
  const BoundaryMap b(GridShape(1, 3), std::vector<double>{0.25, 1.0, 0.0});
  const auto g = build_affinity_graph(b, 1.5, DiagonalMode::one_minus_boundary);
  EXPECT_EQ(g.entries.at(0, 0), 0.75);
  EXPECT_EQ(g.entries.at(1, 1), 0.0);
  // Row 1 has zero mass everywhere: it becomes a self-loop.
  const auto t = transition_matrix(g, 2.0);
  EXPECT_EQ(t.entries.at(1, 1), 1.0);
}

TEST(TransitionMatrix, TwoNodeExamples) {
  const auto g = from_dense({{1, 0.5}, {0.5, 1}});
  const auto t1 = transition_matrix(g, 1.0);
  EXPECT_NEAR(t1.entries.at(0, 0), 2.0 / 3, 1e-15);
  EXPECT_NEAR(t1.entries.at(0, 1), 1.0 / 3, 1e-15);
  EXPECT_NEAR(t1.entries.at(1, 0), 1.0 / 3, 1e-15);
  const auto t2 = transition_matrix(g, 2.0);
  EXPECT_NEAR(t2.entries.at(0, 0), 0.8, 1e-15);
  EXPECT_NEAR(t2.entries.at(1, 0), 0.2, 1e-15);
  EXPECT_THROW(transition_matrix(g, 0.5), InputError);
}

TEST(TransitionMatrix, RowStochasticNonNegativeSamePattern) {
  Xoshiro256 rng(2);
  const GridShape s(13, 11);
  const auto g = build_affinity_graph(random_b(rng, s), 5.0);
  for (double beta : {1.0, 2.0, 10.0, 37.5}) {
    const auto t = transition_matrix(g, beta);
    EXPECT_EQ(t.entries.cols, g.entries.cols);
    EXPECT_EQ(t.entries.row_start, g.entries.row_start);
    for (std::size_t i = 0; i < s.size(); ++i) {
      double sum = 0.0;
      for (double v : t.entries.row_values(i)) {
        EXPECT_GE(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(TransitionMatrix, LargerBetaSharpens) {
  Xoshiro256 rng(4);
  const GridShape s(8, 8);
  BoundaryMap b(s);
  for (auto& v : b.values()) v = 0.05 + 0.9 * rng.uniform();
  const auto g = build_affinity_graph(b, 3.0);
  const auto lo = transition_matrix(g, 2.0);
  const auto hi = transition_matrix(g, 6.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto cols = g.entries.row_cols(i);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const std::size_t j = cols[k];
      if (j == i || g.entries.row_values(i)[k] >= 1.0) continue;
      EXPECT_LT(hi.entries.at(i, j) / hi.entries.at(i, i), lo.entries.at(i, j) / lo.entries.at(i, i));
    }
  }
}

TEST(Spmv, MatchesDenseProduct) {
  const auto g = from_dense({{1, 2, 0}, {0, 1, 3}, {4, 0, 1}});
  const std::vector<double> v{1, 10, 100};
  std::vector<double> y(3);
  spmv(g.entries, v, y);
  EXPECT_EQ(y, (std::vector<double>{21, 310, 104}));
}

TEST(AffinityDump, Layout) {
  const auto g = build_affinity_graph(BoundaryMap(GridShape(1, 2), 0.0), 1.5);
  const Tensor t = affinity_tensor(g);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{4, 3}));
  EXPECT_EQ(t.as<float>(), (std::vector<float>{0, 0, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1}));
}
