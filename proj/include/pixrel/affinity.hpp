#pragma once

// Sparse pairwise affinity graph from a boundary map, and the row-stochastic
// random-walk transition matrix derived from it.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/losses.hpp"
#include "pixrel/parallel.hpp"
#include "pixrel/tensor_io.hpp"

namespace pixrel {

enum class DiagonalMode { unit, one_minus_boundary };

// Row-compressed sparse matrix with ascending column indices in every row.
struct CsrMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_start;  // n + 1 entries
  std::vector<std::uint32_t> cols;
  std::vector<double> values;

  std::size_t nnz() const { return cols.size(); }
  std::span<const std::uint32_t> row_cols(std::size_t i) const {
    return {cols.data() + row_start[i], row_start[i + 1] - row_start[i]};
  }
  std::span<const double> row_values(std::size_t i) const {
    return {values.data() + row_start[i], row_start[i + 1] - row_start[i]};
  }
  double at(std::size_t i, std::size_t j) const {
    const auto c = row_cols(i);
    const auto it = std::lower_bound(c.begin(), c.end(), static_cast<std::uint32_t>(j));
    if (it == c.end() || *it != j) return 0.0;
    return values[row_start[i] + static_cast<std::size_t>(it - c.begin())];
  }
};

struct AffinityGraph {
  GridShape shape;
  double radius = 0.0;
  CsrMatrix entries;
};

struct TransitionMatrix {
  GridShape shape;
  CsrMatrix entries;
};

// All offsets with dy^2 + dx^2 < radius^2 including (0, 0), in (dy, dx) order.
inline std::vector<Coord> neighborhood_offsets(double radius) {
  std::vector<Coord> out;
  const int r = static_cast<int>(std::ceil(radius));
  const double r2 = radius * radius;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (static_cast<double>(dy * dy + dx * dx) < r2) out.push_back({dy, dx});
    }
  }
  return out;
}

inline AffinityGraph build_affinity_graph(const BoundaryMap& b, double radius,
                                          DiagonalMode diagonal = DiagonalMode::unit) {
  if (radius < 1.0) throw InputError("affinity radius must be >= 1");
  const GridShape shape = b.shape();
  const auto offsets = neighborhood_offsets(radius);
  const LineTable lines(shape, radius);
  const std::size_t n = shape.size();

  AffinityGraph g;
  g.shape = shape;
  g.radius = radius;
  CsrMatrix& m = g.entries;
  m.n = n;
  m.row_start.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Coord c = shape.coords(i);
    std::size_t count = 0;
    for (const Coord& o : offsets) count += shape.contains(c.y + o.y, c.x + o.x);
    m.row_start[i + 1] = m.row_start[i] + count;
  }
  m.cols.resize(m.row_start[n]);
  m.values.resize(m.row_start[n]);

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Coord c = shape.coords(i);
      std::size_t slot = m.row_start[i];
      for (const Coord& o : offsets) {
        if (!shape.contains(c.y + o.y, c.x + o.x)) continue;
        const std::size_t j = shape.index(c.y + o.y, c.x + o.x);
        double a;
        if (j == i) {
          a = diagonal == DiagonalMode::unit ? 1.0 : 1.0 - b[i];
        } else {
          double top = 0.0;
          lines.for_each(i, j, [&](std::size_t k) { top = std::max(top, b[k]); });
          a = 1.0 - top;
        }
        m.cols[slot] = static_cast<std::uint32_t>(j);
        m.values[slot] = a;
        ++slot;
      }
    }
  });
  return g;
}

// T = S^-1 A^beta with S_ii = sum_j a_ij^beta. A row with zero mass (only
// possible with the one_minus_boundary diagonal) becomes a pure self-loop.
inline TransitionMatrix transition_matrix(const AffinityGraph& a, double beta) {
  if (beta < 1.0) throw InputError("beta must be >= 1");
  TransitionMatrix t;
  t.shape = a.shape;
  t.entries = a.entries;
  CsrMatrix& m = t.entries;
  for (std::size_t i = 0; i < m.n; ++i) {
    double sum = 0.0;
    for (std::size_t k = m.row_start[i]; k < m.row_start[i + 1]; ++k) {
      m.values[k] = std::pow(m.values[k], beta);
      sum += m.values[k];
    }
    if (sum > 0.0) {
      for (std::size_t k = m.row_start[i]; k < m.row_start[i + 1]; ++k) m.values[k] /= sum;
    } else {
      for (std::size_t k = m.row_start[i]; k < m.row_start[i + 1]; ++k) {
        m.values[k] = m.cols[k] == i ? 1.0 : 0.0;
      }
    }
  }
  return t;
}

// y = M v, each row reduced in ascending column order.
inline void spmv(const CsrMatrix& m, std::span<const double> v, std::span<double> y) {
  for (std::size_t i = 0; i < m.n; ++i) {
    double acc = 0.0;
    for (std::size_t k = m.row_start[i]; k < m.row_start[i + 1]; ++k) {
      acc += m.values[k] * v[m.cols[k]];
    }
    y[i] = acc;
  }
}

// Debug dump: f32 tensor [nnz, 3] of (i, j, a).
inline Tensor affinity_tensor(const AffinityGraph& g) {
  const CsrMatrix& m = g.entries;
  std::vector<float> v;
  v.reserve(3 * m.nnz());
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t k = m.row_start[i]; k < m.row_start[i + 1]; ++k) {
      v.push_back(static_cast<float>(i));
      v.push_back(static_cast<float>(m.cols[k]));
      v.push_back(static_cast<float>(m.values[k]));
    }
  }
  return {{static_cast<std::uint32_t>(m.nnz()), 3u}, std::move(v)};
}

}  // namespace pixrel
