#pragma once

// Line rasterization, boundary-derived affinities, and the displacement and
// boundary losses with their analytic (sub)gradients.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/parallel.hpp"
#include "pixrel/relations.hpp"

namespace pixrel {

namespace detail {

// floor(a / b) for b > 0.
inline long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && (a < 0)) --q;
  return q;
}

}  // namespace detail

// Pixels on the segment between a and b, both endpoints included. The segment is
// always walked from the lexicographically smaller coordinate, stepping one pixel
// along the major axis and rounding the minor axis half up, so the result does
// not depend on argument order.
inline std::vector<Coord> line_pixels(Coord a, Coord b) {
  if (b < a) std::swap(a, b);
  const int dy = b.y - a.y;
  const int dx = b.x - a.x;
  const int n = std::max(std::abs(dy), std::abs(dx));
  std::vector<Coord> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  if (n == 0) {
    out.push_back(a);
    return out;
  }
  for (int k = 0; k <= n; ++k) {
    const auto oy = detail::floor_div(2LL * k * dy + n, 2LL * n);
    const auto ox = detail::floor_div(2LL * k * dx + n, 2LL * n);
    out.push_back({a.y + static_cast<int>(oy), a.x + static_cast<int>(ox)});
  }
  return out;
}

inline std::vector<std::size_t> line_pixels(std::size_t i, std::size_t j, const GridShape& shape) {
  std::vector<std::size_t> out;
  for (const Coord& c : line_pixels(shape.coords(i), shape.coords(j))) out.push_back(shape.index(c));
  return out;
}

// Caches rasterized lines by offset. For i < j in row-major order the canonical
// start is always i, so a line is a fixed list of flat deltas from i.
class LineTable {
 public:
  LineTable(const GridShape& shape, double radius)
      : shape_(shape), reach_(static_cast<int>(std::ceil(radius))) {
    const int w = 2 * reach_ + 1;
    table_.resize(static_cast<std::size_t>((reach_ + 1) * w));
    for (int dy = 0; dy <= reach_; ++dy) {
      for (int dx = -reach_; dx <= reach_; ++dx) {
        if (dy == 0 && dx <= 0) continue;
        auto& deltas = table_[static_cast<std::size_t>(dy * w + dx + reach_)];
        for (const Coord& c : line_pixels(Coord{0, 0}, Coord{dy, dx})) {
          deltas.push_back(static_cast<std::ptrdiff_t>(c.y) * shape.width + c.x);
        }
      }
    }
  }

  static constexpr std::uint32_t kNoSlot = 0xffffffffu;

  // Table slot of the line between i and j, or kNoSlot when it is not cached.
  std::uint32_t slot(std::size_t i, std::size_t j) const {
    if (j < i) std::swap(i, j);
    const Coord a = shape_.coords(i);
    const Coord b = shape_.coords(j);
    const int dy = b.y - a.y;
    const int dx = b.x - a.x;
    if (dy <= reach_ && std::abs(dx) <= reach_ && !(dy == 0 && dx == 0)) {
      return static_cast<std::uint32_t>(dy * (2 * reach_ + 1) + dx + reach_);
    }
    return kNoSlot;
  }

  const std::vector<std::ptrdiff_t>& deltas(std::uint32_t slot) const { return table_[slot]; }

  // Calls fn(flat index) for every pixel on the line in canonical order.
  template <typename Fn>
  void for_each(std::size_t i, std::size_t j, Fn&& fn) const {
    const std::uint32_t k = slot(i, j);
    if (k != kNoSlot) {
      const std::size_t start = std::min(i, j);
      for (auto d : table_[k]) fn(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(start) + d));
      return;
    }
    for (const Coord& c : line_pixels(shape_.coords(std::min(i, j)), shape_.coords(std::max(i, j)))) {
      fn(shape_.index(c));
    }
  }

 private:
  GridShape shape_;
  int reach_;
  std::vector<std::vector<std::ptrdiff_t>> table_;
};

// Position of the maximum of B on the line, ties resolved to the earliest pixel.
inline std::size_t line_argmax(const BoundaryMap& b, const LineTable& lines, std::size_t i,
                               std::size_t j) {
  std::size_t best = i < j ? i : j;
  double best_v = -1.0;
  lines.for_each(i, j, [&](std::size_t k) {
    if (b[k] > best_v) {
      best_v = b[k];
      best = k;
    }
  });
  return best;
}

// a_ij = 1 - max of B over the line between x_i and x_j.
inline double pair_affinity(const BoundaryMap& b, std::size_t i, std::size_t j) {
  double m = 0.0;
  for (std::size_t k : line_pixels(i, j, b.shape())) m = std::max(m, b[k]);
  return 1.0 - m;
}

struct LossReport {
  double value = 0.0;
  std::optional<DisplacementField> grad_d;
  std::optional<BoundaryMap> grad_b;
  // Set when a partition a loss averages over was empty.
  bool empty_partition = false;
};

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Mean over pairs of |D(x_i) - D(x_j) - target_k|_1; no targets means zero.
inline LossReport displacement_l1(const DisplacementField& d, const std::vector<PixelPair>& pairs,
                                  const std::vector<Vec2>* targets) {
  LossReport rep;
  rep.grad_d = DisplacementField(d.shape());
  if (pairs.empty()) {
    rep.empty_partition = true;
    return rep;
  }
  const double inv = 1.0 / static_cast<double>(pairs.size());
  auto& g = *rep.grad_d;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    Vec2 r = d[p.i] - d[p.j];
    if (targets != nullptr) r -= (*targets)[k];
    rep.value += std::abs(r.dy) + std::abs(r.dx);
    const Vec2 s{inv * sign(r.dy), inv * sign(r.dx)};
    g[p.i] += s;
    g[p.j] -= s;
  }
  rep.value *= inv;
  return rep;
}

// Per-pair line lookups, computed once and reused across evaluations.
struct LineBags {
  std::vector<std::uint32_t> start;
  std::vector<std::uint32_t> slot;
  std::vector<PixelPair> pairs;  // only consulted for uncached lines
};

inline LineBags make_bags(const LineTable& lines, const std::vector<PixelPair>& pairs) {
  LineBags bags;
  bags.start.reserve(pairs.size());
  bags.slot.reserve(pairs.size());
  for (const auto& p : pairs) {
    bags.start.push_back(static_cast<std::uint32_t>(std::min(p.i, p.j)));
    bags.slot.push_back(lines.slot(p.i, p.j));
  }
  bags.pairs = pairs;
  return bags;
}

struct PairCache {
  LineTable lines;
  std::vector<Vec2> fg_targets;
  LineBags fg, bg, neg;

  PairCache(const PairSet& pairs, const GridShape& shape)
      : lines(shape, std::max(pairs.radius, 1.0)),
        fg(make_bags(lines, pairs.fg_pos)),
        bg(make_bags(lines, pairs.bg_pos)),
        neg(make_bags(lines, pairs.neg)) {
    fg_targets.reserve(pairs.fg_pos.size());
    for (const auto& p : pairs.fg_pos) fg_targets.push_back(pair_displacement(p.i, p.j, shape));
  }
};

inline std::vector<std::uint32_t> bag_argmaxes(const BoundaryMap& b, const LineTable& lines,
                                               const LineBags& bags) {
  std::vector<std::uint32_t> out(bags.start.size());
  parallel_for(out.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      if (bags.slot[k] == LineTable::kNoSlot) {
        out[k] = static_cast<std::uint32_t>(line_argmax(b, lines, bags.pairs[k].i, bags.pairs[k].j));
        continue;
      }
      const double* base = b.data().data() + bags.start[k];
      std::ptrdiff_t best = 0;
      double best_v = -1.0;
      for (auto d : lines.deltas(bags.slot[k])) {
        if (base[d] > best_v) {
          best_v = base[d];
          best = d;
        }
      }
      out[k] = static_cast<std::uint32_t>(bags.start[k] + best);
    }
  });
  return out;
}

inline LossReport boundary_cached(const BoundaryMap& b, const PairCache& cache, double eps_clamp) {
  LossReport rep;
  rep.grad_b = BoundaryMap(b.shape(), 0.0);
  auto& g = *rep.grad_b;
  // Per-pixel logs, shared by all bags whose argmax lands on the same pixel.
  const double log_eps = std::log(eps_clamp);
  std::vector<double> log_a(b.size()), log_b(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) {
    log_a[k] = 1.0 - b[k] > eps_clamp ? std::log(1.0 - b[k]) : log_eps;
    log_b[k] = b[k] > eps_clamp ? std::log(b[k]) : log_eps;
  }

  auto positive = [&](const LineBags& bags, double weight) {
    if (bags.start.empty()) return;
    const auto top = bag_argmaxes(b, cache.lines, bags);
    const double w = weight / static_cast<double>(top.size());
    double sum = 0.0;
    for (std::uint32_t k : top) {
      const double a = 1.0 - b[k];
      sum -= log_a[k];
      if (a > eps_clamp) g[k] += w / a;
    }
    rep.value += w * sum;
  };
  positive(cache.fg, 0.5);
  positive(cache.bg, 0.5);

  if (!cache.neg.start.empty()) {
    const auto top = bag_argmaxes(b, cache.lines, cache.neg);
    const double w = 1.0 / static_cast<double>(top.size());
    double sum = 0.0;
    for (std::uint32_t k : top) {
      sum -= log_b[k];
      if (b[k] > eps_clamp) g[k] -= w / b[k];
    }
    rep.value += w * sum;
  }
  rep.empty_partition = cache.fg.start.empty() || cache.bg.start.empty() || cache.neg.start.empty();
  return rep;
}

}  // namespace detail

// Foreground displacement loss: pairs should satisfy x_i + D(x_i) = x_j + D(x_j).
inline LossReport loss_disp_fg(const DisplacementField& d, const PairSet& pairs) {
  std::vector<Vec2> targets;
  targets.reserve(pairs.fg_pos.size());
  for (const auto& p : pairs.fg_pos) targets.push_back(pair_displacement(p.i, p.j, d.shape()));
  return detail::displacement_l1(d, pairs.fg_pos, &targets);
}

// Background displacement loss: D differences between background pairs vanish.
inline LossReport loss_disp_bg(const DisplacementField& d, const PairSet& pairs) {
  return detail::displacement_l1(d, pairs.bg_pos, nullptr);
}

// Multiple-instance boundary loss over the line bags. Each log argument is
// floored at eps_clamp; the gradient of every pair goes to the argmax pixel of
// its line.
inline LossReport loss_boundary(const BoundaryMap& b, const PairSet& pairs, double eps_clamp) {
  return detail::boundary_cached(b, detail::PairCache(pairs, b.shape()), eps_clamp);
}

struct LossWeights {
  double fg = 1.0;
  double bg = 1.0;
  double boundary = 1.0;
};

struct TotalLoss {
  LossReport total;
  double disp_fg = 0.0;
  double disp_bg = 0.0;
  double boundary = 0.0;
};

namespace detail {

inline TotalLoss total_loss_cached(const DisplacementField& d, const BoundaryMap& b, const PairSet& pairs,
                                   const PairCache& cache, const LossWeights& w, double eps_clamp) {
  require_same_shape(d.shape(), b.shape(), "total_loss fields");
  if (w.fg < 0.0 || w.bg < 0.0 || w.boundary < 0.0) throw InputError("loss weights must be >= 0");
  const LossReport fg = displacement_l1(d, pairs.fg_pos, &cache.fg_targets);
  const LossReport bg = displacement_l1(d, pairs.bg_pos, nullptr);
  const LossReport bd = boundary_cached(b, cache, eps_clamp);

  TotalLoss out;
  out.disp_fg = fg.value;
  out.disp_bg = bg.value;
  out.boundary = bd.value;
  out.total.value = w.fg * fg.value + w.bg * bg.value + w.boundary * bd.value;
  DisplacementField gd(d.shape());
  for (std::size_t i = 0; i < gd.size(); ++i) {
    gd[i] = w.fg * (*fg.grad_d)[i] + w.bg * (*bg.grad_d)[i];
  }
  BoundaryMap gb(b.shape(), 0.0);
  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = w.boundary * (*bd.grad_b)[i];
  out.total.grad_d = std::move(gd);
  out.total.grad_b = std::move(gb);
  out.total.empty_partition = fg.empty_partition || bg.empty_partition || bd.empty_partition;
  return out;
}

}  // namespace detail

inline TotalLoss total_loss(const DisplacementField& d, const BoundaryMap& b,
                            const PairSet& pairs, const LossWeights& w,
                            double eps_clamp = 1e-5) {
  require_same_shape(d.shape(), b.shape(), "total_loss fields");
  return detail::total_loss_cached(d, b, pairs, detail::PairCache(pairs, d.shape()), w, eps_clamp);
}

}  // namespace pixrel
