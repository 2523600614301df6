#pragma once

// Inter-pixel relation mining: displacement and class-equivalence pairs within a
// radius, taken from the pseudo class map.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/rng.hpp"
#include "pixrel/seeding.hpp"
#include "pixrel/tensor_io.hpp"

namespace pixrel {

struct PixelPair {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  friend bool operator==(const PixelPair&, const PixelPair&) = default;
  friend auto operator<=>(const PixelPair&, const PixelPair&) = default;
};

enum class PairKind : std::int32_t { fg_pos = 0, bg_pos = 1, neg = 2 };

struct PairSet {
  double radius = 0.0;
  std::vector<PixelPair> fg_pos;
  std::vector<PixelPair> bg_pos;
  std::vector<PixelPair> neg;

  std::size_t total() const { return fg_pos.size() + bg_pos.size() + neg.size(); }
  bool empty() const { return total() == 0; }
};

// Offsets (dy, dx) with dy^2 + dx^2 < radius^2 pointing "forward" in row-major
// order, so that j = i + offset > i. Ordered by dy, then dx.
inline std::vector<Coord> forward_offsets(double radius) {
  std::vector<Coord> out;
  const int r = static_cast<int>(std::ceil(radius));
  const double r2 = radius * radius;
  for (int dy = 0; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx <= 0) continue;
      if (static_cast<double>(dy * dy + dx * dx) < r2) out.push_back({dy, dx});
    }
  }
  return out;
}

namespace detail {

// Keeps at most `cap` pairs by reservoir sampling, then restores canonical order.
inline void reservoir_cap(std::vector<PixelPair>& pairs, std::size_t cap, Xoshiro256& rng) {
  if (cap == 0 || pairs.size() <= cap) return;
  std::vector<std::size_t> keep(cap);
  for (std::size_t k = 0; k < cap; ++k) keep[k] = k;
  for (std::size_t k = cap; k < pairs.size(); ++k) {
    const std::size_t slot = rng.below(k + 1);
    if (slot < cap) keep[slot] = k;
  }
  std::sort(keep.begin(), keep.end());
  std::vector<PixelPair> out;
  out.reserve(cap);
  for (std::size_t k : keep) out.push_back(pairs[k]);
  pairs.swap(out);
}

}  // namespace detail

// Enumerates every unordered pair (i < j) within Euclidean distance < radius
// whose endpoints are both non-neutral, in row-major outer order with a fixed
// offset table. `max_pairs` > 0 caps each partition by seeded reservoir sampling.
inline PairSet mine_pairs(const ClassSeedMap& seeds, double radius, std::size_t max_pairs = 0,
                          std::uint64_t sample_seed = 0) {
  if (radius < 1.0) throw InputError("pair radius must be >= 1");
  const GridShape shape = seeds.shape();
  const auto offsets = forward_offsets(radius);
  PairSet out;
  out.radius = radius;
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const std::size_t i = shape.index(y, x);
      const std::uint8_t a = seeds[i];
      if (is_neutral(a)) continue;
      for (const Coord& o : offsets) {
        if (!shape.contains(y + o.y, x + o.x)) continue;
        const std::size_t j = shape.index(y + o.y, x + o.x);
        const std::uint8_t b = seeds[j];
        if (is_neutral(b)) continue;
        const PixelPair p{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
        if (a != b) {
          out.neg.push_back(p);
        } else if (a == kSeedBackground) {
          out.bg_pos.push_back(p);
        } else {
          out.fg_pos.push_back(p);
        }
      }
    }
  }
  if (max_pairs > 0) {
    Xoshiro256 rng(sample_seed);
    detail::reservoir_cap(out.fg_pos, max_pairs, rng);
    detail::reservoir_cap(out.bg_pos, max_pairs, rng);
    detail::reservoir_cap(out.neg, max_pairs, rng);
  }
  return out;
}

// Image coordinate displacement x_j - x_i.
inline Vec2 pair_displacement(std::size_t i, std::size_t j, const GridShape& shape) {
  const Coord a = shape.coords(i);
  const Coord b = shape.coords(j);
  return {static_cast<double>(b.y - a.y), static_cast<double>(b.x - a.x)};
}

// Debug dump: i32 tensor [N, 3] of (i, j, partition code).
inline Tensor pairs_tensor(const PairSet& pairs) {
  std::vector<std::int32_t> v;
  v.reserve(3 * pairs.total());
  auto emit = [&v](const std::vector<PixelPair>& list, PairKind kind) {
    for (const auto& p : list) {
      v.push_back(static_cast<std::int32_t>(p.i));
      v.push_back(static_cast<std::int32_t>(p.j));
      v.push_back(static_cast<std::int32_t>(kind));
    }
  };
  emit(pairs.fg_pos, PairKind::fg_pos);
  emit(pairs.bg_pos, PairKind::bg_pos);
  emit(pairs.neg, PairKind::neg);
  return {{static_cast<std::uint32_t>(pairs.total()), 3u}, std::move(v)};
}

inline PairSet pairs_from_tensor(const Tensor& t, double radius, const std::string& path) {
  if (t.dtype() != DType::i32 || t.dims.size() != 2 || t.dims[1] != 3) {
    throw InputError(path + ": expected i32 tensor [N,3]");
  }
  PairSet out;
  out.radius = radius;
  const auto& v = t.as<std::int32_t>();
  for (std::size_t k = 0; k < t.dims[0]; ++k) {
    const PixelPair p{static_cast<std::uint32_t>(v[3 * k]), static_cast<std::uint32_t>(v[3 * k + 1])};
    switch (static_cast<PairKind>(v[3 * k + 2])) {
      case PairKind::fg_pos: out.fg_pos.push_back(p); break;
      case PairKind::bg_pos: out.bg_pos.push_back(p); break;
      case PairKind::neg: out.neg.push_back(p); break;
      default: throw InputError(path + ": unknown pair partition code");
    }
  }
  return out;
}

}  // namespace pixrel
