#pragma once

// Displacement field -> class-agnostic instance map: mean-centering, iterative
// refinement toward centroids, centroid detection, and pixel assignment.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/parallel.hpp"
#include "pixrel/seeding.hpp"
#include "pixrel/tensor_io.hpp"

namespace pixrel {

using InstanceMap = Plane<std::int32_t>;

struct CentroidSet {
  // Components in id order; component k (1-based) is components[k - 1].
  std::vector<std::vector<std::uint32_t>> components;
  Plane<std::int32_t> component_id;  // 0 = not a candidate

  int count() const { return static_cast<int>(components.size()); }
};

// Subtracts the mean vector over confident foreground seed pixels, or over all
// pixels when the seed map has none.
inline DisplacementField center_displacement(const DisplacementField& d, const ClassSeedMap& seeds) {
  require_same_shape(d.shape(), seeds.shape(), "center_displacement");
  Vec2 sum;
  std::size_t count = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (is_foreground(seeds[i])) {
      sum += d[i];
      ++count;
    }
  }
  if (count == 0) {
    for (const Vec2& v : d.values()) sum += v;
    count = d.size();
  }
  const Vec2 mean = (1.0 / static_cast<double>(count)) * sum;
  DisplacementField out = d;
  for (Vec2& v : out.values()) v -= mean;
  return out;
}

// Nearest grid point to (y, x), rounding half up, clamped into the grid.
inline std::size_t nearest_pixel(const GridShape& shape, double y, double x) {
  const int ry = std::clamp(static_cast<int>(std::floor(y + 0.5)), 0, shape.height - 1);
  const int rx = std::clamp(static_cast<int>(std::floor(x + 0.5)), 0, shape.width - 1);
  return shape.index(ry, rx);
}

// D_{u+1}(x) = D_u(x) + D(x + D_u(x)), looking up the original field at the
// nearest grid point. Stops early once every per-pixel update is below
// `stop_below` pixels.
inline DisplacementField refine_displacement(const DisplacementField& d, int iters,
                                             double stop_below = 0.5) {
  if (iters < 0) throw InputError("refine iterations must be >= 0");
  const GridShape shape = d.shape();
  DisplacementField cur = d;
  DisplacementField next(shape);
  std::vector<double> step_size(shape.size());
  for (int u = 0; u < iters; ++u) {
    parallel_for(shape.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const Coord c = shape.coords(i);
        const Vec2 here = cur[i];
        const Vec2 look = d[nearest_pixel(shape, c.y + here.dy, c.x + here.dx)];
        next[i] = here + look;
        step_size[i] = look.norm();
      }
    });
    std::swap(cur, next);
    double worst = 0.0;
    for (double s : step_size) worst = std::max(worst, s);
    if (worst < stop_below) break;
  }
  return cur;
}

// Candidates are pixels with |D| < threshold, grouped by 8-connectivity and
// numbered in order of their smallest flat index.
inline CentroidSet detect_centroids(const DisplacementField& refined, double threshold) {
  if (!(threshold > 0.0)) throw InputError("centroid threshold must be > 0");
  const GridShape shape = refined.shape();
  CentroidSet out;
  out.component_id = Plane<std::int32_t>(shape, 0);
  std::vector<std::uint8_t> candidate(shape.size());
  for (std::size_t i = 0; i < shape.size(); ++i) candidate[i] = refined[i].norm() < threshold;

  std::vector<std::uint32_t> stack;
  for (std::size_t seed = 0; seed < shape.size(); ++seed) {
    if (!candidate[seed] || out.component_id[seed] != 0) continue;
    const auto id = static_cast<std::int32_t>(out.components.size() + 1);
    std::vector<std::uint32_t> members;
    stack.assign(1, static_cast<std::uint32_t>(seed));
    out.component_id[seed] = id;
    while (!stack.empty()) {
      const std::uint32_t p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const Coord c = shape.coords(p);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!shape.contains(c.y + dy, c.x + dx)) continue;
          const std::size_t q = shape.index(c.y + dy, c.x + dx);
          if (candidate[q] && out.component_id[q] == 0) {
            out.component_id[q] = id;
            stack.push_back(static_cast<std::uint32_t>(q));
          }
        }
      }
    }
    std::sort(members.begin(), members.end());
    out.components.push_back(std::move(members));
  }
  return out;
}

// I(x) = k when round(x + D(x)) lies in component k; otherwise the component of
// the nearest candidate within snap_radius of that point (ties to the lower id);
// otherwise 0.
inline InstanceMap build_instance_map(const DisplacementField& refined,
                                      const CentroidSet& centroids, double snap_radius) {
  const GridShape shape = refined.shape();
  require_same_shape(shape, centroids.component_id.shape(), "build_instance_map");
  InstanceMap out(shape, 0);
  if (centroids.count() == 0) return out;
  const int reach = static_cast<int>(std::floor(std::max(snap_radius, 0.0)));
  const double r2 = snap_radius * snap_radius;

  for (std::size_t i = 0; i < shape.size(); ++i) {
    const Coord c = shape.coords(i);
    const int ty = static_cast<int>(std::floor(c.y + refined[i].dy + 0.5));
    const int tx = static_cast<int>(std::floor(c.x + refined[i].dx + 0.5));
    if (shape.contains(ty, tx) && centroids.component_id.at(ty, tx) != 0) {
      out[i] = centroids.component_id.at(ty, tx);
      continue;
    }
    long long best_d2 = std::numeric_limits<long long>::max();
    std::int32_t best_id = 0;
    for (int dy = -reach; dy <= reach; ++dy) {
      for (int dx = -reach; dx <= reach; ++dx) {
        const long long d2 = 1LL * dy * dy + 1LL * dx * dx;
        if (static_cast<double>(d2) > r2 || !shape.contains(ty + dy, tx + dx)) continue;
        const std::int32_t id = centroids.component_id.at(ty + dy, tx + dx);
        if (id == 0) continue;
        if (d2 < best_d2 || (d2 == best_d2 && id < best_id)) {
          best_d2 = d2;
          best_id = id;
        }
      }
    }
    out[i] = best_id;
  }
  return out;
}

inline void write_instance_map(const std::string& path, const InstanceMap& m) {
  write_tensor(path, plane_tensor(m));
}

inline InstanceMap read_instance_map(const std::string& path) {
  const Tensor t = read_tensor(path);
  const GridShape shape = expect_dims(t, DType::i32, 2, path);
  return InstanceMap(shape, t.as<std::int32_t>());
}

}  // namespace pixrel
