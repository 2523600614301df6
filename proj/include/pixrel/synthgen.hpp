#pragma once

// Synthetic scenes with ground-truth instances, a color guide image, simulated
// partial-coverage CAMs, and oracle displacement / boundary fields.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/rng.hpp"
#include "pixrel/tensor_io.hpp"

namespace pixrel {

enum class ShapeKind { ellipse, rectangle, blob };

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::blob: return "blob";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "ellipse") return ShapeKind::ellipse;
  if (s == "rectangle") return ShapeKind::rectangle;
  if (s == "blob") return ShapeKind::blob;
  throw InputError("unknown shape kind '" + s + "'");
}

// Geometry in pixel units. ellipse: radii (ry, rx) rotated by angle; rectangle:
// half extents (ry, rx) rotated by angle; blob: base radius ry with two angular
// harmonics of relative amplitude wobble, phases from angle.
struct InstanceSpec {
  int cls = 1;
  ShapeKind kind = ShapeKind::ellipse;
  double cy = 0.0;
  double cx = 0.0;
  double ry = 1.0;
  double rx = 1.0;
  double angle = 0.0;
  double wobble = 0.0;

  bool contains(double y, double x) const {
    const double py = y - cy;
    const double px = x - cx;
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double u = cs * py + sn * px;
    const double v = -sn * py + cs * px;
    switch (kind) {
      case ShapeKind::ellipse: return (u * u) / (ry * ry) + (v * v) / (rx * rx) <= 1.0;
      case ShapeKind::rectangle: return std::abs(u) <= ry && std::abs(v) <= rx;
      case ShapeKind::blob: {
        const double phi = std::atan2(py, px);
        const double r = ry * (1.0 + wobble * std::cos(2.0 * phi + angle) +
                               0.5 * wobble * std::cos(3.0 * phi - angle));
        return py * py + px * px <= r * r;
      }
    }
    return false;
  }
};

struct CamParams {
  int parts_min = 1;
  int parts_max = 3;
  double part_sigma = 0.25;  // Gaussian std-dev relative to the instance radius
  double coverage = 0.5;     // part centers lie within coverage * radius of the centroid
  double noise = 0.02;       // background noise amplitude, uniform in [0, noise)
  int dilation = 3;          // support radius around the instance mask, pixels
  // Wide low Gaussian at the centroid: the weak spill real attention maps show
  // over the rest of the object and just past its border.
  double context = 0.15;
  double context_sigma = 1.0;  // relative to the instance radius

  // Close to the instance indicator: flat single part, no spill, no noise.
  static CamParams near_ideal() { return {1, 1, 1e6, 0.0, 0.0, 0, 0.0, 1.0}; }
};

struct SceneSpec {
  GridShape shape;
  int classes = 1;
  std::vector<InstanceSpec> instances;
  std::uint64_t seed = 0;
  CamParams cam;
  double guide_noise = 6.0;  // uniform per-channel color noise amplitude
};

struct GroundTruth {
  LabelImage label;
  RgbImage guide;
  int instance_count = 0;
};

inline std::vector<std::uint32_t> instance_pixels(const LabelImage& l, int id) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < l.instance_plane.size(); ++i) {
    if (l.instance_plane[i] == id) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

// Rasterizes instances in declaration order (later ones occlude earlier ones);
// instance ids follow declaration order starting at 1.
inline GroundTruth gen_scene(const SceneSpec& spec) {
  if (spec.instances.empty()) throw InputError("scene needs at least one instance");
  if (spec.classes < 1) throw InputError("scene needs at least one class");
  const GridShape shape = spec.shape;
  GroundTruth gt;
  gt.label = LabelImage(shape);
  gt.instance_count = static_cast<int>(spec.instances.size());
  for (std::size_t k = 0; k < spec.instances.size(); ++k) {
    const InstanceSpec& in = spec.instances[k];
    if (in.cls < 1 || in.cls > spec.classes) {
      throw InputError("instance " + std::to_string(k + 1) + " has an invalid class");
    }
    for (int y = 0; y < shape.height; ++y) {
      for (int x = 0; x < shape.width; ++x) {
        if (!in.contains(y, x)) continue;
        gt.label.class_plane.at(y, x) = in.cls;
        gt.label.instance_plane.at(y, x) = static_cast<std::int32_t>(k + 1);
      }
    }
  }
  for (int k = 1; k <= gt.instance_count; ++k) {
    if (instance_pixels(gt.label, k).empty()) {
      throw InputError("instance " + std::to_string(k) + " is fully occluded or out of bounds");
    }
  }

  // Colors: background first, then one per instance, each kept away from the
  // background and from the previous instance color.
  Xoshiro256 rng(spec.seed ^ 0x6775696465ULL);
  auto random_color = [&rng]() {
    return std::array<double, 3>{rng.uniform(30.0, 225.0), rng.uniform(30.0, 225.0),
                                 rng.uniform(30.0, 225.0)};
  };
  auto distance = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                     (a[2] - b[2]) * (a[2] - b[2]));
  };
  std::vector<std::array<double, 3>> colors{random_color()};
  for (int k = 1; k <= gt.instance_count; ++k) {
    std::array<double, 3> c = random_color();
    for (int tries = 0; tries < 1000; ++tries) {
      bool ok = distance(c, colors[0]) >= 80.0;
      if (k > 1) ok = ok && distance(c, colors.back()) >= 50.0;
      if (ok) break;
      c = random_color();
    }
    colors.push_back(c);
  }
  gt.guide = RgbImage(shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const auto& base = colors[static_cast<std::size_t>(gt.label.instance_plane[i])];
    Rgb px;
    std::array<std::uint8_t*, 3> ch{&px.r, &px.g, &px.b};
    for (int c = 0; c < 3; ++c) {
      const double noise =
          spec.guide_noise > 0.0 ? rng.uniform(-spec.guide_noise, spec.guide_noise) : 0.0;
      *ch[c] = static_cast<std::uint8_t>(std::clamp(std::lround(base[c] + noise), 0L, 255L));
    }
    gt.guide[i] = px;
  }
  return gt;
}

namespace detail {

inline Vec2 centroid_of(const std::vector<std::uint32_t>& pix, const GridShape& shape) {
  double sy = 0.0, sx = 0.0;
  for (auto p : pix) {
    const Coord c = shape.coords(p);
    sy += c.y;
    sx += c.x;
  }
  const double inv = 1.0 / static_cast<double>(pix.size());
  return {sy * inv, sx * inv};
}

}  // namespace detail

// Partial-coverage attention maps: each instance gets 1-3 Gaussian parts placed
// near its centroid, normalized to peak 1, plus a wide low context Gaussian, all
// cut to a dilated support; classes
// take the maximum over their instances, then background noise is added and each
// present class plane is renormalized to maximum 1.
inline ScoreStack simulate_cams(const GroundTruth& gt, int classes, const CamParams& p,
                                std::uint64_t seed) {
  if (p.parts_min < 1 || p.parts_max < p.parts_min) throw InputError("invalid CAM part counts");
  if (!(p.part_sigma > 0.0) || p.coverage < 0.0 || p.noise < 0.0 || p.dilation < 0 || p.context < 0.0 ||
      !(p.context_sigma > 0.0)) {
    throw InputError("invalid CAM parameters");
  }
  const GridShape shape = gt.label.shape();
  Xoshiro256 rng(seed);
  std::vector<ScorePlane> planes(static_cast<std::size_t>(classes), ScorePlane(shape, 0.0));
  std::vector<bool> present(static_cast<std::size_t>(classes), false);

  for (int k = 1; k <= gt.instance_count; ++k) {
    const auto pix = instance_pixels(gt.label, k);
    if (pix.empty()) continue;
    const int cls = gt.label.class_plane[pix.front()];
    present[static_cast<std::size_t>(cls - 1)] = true;
    const Vec2 mu = detail::centroid_of(pix, shape);
    double radius = 0.5;
    for (auto q : pix) {
      const Coord c = shape.coords(q);
      radius = std::max(radius, std::hypot(c.y - mu.dy, c.x - mu.dx));
    }
    std::vector<std::uint32_t> eligible;
    for (auto q : pix) {
      const Coord c = shape.coords(q);
      if (std::hypot(c.y - mu.dy, c.x - mu.dx) <= p.coverage * radius) eligible.push_back(q);
    }
    if (eligible.empty()) {
      eligible.push_back(*std::min_element(pix.begin(), pix.end(), [&](auto a, auto b) {
        const Coord ca = shape.coords(a), cb = shape.coords(b);
        return std::hypot(ca.y - mu.dy, ca.x - mu.dx) < std::hypot(cb.y - mu.dy, cb.x - mu.dx);
      }));
    }
    const int parts =
        p.parts_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.parts_max - p.parts_min + 1)));
    std::vector<Coord> centers;
    for (int s = 0; s < parts; ++s) centers.push_back(shape.coords(eligible[rng.below(eligible.size())]));
    const double sigma = p.part_sigma * radius;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

    // Support: pixels within `dilation` (Euclidean) of the instance mask.
    Plane<std::uint8_t> support(shape, 0);
    const int r = p.dilation;
    for (auto q : pix) {
      const Coord c = shape.coords(q);
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          if (dy * dy + dx * dx <= r * r && shape.contains(c.y + dy, c.x + dx)) {
            support.at(c.y + dy, c.x + dx) = 1;
          }
        }
      }
    }
    ScorePlane response(shape, 0.0);
    double peak = 0.0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (!support[i]) continue;
      const Coord c = shape.coords(i);
      double v = 0.0;
      for (const Coord& m : centers) {
        const double d2 = double(c.y - m.y) * (c.y - m.y) + double(c.x - m.x) * (c.x - m.x);
        v += std::exp(-d2 * inv2s2);
      }
      response[i] = v;
      peak = std::max(peak, v);
    }
    const double ctx = 1.0 / (2.0 * std::pow(p.context_sigma * radius, 2));
    ScorePlane& plane = planes[static_cast<std::size_t>(cls - 1)];
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (!support[i] || !(peak > 0.0)) continue;
      const Coord c = shape.coords(i);
      const double d2 = (c.y - mu.dy) * (c.y - mu.dy) + (c.x - mu.dx) * (c.x - mu.dx);
      plane[i] = std::max(plane[i], std::min(1.0, response[i] / peak + p.context * std::exp(-d2 * ctx)));
    }
  }

  for (int c = 0; c < classes; ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    ScorePlane& plane = planes[static_cast<std::size_t>(c)];
    double peak = 0.0;
    for (double& v : plane.values()) {
      if (p.noise > 0.0) v += p.noise * rng.uniform();
      v = std::clamp(v, 0.0, 1.0);
      peak = std::max(peak, v);
    }
    if (peak > 0.0) {
      for (double& v : plane.values()) v /= peak;
    }
  }
  return ScoreStack(shape, std::move(planes));
}

struct OracleFields {
  DisplacementField displacement;
  BoundaryMap boundary;
};

// D*(x) = centroid of x's instance - x (zero on background); B*(x) = 1 when any
// 4-neighbor carries a different class label, background included.
inline OracleFields oracle_fields(const GroundTruth& gt) {
  const GridShape shape = gt.label.shape();
  OracleFields out{DisplacementField(shape), BoundaryMap(shape, 0.0)};
  for (int k = 1; k <= gt.instance_count; ++k) {
    const auto pix = instance_pixels(gt.label, k);
    if (pix.empty()) continue;
    const Vec2 mu = detail::centroid_of(pix, shape);
    for (auto q : pix) {
      const Coord c = shape.coords(q);
      out.displacement[q] = {mu.dy - c.y, mu.dx - c.x};
    }
  }
  const auto& cls = gt.label.class_plane;
  constexpr int kDy[4] = {-1, 1, 0, 0};
  constexpr int kDx[4] = {0, 0, -1, 1};
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      for (int n = 0; n < 4; ++n) {
        const int ny = y + kDy[n], nx = x + kDx[n];
        if (shape.contains(ny, nx) && cls.at(ny, nx) != cls.at(y, x)) {
          out.boundary.at(y, x) = 1.0;
          break;
        }
      }
    }
  }
  return out;
}

inline OracleFields perturb_fields(const DisplacementField& d, const BoundaryMap& b, double sigma_d,
                                   double sigma_b, std::uint64_t seed) {
  if (sigma_d < 0.0 || sigma_b < 0.0) throw InputError("noise levels must be >= 0");
  require_same_shape(d.shape(), b.shape(), "perturb_fields");
  OracleFields out{d, b};
  Xoshiro256 rng(seed);
  const double limit = std::hypot(d.shape().height, d.shape().width);
  for (Vec2& v : out.displacement.values()) {
    if (sigma_d > 0.0) {
      v.dy += sigma_d * rng.normal();
      v.dx += sigma_d * rng.normal();
      const double m = v.norm();
      if (m > limit) v = (limit / m) * v;
    }
  }
  for (double& v : out.boundary.values()) {
    if (sigma_b > 0.0) v = std::clamp(v + sigma_b * rng.normal(), 0.0, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random layouts.

struct LayoutParams {
  int min_instances = 2;
  int max_instances = 4;
  double min_radius = 8.0;
  double max_radius = 12.0;
  double gap = 4.0;                 // free pixels between bounding circles
  bool touching_same_class = false; // force one pair of touching same-class instances
};

namespace detail {

inline InstanceSpec random_instance(Xoshiro256& rng, int cls, double cy, double cx, double radius) {
  InstanceSpec in;
  in.cls = cls;
  in.cy = cy;
  in.cx = cx;
  in.angle = rng.uniform(0.0, std::numbers::pi);
  switch (rng.below(3)) {
    case 0:
      in.kind = ShapeKind::ellipse;
      in.ry = radius;
      in.rx = radius * rng.uniform(0.75, 1.0);
      break;
    case 1:
      in.kind = ShapeKind::rectangle;
      in.ry = radius * 0.75;
      in.rx = radius * rng.uniform(0.55, 0.75);
      break;
    default:
      in.kind = ShapeKind::blob;
      in.ry = radius * 0.85;
      in.rx = in.ry;
      in.wobble = rng.uniform(0.05, 0.15);
      break;
  }
  return in;
}

}  // namespace detail

// Places instances by rejection sampling so that bounding circles keep `gap`
// free pixels between them; with touching_same_class the first two instances
// share a class and overlap by one pixel along the line between their centers.
inline SceneSpec random_scene(const GridShape& shape, int classes, const LayoutParams& lp,
                              std::uint64_t seed, const CamParams& cam = {}) {
  Xoshiro256 rng(seed);
  SceneSpec spec;
  spec.shape = shape;
  spec.classes = classes;
  spec.seed = seed;
  spec.cam = cam;
  const int target = lp.min_instances +
                     static_cast<int>(rng.below(static_cast<std::uint64_t>(lp.max_instances - lp.min_instances + 1)));
  struct Circle {
    double y, x, r;
  };
  std::vector<Circle> placed;
  auto fits = [&](const Circle& c) {
    if (c.y - c.r < 1 || c.x - c.r < 1 || c.y + c.r > shape.height - 2 || c.x + c.r > shape.width - 2) {
      return false;
    }
    for (std::size_t k = 0; k < placed.size(); ++k) {
      if (std::hypot(c.y - placed[k].y, c.x - placed[k].x) < c.r + placed[k].r + lp.gap) return false;
    }
    return true;
  };

  for (int attempt = 0; attempt < 20000 && static_cast<int>(spec.instances.size()) < target; ++attempt) {
    const double r = rng.uniform(lp.min_radius, lp.max_radius);
    const Circle c{rng.uniform(r + 1, shape.height - r - 2), rng.uniform(r + 1, shape.width - r - 2), r};
    const int cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    if (lp.touching_same_class && spec.instances.empty()) {
      // Disks give a predictable contact region for the touching pair.
      const double r2 = rng.uniform(lp.min_radius, lp.max_radius);
      const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const Circle d{c.y + (r + r2 - 1.0) * std::sin(theta), c.x + (r + r2 - 1.0) * std::cos(theta), r2};
      if (!fits(c) || !fits(d)) continue;
      InstanceSpec a{cls, ShapeKind::ellipse, c.y, c.x, r, r, 0.0, 0.0};
      InstanceSpec b{cls, ShapeKind::ellipse, d.y, d.x, r2, r2, 0.0, 0.0};
      spec.instances.push_back(a);
      spec.instances.push_back(b);
      placed.push_back(c);
      placed.push_back(d);
      continue;
    }
    if (!fits(c)) continue;
    spec.instances.push_back(detail::random_instance(rng, cls, c.y, c.x, c.r));
    placed.push_back(c);
  }
  if (static_cast<int>(spec.instances.size()) < std::max(lp.min_instances, lp.touching_same_class ? 2 : 1)) {
    throw InputError("could not place the requested instances on a " + to_string(shape) + " grid");
  }
  return spec;
}

}  // namespace pixrel
