#pragma once

// Grid and field types shared by every stage of the label synthesis pipeline.
//
// Coordinates are (y, x) in row-major order; flat index i = y * width + x.
// Displacements are stored as (dy, dx) in pixels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pixrel {

// Errors map onto the CLI exit codes: input 2, divergence 3, invariant 4.
enum class ErrorKind { input, divergence, invariant };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what)
      : Error(ErrorKind::divergence, what) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what)
      : Error(ErrorKind::invariant, what) {}
};

inline void check_invariant(bool ok, const char* what) {
  if (!ok) throw InvariantError(what);
}

struct Coord {
  int y = 0;
  int x = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

struct GridShape {
  int height = 0;
  int width = 0;

  GridShape() = default;
  GridShape(int h, int w) : height(h), width(w) {
    if (h < 1 || w < 1) throw InputError("grid shape must be at least 1x1");
  }

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool contains(int y, int x) const noexcept {
    return y >= 0 && y < height && x >= 0 && x < width;
  }
  std::size_t index(int y, int x) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
           static_cast<std::size_t>(x);
  }
  std::size_t index(Coord c) const noexcept { return index(c.y, c.x); }
  Coord coords(std::size_t i) const noexcept {
    return {static_cast<int>(i / static_cast<std::size_t>(width)),
            static_cast<int>(i % static_cast<std::size_t>(width))};
  }

  friend bool operator==(const GridShape&, const GridShape&) = default;
};

inline std::string to_string(const GridShape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

inline void require_same_shape(const GridShape& a, const GridShape& b,
                               const std::string& what) {
  if (!(a == b)) {
    throw InputError(what + ": shape mismatch " + to_string(a) +
                     " vs " + to_string(b));
  }
}

// Dense H x W plane of values.
template <typename T>
class Plane {
 public:
  Plane() = default;
  explicit Plane(GridShape shape, T fill = T{})
      : shape_(shape), data_(shape.size(), fill) {}
  Plane(GridShape shape, std::vector<T> data)
      : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw InputError("plane data length does not match shape " +
                       to_string(shape_));
    }
  }

  const GridShape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int y, int x) { return data_[shape_.index(y, x)]; }
  const T& at(int y, int x) const { return data_[shape_.index(y, x)]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  GridShape shape_;
  std::vector<T> data_;
};

using ScorePlane = Plane<double>;

// Pre-normalization class activations. Plane c holds class c + 1.
class RawScoreStack {
 public:
  RawScoreStack(GridShape shape, std::vector<ScorePlane> planes,
                std::vector<int> present_classes)
      : shape_(shape),
        planes_(std::move(planes)),
        present_(std::move(present_classes)) {
    std::sort(present_.begin(), present_.end());
    present_.erase(std::unique(present_.begin(), present_.end()), present_.end());
    const int c_count = static_cast<int>(planes_.size());
    for (int c : present_) {
      if (c < 1 || c > c_count) {
        throw InputError("present class " + std::to_string(c) + " out of range");
      }
    }
    for (int c = 1; c <= c_count; ++c) {
      const auto& p = planes_[c - 1];
      require_same_shape(p.shape(), shape_, "raw score plane");
      const bool present = std::binary_search(present_.begin(), present_.end(), c);
      for (double v : p.values()) {
        if (!std::isfinite(v) || v < 0.0) {
          throw InputError("raw scores must be finite and non-negative (class " +
                           std::to_string(c) + ")");
        }
        if (!present && v != 0.0) {
          throw InputError("absent class " + std::to_string(c) +
                           " has a nonzero plane");
        }
      }
    }
  }

  const GridShape& shape() const noexcept { return shape_; }
  int classes() const noexcept { return static_cast<int>(planes_.size()); }
  const ScorePlane& plane(int c) const { return planes_.at(c - 1); }
  const std::vector<int>& present_classes() const noexcept { return present_; }

 private:
  GridShape shape_;
  std::vector<ScorePlane> planes_;
  std::vector<int> present_;
};

// Normalized class attention maps with values in [0, 1]. Plane c holds class c + 1.
class ScoreStack {
 public:
  ScoreStack() = default;
  ScoreStack(GridShape shape, std::vector<ScorePlane> planes)
      : shape_(shape), planes_(std::move(planes)) {
    for (const auto& p : planes_) {
      require_same_shape(p.shape(), shape_, "score plane");
      for (double v : p.values()) {
        if (!(v >= 0.0 && v <= 1.0)) {
          throw InputError("normalized scores must lie in [0, 1]");
        }
      }
    }
  }

  const GridShape& shape() const noexcept { return shape_; }
  int classes() const noexcept { return static_cast<int>(planes_.size()); }
  const ScorePlane& plane(int c) const { return planes_.at(c - 1); }
  const std::vector<ScorePlane>& planes() const noexcept { return planes_; }

  // Classes whose plane is not identically zero.
  std::vector<int> active_classes() const {
    std::vector<int> out;
    for (int c = 1; c <= classes(); ++c) {
      const auto v = plane(c).values();
      if (std::any_of(v.begin(), v.end(), [](double s) { return s != 0.0; })) {
        out.push_back(c);
      }
    }
    return out;
  }

  double max_score(std::size_t i) const {
    double m = 0.0;
    for (const auto& p : planes_) m = std::max(m, p[i]);
    return m;
  }

 private:
  GridShape shape_;
  std::vector<ScorePlane> planes_;
};

struct Vec2 {
  double dy = 0.0;
  double dx = 0.0;

  Vec2& operator+=(const Vec2& o) {
    dy += o.dy;
    dx += o.dx;
    return *this;
  }
  Vec2& operator-=(const Vec2& o) {
    dy -= o.dy;
    dx -= o.dx;
    return *this;
  }
  friend Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.dy, s * a.dx}; }
  double norm() const { return std::hypot(dy, dx); }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

using DisplacementField = Plane<Vec2>;
using BoundaryMap = Plane<double>;

inline void check_displacement(const DisplacementField& d) {
  const double diag = std::hypot(d.shape().height, d.shape().width);
  for (const Vec2& v : d.values()) {
    if (!std::isfinite(v.dy) || !std::isfinite(v.dx)) {
      throw InputError("displacement field has non-finite components");
    }
    if (v.norm() > diag + 1e-9) {
      throw InputError("displacement magnitude exceeds the grid diagonal");
    }
  }
}

inline void check_boundary(const BoundaryMap& b) {
  for (double v : b.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("boundary values must lie in [0, 1]");
  }
}

// Class plane (0 = background) and instance plane (0 = none).
struct LabelImage {
  Plane<std::int32_t> class_plane;
  Plane<std::int32_t> instance_plane;

  LabelImage() = default;
  explicit LabelImage(GridShape shape) : class_plane(shape, 0), instance_plane(shape, 0) {}

  const GridShape& shape() const noexcept { return class_plane.shape(); }

  void validate() const {
    require_same_shape(class_plane.shape(), instance_plane.shape(), "label image");
    std::vector<std::pair<std::int32_t, std::int32_t>> seen;
    for (std::size_t i = 0; i < class_plane.size(); ++i) {
      const auto c = class_plane[i];
      const auto k = instance_plane[i];
      if (c < 0 || k < 0) throw InvariantError("label ids must be non-negative");
      if ((c == 0) != (k == 0)) {
        throw InvariantError("instance id must be zero exactly on background");
      }
      if (k != 0) seen.emplace_back(k, c);
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (std::size_t i = 1; i < seen.size(); ++i) {
      if (seen[i].first == seen[i - 1].first) {
        throw InvariantError("instance " + std::to_string(seen[i].first) +
                             " maps to more than one class");
      }
    }
  }

  friend bool operator==(const LabelImage&, const LabelImage&) = default;
};

enum class BackgroundMode { quantile, absolute, relative };

inline const char* to_string(BackgroundMode m) {
  switch (m) {
    case BackgroundMode::quantile: return "quantile";
    case BackgroundMode::absolute: return "absolute";
    case BackgroundMode::relative: return "relative";
  }
  return "?";
}

inline BackgroundMode parse_background_mode(const std::string& s) {
  if (s == "quantile") return BackgroundMode::quantile;
  if (s == "absolute") return BackgroundMode::absolute;
  if (s == "relative") return BackgroundMode::relative;
  throw InputError("unknown background mode '" + s + "'");
}

struct PipelineConfig {
  double theta_fg = 0.3;
  double theta_bg = 0.05;
  double gamma_train = 10.0;
  double gamma_infer = 5.0;
  double beta = 10.0;
  int walk_steps = 256;
  int refine_iters = 100;
  double centroid_threshold = 2.5;
  double bg_percentile = 0.25;
  double eps_clamp = 1e-5;
  double snap_radius = 5.0;

  void validate() const {
    if (!(0.0 < theta_bg && theta_bg < theta_fg && theta_fg < 1.0)) {
      throw InputError("thresholds must satisfy 0 < theta_bg < theta_fg < 1");
    }
    if (gamma_train < 1.0 || gamma_infer < 1.0) throw InputError("radii must be >= 1");
    if (beta < 1.0) throw InputError("beta must be >= 1");
    if (walk_steps < 1) throw InputError("walk steps must be >= 1");
    if (refine_iters < 0) throw InputError("refine iterations must be >= 0");
    if (!(centroid_threshold > 0.0)) throw InputError("centroid threshold must be > 0");
    if (!(bg_percentile >= 0.0 && bg_percentile < 1.0)) {
      throw InputError("bg percentile must lie in [0, 1)");
    }
  }
};

}  // namespace pixrel
