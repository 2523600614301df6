#pragma once

// CAM normalization, confident seed extraction, and windowed mean-field
// refinement of the seed map against a color guide image.

#include <cmath>
#include <cstdint>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/parallel.hpp"
#include "pixrel/tensor_io.hpp"

namespace pixrel {

// Per-pixel pseudo class map: 0 background, 1..254 class, 255 neutral.
using ClassSeedMap = Plane<std::uint8_t>;
inline constexpr std::uint8_t kSeedBackground = 0;
inline constexpr std::uint8_t kSeedNeutral = 255;

inline bool is_neutral(std::uint8_t s) { return s == kSeedNeutral; }
inline bool is_foreground(std::uint8_t s) { return s != kSeedBackground && s != kSeedNeutral; }

// Divides each present-class plane by its spatial maximum. Present classes whose
// plane is identically zero are left zero and reported through `degenerate`.
inline ScoreStack normalize_cam(const RawScoreStack& raw, std::vector<int>* degenerate = nullptr) {
  std::vector<ScorePlane> planes;
  planes.reserve(static_cast<std::size_t>(raw.classes()));
  for (int c = 1; c <= raw.classes(); ++c) {
    ScorePlane p = raw.plane(c);
    double peak = 0.0;
    for (double v : p.values()) peak = std::max(peak, v);
    if (peak > 0.0) {
      for (double& v : p.values()) v /= peak;
    } else if (degenerate != nullptr &&
               std::binary_search(raw.present_classes().begin(), raw.present_classes().end(), c)) {
      degenerate->push_back(c);
    }
    planes.push_back(std::move(p));
  }
  return ScoreStack(raw.shape(), std::move(planes));
}

inline RawScoreStack to_raw(const ScoreStack& s) {
  return RawScoreStack(s.shape(), s.planes(), s.active_classes());
}

// Threshold-then-argmax with ties resolved to the lowest class index.
inline std::uint8_t seed_label(const ScoreStack& cams, std::size_t i, double theta_fg,
                               double theta_bg) {
  double best = 0.0;
  int best_c = 0;
  for (int c = 1; c <= cams.classes(); ++c) {
    const double v = cams.plane(c)[i];
    if (v > best) {
      best = v;
      best_c = c;
    }
  }
  if (best > theta_fg) return static_cast<std::uint8_t>(best_c);
  if (best < theta_bg) return kSeedBackground;
  return kSeedNeutral;
}

inline ClassSeedMap extract_seeds(const ScoreStack& cams, double theta_fg, double theta_bg) {
  if (!(0.0 < theta_bg && theta_bg < theta_fg)) {
    throw InputError("seed thresholds must satisfy 0 < theta_bg < theta_fg");
  }
  if (cams.classes() >= kSeedNeutral) throw InputError("at most 254 classes are supported");
  ClassSeedMap seeds(cams.shape(), kSeedNeutral);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    seeds[i] = seed_label(cams, i, theta_fg, theta_bg);
  }
  return seeds;
}

struct RefineParams {
  int window_radius = 5;
  int iters = 5;
  double sigma_spatial = 3.0;
  double sigma_appearance = 13.0;  // in 0-255 color units
  double compat = 1.0;             // Potts weight on the pairwise messages
  double theta_fg = 0.3;
  double theta_bg = 0.05;
  double unary_floor = 1e-5;
};

namespace detail {

// Unary probabilities over {background, active classes...}. Confident pixels use
// the clamped CAM scores with 1 - max score for background; neutral pixels are
// left uninformative.
inline std::vector<double> seed_unaries(const ClassSeedMap& seeds, const ScoreStack& cams,
                                        const std::vector<int>& labels, double floor) {
  const std::size_t n = seeds.size();
  const std::size_t l_count = labels.size() + 1;
  std::vector<double> u(n * l_count);
  for (std::size_t i = 0; i < n; ++i) {
    double* ui = &u[i * l_count];
    if (is_neutral(seeds[i])) {
      for (std::size_t l = 0; l < l_count; ++l) ui[l] = 1.0 / static_cast<double>(l_count);
      continue;
    }
    ui[0] = std::clamp(1.0 - cams.max_score(i), floor, 1.0);
    for (std::size_t l = 0; l < labels.size(); ++l) {
      ui[l + 1] = std::clamp(cams.plane(labels[l])[i], floor, 1.0);
    }
    double sum = 0.0;
    for (std::size_t l = 0; l < l_count; ++l) sum += ui[l];
    for (std::size_t l = 0; l < l_count; ++l) ui[l] /= sum;
  }
  return u;
}

}  // namespace detail

// Windowed mean-field with a truncated Gaussian bilateral kernel
//   k(i, j) = exp(-|p_i - p_j|^2 / 2 s_s^2 - |I_i - I_j|^2 / 2 s_a^2)
// and Potts compatibility; Q_i(l) ~ u_i(l) exp(compat * sum_j k(i, j) Q_j(l)).
// The refined probabilities are re-thresholded with the seed rules.
inline ClassSeedMap refine_seeds(const ClassSeedMap& seeds, const ScoreStack& cams,
                                 const RgbImage& guide, const RefineParams& params) {
  require_same_shape(seeds.shape(), cams.shape(), "refine_seeds cams");
  require_same_shape(seeds.shape(), guide.shape(), "refine_seeds guide");
  if (params.iters < 0) throw InputError("refine iterations must be >= 0");
  if (params.iters == 0) return seeds;

  const GridShape shape = seeds.shape();
  const std::vector<int> labels = cams.active_classes();
  const std::size_t l_count = labels.size() + 1;
  const std::size_t n = shape.size();
  const std::vector<double> unary =
      detail::seed_unaries(seeds, cams, labels, params.unary_floor);

  const int r = params.window_radius;
  const double inv_s = 1.0 / (2.0 * params.sigma_spatial * params.sigma_spatial);
  const double inv_a = 1.0 / (2.0 * params.sigma_appearance * params.sigma_appearance);

  std::vector<double> q = unary;
  std::vector<double> next(q.size());
  for (int it = 0; it < params.iters; ++it) {
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
      std::vector<double> msg(l_count);
      for (std::size_t i = begin; i < end; ++i) {
        const Coord ci = shape.coords(i);
        const Rgb gi = guide[i];
        std::fill(msg.begin(), msg.end(), 0.0);
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            if ((dy == 0 && dx == 0) || !shape.contains(ci.y + dy, ci.x + dx)) continue;
            const std::size_t j = shape.index(ci.y + dy, ci.x + dx);
            const Rgb gj = guide[j];
            const double dr = double(gi.r) - gj.r, dg = double(gi.g) - gj.g,
                         db = double(gi.b) - gj.b;
            const double k = std::exp(-(dy * dy + dx * dx) * inv_s -
                                      (dr * dr + dg * dg + db * db) * inv_a);
            for (std::size_t l = 0; l < l_count; ++l) msg[l] += k * q[j * l_count + l];
          }
        }
        // Normalize in the log domain for stability.
        double top = -1e300;
        for (std::size_t l = 0; l < l_count; ++l) {
          msg[l] = std::log(unary[i * l_count + l]) + params.compat * msg[l];
          top = std::max(top, msg[l]);
        }
        double sum = 0.0;
        for (std::size_t l = 0; l < l_count; ++l) {
          msg[l] = std::exp(msg[l] - top);
          sum += msg[l];
        }
        for (std::size_t l = 0; l < l_count; ++l) next[i * l_count + l] = msg[l] / sum;
      }
    });
    q.swap(next);
  }

  ClassSeedMap out(shape, kSeedNeutral);
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int best_c = 0;
    for (std::size_t l = 1; l < l_count; ++l) {
      if (q[i * l_count + l] > best) {
        best = q[i * l_count + l];
        best_c = labels[l - 1];
      }
    }
    if (best > params.theta_fg) {
      out[i] = static_cast<std::uint8_t>(best_c);
    } else if (best < params.theta_bg) {
      out[i] = kSeedBackground;
    }
  }
  return out;
}

inline void write_seeds(const std::string& path, const ClassSeedMap& s) {
  write_tensor(path, plane_tensor(s));
}

inline ClassSeedMap read_seeds(const std::string& path) {
  const Tensor t = read_tensor(path);
  const GridShape shape = expect_dims(t, DType::u8, 2, path);
  return ClassSeedMap(shape, t.as<std::uint8_t>());
}

}  // namespace pixrel
