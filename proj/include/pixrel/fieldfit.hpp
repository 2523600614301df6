#pragma once

// Direct per-pixel optimization of the displacement and boundary fields against
// mined relations. Stands in for training a network: every pixel owns its own
// displacement vector and boundary logit.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pixrel/core.hpp"
#include "pixrel/losses.hpp"
#include "pixrel/relations.hpp"
#include "pixrel/rng.hpp"

namespace pixrel {

struct FitConfig {
  int steps = 500;
  double step_size = 0.1;
  double momentum = 0.9;      // first-moment decay
  double second_moment = 0.999;
  double decay_power = 0.9;   // step_size * (1 - s / steps)^decay_power
  double init_scale = 1.0;    // std-dev of the initial displacement components
  std::uint64_t seed = 0;
  LossWeights weights;
  double eps_clamp = 1e-5;

  void validate() const {
    if (steps < 0) throw InputError("fit steps must be >= 0");
    if (!(step_size > 0.0)) throw InputError("fit step size must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
    if (!(second_moment >= 0.0 && second_moment < 1.0)) {
      throw InputError("second-moment decay must lie in [0, 1)");
    }
    if (init_scale < 0.0) throw InputError("init scale must be >= 0");
  }
};

struct FieldInit {
  DisplacementField displacement;
  BoundaryMap boundary_logits;
};

// D components i.i.d. Normal(0, init_scale^2) drawn in row-major (dy, dx) order;
// boundary logits zero, i.e. B = 0.5.
inline FieldInit init_fields(const GridShape& shape, double init_scale, std::uint64_t seed) {
  if (init_scale < 0.0) throw InputError("init scale must be >= 0");
  FieldInit out{DisplacementField(shape), BoundaryMap(shape, 0.0)};
  if (init_scale == 0.0) return out;
  Xoshiro256 rng(seed);
  for (Vec2& v : out.displacement.values()) {
    v.dy = init_scale * rng.normal();
    v.dx = init_scale * rng.normal();
  }
  return out;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct FitResult {
  DisplacementField displacement;
  BoundaryMap boundary;
  // Loss before each update, plus the final loss: steps + 1 entries.
  std::vector<double> trace;
};

// Adam-style normalized momentum descent with polynomial step decay on the
// joint loss; B is parametrized as logistic(logits) so it stays in (0, 1).
inline FitResult fit_fields(const PairSet& pairs, const GridShape& shape, const FitConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw InputError("fit_fields needs at least one nonempty pair partition");
  FieldInit init = init_fields(shape, cfg.init_scale, cfg.seed);
  DisplacementField d = std::move(init.displacement);
  BoundaryMap z = std::move(init.boundary_logits);
  BoundaryMap b(shape);
  auto sync_b = [&] {
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = logistic(z[i]);
  };
  sync_b();

  const std::size_t n = shape.size();
  // Moments laid out as [dy, dx, logit] per pixel.
  std::vector<double> m1(3 * n, 0.0), m2(3 * n, 0.0);
  const double limit = std::hypot(shape.height, shape.width);
  const double eps = 1e-8;

  FitResult out;
  out.trace.reserve(static_cast<std::size_t>(cfg.steps) + 1);
  auto record = [&](double v, int step) {
    if (!std::isfinite(v)) {
      throw DivergenceError("fit diverged: non-finite loss at step " + std::to_string(step));
    }
    out.trace.push_back(v);
  };

  const detail::PairCache cache(pairs, shape);
  double c1 = 1.0, c2 = 1.0;
  for (int s = 0; s < cfg.steps; ++s) {
    const TotalLoss loss = detail::total_loss_cached(d, b, pairs, cache, cfg.weights, cfg.eps_clamp);
    record(loss.total.value, s);
    const auto& gd = *loss.total.grad_d;
    const auto& gb = *loss.total.grad_b;

    c1 *= cfg.momentum;
    c2 *= cfg.second_moment;
    const double lr = cfg.step_size *
                      std::pow(1.0 - static_cast<double>(s) / cfg.steps, cfg.decay_power);
    auto update = [&](std::size_t slot, double g, double& param) {
      m1[slot] = cfg.momentum * m1[slot] + (1.0 - cfg.momentum) * g;
      m2[slot] = cfg.second_moment * m2[slot] + (1.0 - cfg.second_moment) * g * g;
      const double mh = m1[slot] / (1.0 - c1);
      const double vh = m2[slot] / (1.0 - c2);
      param -= lr * mh / (std::sqrt(vh) + eps);
    };
    for (std::size_t i = 0; i < n; ++i) {
      update(3 * i, gd[i].dy, d[i].dy);
      update(3 * i + 1, gd[i].dx, d[i].dx);
      update(3 * i + 2, gb[i] * b[i] * (1.0 - b[i]), z[i]);
      d[i].dy = std::clamp(d[i].dy, -limit, limit);
      d[i].dx = std::clamp(d[i].dx, -limit, limit);
      // Keep the logistic away from exact 0 / 1 in double precision.
      z[i] = std::clamp(z[i], -30.0, 30.0);
    }
    sync_b();
  }
  record(detail::total_loss_cached(d, b, pairs, cache, cfg.weights, cfg.eps_clamp).total.value, cfg.steps);

  // The grid-diagonal bound applies to the vector magnitude.
  for (Vec2& v : d.values()) {
    const double m = v.norm();
    if (m > limit) v = (limit / m) * v;
  }
  out.displacement = std::move(d);
  out.boundary = std::move(b);
  return out;
}

}  // namespace pixrel
