#pragma once

// Instance-wise CAMs, random-walk propagation, and label synthesis.

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pixrel/affinity.hpp"
#include "pixrel/core.hpp"
#include "pixrel/instancing.hpp"
#include "pixrel/parallel.hpp"
#include "pixrel/tensor_io.hpp"

namespace pixrel {

struct ChannelKey {
  int cls = 0;
  int instance = 0;
  friend bool operator==(const ChannelKey&, const ChannelKey&) = default;
  friend auto operator<=>(const ChannelKey&, const ChannelKey&) = default;
};

struct ScoreChannel {
  ChannelKey key;
  ScorePlane scores;
};

// Score planes keyed by (class, instance), kept in ascending key order.
struct InstanceScoreStack {
  GridShape shape;
  std::vector<ScoreChannel> channels;

  bool empty() const { return channels.empty(); }
};

// Channel (c, k) holds M_c where I = k and zero elsewhere; only channels with a
// nonzero pixel are emitted, and unassigned pixels (I = 0) feed none.
inline InstanceScoreStack instance_cams(const ScoreStack& cams, const InstanceMap& inst) {
  require_same_shape(cams.shape(), inst.shape(), "instance_cams");
  InstanceScoreStack out;
  out.shape = cams.shape();
  std::int32_t k_max = 0;
  for (auto k : inst.values()) k_max = std::max(k_max, k);
  for (int c = 1; c <= cams.classes(); ++c) {
    const ScorePlane& m = cams.plane(c);
    std::map<int, ScorePlane> per_instance;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const int k = inst[i];
      if (k <= 0 || m[i] == 0.0) continue;
      auto it = per_instance.find(k);
      if (it == per_instance.end()) it = per_instance.emplace(k, ScorePlane(out.shape, 0.0)).first;
      it->second[i] = m[i];
    }
    for (auto& [k, plane] : per_instance) out.channels.push_back({{c, k}, std::move(plane)});
  }
  return out;
}

// One channel per class, keyed (c, 0); used by the semantic path.
inline InstanceScoreStack class_channels(const ScoreStack& cams) {
  InstanceScoreStack out;
  out.shape = cams.shape();
  for (int c : cams.active_classes()) out.channels.push_back({{c, 0}, cams.plane(c)});
  return out;
}

// v_0 = M (.) (1 - B); v_{s+1} = T v_s, applied `steps` times per channel.
inline InstanceScoreStack propagate(const InstanceScoreStack& stack, const TransitionMatrix& t,
                                   const BoundaryMap& b, int steps) {
  if (steps < 0) throw InputError("walk steps must be >= 0");
  require_same_shape(stack.shape, b.shape(), "propagate boundary");
  require_same_shape(stack.shape, t.shape, "propagate transition");
  InstanceScoreStack out = stack;
  parallel_for(out.channels.size(), [&](std::size_t begin, std::size_t end) {
    std::vector<double> v(stack.shape.size()), w(stack.shape.size());
    for (std::size_t ch = begin; ch < end; ++ch) {
      ScorePlane& plane = out.channels[ch].scores;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = plane[i] * (1.0 - b[i]);
      for (int s = 0; s < steps; ++s) {
        spmv(t.entries, v, w);
        v.swap(w);
      }
      for (std::size_t i = 0; i < v.size(); ++i) plane[i] = v[i];
    }
  });
  return out;
}

// Lower empirical quantile: the value at rank floor(p * (n - 1)) in ascending order.
inline double lower_quantile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::floor(p * static_cast<double>(values.size() - 1)));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank), values.end());
  return values[rank];
}

struct Synthesis {
  LabelImage labels;
  // Instance id `id` in the labels refers to channels[id - 1] of the stack.
  bool empty_stack = false;
  double threshold = 0.0;
};

// Per-pixel argmax over channels (ties to the lowest key). Pixels whose maximum
// is below the background threshold, or not positive, become background.
//   quantile: threshold = lower quantile of the per-pixel maxima at bg_percentile
//   absolute: threshold = bg_percentile
//   relative: threshold = bg_percentile * global maximum score
inline Synthesis synthesize_instance_labels(const InstanceScoreStack& stack, double bg_percentile,
                                            BackgroundMode mode) {
  if (!(bg_percentile >= 0.0 && bg_percentile < 1.0)) {
    throw InputError("bg percentile must lie in [0, 1)");
  }
  Synthesis out;
  out.labels = LabelImage(stack.shape);
  if (stack.empty()) {
    out.empty_stack = true;
    return out;
  }
  const std::size_t n = stack.shape.size();
  std::vector<double> best(n, 0.0);
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double m = stack.channels[0].scores[i];
    std::size_t a = 0;
    for (std::size_t ch = 1; ch < stack.channels.size(); ++ch) {
      if (stack.channels[ch].scores[i] > m) {
        m = stack.channels[ch].scores[i];
        a = ch;
      }
    }
    best[i] = m;
    arg[i] = a;
  }
  switch (mode) {
    case BackgroundMode::quantile: out.threshold = lower_quantile(best, bg_percentile); break;
    case BackgroundMode::absolute: out.threshold = bg_percentile; break;
    case BackgroundMode::relative:
      out.threshold = bg_percentile * *std::max_element(best.begin(), best.end());
      break;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] < out.threshold || !(best[i] > 0.0)) continue;
    out.labels.class_plane[i] = stack.channels[arg[i]].key.cls;
    out.labels.instance_plane[i] = static_cast<std::int32_t>(arg[i] + 1);
  }
  return out;
}

// Semantic labels: class planes are propagated directly and the instance plane
// repeats the class plane.
inline Synthesis synthesize_semantic_labels(const ScoreStack& cams, const TransitionMatrix& t,
                                            const BoundaryMap& b, int steps, double bg_percentile,
                                            BackgroundMode mode) {
  const InstanceScoreStack walked = propagate(class_channels(cams), t, b, steps);
  Synthesis out = synthesize_instance_labels(walked, bg_percentile, mode);
  out.labels.instance_plane = out.labels.class_plane;
  return out;
}

// A stack on disk: f32 [K,H,W] scores at `path`, i32 [K,2] (class, instance)
// keys at `path`.keys.
inline void write_instance_stack(const std::string& path, const InstanceScoreStack& s) {
  const auto k = static_cast<std::uint32_t>(s.channels.size());
  std::vector<float> v;
  v.reserve(s.channels.size() * s.shape.size());
  std::vector<std::int32_t> keys;
  for (const auto& ch : s.channels) {
    for (double x : ch.scores.values()) v.push_back(static_cast<float>(x));
    keys.push_back(ch.key.cls);
    keys.push_back(ch.key.instance);
  }
  write_tensor(path, Tensor{{k, static_cast<std::uint32_t>(s.shape.height), static_cast<std::uint32_t>(s.shape.width)},
                            std::move(v)});
  write_tensor(path + ".keys", Tensor{{k, 2u}, std::move(keys)});
}

inline InstanceScoreStack read_instance_stack(const std::string& path) {
  const Tensor t = read_tensor(path);
  const Tensor keys = read_tensor(path + ".keys");
  if (t.dtype() != DType::f32 || t.dims.size() != 3 || t.dims[1] == 0 || t.dims[2] == 0) {
    throw InputError(path + ": expected an f32 [K,H,W] score stack");
  }
  if (keys.dtype() != DType::i32 || keys.dims.size() != 2 || keys.dims[0] != t.dims[0] || keys.dims[1] != 2) {
    throw InputError(path + ".keys: expected i32 [K,2] channel keys matching the stack");
  }
  InstanceScoreStack s;
  s.shape = GridShape(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
  const auto& v = t.as<float>();
  const auto& kv = keys.as<std::int32_t>();
  const std::size_t n = s.shape.size();
  for (std::size_t c = 0; c < t.dims[0]; ++c) {
    ScorePlane p(s.shape);
    for (std::size_t i = 0; i < n; ++i) p[i] = v[c * n + i];
    s.channels.push_back({{kv[2 * c], kv[2 * c + 1]}, std::move(p)});
  }
  return s;
}

}  // namespace pixrel
