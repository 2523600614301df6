#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "pixrel/affinity.hpp"
#include "pixrel/propagation.hpp"
#include "pixrel/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace pixrel;

namespace {

ScoreStack stack_of(GridShape s, std::vector<std::vector<double>> planes) {
  std::vector<ScorePlane> p;
  for (auto& v : planes) p.emplace_back(s, std::move(v));
  return ScoreStack(s, std::move(p));
}

InstanceScoreStack random_stack(Xoshiro256& rng, GridShape s, int channels) {
  InstanceScoreStack st;
  st.shape = s;
  for (int k = 0; k < channels; ++k) {
    ScorePlane p(s);
    for (auto& v : p.values()) v = rng.uniform() < 0.5 ? rng.uniform() : 0.0;
    st.channels.push_back({{1 + k % 2, 1 + k}, p});
  }
  return st;
}

// Per-pixel argmax with the lowest channel winning ties, then the lower
// quantile of the maxima as the background cut.
LabelImage argmax_quantile_oracle(const InstanceScoreStack& st, double p) {
  const std::size_t n = st.shape.size();
  std::vector<double> best(n);
  std::vector<int> arg(n);
  for (std::size_t i = 0; i < n; ++i) {
    best[i] = -1.0;
    for (std::size_t c = 0; c < st.channels.size(); ++c) {
      if (st.channels[c].scores[i] > best[i]) {
        best[i] = st.channels[c].scores[i];
        arg[i] = static_cast<int>(c);
      }
    }
  }
  std::vector<double> sorted = best;
  std::sort(sorted.begin(), sorted.end());
  const double q = sorted[static_cast<std::size_t>(std::floor(p * (n - 1)))];
  LabelImage out(st.shape);
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] >= q && best[i] > 0.0) {
      out.class_plane[i] = st.channels[arg[i]].key.cls;
      out.instance_plane[i] = arg[i] + 1;
    }
  }
  return out;
}

}  // namespace

TEST(InstanceCams, PartitionOfScores) {
  Xoshiro256 rng(1);
  const GridShape s(6, 6);
  std::vector<double> a(s.size()), b(s.size(), 0.0);
  for (auto& v : a) v = rng.uniform();
  const ScoreStack cams = stack_of(s, {a, b});

  const auto single = instance_cams(cams, InstanceMap(s, 1));
  ASSERT_EQ(single.channels.size(), 1u);
  EXPECT_EQ(single.channels[0].key, (ChannelKey{1, 1}));
  EXPECT_EQ(single.channels[0].scores, cams.plane(1));

  InstanceMap inst(s);
  for (auto& k : inst.values()) k = static_cast<std::int32_t>(rng.below(4));
  const auto st = instance_cams(cams, inst);
  for (const auto& ch : st.channels) EXPECT_EQ(ch.key.cls, 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double sum = 0.0;
    for (const auto& ch : st.channels) sum += ch.scores[i];
    EXPECT_EQ(sum, inst[i] == 0 ? 0.0 : a[i]);
  }
}

TEST(Propagate, ZeroStepsAppliesDampingOnly) {
  Xoshiro256 rng(5);
  const GridShape s(5, 5);
  const auto st = random_stack(rng, s, 2);
  BoundaryMap b(s);
  for (auto& v : b.values()) v = rng.uniform();
  const auto t = transition_matrix(build_affinity_graph(b, 2.0), 2.0);
  const auto out = propagate(st, t, b, 0);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(out.channels[c].scores[i], st.channels[c].scores[i] * (1 - b[i]));
  }
  EXPECT_THROW(propagate(st, t, b, -1), InputError);
}

TEST(Propagate, TwoPixelHalfSplit) {
  const GridShape s(1, 2);
  const BoundaryMap b(s, 0.0);
  const auto t = transition_matrix(build_affinity_graph(b, 1.5), 1.0);
  InstanceScoreStack st;
  st.shape = s;
  st.channels.push_back({{1, 0}, ScorePlane(s, std::vector<double>{1, 0})});
  const auto out = propagate(st, t, b, 1);
  EXPECT_EQ(out.channels[0].scores[0], 0.5);
  EXPECT_EQ(out.channels[0].scores[1], 0.5);
}

TEST(Propagate, MatchesDenseMatrixPower) {
  Xoshiro256 rng(13);
  const GridShape s(24, 24);
  BoundaryMap b(s);
  for (auto& v : b.values()) v = rng.uniform() < 0.2 ? rng.uniform() : 0.0;
  const auto t = transition_matrix(build_affinity_graph(b, 5.0), 10.0);
  const auto st = random_stack(rng, s, 2);
  for (int steps : {1, 16, 64}) EXPECT_LE(oracle::propagation_error(st, t, b, steps), 1e-6) << "t = " << steps;
}

TEST(Propagate, NonNegativeAndMaxBounded) {
  Xoshiro256 rng(6);
  const GridShape s(10, 12);
  const BoundaryMap b(s, 0.0);
  const auto t = transition_matrix(build_affinity_graph(b, 3.0), 3.0);
  const auto st = random_stack(rng, s, 3);
  const auto out = propagate(st, t, b, 20);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto in = st.channels[c].scores.values();
    const double top = *std::max_element(in.begin(), in.end());
    for (double v : out.channels[c].scores.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, top + 1e-12);
    }
  }
}

TEST(Synthesize, UniformQuantileKeepsEverything) {
  const GridShape s(3, 3);
  InstanceScoreStack st;
  st.shape = s;
  st.channels.push_back({{2, 1}, ScorePlane(s, 0.4)});
  const auto syn = synthesize_instance_labels(st, 0.25, BackgroundMode::quantile);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(syn.labels.class_plane[i], 2);
    EXPECT_EQ(syn.labels.instance_plane[i], 1);
  }
}

TEST(Synthesize, TwoHalves) {
  const GridShape s(2, 4);
  InstanceScoreStack st;
  st.shape = s;
  std::vector<double> a(8), b(8);
  for (std::size_t i = 0; i < 8; ++i) {
    const bool left = s.coords(i).x < 2;
    a[i] = left ? 0.9 : 0.1;
    b[i] = left ? 0.2 : 0.8;
  }
  st.channels.push_back({{1, 1}, ScorePlane(s, a)});
  st.channels.push_back({{2, 2}, ScorePlane(s, b)});
  const auto syn = synthesize_instance_labels(st, 0.0, BackgroundMode::absolute);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(syn.labels.instance_plane[i], s.coords(i).x < 2 ? 1 : 2);
}

TEST(Synthesize, MatchesArgmaxQuantileOracle) {
  Xoshiro256 rng(10);
  for (int trial = 0; trial < 40; ++trial) {
    const auto st = random_stack(rng, GridShape(8, 8), 2 + trial % 3);
    const double p = 0.05 * (trial % 10);
    const auto syn = synthesize_instance_labels(st, p, BackgroundMode::quantile);
    EXPECT_EQ(syn.labels, argmax_quantile_oracle(st, p));
    EXPECT_NO_THROW(syn.labels.validate());
  }
}

TEST(Synthesize, ModesAndErrors) {
  const GridShape s(1, 4);
  InstanceScoreStack st;
  st.shape = s;
  st.channels.push_back({{1, 1}, ScorePlane(s, std::vector<double>{0.1, 0.3, 0.6, 0.8})});
  const auto abs = synthesize_instance_labels(st, 0.3, BackgroundMode::absolute);
  EXPECT_EQ(abs.labels.class_plane.data(), (std::vector<std::int32_t>{0, 1, 1, 1}));
  const auto rel = synthesize_instance_labels(st, 0.5, BackgroundMode::relative);
  EXPECT_EQ(rel.threshold, 0.4);
  EXPECT_EQ(rel.labels.class_plane.data(), (std::vector<std::int32_t>{0, 0, 1, 1}));
  EXPECT_THROW(synthesize_instance_labels(st, 1.0, BackgroundMode::quantile), InputError);

  InstanceScoreStack empty;
  empty.shape = s;
  const auto e = synthesize_instance_labels(empty, 0.25, BackgroundMode::quantile);
  EXPECT_TRUE(e.empty_stack);
  for (auto c : e.labels.class_plane.values()) EXPECT_EQ(c, 0);
}

TEST(Synthesize, CommonScalingLeavesQuantileLabelsUnchanged) {
  Xoshiro256 rng(3);
  const auto st = random_stack(rng, GridShape(9, 9), 3);
  InstanceScoreStack scaled = st;
  for (auto& ch : scaled.channels) {
    for (double& v : ch.scores.values()) v *= 0.37;
  }
  EXPECT_EQ(synthesize_instance_labels(st, 0.25, BackgroundMode::quantile).labels,
            synthesize_instance_labels(scaled, 0.25, BackgroundMode::quantile).labels);
}

TEST(SemanticLabels, RawThresholdAtZeroStepsAndSingleInstanceEquivalence) {
  Xoshiro256 rng(12);
  const GridShape s(8, 8);
  std::vector<double> a(s.size());
  for (auto& v : a) v = rng.uniform();
  const ScoreStack cams = stack_of(s, {a});
  const BoundaryMap b(s, 0.0);
  const auto t = transition_matrix(build_affinity_graph(b, 2.5), 10.0);

  const auto raw = synthesize_semantic_labels(cams, t, b, 0, 0.25, BackgroundMode::quantile);
  const double q = lower_quantile(a, 0.25);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(raw.labels.class_plane[i], a[i] >= q ? 1 : 0);
  EXPECT_EQ(raw.labels.instance_plane, raw.labels.class_plane);

  const auto sem = synthesize_semantic_labels(cams, t, b, 16, 0.25, BackgroundMode::quantile);
  const auto walked = propagate(instance_cams(cams, InstanceMap(s, 1)), t, b, 16);
  const auto inst = synthesize_instance_labels(walked, 0.25, BackgroundMode::quantile);
  EXPECT_EQ(sem.labels.class_plane, inst.labels.class_plane);
}

TEST(InstanceStackFile, RoundTripWithKeys) {
  pixrel::testing::TempDir dir;
  Xoshiro256 rng(1);
  InstanceScoreStack st = random_stack(rng, GridShape(3, 5), 3);
  for (auto& ch : st.channels) {
    for (double& v : ch.scores.values()) v = static_cast<float>(v);
  }
  write_instance_stack(dir.file("st.fldt"), st);
  const auto back = read_instance_stack(dir.file("st.fldt"));
  ASSERT_EQ(back.channels.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(back.channels[c].key, st.channels[c].key);
    EXPECT_EQ(back.channels[c].scores, st.channels[c].scores);
  }
}
