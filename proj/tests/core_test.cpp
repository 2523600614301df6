#include <gtest/gtest.h>

#include <cstring>

#include "pixrel/core.hpp"
#include "pixrel/rng.hpp"
#include "pixrel/seeding.hpp"
#include "pixrel/tensor_io.hpp"
#include "test_util.hpp"

using namespace pixrel;
using pixrel::testing::TempDir;
using pixrel::testing::slurp;
using pixrel::testing::dump;

TEST(GridShape, FlatIndexIsABijection) {
  for (int h = 1; h <= 7; ++h) {
    for (int w = 1; w <= 7; ++w) {
      const GridShape s(h, w);
      std::vector<bool> hit(s.size(), false);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const auto i = s.index(y, x);
          ASSERT_EQ(i, static_cast<std::size_t>(y * w + x));
          ASSERT_EQ(s.coords(i), (Coord{y, x}));
          hit[i] = true;
        }
      }
      for (bool b : hit) ASSERT_TRUE(b);
    }
  }
}

TEST(GridShape, RejectsEmpty) {
  EXPECT_THROW(GridShape(0, 3), InputError);
  EXPECT_THROW(GridShape(3, 0), InputError);
}

TEST(RawScoreStack, AbsentClassMustBeZero) {
  const GridShape s(2, 2);
  std::vector<ScorePlane> planes{ScorePlane(s, 0.5), ScorePlane(s, 1.0)};
  EXPECT_THROW(RawScoreStack(s, planes, {1}), InputError);
  EXPECT_NO_THROW(RawScoreStack(s, planes, {1, 2}));
}

TEST(RawScoreStack, RejectsNegativeAndNonFinite) {
  const GridShape s(1, 2);
  EXPECT_THROW(RawScoreStack(s, {ScorePlane(s, std::vector<double>{1.0, -0.1})}, {1}), InputError);
  EXPECT_THROW(RawScoreStack(s, {ScorePlane(s, std::vector<double>{1.0, std::nan("")})}, {1}), InputError);
}

TEST(ScoreStack, NormalizationIsIdempotent) {
  Xoshiro256 rng(11);
  const GridShape s(5, 6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ScorePlane> planes;
    for (int c = 0; c < 3; ++c) {
      ScorePlane p(s);
      for (auto& v : p.values()) v = c == 2 ? 0.0 : 7.0 * rng.uniform();
      planes.push_back(p);
    }
    const ScoreStack once = normalize_cam(RawScoreStack(s, planes, {1, 2}));
    const ScoreStack twice = normalize_cam(to_raw(once));
    for (int c = 1; c <= 3; ++c) {
      EXPECT_EQ(once.plane(c), twice.plane(c));
    }
    for (int c = 1; c <= 2; ++c) {
      const auto v = once.plane(c).values();
      EXPECT_EQ(*std::max_element(v.begin(), v.end()), 1.0);
    }
    EXPECT_EQ(once.active_classes(), (std::vector<int>{1, 2}));
  }
}

TEST(LabelImage, ValidateCatchesBrokenInvariants) {
  LabelImage l(GridShape(1, 3));
  l.class_plane[0] = 1;
  EXPECT_THROW(l.validate(), InvariantError);
  l.instance_plane[0] = 4;
  EXPECT_NO_THROW(l.validate());
  l.class_plane[1] = 2;
  l.instance_plane[1] = 4;
  EXPECT_THROW(l.validate(), InvariantError);
}

TEST(PipelineConfig, DefaultsAndValidation) {
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.theta_fg, 0.3);
  EXPECT_EQ(c.walk_steps, 256);
  c.theta_bg = 0.4;
  EXPECT_THROW(c.validate(), InputError);
  c = PipelineConfig{};
  c.beta = 0.5;
  EXPECT_THROW(c.validate(), InputError);
  c = PipelineConfig{};
  c.gamma_infer = 0.9;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Fldt, SmallestTensorLayout) {
  TempDir dir;
  const auto path = dir.file("one.fldt");
  write_tensor(path, {{1, 1}, std::vector<float>{0.5f}});
  const auto bytes = slurp(path);
  // 8 header bytes, two u32 dims, one f32.
  ASSERT_EQ(bytes.size(), 20u);
  EXPECT_EQ(std::memcmp(bytes.data(), "FLDT", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[12], 1);
  // 0.5f = 0x3F000000 little-endian.
  EXPECT_EQ(bytes[16], 0x00);
  EXPECT_EQ(bytes[19], 0x3F);

  const Tensor t = read_tensor(path);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{1, 1}));
  EXPECT_EQ(t.as<float>(), std::vector<float>{0.5f});
}

TEST(Fldt, RoundTripIsLosslessForEveryDtype) {
  TempDir dir;
  Xoshiro256 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint32_t> dims;
    const auto nd = 1 + rng.below(4);
    std::size_t n = 1;
    for (std::uint64_t k = 0; k < nd; ++k) {
      dims.push_back(static_cast<std::uint32_t>(1 + rng.below(5)));
      n *= dims.back();
    }
    Tensor t;
    t.dims = dims;
    switch (trial % 3) {
      case 0: {
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(rng.normal() * 1e3);
        t.data = v;
        break;
      }
      case 1: {
        std::vector<std::uint8_t> v(n);
        for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(256));
        t.data = v;
        break;
      }
      default: {
        std::vector<std::int32_t> v(n);
        for (auto& x : v) x = static_cast<std::int32_t>(rng.next());
        t.data = v;
      }
    }
    const auto path = dir.file("t.fldt");
    write_tensor(path, t);
    const auto first = slurp(path);
    EXPECT_EQ(read_tensor(path), t);
    write_tensor(path, t);
    EXPECT_EQ(slurp(path), first);
  }
}

TEST(Fldt, RandomF32Tensor345) {
  TempDir dir;
  Xoshiro256 rng(9);
  std::vector<float> v(60);
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  write_tensor(dir.file("a.fldt"), {{3, 4, 5}, v});
  EXPECT_EQ(read_tensor(dir.file("a.fldt")).as<float>(), v);
}

namespace {

TensorErrc read_error(const std::string& path) {
  try {
    read_tensor(path);
  } catch (const TensorIoError& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a tensor error";
  return TensorErrc::unreadable;
}

}  // namespace

TEST(Fldt, DistinctErrors) {
  TempDir dir;
  const auto path = dir.file("bad.fldt");
  write_tensor(path, {{100}, std::vector<float>(100, 1.0f)});
  auto bytes = slurp(path);

  auto magic = bytes;
  std::memcpy(magic.data(), "XXXX", 4);
  dump(path, magic);
  EXPECT_EQ(read_error(path), TensorErrc::bad_magic);

  auto dtype = bytes;
  dtype[5] = 7;
  dump(path, dtype);
  EXPECT_EQ(read_error(path), TensorErrc::unknown_dtype);

  auto half = bytes;
  half.resize(12 + 50 * 4);
  dump(path, half);
  EXPECT_EQ(read_error(path), TensorErrc::truncated);

  auto longer = bytes;
  longer.push_back(0);
  dump(path, longer);
  EXPECT_EQ(read_error(path), TensorErrc::trailing_bytes);

  auto version = bytes;
  version[4] = 2;
  dump(path, version);
  EXPECT_EQ(read_error(path), TensorErrc::bad_version);

  EXPECT_EQ(read_error(dir.file("missing.fldt")), TensorErrc::unreadable);
  EXPECT_THROW(write_tensor(dir.file("no/such/dir.fldt"), {{1}, std::vector<float>{1.f}}), TensorIoError);
  EXPECT_THROW(write_tensor(dir.file("m.fldt"), {{2, 2}, std::vector<float>{1.f}}), TensorIoError);
}

TEST(Pnm, GrayHeaderAndRoundTrip) {
  TempDir dir;
  const auto path = dir.file("g.pgm");
  const Plane<std::uint8_t> img(GridShape(2, 2), std::vector<std::uint8_t>{0, 255, 128, 64});
  write_pgm(path, img);
  const auto bytes = slurp(path);
  ASSERT_EQ(bytes.size(), 15u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 11), "P5\n2 2\n255\n");
  EXPECT_EQ(read_pgm(path), img);
}

TEST(Pnm, ColorRoundTripAndSinglePixel) {
  TempDir dir;
  RgbImage img(GridShape(3, 2));
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = {static_cast<std::uint8_t>(i), static_cast<std::uint8_t>(40 * i), 255};
  }
  write_ppm(dir.file("c.ppm"), img);
  EXPECT_EQ(read_ppm(dir.file("c.ppm")), img);

  write_pgm(dir.file("z.pgm"), Plane<std::uint8_t>(GridShape(1, 1), 0));
  const auto z = slurp(dir.file("z.pgm"));
  EXPECT_EQ(std::string(z.begin(), z.begin() + 3), "P5\n");
  EXPECT_EQ(read_pgm(dir.file("z.pgm")).at(0, 0), 0);
}

TEST(Pnm, HeaderCommentsAreSkipped) {
  TempDir dir;
  const std::string text = "P5\n# note\n1 2\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  bytes.push_back(7);
  bytes.push_back(9);
  dump(dir.file("c.pgm"), bytes);
  const auto img = read_pgm(dir.file("c.pgm"));
  EXPECT_EQ(img.shape(), GridShape(2, 1));
  EXPECT_EQ(img.at(1, 0), 9);
}

TEST(LabelsFile, RoundTrip) {
  TempDir dir;
  LabelImage l(GridShape(2, 3));
  l.class_plane[1] = 2;
  l.instance_plane[1] = 5;
  write_labels(dir.file("l.fldt"), l);
  EXPECT_EQ(read_labels(dir.file("l.fldt")), l);
}
