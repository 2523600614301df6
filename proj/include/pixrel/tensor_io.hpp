#pragma once

// FLDT binary tensors and binary PGM/PPM images.
//
// FLDT layout: "FLDT" magic, version byte (1), dtype byte (0 f32, 1 u8, 2 i32),
// ndim byte, reserved zero byte, ndim little-endian u32 dims, then the row-major
// little-endian payload.

#include <array>
#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "pixrel/core.hpp"

namespace pixrel {

enum class DType : std::uint8_t { f32 = 0, u8 = 1, i32 = 2 };

enum class TensorErrc {
  unwritable,
  unreadable,
  bad_magic,
  bad_version,
  unknown_dtype,
  truncated,
  trailing_bytes,
  dim_overflow,
  size_mismatch,
};

inline const char* to_string(TensorErrc e) {
  switch (e) {
    case TensorErrc::unwritable: return "unwritable path";
    case TensorErrc::unreadable: return "unreadable path";
    case TensorErrc::bad_magic: return "bad magic";
    case TensorErrc::bad_version: return "unsupported version";
    case TensorErrc::unknown_dtype: return "unknown dtype code";
    case TensorErrc::truncated: return "truncated payload";
    case TensorErrc::trailing_bytes: return "trailing bytes after payload";
    case TensorErrc::dim_overflow: return "dimension overflow";
    case TensorErrc::size_mismatch: return "dims do not match data length";
  }
  return "?";
}

class TensorIoError : public InputError {
 public:
  TensorIoError(TensorErrc code, const std::string& path)
      : InputError(path + ": " + to_string(code)), code_(code) {}
  TensorErrc code() const noexcept { return code_; }

 private:
  TensorErrc code_;
};

struct Tensor {
  using Data = std::variant<std::vector<float>, std::vector<std::uint8_t>,
                            std::vector<std::int32_t>>;

  std::vector<std::uint32_t> dims;
  Data data;

  DType dtype() const { return static_cast<DType>(data.index()); }
  std::size_t element_count() const {
    return std::visit([](const auto& v) { return v.size(); }, data);
  }
  template <typename T>
  const std::vector<T>& as() const {
    return std::get<std::vector<T>>(data);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace detail {

inline constexpr std::array<char, 4> kMagic = {'F', 'L', 'D', 'T'};
inline constexpr std::uint8_t kVersion = 1;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::size_t element_size(DType t) { return t == DType::u8 ? 1 : 4; }

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorIoError(TensorErrc::unreadable, path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TensorIoError(TensorErrc::unwritable, path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TensorIoError(TensorErrc::unwritable, path);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_tensor(const Tensor& t,
                                               const std::string& name = "<memory>") {
  if (t.dims.size() > 255) throw TensorIoError(TensorErrc::dim_overflow, name);
  std::uint64_t count = 1;
  for (auto d : t.dims) {
    count *= d;
    if (count > std::numeric_limits<std::uint32_t>::max()) {
      throw TensorIoError(TensorErrc::dim_overflow, name);
    }
  }
  if (count != t.element_count()) throw TensorIoError(TensorErrc::size_mismatch, name);

  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.dims.size() + count * detail::element_size(t.dtype()));
  out.insert(out.end(), detail::kMagic.begin(), detail::kMagic.end());
  out.push_back(detail::kVersion);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(static_cast<std::uint8_t>(t.dims.size()));
  out.push_back(0);
  for (auto d : t.dims) detail::put_u32(out, d);

  std::visit(
      [&out](const auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        for (T x : v) {
          if constexpr (sizeof(T) == 1) {
            out.push_back(x);
          } else {
            detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
          }
        }
      },
      t.data);
  return out;
}

inline Tensor decode_tensor(const std::vector<std::uint8_t>& bytes,
                            const std::string& name = "<memory>") {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kMagic.data(), 4) != 0) {
    throw TensorIoError(TensorErrc::bad_magic, name);
  }
  if (bytes[4] != detail::kVersion) throw TensorIoError(TensorErrc::bad_version, name);
  if (bytes[5] > 2) throw TensorIoError(TensorErrc::unknown_dtype, name);
  const auto dtype = static_cast<DType>(bytes[5]);
  const std::size_t ndim = bytes[6];
  if (bytes.size() < 8 + 4 * ndim) throw TensorIoError(TensorErrc::truncated, name);

  Tensor t;
  std::uint64_t count = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    t.dims.push_back(detail::get_u32(bytes.data() + 8 + 4 * k));
    count *= t.dims.back();
    if (count > std::numeric_limits<std::uint32_t>::max()) {
      throw TensorIoError(TensorErrc::dim_overflow, name);
    }
  }
  const std::size_t offset = 8 + 4 * ndim;
  const std::size_t payload = count * detail::element_size(dtype);
  if (bytes.size() < offset + payload) throw TensorIoError(TensorErrc::truncated, name);
  if (bytes.size() > offset + payload) {
    throw TensorIoError(TensorErrc::trailing_bytes, name);
  }

  const std::uint8_t* p = bytes.data() + offset;
  switch (dtype) {
    case DType::f32: {
      std::vector<float> v(count);
      for (std::size_t i = 0; i < count; ++i) v[i] = std::bit_cast<float>(detail::get_u32(p + 4 * i));
      t.data = std::move(v);
      break;
    }
    case DType::u8:
      t.data = std::vector<std::uint8_t>(p, p + count);
      break;
    case DType::i32: {
      std::vector<std::int32_t> v(count);
      for (std::size_t i = 0; i < count; ++i) {
        v[i] = std::bit_cast<std::int32_t>(detail::get_u32(p + 4 * i));
      }
      t.data = std::move(v);
      break;
    }
  }
  return t;
}

inline void write_tensor(const std::string& path, const Tensor& t) {
  detail::write_file(path, encode_tensor(t, path));
}

inline Tensor read_tensor(const std::string& path) {
  return decode_tensor(detail::read_file(path), path);
}

// ---------------------------------------------------------------------------
// Typed conversions for pipeline objects.

inline GridShape expect_dims(const Tensor& t, DType dtype, std::size_t ndim,
                             const std::string& path) {
  if (t.dtype() != dtype || t.dims.size() != ndim) {
    throw InputError(path + ": unexpected tensor dtype or rank");
  }
  return GridShape(static_cast<int>(t.dims[ndim - 2]), static_cast<int>(t.dims[ndim - 1]));
}

inline Tensor to_tensor(const std::vector<ScorePlane>& planes, GridShape shape) {
  std::vector<float> v;
  v.reserve(planes.size() * shape.size());
  for (const auto& p : planes) {
    for (double s : p.values()) v.push_back(static_cast<float>(s));
  }
  return {{static_cast<std::uint32_t>(planes.size()), static_cast<std::uint32_t>(shape.height),
           static_cast<std::uint32_t>(shape.width)},
          std::move(v)};
}

inline std::vector<ScorePlane> planes_from_tensor(const Tensor& t, const std::string& path) {
  if (t.dtype() != DType::f32 || t.dims.size() != 3) {
    throw InputError(path + ": expected f32 tensor [C,H,W]");
  }
  const GridShape shape(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
  const auto& v = t.as<float>();
  std::vector<ScorePlane> planes;
  for (std::uint32_t c = 0; c < t.dims[0]; ++c) {
    ScorePlane p(shape);
    for (std::size_t i = 0; i < shape.size(); ++i) p[i] = v[c * shape.size() + i];
    planes.push_back(std::move(p));
  }
  return planes;
}

inline void write_scores(const std::string& path, const ScoreStack& s) {
  write_tensor(path, to_tensor(s.planes(), s.shape()));
}

// Classes with an identically zero plane are treated as absent.
inline RawScoreStack read_raw_scores(const std::string& path) {
  auto planes = planes_from_tensor(read_tensor(path), path);
  if (planes.empty()) throw InputError(path + ": no class planes");
  const GridShape shape = planes.front().shape();
  std::vector<int> present;
  for (std::size_t c = 0; c < planes.size(); ++c) {
    const auto v = planes[c].values();
    if (std::any_of(v.begin(), v.end(), [](double s) { return s != 0.0; })) {
      present.push_back(static_cast<int>(c) + 1);
    }
  }
  return RawScoreStack(shape, std::move(planes), std::move(present));
}

inline void write_displacement(const std::string& path, const DisplacementField& d) {
  std::vector<float> v;
  v.reserve(2 * d.size());
  for (const Vec2& p : d.values()) {
    v.push_back(static_cast<float>(p.dy));
    v.push_back(static_cast<float>(p.dx));
  }
  write_tensor(path, {{static_cast<std::uint32_t>(d.shape().height),
                       static_cast<std::uint32_t>(d.shape().width), 2u},
                      std::move(v)});
}

inline DisplacementField read_displacement(const std::string& path) {
  const Tensor t = read_tensor(path);
  if (t.dtype() != DType::f32 || t.dims.size() != 3 || t.dims[2] != 2) {
    throw InputError(path + ": expected f32 tensor [H,W,2]");
  }
  const GridShape shape(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]));
  const auto& v = t.as<float>();
  DisplacementField d(shape);
  for (std::size_t i = 0; i < shape.size(); ++i) d[i] = {v[2 * i], v[2 * i + 1]};
  check_displacement(d);
  return d;
}

inline void write_boundary(const std::string& path, const BoundaryMap& b) {
  std::vector<float> v(b.values().begin(), b.values().end());
  write_tensor(path, {{static_cast<std::uint32_t>(b.shape().height),
                       static_cast<std::uint32_t>(b.shape().width)},
                      std::move(v)});
}

inline BoundaryMap read_boundary(const std::string& path) {
  const Tensor t = read_tensor(path);
  const GridShape shape = expect_dims(t, DType::f32, 2, path);
  const auto& v = t.as<float>();
  BoundaryMap b(shape, std::vector<double>(v.begin(), v.end()));
  check_boundary(b);
  return b;
}

template <typename T>
inline Tensor plane_tensor(const Plane<T>& p) {
  return {{static_cast<std::uint32_t>(p.shape().height), static_cast<std::uint32_t>(p.shape().width)},
          std::vector<T>(p.values().begin(), p.values().end())};
}

inline void write_labels(const std::string& path, const LabelImage& l) {
  std::vector<std::int32_t> v(l.class_plane.values().begin(), l.class_plane.values().end());
  v.insert(v.end(), l.instance_plane.values().begin(), l.instance_plane.values().end());
  write_tensor(path, {{2u, static_cast<std::uint32_t>(l.shape().height),
                       static_cast<std::uint32_t>(l.shape().width)},
                      std::move(v)});
}

inline LabelImage read_labels(const std::string& path) {
  const Tensor t = read_tensor(path);
  if (t.dtype() != DType::i32 || t.dims.size() != 3 || t.dims[0] != 2) {
    throw InputError(path + ": expected i32 tensor [2,H,W]");
  }
  const GridShape shape(static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
  const auto& v = t.as<std::int32_t>();
  LabelImage l(shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    l.class_plane[i] = v[i];
    l.instance_plane[i] = v[shape.size() + i];
  }
  l.validate();
  return l;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5) and PPM (P6), maxval 255.

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};
using RgbImage = Plane<Rgb>;

namespace detail {

inline std::string pnm_header(const char* magic, const GridShape& s) {
  return std::string(magic) + "\n" + std::to_string(s.width) + " " +
         std::to_string(s.height) + "\n255\n";
}

inline void write_pnm(const std::string& path, const std::string& header,
                      const std::uint8_t* data, std::size_t n) {
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), data, data + n);
  write_file(path, bytes);
}

// Returns (shape, offset of first payload byte).
inline std::pair<GridShape, std::size_t> parse_pnm(const std::vector<std::uint8_t>& bytes,
                                                   const char* magic, const std::string& path) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != magic) throw InputError(path + ": not a binary " + magic + " file");
  try {
    const int w = std::stoi(token());
    const int h = std::stoi(token());
    if (std::stoi(token()) != 255) throw InputError(path + ": maxval must be 255");
    ++pos;  // single whitespace byte after maxval
    return {GridShape(h, w), pos};
  } catch (const std::logic_error&) {
    throw InputError(path + ": malformed header");
  }
}

}  // namespace detail

inline void write_pgm(const std::string& path, const Plane<std::uint8_t>& img) {
  detail::write_pnm(path, detail::pnm_header("P5", img.shape()), img.values().data(), img.size());
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::vector<std::uint8_t> raw;
  raw.reserve(3 * img.size());
  for (const Rgb& p : img.values()) {
    raw.push_back(p.r);
    raw.push_back(p.g);
    raw.push_back(p.b);
  }
  detail::write_pnm(path, detail::pnm_header("P6", img.shape()), raw.data(), raw.size());
}

inline Plane<std::uint8_t> read_pgm(const std::string& path) {
  const auto bytes = detail::read_file(path);
  const auto [shape, off] = detail::parse_pnm(bytes, "P5", path);
  if (bytes.size() < off + shape.size()) throw TensorIoError(TensorErrc::truncated, path);
  return Plane<std::uint8_t>(shape, std::vector<std::uint8_t>(bytes.begin() + off,
                                                              bytes.begin() + off + shape.size()));
}

inline RgbImage read_ppm(const std::string& path) {
  const auto bytes = detail::read_file(path);
  const auto [shape, off] = detail::parse_pnm(bytes, "P6", path);
  if (bytes.size() < off + 3 * shape.size()) throw TensorIoError(TensorErrc::truncated, path);
  RgbImage img(shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    img[i] = {bytes[off + 3 * i], bytes[off + 3 * i + 1], bytes[off + 3 * i + 2]};
  }
  return img;
}

}  // namespace pixrel
