#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "std2p/error.hpp"
#include "std2p/grid.hpp"

// Binary containers (all integers little-endian, payload row-major):
//
//   TNSR  "TNSR" | u16 version=1 | u8 dtype (0=f32, 1=f64) | u8 rank | rank x u32 dims | payload
//   IMAP  "IMAP" | u16 version=1 | u8 rank | rank x u32 dims | payload of u32
namespace std2p::io {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

struct IndexMap {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint32_t> values;
};

namespace detail {

inline std::size_t element_count(const std::vector<std::uint32_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::uint64_t take(int width) {
    if (pos_ + width > bytes_.size())
      fail_io(name_, ": truncated at byte ", pos_, " (need ", width, " more)");
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    pos_ += width;
    return v;
  }
  void expect_magic(std::string_view magic) {
    if (bytes_.substr(0, 4) != magic)
      fail_io(name_, ": bad magic, expected \"", magic, "\"");
    pos_ = 4;
  }
  void expect_end() const {
    if (pos_ != bytes_.size())
      fail_io(name_, ": ", bytes_.size() - pos_, " trailing bytes after payload");
  }
  const std::string& name() const { return name_; }

 private:
  std::string_view bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_tensor(const Tensor& t, DType dtype = DType::f64) {
  if (t.dims.size() > 255) fail("shape-mismatch", "tensor rank ", t.dims.size(), " exceeds 255");
  if (detail::element_count(t.dims) != t.values.size())
    fail("shape-mismatch", "tensor dims hold ", detail::element_count(t.dims), " values, got ",
         t.values.size());
  std::string out = "TNSR";
  detail::put_u16(out, 1);
  out.push_back(static_cast<char>(dtype));
  out.push_back(static_cast<char>(t.dims.size()));
  for (auto d : t.dims) detail::put_u32(out, d);
  for (double v : t.values) {
    if (dtype == DType::f32) {
      float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32(out, bits);
    } else {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_u64(out, bits);
    }
  }
  return out;
}

inline Tensor decode_tensor(std::string_view bytes, const std::string& name = "<memory>") {
  detail::Reader r(bytes, name);
  r.expect_magic("TNSR");
  if (auto version = r.take(2); version != 1) fail_io(name, ": unsupported TNSR version ", version);
  const auto dtype = r.take(1);
  if (dtype > 1) fail_io(name, ": unknown dtype ", dtype);
  const auto rank = r.take(1);
  Tensor t;
  for (std::uint64_t k = 0; k < rank; ++k) t.dims.push_back(static_cast<std::uint32_t>(r.take(4)));
  const auto n = detail::element_count(t.dims);
  t.values.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (dtype == 0) {
      auto bits = static_cast<std::uint32_t>(r.take(4));
      float f;
      std::memcpy(&f, &bits, 4);
      t.values.push_back(f);
    } else {
      auto bits = r.take(8);
      double d;
      std::memcpy(&d, &bits, 8);
      t.values.push_back(d);
    }
  }
  r.expect_end();
  return t;
}

inline std::string encode_index_map(const IndexMap& m) {
  if (m.dims.size() > 255) fail("shape-mismatch", "index map rank ", m.dims.size(), " exceeds 255");
  if (detail::element_count(m.dims) != m.values.size())
    fail("shape-mismatch", "index map dims hold ", detail::element_count(m.dims), " values, got ",
         m.values.size());
  std::string out = "IMAP";
  detail::put_u16(out, 1);
  out.push_back(static_cast<char>(m.dims.size()));
  for (auto d : m.dims) detail::put_u32(out, d);
  for (auto v : m.values) detail::put_u32(out, v);
  return out;
}

inline IndexMap decode_index_map(std::string_view bytes, const std::string& name = "<memory>") {
  detail::Reader r(bytes, name);
  r.expect_magic("IMAP");
  if (auto version = r.take(2); version != 1) fail_io(name, ": unsupported IMAP version ", version);
  const auto rank = r.take(1);
  IndexMap m;
  for (std::uint64_t k = 0; k < rank; ++k) m.dims.push_back(static_cast<std::uint32_t>(r.take(4)));
  const auto n = detail::element_count(m.dims);
  m.values.reserve(n);
  for (std::size_t k = 0; k < n; ++k) m.values.push_back(static_cast<std::uint32_t>(r.take(4)));
  r.expect_end();
  return m;
}

// ---- files ----

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_io(path.string(), ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail_io(path.string(), ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail_io(path.string(), ": write failed");
}

inline Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file(path), path.string());
}
inline void write_tensor(const std::filesystem::path& path, const Tensor& t,
                         DType dtype = DType::f64) {
  write_file(path, encode_tensor(t, dtype));
}
inline IndexMap read_index_map(const std::filesystem::path& path) {
  return decode_index_map(read_file(path), path.string());
}
inline void write_index_map(const std::filesystem::path& path, const IndexMap& m) {
  write_file(path, encode_index_map(m));
}

// ---- domain conversions ----

inline Tensor to_tensor(const FeatureStack& f) {
  auto v = f.values();
  return {{static_cast<std::uint32_t>(f.frames()), static_cast<std::uint32_t>(f.channels()),
           static_cast<std::uint32_t>(f.height()), static_cast<std::uint32_t>(f.width())},
          {v.begin(), v.end()}};
}

inline FeatureStack to_feature_stack(Tensor t, const std::string& name = "<memory>") {
  if (t.dims.size() != 4) fail_io(name, ": feature tensor must have rank 4, got ", t.dims.size());
  return FeatureStack(t.dims[0], t.dims[1], t.dims[2], t.dims[3], std::move(t.values));
}

// Flows are stored as one rank-5 tensor (N-1, 2, H, W, 2); index 0 of the
// second axis is forward (k -> k+1), index 1 backward (k+1 -> k).
inline Tensor to_tensor(const FlowSequence& flows, std::size_t height, std::size_t width) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(flows.steps()), 2, static_cast<std::uint32_t>(height),
            static_cast<std::uint32_t>(width), 2};
  for (std::size_t k = 0; k < flows.steps(); ++k)
    for (const auto* f : {&flows.forward[k], &flows.backward[k]}) {
      auto v = f->values();
      t.values.insert(t.values.end(), v.begin(), v.end());
    }
  return t;
}

inline FlowSequence to_flow_sequence(const Tensor& t, const std::string& name = "<memory>") {
  if (t.dims.size() != 5 || t.dims[1] != 2 || t.dims[4] != 2)
    fail_io(name, ": flow tensor must have shape (N-1, 2, H, W, 2)");
  const std::size_t h = t.dims[2], w = t.dims[3], plane = h * w * 2;
  FlowSequence seq;
  for (std::size_t k = 0; k < t.dims[0]; ++k) {
    auto at = t.values.begin() + static_cast<std::ptrdiff_t>(2 * k * plane);
    seq.forward.emplace_back(h, w, FlowDirection::forward, std::vector<double>(at, at + plane));
    seq.backward.emplace_back(h, w, FlowDirection::backward,
                              std::vector<double>(at + plane, at + 2 * plane));
  }
  return seq;
}

inline IndexMap to_index_map(const SuperpixelStack& s) {
  auto v = s.labels();
  return {{static_cast<std::uint32_t>(s.frames()), static_cast<std::uint32_t>(s.height()),
           static_cast<std::uint32_t>(s.width())},
          {v.begin(), v.end()}};
}

inline SuperpixelStack to_superpixel_stack(IndexMap m, const std::string& name = "<memory>") {
  if (m.dims.size() != 3) fail_io(name, ": superpixel map must have rank 3, got ", m.dims.size());
  return SuperpixelStack::from_labels(m.dims[0], m.dims[1], m.dims[2], std::move(m.values));
}

inline IndexMap to_index_map(const LabelMap& l) {
  auto v = l.values();
  return {{static_cast<std::uint32_t>(l.height()), static_cast<std::uint32_t>(l.width())},
          {v.begin(), v.end()}};
}

// Label stacks (one LabelMap per frame) are stored as rank-3 (N, H, W).
inline IndexMap to_index_map(const std::vector<LabelMap>& frames) {
  if (frames.empty()) fail("shape-mismatch", "label stack is empty");
  IndexMap m{{static_cast<std::uint32_t>(frames.size()),
              static_cast<std::uint32_t>(frames[0].height()),
              static_cast<std::uint32_t>(frames[0].width())},
             {}};
  for (const auto& l : frames) {
    if (!l.same_shape(frames[0])) fail("shape-mismatch", "label maps differ in shape");
    auto v = l.values();
    m.values.insert(m.values.end(), v.begin(), v.end());
  }
  return m;
}

// Accepts rank 2 (one map) or rank 3 (a stack).
inline std::vector<LabelMap> to_label_maps(const IndexMap& m, const std::string& name = "<memory>") {
  if (m.dims.size() == 2) return {LabelMap(m.dims[0], m.dims[1], m.values)};
  if (m.dims.size() != 3) fail_io(name, ": label map must have rank 2 or 3, got ", m.dims.size());
  std::vector<LabelMap> out;
  const std::size_t hw = std::size_t{m.dims[1]} * m.dims[2];
  for (std::size_t i = 0; i < m.dims[0]; ++i) {
    auto at = m.values.begin() + static_cast<std::ptrdiff_t>(i * hw);
    out.emplace_back(m.dims[1], m.dims[2], std::vector<std::uint32_t>(at, at + hw));
  }
  return out;
}

// ---- text ----

// Shortest round-trip representation; stable across runs.
inline std::string format_real(double v) {
  std::array<char, 32> buf{};
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf.data(), buf.size(), "%.*g", precision, v);
    if (std::strtod(buf.data(), nullptr) == v) break;
  }
  return buf.data();
}

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

// Flat `key = value` lines; `#` starts a comment. Keys may repeat.
inline std::vector<ConfigEntry> parse_key_values(std::string_view text,
                                                 const std::string& name = "<config>") {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return std::string_view{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::vector<ConfigEntry> out;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      fail("config-syntax", name, ":", line_no, ": expected key=value, got \"", line, "\"");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) fail("config-syntax", name, ":", line_no, ": empty key");
    out.push_back({std::string(key), std::string(trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  while (true) {
    auto p = s.find(sep);
    out.emplace_back(s.substr(0, p));
    if (p == std::string_view::npos) break;
    s = s.substr(p + 1);
  }
  return out;
}

}  // namespace std2p::io
