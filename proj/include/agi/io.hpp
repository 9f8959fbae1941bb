#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "agi/tensor.hpp"

// Flat tensor container. Byte layout, all integers little-endian:
//   "TNSR" | version u8 (=1) | count u32
//   per entry: name_len u16 | name bytes | dtype u8 (1=f32, 2=f64)
//              | ndim u8 | dims u32 each | payload, row-major
// Serialization is explicit byte-at-a-time, so files are identical across
// hosts and safe to compare bitwise.
namespace agi::io {

constexpr uint8_t kDtypeF32 = 1;
constexpr uint8_t kDtypeF64 = 2;

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, std::string path) : buf_(buf), path_(std::move(path)) {}

  uint8_t u8() { return need(1), uint8_t(buf_[pos_++]); }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(uint8_t(buf_[pos_])) | uint16_t(uint8_t(buf_[pos_ + 1])) << 8;
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& path() const { return path_; }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size())
      throw TruncatedFileError("truncated tensor container: " + path_ + " ends " +
                               std::to_string(pos_ + n - buf_.size()) + " bytes short");
  }
  const std::string& buf_;
  size_t pos_ = 0;
  std::string path_;
};

}  // namespace detail

class TensorFile {
 public:
  using Value = std::variant<Tensor<float>, Tensor<double>>;

  void put(const std::string& name, Tensor<float> t) { insert(name, Value(std::move(t))); }
  void put(const std::string& name, Tensor<double> t) { insert(name, Value(std::move(t))); }

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  int64_t size() const { return int64_t(entries_.size()); }
  const std::string& name(int64_t i) const { return entries_[size_t(i)].name; }

  uint8_t dtype(const std::string& name) const {
    return std::holds_alternative<Tensor<float>>(find(name)) ? kDtypeF32 : kDtypeF64;
  }

  const Tensor<float>& f32(const std::string& name) const {
    const Value& v = find(name);
    check(std::holds_alternative<Tensor<float>>(v), "tensor '" + name + "' is not float32");
    return std::get<Tensor<float>>(v);
  }

  const Tensor<double>& f64(const std::string& name) const {
    const Value& v = find(name);
    check(std::holds_alternative<Tensor<double>>(v), "tensor '" + name + "' is not float64");
    return std::get<Tensor<double>>(v);
  }

  std::string serialize() const {
    std::string out;
    out += "TNSR";
    out.push_back(char(1));
    detail::put_u32(out, uint32_t(entries_.size()));
    for (const auto& e : entries_) {
      check(e.name.size() <= 0xffff, "tensor name too long: " + e.name);
      detail::put_u16(out, uint16_t(e.name.size()));
      out += e.name;
      if (const auto* t = std::get_if<Tensor<float>>(&e.value)) {
        out.push_back(char(kDtypeF32));
        put_dims(out, t->shape());
        for (int64_t i = 0; i < t->numel(); ++i)
          detail::put_u32(out, std::bit_cast<uint32_t>((*t)[i]));
      } else {
        const auto& td = std::get<Tensor<double>>(e.value);
        out.push_back(char(kDtypeF64));
        put_dims(out, td.shape());
        for (int64_t i = 0; i < td.numel(); ++i)
          detail::put_u64(out, std::bit_cast<uint64_t>(td[i]));
      }
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    const std::string buf = serialize();
    f.write(buf.data(), std::streamsize(buf.size()));
    if (!f) throw IoError("write failed: " + path);
  }

  static TensorFile parse(const std::string& buf, const std::string& path) {
    detail::Reader r(buf, path);
    if (r.bytes(4) != "TNSR") throw BadMagicError("not a tensor container: " + path);
    const uint8_t version = r.u8();
    if (version != 1)
      throw BadMagicError("unsupported tensor container version " + std::to_string(version) +
                          ": " + path);
    const uint32_t count = r.u32();
    TensorFile tf;
    for (uint32_t i = 0; i < count; ++i) {
      const uint16_t name_len = r.u16();
      const std::string name = r.bytes(name_len);
      const uint8_t dt = r.u8();
      if (dt != kDtypeF32 && dt != kDtypeF64)
        throw BadDTypeError("tensor '" + name + "' has unknown dtype byte " +
                            std::to_string(int(dt)) + ": " + path);
      const uint8_t ndim = r.u8();
      std::vector<int64_t> shape(ndim);
      for (uint8_t d = 0; d < ndim; ++d) shape[d] = int64_t(r.u32());
      const int64_t numel = Tensor<float>::checked_numel(shape);
      if (dt == kDtypeF32) {
        Tensor<float> t(shape);
        for (int64_t j = 0; j < numel; ++j) t[j] = std::bit_cast<float>(r.u32());
        tf.put(name, std::move(t));
      } else {
        Tensor<double> t(shape);
        for (int64_t j = 0; j < numel; ++j) t[j] = std::bit_cast<double>(r.u64());
        tf.put(name, std::move(t));
      }
    }
    return tf;
  }

  static TensorFile load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse(buf, path);
  }

 private:
  struct Entry {
    std::string name;
    Value value;
  };

  void insert(const std::string& name, Value v) {
    check(!index_.count(name), "tensor stored twice: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{name, std::move(v)});
  }

  const Value& find(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "tensor not in container: " + name);
    return entries_[it->second].value;
  }

  static void put_dims(std::string& out, const std::vector<int64_t>& shape) {
    check(shape.size() <= 0xff, "tensor rank too large");
    out.push_back(char(uint8_t(shape.size())));
    for (int64_t d : shape) {
      check(d >= 0 && d <= int64_t(0xffffffffu), "dimension out of u32 range");
      detail::put_u32(out, uint32_t(d));
    }
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

// Strings ride inside the container as float tensors holding byte values,
// which keeps the format single-purpose (metadata like embedded configs).
inline Tensor<float> utf8_tensor(const std::string& s) {
  Tensor<float> t({int64_t(s.size())});
  for (size_t i = 0; i < s.size(); ++i) t[int64_t(i)] = float(uint8_t(s[i]));
  return t;
}

inline std::string tensor_utf8(const Tensor<float>& t) {
  std::string s;
  s.reserve(size_t(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const float v = t[i];
    check(v >= 0 && v <= 255 && v == std::floor(v), "tensor does not hold byte values");
    s.push_back(char(uint8_t(v)));
  }
  return s;
}

// 8-bit binary PGM, values clamped to [0,1] then rounded half-up to 0..255.
template <typename T>
void write_pgm(const std::string& path, const Tensor<T>& img) {
  check(img.rank() == 2, "write_pgm expects an H x W tensor, got " + shape_str(img.shape()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
  std::string bytes;
  bytes.reserve(size_t(img.numel()));
  for (int64_t i = 0; i < img.numel(); ++i) {
    double v = double(img[i]);
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    bytes.push_back(char(uint8_t(std::floor(v * 255.0 + 0.5))));
  }
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace agi::io
