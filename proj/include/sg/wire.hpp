#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "sg/error.hpp"
#include "sg/tensor.hpp"

// Byte-level encoding shared by checkpoint files and raw tensor files. One
// entry is: u32 name length, UTF-8 name, u8 dtype tag, u32 rank, u32 extents,
// then the raw little-endian payload. All integers are little-endian.
namespace sg::wire {

constexpr std::uint8_t kTagF32 = 0;
constexpr std::uint8_t kTagF64 = 1;
constexpr std::uint8_t kTagU8 = 2;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_entry_header(std::string& out, const std::string& name,
                                std::uint8_t tag, const Shape& shape) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  out.push_back(static_cast<char>(tag));
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::int64_t e : shape) put_u32(out, static_cast<std::uint32_t>(e));
}

inline void append_tensor_entry(std::string& out, const std::string& name,
                                const Tensor& t) {
  append_entry_header(out, name, t.dtype() == DType::F32 ? kTagF32 : kTagF64,
                      t.shape());
  const auto& data = t.impl()->data;
  out.append(reinterpret_cast<const char*>(data.data()), data.size());
}

inline void append_text_entry(std::string& out, const std::string& name,
                              const std::string& text) {
  append_entry_header(out, name, kTagU8,
                      Shape{static_cast<std::int64_t>(text.size())});
  out.append(text);
}

// Cursor over an in-memory file image. Every read reports the byte offset it
// failed at when the buffer runs out.
class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size()) {
      throw FormatError(std::string("truncated while reading ") + what, pos_);
    }
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  std::uint8_t tag = 0;
  Shape shape;
  std::string payload;
};

inline Entry read_entry(Reader& r) {
  Entry e;
  const std::uint32_t name_len = r.u32("entry name length");
  e.name = r.bytes(name_len, "entry name");
  e.tag = r.u8("entry dtype tag");
  if (e.tag > kTagU8) {
    throw FormatError("entry \"" + e.name + "\" has unknown dtype tag " +
                          std::to_string(e.tag),
                      r.offset() - 1);
  }
  const std::uint32_t rank = r.u32("entry rank");
  if (rank > 8) {
    throw FormatError("entry \"" + e.name + "\" has implausible rank " +
                          std::to_string(rank),
                      r.offset() - 4);
  }
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t ext = r.u32("entry extent");
    e.shape.push_back(static_cast<std::int64_t>(ext));
    numel *= ext;
  }
  const std::size_t scalar = e.tag == kTagF32 ? 4 : e.tag == kTagF64 ? 8 : 1;
  e.payload = r.bytes(numel * scalar, ("payload of \"" + e.name + "\"").c_str());
  return e;
}

inline Tensor entry_to_tensor(const Entry& e) {
  if (e.tag == kTagU8) {
    throw FormatError("entry \"" + e.name + "\": expected numeric payload");
  }
  Tensor t = Tensor::zeros(e.shape, e.tag == kTagF32 ? DType::F32 : DType::F64);
  std::memcpy(t.impl()->data.data(), e.payload.data(), e.payload.size());
  return t;
}

}  // namespace sg::wire
