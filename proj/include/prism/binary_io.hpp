#pragma once

// Little-endian byte buffers shared by the PVDC / PVSC / PVPM containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prism/error.hpp"

namespace prism::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void bytes(std::string_view s) { buffer_.append(s); }
  void floats(std::span<const float> v) { raw(v.data(), v.size_bytes()); }

  const std::string& buffer() const { return buffer_; }
  std::size_t size() const { return buffer_.size(); }

 private:
  void raw(const void* p, std::size_t n) { buffer_.append(static_cast<const char*>(p), n); }
  std::string buffer_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::uint32_t u32() { return scalar<std::uint32_t>("u32"); }
  std::uint64_t u64() { return scalar<std::uint64_t>("u64"); }
  float f32() { return scalar<float>("f32"); }
  double f64() { return scalar<double>("f64"); }

  std::string_view bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string_view out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void floats(std::span<float> out, const char* field) {
    need(out.size_bytes(), field);
    std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  template <typename T>
  T scalar(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(what_ + ": truncated while reading " + field + " at byte " + std::to_string(pos_));
    }
  }

  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace prism::io
