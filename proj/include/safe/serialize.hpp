#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "safe/errors.hpp"

namespace safe {

// Native-endian binary encoding of trivially copyable values.
class ByteWriter {
 public:
  template <class T>
  void put(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    buf_.append(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    buf_.append(s.data(), s.size());
  }

  template <class T>
  void put_array(std::span<const T> values) {
    put<std::uint64_t>(values.size());
    buf_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
  }

  void put_raw(std::string_view bytes) { buf_.append(bytes); }

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : rest_(bytes) {}

  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T));
    T value;
    std::memcpy(&value, rest_.data(), sizeof(T));
    rest_.remove_prefix(sizeof(T));
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(rest_.substr(0, n));
    rest_.remove_prefix(n);
    return s;
  }

  template <class T>
  std::vector<T> get_array() {
    const auto n = get<std::uint64_t>();
    if (n > rest_.size() / sizeof(T)) throw DataError("truncated snapshot");
    std::vector<T> v(n);
    std::memcpy(v.data(), rest_.data(), n * sizeof(T));
    rest_.remove_prefix(n * sizeof(T));
    return v;
  }

  template <class T>
  void get_array_into(std::span<T> out) {
    const auto n = get<std::uint64_t>();
    if (n != out.size()) throw DataError("snapshot array has unexpected length");
    need(out.size_bytes());
    std::memcpy(out.data(), rest_.data(), out.size_bytes());
    rest_.remove_prefix(out.size_bytes());
  }

  std::string_view remaining() const { return rest_; }
  bool done() const { return rest_.empty(); }

 private:
  void need(std::size_t n) const {
    if (rest_.size() < n) throw DataError("truncated snapshot");
  }

  std::string_view rest_;
};

}  // namespace safe
