#pragma once

#include "episodic/types.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace episodic {

/// Raw little-endian writer used by all snapshot formats. Each format starts
/// with a 4-byte magic tag and a u32 version.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& out) : out_(out) {}

  template <typename T>
  void pod(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }

  void header(std::string_view magic, std::uint32_t version);
  void string(const std::string& s);

  template <typename Derived>
  void dense(const Eigen::DenseBase<Derived>& m) {
    using Plain = typename Derived::PlainObject;
    const Plain copy = m;
    pod<std::int64_t>(copy.rows());
    pod<std::int64_t>(copy.cols());
    out_.write(reinterpret_cast<const char*>(copy.data()),
               static_cast<std::streamsize>(sizeof(typename Plain::Scalar) * copy.size()));
  }

  template <typename T>
  void pods(const std::vector<T>& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()),
               static_cast<std::streamsize>(sizeof(T) * v.size()));
  }

  void rng(const std::mt19937_64& engine);

 private:
  std::ostream& out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& in) : in_(in) {}

  template <typename T>
  T pod() {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    check();
    return value;
  }

  void expect_header(std::string_view magic, std::uint32_t version);
  std::string string();
  Matrix matrix();
  Vector vector();

  template <typename T>
  std::vector<T> pods() {
    const auto n = pod<std::uint64_t>();
    std::vector<T> v(n);
    in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(T) * n));
    check();
    return v;
  }

  void rng(std::mt19937_64& engine);

 private:
  void check();
  std::istream& in_;
};

}  // namespace episodic
