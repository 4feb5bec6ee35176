#include "episodic/serialize.hpp"

#include <sstream>

namespace episodic {

void BinaryWriter::header(std::string_view magic, std::uint32_t version) {
  out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  pod(version);
}

void BinaryWriter::string(const std::string& s) {
  pod<std::uint64_t>(s.size());
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::rng(const std::mt19937_64& engine) {
  std::ostringstream text;
  text << engine;
  string(text.str());
}

void BinaryReader::check() {
  if (!in_) throw ValidationError("snapshot truncated or unreadable");
}

void BinaryReader::expect_header(std::string_view magic, std::uint32_t version) {
  std::string tag(magic.size(), '\0');
  in_.read(tag.data(), static_cast<std::streamsize>(tag.size()));
  check();
  if (tag != magic) throw ValidationError("snapshot has wrong magic tag, expected " + std::string(magic));
  const auto found = pod<std::uint32_t>();
  if (found != version) {
    throw ValidationError("unsupported snapshot version " + std::to_string(found) + " for " +
                          std::string(magic));
  }
}

std::string BinaryReader::string() {
  const auto n = pod<std::uint64_t>();
  std::string s(n, '\0');
  in_.read(s.data(), static_cast<std::streamsize>(n));
  check();
  return s;
}

Matrix BinaryReader::matrix() {
  const auto rows = pod<std::int64_t>();
  const auto cols = pod<std::int64_t>();
  if (rows < 0 || cols < 0) throw ValidationError("negative matrix shape in snapshot");
  Matrix m(rows, cols);
  in_.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  check();
  return m;
}

Vector BinaryReader::vector() {
  Matrix m = matrix();
  if (m.cols() != 1) throw ValidationError("expected a column vector in snapshot");
  return Vector(std::move(m));
}

void BinaryReader::rng(std::mt19937_64& engine) {
  std::istringstream text(string());
  text >> engine;
  if (!text) throw ValidationError("corrupt generator state in snapshot");
}

}  // namespace episodic
