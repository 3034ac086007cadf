#include "protofl/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "protofl/errors.hpp"

namespace protofl::binio {
namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> buf;
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  const auto offset = static_cast<long long>(is.tellg());
  std::array<unsigned char, sizeof(T)> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw FormatError(std::string("truncated file reading ") + what + " at byte offset " + std::to_string(offset));
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

constexpr std::uint32_t kMaxString = 1u << 20;

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

void write_f64s(std::ostream& os, std::span<const double> values) {
  for (double v : values) write_f64(os, v);
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

std::uint32_t read_u32(std::istream& is, const char* what) { return get_le<std::uint32_t>(is, what); }
std::uint64_t read_u64(std::istream& is, const char* what) { return get_le<std::uint64_t>(is, what); }
double read_f64(std::istream& is, const char* what) { return std::bit_cast<double>(get_le<std::uint64_t>(is, what)); }

std::vector<double> read_f64s(std::istream& is, std::size_t count, const char* what) {
  std::vector<double> out(count);
  for (auto& v : out) v = read_f64(is, what);
  return out;
}

std::string read_string(std::istream& is, const char* what) {
  const auto n = read_u32(is, what);
  if (n > kMaxString) throw FormatError(std::string("implausible string length for ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw FormatError(std::string("truncated string for ") + what);
  return s;
}

void expect_magic(std::istream& is, const char (&magic)[9]) {
  char buf[8];
  if (!is.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) {
    throw FormatError(std::string("bad magic, expected '") + std::string(magic, 7) + "'");
  }
}

}  // namespace protofl::binio
