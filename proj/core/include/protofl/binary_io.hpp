#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

// Little-endian primitive encoding shared by every binary artifact
// (parameter checkpoints, prototype exports).
namespace protofl::binio {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_f64s(std::ostream& os, std::span<const double> values);
void write_string(std::ostream& os, const std::string& s);
void write_magic(std::ostream& os, const char (&magic)[9]);

// Readers throw FormatError naming `what` and the byte offset on short reads.
std::uint32_t read_u32(std::istream& is, const char* what);
std::uint64_t read_u64(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);
std::vector<double> read_f64s(std::istream& is, std::size_t count, const char* what);
std::string read_string(std::istream& is, const char* what);
void expect_magic(std::istream& is, const char (&magic)[9]);

}  // namespace protofl::binio
