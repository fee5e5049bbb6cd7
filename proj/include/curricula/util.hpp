#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace curricula {

// Error hierarchy. The exit code is what the CLI returns for each family.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 3) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(what, 4) {}
};

// More specific data errors so callers can tell them apart.
class AlignmentError : public DataError {
 public:
  using DataError::DataError;
};
class IoError : public DataError {
 public:
  using DataError::DataError;
};
class FormatError : public DataError {
 public:
  using DataError::DataError;
};
class CorruptionError : public DataError {
 public:
  using DataError::DataError;
};
class FingerprintError : public DataError {
 public:
  using DataError::DataError;
};

/// SplitMix64 finalizer. Used as the mixing function of every counter-based
/// stream in the project, so results never depend on a library RNG.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b + 0x632be59bd9b4e019ULL)); }

/// Counter-based random stream: value i is mix(key, i). Cheap to fork per
/// (seed, epoch, batch) without carrying generator state around.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  std::uint64_t next_u64() { return mix_key(key_, counter_++); }
  /// Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  /// Unbiased integer in [0, bound).
  std::uint64_t next_below(std::uint64_t bound);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view text);
std::string to_hex(const Digest& d);

/// printf-style "%.{digits}g".
std::string format_sig(double value, int digits);
/// Shortest text that parses back to the same double.
std::string format_exact(double value);
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);
std::uint64_t parse_u64(std::string_view text, std::string_view what);

std::vector<std::string> split_whitespace(std::string_view line);
std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file then renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace curricula
