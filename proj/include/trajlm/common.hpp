// Copyright 2026 The trajlm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace trajlm {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Error taxonomy. Data/model problems surface as DataError subclasses so the
// CLI can map them to exit code 2; configuration mistakes are ConfigError.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class UnknownTokenError : public DataError {
 public:
  explicit UnknownTokenError(const std::string& token)
      : DataError("token not in vocabulary: '" + token + "'"), token_(token) {}
  UnknownTokenError(const std::string& token, const std::string& where)
      : DataError("token not in vocabulary: '" + token + "' in " + where), token_(token) {}
  const std::string& token() const noexcept { return token_; }

 private:
  std::string token_;
};

class TrainingDiverged : public DataError {
 public:
  using DataError::DataError;
};

/// 64-bit FNV-1a. Used for vocab and config fingerprints, which must be
/// stable across builds and platforms (std::hash is not).
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an indexed unit (agent, OD pair, trajectory): parent seed XOR the
/// unit index, whitened so neighbouring units get unrelated streams.
inline std::uint64_t unit_seed(std::uint64_t seed, std::uint64_t unit) {
  return splitmix64(seed ^ unit);
}

/// Seed for a named pipeline component derived from the root seed.
inline std::uint64_t component_seed(std::uint64_t root, std::string_view component) {
  return splitmix64(root ^ fnv1a64(component));
}

using Rng = std::mt19937_64;

/// Uniform integer in [0, n). Bias-free rejection so results do not depend on
/// the standard library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw DomainError("uniform_index: empty range");
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller (no cached spare, so draws are stateless).
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Half-up rounding of a non-negative quantity to a count.
inline std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

/// Shortest representation that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace trajlm
