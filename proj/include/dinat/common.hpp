// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace dinat {

// Error taxonomy. The CLI maps these onto process exit codes:
// config/usage -> 2, data/format -> 3, numerical -> 4.
struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct GeometryError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ContractError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct FormatError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

// Deterministic RNG. mt19937_64 output is pinned by the standard and the
// derived draws below avoid libstdc++ distribution objects, so a seed gives
// the same stream on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds; always consumes exactly one engine draw
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t raw = next_u64();
    if (hi <= lo) return lo;
    return lo + static_cast<int64_t>(raw % static_cast<uint64_t>(hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, two engine draws per value
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
};

// Intra-op threading. Kernels partition work so that every output element is
// written by exactly one chunk and reductions keep a fixed order, which makes
// results identical for any thread count.
void set_num_threads(int n);
int num_threads();
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body);

// Emit a warning to stderr at most once per key.
void warn_once(const std::string& key, const std::string& message);

}  // namespace dinat
