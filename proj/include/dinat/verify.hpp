// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference and brute-force-oracle suites, shared by the CLI
// (grad-check / oracle-check) and the test binaries. All checks run in f64.

#pragma once

#include <string>
#include <vector>

#include "dinat/grad_check.hpp"

namespace dinat {

struct CheckReport {
  std::string name;
  double max_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

// Elementary-op gradient checks at rel-tol 1e-5.
std::vector<CheckReport> grad_suite_ops(uint64_t seed);
// dina_attend (1e-5) plus attn_layer / casa at 1e-4.
std::vector<CheckReport> grad_suite_attention(uint64_t seed);
// gdfn, transformer block, down/upsample.
std::vector<CheckReport> grad_suite_block(uint64_t seed);
// micro end-to-end model at 1e-3 with sampled probes.
std::vector<CheckReport> grad_suite_model(uint64_t seed);

// dina_attend vs dense_oracle over a small (H,W,k,dilation) grid plus the
// degenerate reductions (full window, k=1, delta=1).
std::vector<CheckReport> oracle_suite(uint64_t seed);

inline bool all_pass(const std::vector<CheckReport>& reports) {
  for (const auto& r : reports)
    if (!r.pass) return false;
  return true;
}

}  // namespace dinat
