// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification of reverse-mode gradients. Always runs in
// f64: central differences with step h = 1e-4 * max(1, |v|) per probed
// scalar, compared against the analytic gradient from one backward pass.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dinat/ops.hpp"

namespace dinat {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
  std::string worst_input;
  int64_t worst_index = -1;
  int64_t probes = 0;
};

// f builds the computation on the given tape from `inputs` and returns a
// scalar loss tensor. It must be a pure function of the input values so that
// perturbed re-evaluations (tape == nullptr) are meaningful.
using ScalarFn = std::function<Tensor<double>(Tape<double>*, std::vector<Tensor<double>>&)>;

// When max_probes_per_input > 0 and an input has more scalars than that,
// a random subset of coordinates is probed (rng required in that case).
inline GradCheckReport grad_check(const ScalarFn& f, std::vector<Tensor<double>>& inputs,
                                  double tol_rel, Rng* rng = nullptr,
                                  int64_t max_probes_per_input = 0,
                                  std::vector<std::string> input_names = {}) {
  for (auto& t : inputs) {
    if (!t.requires_grad()) t.set_requires_grad(true);
    t.zero_grad();
  }

  Tape<double> tape;
  Tensor<double> loss = f(&tape, inputs);
  if (loss.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  tape.backward(loss);

  GradCheckReport rep;
  rep.tol = tol_rel;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    const int64_t n = t.numel();
    std::vector<int64_t> probe_ix;
    if (max_probes_per_input > 0 && n > max_probes_per_input) {
      if (!rng) throw ContractError("grad_check: probe sampling requires an rng");
      for (int64_t p = 0; p < max_probes_per_input; ++p)
        probe_ix.push_back(rng->uniform_int(0, n - 1));
    } else {
      probe_ix.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) probe_ix[static_cast<size_t>(i)] = i;
    }
    for (int64_t ix : probe_ix) {
      const double v = t.data()[ix];
      const double h = 1e-4 * std::max(1.0, std::abs(v));
      t.data()[ix] = v + h;
      const double lp = f(nullptr, inputs).data()[0];
      t.data()[ix] = v - h;
      const double lm = f(nullptr, inputs).data()[0];
      t.data()[ix] = v;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = t.grad()[ix];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = ti < input_names.size() ? input_names[ti] : ("input" + std::to_string(ti));
        rep.worst_index = ix;
      }
      ++rep.probes;
    }
  }
  rep.pass = rep.max_rel_err < tol_rel;
  return rep;
}

}  // namespace dinat
