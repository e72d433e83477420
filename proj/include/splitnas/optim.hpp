/* Copyright 2026 The splitnas Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef SPLITNAS_OPTIM_HPP_
#define SPLITNAS_OPTIM_HPP_

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitnas/errors.hpp"

namespace splitnas {

enum class OptimizerKind { kAdam, kSgd };

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ValidationError("optimizer must be 'adam' or 'sgd', got '" + std::string(s) + "'");
}

inline std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd";
}

// Optimizer state for one parameter block. Blocks are updated independently
// so a block that sat out a step (unsampled candidate) keeps its moments and
// step count untouched.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void check_finite_grads(std::span<const double> grads, std::string_view what) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("non-finite gradient in " + std::string(what) + " at index " +
                         std::to_string(i) + " (value " + std::to_string(grads[i]) + ")");
    }
  }
}

inline void optimizer_step(OptimizerState& state, std::span<double> params,
                           std::span<const double> grads, double lr,
                           const OptimizerOptions& opts = {}, std::string_view what = "params") {
  if (params.size() != grads.size()) {
    throw ContractError("optimizer_step: " + std::to_string(grads.size()) +
                        " gradients for " + std::to_string(params.size()) + " parameters");
  }
  check_finite_grads(grads, what);
  ++state.step;
  if (opts.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return;
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opts.beta1, t);
  const double c2 = 1.0 - std::pow(opts.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * grads[i];
    state.v[i] = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + opts.epsilon);
  }
}

}  // namespace splitnas

#endif  // SPLITNAS_OPTIM_HPP_
