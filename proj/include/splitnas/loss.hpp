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

#ifndef SPLITNAS_LOSS_HPP_
#define SPLITNAS_LOSS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitnas/errors.hpp"
#include "splitnas/tensor.hpp"

namespace splitnas {

enum class LossMode {
  kBinarySigmoid,      // one logit, label in {0, 1}
  kMulticlassSoftmax,  // one logit per class
};

inline std::string_view loss_mode_name(LossMode m) {
  return m == LossMode::kBinarySigmoid ? "binary" : "multiclass";
}

inline LossMode parse_loss_mode(std::string_view s) {
  if (s == "binary") return LossMode::kBinarySigmoid;
  if (s == "multiclass") return LossMode::kMulticlassSoftmax;
  throw ValidationError("loss_mode must be 'binary' or 'multiclass', got '" + std::string(s) + "'");
}

// Number of head outputs for a classification problem.
inline std::size_t logit_count(LossMode m, std::size_t num_classes) {
  return m == LossMode::kBinarySigmoid ? 1 : num_classes;
}

struct LossValue {
  double loss = 0.0;
  std::vector<double> dlogits;  // d loss / d logits
};

// Cross-entropy of one sample.
//   binary:     -[y ln h + (1-y) ln(1-h)],  h = sigmoid(z),  d/dz = h - y
//   multiclass: logsumexp(z) - z_y,                          d/dz = softmax(z) - onehot(y)
inline LossValue loss_ce(std::span<const double> logits, std::size_t label, LossMode mode) {
  LossValue out;
  if (mode == LossMode::kBinarySigmoid) {
    if (logits.size() != 1) throw ContractError("binary cross-entropy takes exactly one logit");
    if (label > 1) throw ContractError("binary label must be 0 or 1, got " + std::to_string(label));
    const double z = logits[0];
    const double y = static_cast<double>(label);
    // softplus(z) - y z, evaluated without overflow
    const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    out.loss = std::max(0.0, softplus - y * z);
    const double h = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    out.dlogits = {h - y};
    return out;
  }
  if (logits.empty()) throw ContractError("multiclass cross-entropy needs at least one logit");
  if (label >= logits.size()) {
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(logits.size()) + " classes");
  }
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - zmax);
  const double lse = zmax + std::log(denom);
  out.loss = std::max(0.0, lse - logits[label]);
  out.dlogits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out.dlogits[i] = std::exp(logits[i] - lse);
  out.dlogits[label] -= 1.0;
  return out;
}

// Mean cross-entropy over a batch; gradients are scaled by 1/K accordingly.
inline LossValue loss_ce_batch(std::span<const std::vector<double>> logits,
                               std::span<const std::size_t> labels, LossMode mode,
                               std::vector<std::vector<double>>* dlogits = nullptr) {
  if (logits.empty() || logits.size() != labels.size()) {
    throw ContractError("loss_ce_batch: need K >= 1 predictions and matching labels");
  }
  const double inv_k = 1.0 / static_cast<double>(logits.size());
  LossValue total;
  if (dlogits) dlogits->clear();
  for (std::size_t k = 0; k < logits.size(); ++k) {
    LossValue one = loss_ce(logits[k], labels[k], mode);
    total.loss += one.loss * inv_k;
    if (dlogits) {
      for (double& d : one.dlogits) d *= inv_k;
      dlogits->push_back(std::move(one.dlogits));
    }
  }
  return total;
}

// Gradient of the loss with respect to the gates of a mixed output
// y = sum_j g_j v_j(x): component j is <dL/dy, v_j(x)>. For a single sigmoid
// output this is (h - y) v_j(x).
inline std::vector<double> loss_grad_gates(const Tensor& dl_dout,
                                           std::span<const Tensor> candidate_outputs) {
  std::vector<double> g;
  g.reserve(candidate_outputs.size());
  for (const Tensor& v : candidate_outputs) {
    require_same_shape(dl_dout, v, "loss_grad_gates");
    g.push_back(dot(dl_dout.data, v.data));
  }
  return g;
}

}  // namespace splitnas

#endif  // SPLITNAS_LOSS_HPP_
