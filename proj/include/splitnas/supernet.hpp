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

// The searchable network: a fixed stem, N mixed layers and a linear
// classifier head. Layer n consumes the channel-wise concatenation of the
// outputs named in `inputs` (-1 is the stem), which covers both a plain chain
// and the broadcast/aggregate graph of a mesh deployment.

#ifndef SPLITNAS_SUPERNET_HPP_
#define SPLITNAS_SUPERNET_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splitnas/errors.hpp"
#include "splitnas/loss.hpp"
#include "splitnas/ops.hpp"
#include "splitnas/rng.hpp"
#include "splitnas/tensor.hpp"

namespace splitnas {

using ProbVector = std::vector<double>;

// p_i = exp(alpha_i) / sum_j exp(alpha_j), max-subtracted.
inline ProbVector softmax_probs(std::span<const double> alpha) {
  if (alpha.empty()) return {};
  const double amax = *std::max_element(alpha.begin(), alpha.end());
  ProbVector p(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    p[i] = std::exp(alpha[i] - amax);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

// dL/dalpha_i = sum_j dL/dg_j p_j (delta_ij - p_i)
inline std::vector<double> arch_grad(std::span<const double> dl_dg, std::span<const double> p) {
  if (dl_dg.size() != p.size()) throw ContractError("arch_grad: gate and probability lengths differ");
  double weighted = 0.0;  // sum_j dL/dg_j p_j
  for (std::size_t j = 0; j < p.size(); ++j) weighted += dl_dg[j] * p[j];
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = dl_dg[i] * p[i] - weighted * p[i];
  return g;
}

// One layer's binary gates. `active` is the candidate whose gate is 1.
// `unmasked` lists the candidates kept on the graph for the gate gradient:
// every candidate in one-hot mode, the sampled pair in two-path mode, with
// `probs` the matching (pair-renormalized) probabilities.
struct LayerGate {
  std::size_t active = 0;
  std::vector<std::size_t> unmasked;
  std::vector<double> probs;
};

using GateSample = std::vector<LayerGate>;

inline LayerGate sample_gates(std::span<const double> p, Rng& rng, bool two_path) {
  if (p.empty()) throw ContractError("sample_gates: empty probability vector");
  LayerGate gate;
  if (!two_path || p.size() < 2) {
    gate.active = rng.categorical(p);
    gate.unmasked.resize(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) gate.unmasked[i] = i;
    gate.probs.assign(p.begin(), p.end());
    return gate;
  }
  const std::size_t first = rng.categorical(p);
  std::vector<double> rest(p.begin(), p.end());
  rest[first] = 0.0;
  std::size_t second;
  double rest_mass = 0.0;
  for (double v : rest) rest_mass += v;
  if (rest_mass > 0.0) {
    second = rng.categorical(rest);
  } else {
    second = first == 0 ? 1 : 0;
  }
  const std::size_t lo = std::min(first, second), hi = std::max(first, second);
  gate.unmasked = {lo, hi};
  const double pair_mass = p[lo] + p[hi];
  gate.probs = pair_mass > 0.0 ? std::vector<double>{p[lo] / pair_mass, p[hi] / pair_mass}
                               : std::vector<double>{0.5, 0.5};
  gate.active = gate.unmasked[rng.categorical(gate.probs)];
  return gate;
}

// Mixing coefficient of every candidate in every layer. Zero entries are not
// evaluated.
using Mixture = std::vector<std::vector<double>>;

struct MixedOp {
  std::vector<CandidateOpSpec> candidates;
  std::vector<double> alpha;
  std::vector<int> inputs;  // producing layers, -1 for the stem
  Shape shape;              // input and output shape, H x W x C
};

struct SuperNetSpec {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t in_channels = 3;
  std::size_t channels = 4;  // stem output width
  std::size_t num_outputs = 4;
  std::vector<std::vector<CandidateOpSpec>> layer_candidates;
  // Empty means a plain chain (layer n reads layer n-1).
  std::vector<std::vector<int>> layer_inputs;
};

struct SuperNet {
  Shape input_shape;
  std::size_t channels = 0;
  std::size_t num_outputs = 0;
  std::vector<MixedOp> layers;

  std::vector<double> stem;  // channels x in_channels
  std::vector<std::vector<std::vector<double>>> weights;  // [layer][candidate]
  std::vector<double> head_w;  // num_outputs x flattened final activation
  std::vector<double> head_b;

  std::size_t num_layers() const { return layers.size(); }
  const Shape& layer_shape(std::size_t n) const { return layers.at(n).shape; }
  std::size_t head_inputs() const { return shape_size(layers.back().shape); }

  ProbVector probs(std::size_t n) const { return softmax_probs(layers.at(n).alpha); }

  static SuperNet build(const SuperNetSpec& spec, Rng& rng) {
    const std::size_t n_layers = spec.layer_candidates.size();
    if (n_layers == 0) throw ContractError("supernet needs at least one layer");
    if (spec.height == 0 || spec.width == 0 || spec.in_channels == 0 || spec.channels == 0 ||
        spec.num_outputs == 0) {
      throw ContractError("supernet dimensions must be positive");
    }
    if (!spec.layer_inputs.empty() && spec.layer_inputs.size() != n_layers) {
      throw ContractError("layer_inputs must name the inputs of every layer");
    }
    SuperNet net;
    net.input_shape = {spec.height, spec.width, spec.in_channels};
    net.channels = spec.channels;
    net.num_outputs = spec.num_outputs;
    net.stem.resize(spec.channels * spec.in_channels);
    const double s = std::sqrt(1.0 / static_cast<double>(spec.in_channels));
    for (double& w : net.stem) w = rng.normal(0.0, s);

    std::vector<bool> consumed(n_layers, false);
    for (std::size_t n = 0; n < n_layers; ++n) {
      MixedOp op;
      op.candidates = spec.layer_candidates[n];
      if (op.candidates.empty()) {
        throw ContractError("layer " + std::to_string(n + 1) + " has no candidates");
      }
      for (const auto& c : op.candidates) c.validate();
      op.alpha.assign(op.candidates.size(), 0.0);
      op.inputs = spec.layer_inputs.empty() ? std::vector<int>{static_cast<int>(n) - 1}
                                            : spec.layer_inputs[n];
      if (op.inputs.empty()) throw ContractError("layer " + std::to_string(n + 1) + " has no inputs");
      std::size_t c = 0;
      for (int src : op.inputs) {
        if (src < -1 || src >= static_cast<int>(n)) {
          throw ContractError("layer " + std::to_string(n + 1) +
                              " reads from a later or unknown layer");
        }
        c += src < 0 ? spec.channels : net.layers[static_cast<std::size_t>(src)].shape[2];
        if (src >= 0) consumed[static_cast<std::size_t>(src)] = true;
      }
      op.shape = {spec.height, spec.width, c};
      std::vector<std::vector<double>> w;
      for (const auto& cand : op.candidates) w.push_back(init_params(cand, c, rng));
      net.weights.push_back(std::move(w));
      net.layers.push_back(std::move(op));
    }
    for (std::size_t n = 0; n + 1 < n_layers; ++n) {
      if (!consumed[n]) {
        throw ContractError("layer " + std::to_string(n + 1) + " output is never consumed");
      }
    }
    const std::size_t d = net.head_inputs();
    net.head_w.resize(spec.num_outputs * d);
    const double sh = std::sqrt(1.0 / static_cast<double>(d));
    for (double& w : net.head_w) w = rng.normal(0.0, sh);
    net.head_b.assign(spec.num_outputs, 0.0);
    return net;
  }

  // Squared L2 norm of every weight parameter (stem, candidates, head).
  double l2_norm_sq() const {
    double s = 0.0;
    for (double w : stem) s += w * w;
    for (const auto& layer : weights) {
      for (const auto& cand : layer) {
        for (double w : cand) s += w * w;
      }
    }
    for (double w : head_w) s += w * w;
    for (double w : head_b) s += w * w;
    return s;
  }
};

inline Mixture relaxed_mixture(const SuperNet& net) {
  Mixture m;
  for (std::size_t n = 0; n < net.num_layers(); ++n) m.push_back(net.probs(n));
  return m;
}

inline Mixture one_hot_mixture(const SuperNet& net, std::span<const std::size_t> arch) {
  if (arch.size() != net.num_layers()) {
    throw ContractError("architecture has " + std::to_string(arch.size()) + " entries for " +
                        std::to_string(net.num_layers()) + " layers");
  }
  Mixture m;
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    if (arch[n] >= net.layers[n].candidates.size()) {
      throw ContractError("candidate index out of range in layer " + std::to_string(n + 1));
    }
    std::vector<double> row(net.layers[n].candidates.size(), 0.0);
    row[arch[n]] = 1.0;
    m.push_back(std::move(row));
  }
  return m;
}

inline Mixture gate_mixture(const SuperNet& net, const GateSample& gates) {
  std::vector<std::size_t> arch;
  for (const LayerGate& g : gates) arch.push_back(g.active);
  return one_hot_mixture(net, arch);
}

// Independent draw per layer from the layer's softmax, or from the uniform
// distribution when `uniform` is set (warm-up).
inline GateSample sample_network_gates(const SuperNet& net, Rng& rng, bool two_path,
                                       bool uniform = false) {
  GateSample out;
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    const std::size_t r = net.layers[n].candidates.size();
    const ProbVector p = uniform ? ProbVector(r, 1.0 / static_cast<double>(r)) : net.probs(n);
    out.push_back(sample_gates(p, rng, two_path));
  }
  return out;
}

// Per-layer argmax of p; ties go to the lowest index.
inline std::vector<std::size_t> derive_compact(const SuperNet& net) {
  std::vector<std::size_t> arch;
  for (const MixedOp& op : net.layers) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < op.alpha.size(); ++i) {
      if (op.alpha[i] > op.alpha[best]) best = i;
    }
    arch.push_back(best);
  }
  return arch;
}

// Supernet reduced to one candidate per layer, weights copied.
inline SuperNet compact_net(const SuperNet& net, std::span<const std::size_t> arch) {
  one_hot_mixture(net, arch);  // validates
  SuperNet out = net;
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    out.layers[n].candidates = {net.layers[n].candidates[arch[n]]};
    out.layers[n].alpha = {0.0};
    out.weights[n] = {net.weights[n][arch[n]]};
  }
  return out;
}

struct ForwardTrace {
  Tensor input;
  Tensor stem_out;
  std::vector<Tensor> layer_in;
  std::vector<Tensor> layer_out;
  std::vector<std::vector<Tensor>> cand_out;  // empty tensor where not evaluated
  std::vector<std::vector<CandidateCache>> caches;
  std::vector<double> logits;
};

struct Gradients {
  std::vector<double> stem;
  std::vector<std::vector<std::vector<double>>> weights;
  std::vector<double> head_w;
  std::vector<double> head_b;
  // dL/dc_j for the mixing coefficient of candidate j of each layer; only the
  // entries requested in BackwardOptions are filled.
  std::vector<std::vector<double>> gates;

  static Gradients zeros_like(const SuperNet& net) {
    Gradients g;
    g.stem.assign(net.stem.size(), 0.0);
    for (const auto& layer : net.weights) {
      std::vector<std::vector<double>> l;
      for (const auto& cand : layer) l.emplace_back(cand.size(), 0.0);
      g.weights.push_back(std::move(l));
    }
    g.head_w.assign(net.head_w.size(), 0.0);
    g.head_b.assign(net.head_b.size(), 0.0);
    for (const auto& op : net.layers) g.gates.emplace_back(op.candidates.size(), 0.0);
    return g;
  }
};

struct BackwardOptions {
  bool weights = true;
  // Per layer, the candidates whose gate gradient is wanted. Candidates not
  // evaluated in the forward pass are run on demand.
  const std::vector<std::vector<std::size_t>>* gate_candidates = nullptr;
};

namespace detail {

inline Tensor concat_channels(const ForwardTrace& tr, const MixedOp& op) {
  if (op.inputs.size() == 1) {
    const int src = op.inputs[0];
    return src < 0 ? tr.stem_out : tr.layer_out[static_cast<std::size_t>(src)];
  }
  Tensor out(op.shape);
  const std::size_t positions = op.shape[0] * op.shape[1];
  std::size_t offset = 0;
  for (int src : op.inputs) {
    const Tensor& t = src < 0 ? tr.stem_out : tr.layer_out[static_cast<std::size_t>(src)];
    const std::size_t c = t.shape[2];
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t k = 0; k < c; ++k) out.data[p * op.shape[2] + offset + k] = t.data[p * c + k];
    }
    offset += c;
  }
  return out;
}

}  // namespace detail

// Mixed forward pass: each layer outputs sum_i mix[n][i] v_i(x_n).
inline std::vector<double> forward(const SuperNet& net, const Tensor& x, const Mixture& mix,
                                   ForwardTrace* trace = nullptr) {
  if (x.shape != net.input_shape) {
    throw ContractError("input shape " + shape_string(x.shape) + " does not match " +
                        shape_string(net.input_shape));
  }
  if (mix.size() != net.num_layers()) throw ContractError("mixture does not cover every layer");
  ForwardTrace local;
  ForwardTrace& tr = trace ? *trace : local;
  tr = ForwardTrace{};
  tr.input = x;
  const std::size_t positions = x.shape[0] * x.shape[1], cin = x.shape[2], c = net.channels;
  tr.stem_out = Tensor({x.shape[0], x.shape[1], c});
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t o = 0; o < c; ++o) {
      double s = 0.0;
      for (std::size_t k = 0; k < cin; ++k) s += net.stem[o * cin + k] * x.data[p * cin + k];
      tr.stem_out.data[p * c + o] = s;
    }
  }
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    const MixedOp& op = net.layers[n];
    if (mix[n].size() != op.candidates.size()) {
      throw ContractError("mixture row " + std::to_string(n + 1) + " has wrong length");
    }
    tr.layer_in.push_back(detail::concat_channels(tr, op));
    const Tensor& in = tr.layer_in.back();
    Tensor out(op.shape);
    std::vector<Tensor> outs(op.candidates.size());
    std::vector<CandidateCache> caches(op.candidates.size());
    std::size_t evaluated = 0;
    for (std::size_t i = 0; i < op.candidates.size(); ++i) {
      if (mix[n][i] == 0.0) continue;
      outs[i] = candidate_forward(op.candidates[i], net.weights[n][i], in, &caches[i]);
      axpy(mix[n][i], outs[i].data, out.data);
      ++evaluated;
    }
    if (evaluated == 0) {
      throw ContractError("mixture selects no candidate in layer " + std::to_string(n + 1));
    }
    tr.layer_out.push_back(std::move(out));
    tr.cand_out.push_back(std::move(outs));
    tr.caches.push_back(std::move(caches));
  }
  const Tensor& last = tr.layer_out.back();
  const std::size_t d = last.size();
  tr.logits.assign(net.num_outputs, 0.0);
  for (std::size_t o = 0; o < net.num_outputs; ++o) {
    tr.logits[o] = net.head_b[o] + dot(std::span(net.head_w).subspan(o * d, d), last.data);
  }
  return tr.logits;
}

// Accumulates d(sum_o dlogits[o] * logits[o]) into `acc`.
inline void backward(const SuperNet& net, const ForwardTrace& tr, const Mixture& mix,
                     std::span<const double> dlogits, Gradients& acc,
                     const BackwardOptions& opts = {}) {
  if (dlogits.size() != net.num_outputs) throw ContractError("backward: wrong logit gradient size");
  const std::size_t n_layers = net.num_layers();
  std::vector<Tensor> g_out(n_layers);
  for (std::size_t n = 0; n < n_layers; ++n) g_out[n] = Tensor(net.layers[n].shape);
  Tensor g_stem(tr.stem_out.shape);

  const Tensor& last = tr.layer_out.back();
  const std::size_t d = last.size();
  for (std::size_t o = 0; o < net.num_outputs; ++o) {
    const double go = dlogits[o];
    if (go == 0.0) continue;
    if (opts.weights) {
      acc.head_b[o] += go;
      axpy(go, last.data, std::span(acc.head_w).subspan(o * d, d));
    }
    axpy(go, std::span(net.head_w).subspan(o * d, d), g_out.back().data);
  }

  for (std::size_t n = n_layers; n-- > 0;) {
    const MixedOp& op = net.layers[n];
    const Tensor& gy = g_out[n];
    const Tensor& in = tr.layer_in[n];

    if (opts.gate_candidates) {
      for (std::size_t j : (*opts.gate_candidates)[n]) {
        if (!tr.cand_out[n][j].data.empty()) {
          acc.gates[n][j] += dot(gy.data, tr.cand_out[n][j].data);
        } else {
          const Tensor v = candidate_forward(op.candidates[j], net.weights[n][j], in);
          acc.gates[n][j] += dot(gy.data, v.data);
        }
      }
    }

    Tensor g_in(op.shape);
    for (std::size_t i = 0; i < op.candidates.size(); ++i) {
      const double c = mix[n][i];
      if (c == 0.0) continue;
      Tensor up = gy;
      if (c != 1.0) {
        for (double& v : up.data) v *= c;
      }
      CandidateGrad cg = candidate_backward(op.candidates[i], net.weights[n][i], in, up,
                                            &tr.caches[n][i]);
      axpy(1.0, cg.grad_x.data, g_in.data);
      if (opts.weights) axpy(1.0, cg.grad_w, acc.weights[n][i]);
    }

    // Scatter the input gradient back to the producers.
    const std::size_t positions = op.shape[0] * op.shape[1];
    std::size_t offset = 0;
    for (int src : op.inputs) {
      Tensor& dst = src < 0 ? g_stem : g_out[static_cast<std::size_t>(src)];
      const std::size_t c = dst.shape[2];
      for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t k = 0; k < c; ++k) dst.data[p * c + k] += g_in.data[p * op.shape[2] + offset + k];
      }
      offset += c;
    }
  }

  if (opts.weights) {
    const std::size_t positions = tr.input.shape[0] * tr.input.shape[1];
    const std::size_t cin = tr.input.shape[2], c = net.channels;
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t o = 0; o < c; ++o) {
        const double go = g_stem.data[p * c + o];
        if (go == 0.0) continue;
        for (std::size_t k = 0; k < cin; ++k) acc.stem[o * cin + k] += go * tr.input.data[p * cin + k];
      }
    }
  }
}

inline std::size_t predicted_class(std::span<const double> logits, LossMode mode) {
  if (mode == LossMode::kBinarySigmoid) return logits[0] > 0.0 ? 1 : 0;
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

struct BatchStats {
  double loss = 0.0;  // mean over the batch
  std::size_t correct = 0;
};

// Forward every sample, and when `grads` is given, accumulate the gradient of
// the batch-mean loss.
inline BatchStats run_batch(const SuperNet& net, std::span<const Tensor* const> inputs,
                            std::span<const std::size_t> labels, const Mixture& mix,
                            LossMode mode, Gradients* grads = nullptr,
                            const BackwardOptions& opts = {}) {
  if (inputs.empty() || inputs.size() != labels.size()) {
    throw ContractError("run_batch: need K >= 1 inputs with matching labels");
  }
  const double inv_k = 1.0 / static_cast<double>(inputs.size());
  BatchStats stats;
  ForwardTrace tr;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<double> logits = forward(net, *inputs[k], mix, grads ? &tr : nullptr);
    LossValue lv = loss_ce(logits, labels[k], mode);
    if (!std::isfinite(lv.loss)) throw NumericError("non-finite loss on batch sample " + std::to_string(k));
    stats.loss += lv.loss * inv_k;
    if (predicted_class(logits, mode) == labels[k]) ++stats.correct;
    if (grads) {
      for (double& v : lv.dlogits) v *= inv_k;
      backward(net, tr, mix, lv.dlogits, *grads, opts);
    }
  }
  return stats;
}

}  // namespace splitnas

#endif  // SPLITNAS_SUPERNET_HPP_
