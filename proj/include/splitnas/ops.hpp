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

// Candidate operations of a searchable layer. Every candidate maps an
// H x W x C activation to an H x W x C activation so the outputs of sibling
// candidates can be mixed.
//
//   identity      y = x
//   dense-expand  y = W2 relu(W1 x)                      (per position)
//   conv2d        y = W2 relu(dw_k(relu(W1 x)))          (inverted bottleneck)
//
// W1 expands C -> e*C channels, dw_k is a k x k depthwise convolution with
// stride 1 and same padding, W2 projects back to C channels. With `shortcut`
// the input is added to the result. No normalization and no biases.

#ifndef SPLITNAS_OPS_HPP_
#define SPLITNAS_OPS_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitnas/errors.hpp"
#include "splitnas/rng.hpp"
#include "splitnas/tensor.hpp"

namespace splitnas {

enum class OpKind { kIdentity, kDenseExpand, kConv2d };

struct CandidateOpSpec {
  OpKind kind = OpKind::kIdentity;
  int kernel = 0;     // conv2d only: 3, 5 or 7
  int expansion = 0;  // non-identity: 3 or 6
  bool shortcut = false;

  static CandidateOpSpec identity() { return {}; }
  static CandidateOpSpec dense(int expansion, bool shortcut = false) {
    return {OpKind::kDenseExpand, 0, expansion, shortcut};
  }
  static CandidateOpSpec conv(int kernel, int expansion, bool shortcut = false) {
    return {OpKind::kConv2d, kernel, expansion, shortcut};
  }

  void validate() const {
    if (kind == OpKind::kIdentity) {
      if (kernel != 0 || expansion != 0 || shortcut) {
        throw ContractError("identity candidate takes no kernel, expansion or shortcut");
      }
      return;
    }
    if (expansion != 3 && expansion != 6) {
      throw ContractError("expansion ratio must be 3 or 6, got " + std::to_string(expansion));
    }
    if (kind == OpKind::kConv2d && kernel != 3 && kernel != 5 && kernel != 7) {
      throw ContractError("conv kernel must be 3, 5 or 7, got " + std::to_string(kernel));
    }
    if (kind == OpKind::kDenseExpand && kernel != 0) {
      throw ContractError("dense-expand candidate takes no kernel");
    }
  }

  // "identity", "dense_e3", "mb5_e6", "mb5_e6_res", ...
  std::string name() const {
    switch (kind) {
      case OpKind::kIdentity:
        return "identity";
      case OpKind::kDenseExpand:
        return "dense_e" + std::to_string(expansion) + (shortcut ? "_res" : "");
      case OpKind::kConv2d:
        return "mb" + std::to_string(kernel) + "_e" + std::to_string(expansion) +
               (shortcut ? "_res" : "");
    }
    return "?";
  }

  static CandidateOpSpec parse(std::string_view text) {
    auto fail = [&] {
      return ValidationError("unknown candidate operation '" + std::string(text) + "'");
    };
    if (text == "identity") return identity();
    std::string_view rest = text;
    bool shortcut = false;
    if (rest.ends_with("_res")) {
      shortcut = true;
      rest.remove_suffix(4);
    }
    CandidateOpSpec spec;
    if (rest.starts_with("dense_e") && rest.size() == 8) {
      spec = dense(rest[7] - '0', shortcut);
    } else if (rest.starts_with("mb") && rest.size() == 6 && rest.substr(3, 2) == "_e") {
      spec = conv(rest[2] - '0', rest[5] - '0', shortcut);
    } else {
      throw fail();
    }
    try {
      spec.validate();
    } catch (const ContractError&) {
      throw fail();
    }
    return spec;
  }

  friend bool operator==(const CandidateOpSpec&, const CandidateOpSpec&) = default;
};

// The 13-member family: identity plus k in {3,5,7} x e in {3,6}, each with and
// without shortcut.
inline std::vector<CandidateOpSpec> full_candidate_family() {
  std::vector<CandidateOpSpec> out{CandidateOpSpec::identity()};
  for (int k : {3, 5, 7}) {
    for (int e : {3, 6}) {
      out.push_back(CandidateOpSpec::conv(k, e, false));
      out.push_back(CandidateOpSpec::conv(k, e, true));
    }
  }
  return out;
}

namespace detail {

inline void require_activation(const Tensor& x, const char* what) {
  if (x.shape.size() != 3) {
    throw ContractError(std::string(what) + ": expected HxWxC activation, got " +
                        shape_string(x.shape));
  }
}

struct OpLayout {
  std::size_t channels = 0;
  std::size_t expanded = 0;
  std::size_t w1 = 0, wd = 0, w2 = 0;  // offsets into the parameter vector
  std::size_t total = 0;
};

inline OpLayout layout(const CandidateOpSpec& spec, std::size_t channels) {
  OpLayout l;
  l.channels = channels;
  if (spec.kind == OpKind::kIdentity) return l;
  l.expanded = channels * static_cast<std::size_t>(spec.expansion);
  const std::size_t k = static_cast<std::size_t>(spec.kernel);
  l.w1 = 0;
  l.wd = l.expanded * channels;
  l.w2 = l.wd + (spec.kind == OpKind::kConv2d ? l.expanded * k * k : 0);
  l.total = l.w2 + channels * l.expanded;
  return l;
}

}  // namespace detail

inline std::size_t param_count(const CandidateOpSpec& spec, std::size_t channels) {
  return detail::layout(spec, channels).total;
}

// Multiply-accumulate count of one forward pass on an activation of `shape`.
// Shortcut adds are counted as one MAC per element.
inline double mac_count(const CandidateOpSpec& spec, const Shape& shape) {
  if (spec.kind == OpKind::kIdentity) return 0.0;
  const double positions = static_cast<double>(shape.at(0) * shape.at(1));
  const double c = static_cast<double>(shape.at(2));
  const double e = c * spec.expansion;
  double macs = positions * (e * c + c * e);
  if (spec.kind == OpKind::kConv2d) macs += positions * e * spec.kernel * spec.kernel;
  if (spec.shortcut) macs += positions * c;
  return macs;
}

// He-style initialization for the expansion and depthwise stages, fan-in
// scaling for the projection.
inline std::vector<double> init_params(const CandidateOpSpec& spec, std::size_t channels,
                                       Rng& rng) {
  const detail::OpLayout l = detail::layout(spec, channels);
  std::vector<double> w(l.total);
  if (l.total == 0) return w;
  const double s1 = std::sqrt(2.0 / static_cast<double>(channels));
  for (std::size_t i = l.w1; i < l.wd; ++i) w[i] = rng.normal(0.0, s1);
  if (spec.kind == OpKind::kConv2d) {
    const double sd = std::sqrt(2.0 / static_cast<double>(spec.kernel * spec.kernel));
    for (std::size_t i = l.wd; i < l.w2; ++i) w[i] = rng.normal(0.0, sd);
  }
  const double s2 = std::sqrt(1.0 / static_cast<double>(l.expanded));
  for (std::size_t i = l.w2; i < l.total; ++i) w[i] = rng.normal(0.0, s2);
  return w;
}

// Intermediate activations kept from a forward pass for the backward pass.
struct CandidateCache {
  std::vector<double> pre1;  // W1 x, positions x expanded
  std::vector<double> pre2;  // depthwise output before relu (conv only)
};

namespace detail {

inline void check_params(const CandidateOpSpec& spec, std::span<const double> w,
                         const OpLayout& l) {
  if (w.size() != l.total) {
    throw ContractError(spec.name() + ": expected " + std::to_string(l.total) +
                        " parameters, got " + std::to_string(w.size()));
  }
}

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

inline void depthwise(std::span<const double> in, std::span<const double> kernel,
                      std::size_t height, std::size_t width, std::size_t channels,
                      std::size_t k, std::span<double> out) {
  const long r = static_cast<long>(k / 2);
  const long h = static_cast<long>(height), wd = static_cast<long>(width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < wd; ++x) {
      double* dst = &out[static_cast<std::size_t>(y * wd + x) * channels];
      for (std::size_t c = 0; c < channels; ++c) dst[c] = 0.0;
      for (long dy = -r; dy <= r; ++dy) {
        const long sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (long dx = -r; dx <= r; ++dx) {
          const long sx = x + dx;
          if (sx < 0 || sx >= wd) continue;
          const double* src = &in[static_cast<std::size_t>(sy * wd + sx) * channels];
          const std::size_t tap = static_cast<std::size_t>((dy + r) * static_cast<long>(k) + (dx + r));
          for (std::size_t c = 0; c < channels; ++c) dst[c] += kernel[c * k * k + tap] * src[c];
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor candidate_forward(const CandidateOpSpec& spec, std::span<const double> w,
                                const Tensor& x, CandidateCache* cache = nullptr) {
  detail::require_activation(x, "candidate_forward");
  if (spec.kind == OpKind::kIdentity) {
    if (!w.empty()) throw ContractError("identity candidate has no parameters");
    return x;
  }
  const std::size_t height = x.shape[0], width = x.shape[1], channels = x.shape[2];
  const detail::OpLayout l = detail::layout(spec, channels);
  detail::check_params(spec, w, l);
  const std::size_t positions = height * width, e = l.expanded;

  std::vector<double> pre1(positions * e);
  for (std::size_t p = 0; p < positions; ++p) {
    const double* xp = &x.data[p * channels];
    for (std::size_t j = 0; j < e; ++j) {
      const double* row = &w[l.w1 + j * channels];
      double s = 0.0;
      for (std::size_t c = 0; c < channels; ++c) s += row[c] * xp[c];
      pre1[p * e + j] = s;
    }
  }
  std::vector<double> hidden(positions * e);
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = detail::relu(pre1[i]);

  std::vector<double> pre2;
  if (spec.kind == OpKind::kConv2d) {
    pre2.resize(positions * e);
    detail::depthwise(hidden, w.subspan(l.wd, l.w2 - l.wd), height, width, e,
                      static_cast<std::size_t>(spec.kernel), pre2);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = detail::relu(pre2[i]);
  }

  Tensor y(x.shape);
  for (std::size_t p = 0; p < positions; ++p) {
    const double* hp = &hidden[p * e];
    for (std::size_t c = 0; c < channels; ++c) {
      const double* row = &w[l.w2 + c * e];
      double s = spec.shortcut ? x.data[p * channels + c] : 0.0;
      for (std::size_t j = 0; j < e; ++j) s += row[j] * hp[j];
      y.data[p * channels + c] = s;
    }
  }
  if (cache) {
    cache->pre1 = std::move(pre1);
    cache->pre2 = std::move(pre2);
  }
  return y;
}

struct CandidateGrad {
  Tensor grad_x;
  std::vector<double> grad_w;
};

// Gradients of <upstream, candidate_forward(spec, w, x)> with respect to x and w.
// `cache` must come from a forward pass on the same (spec, w, x) when given.
inline CandidateGrad candidate_backward(const CandidateOpSpec& spec, std::span<const double> w,
                                        const Tensor& x, const Tensor& upstream,
                                        const CandidateCache* cache = nullptr) {
  detail::require_activation(x, "candidate_backward");
  require_same_shape(x, upstream, "candidate_backward upstream");
  if (spec.kind == OpKind::kIdentity) {
    if (!w.empty()) throw ContractError("identity candidate has no parameters");
    return {upstream, {}};
  }
  const std::size_t height = x.shape[0], width = x.shape[1], channels = x.shape[2];
  const detail::OpLayout l = detail::layout(spec, channels);
  detail::check_params(spec, w, l);
  const std::size_t positions = height * width, e = l.expanded;
  const bool conv = spec.kind == OpKind::kConv2d;

  CandidateCache local;
  if (!cache) {
    candidate_forward(spec, w, x, &local);
    cache = &local;
  }
  const std::vector<double>& pre1 = cache->pre1;
  const std::vector<double>& pre2 = cache->pre2;

  CandidateGrad g{Tensor(x.shape), std::vector<double>(l.total, 0.0)};

  // Projection.
  std::vector<double> g_hidden(positions * e, 0.0);
  for (std::size_t p = 0; p < positions; ++p) {
    const double* hp = conv ? &pre2[p * e] : &pre1[p * e];
    for (std::size_t c = 0; c < channels; ++c) {
      const double go = upstream.data[p * channels + c];
      if (go == 0.0) continue;
      const double* row = &w[l.w2 + c * e];
      double* grow = &g.grad_w[l.w2 + c * e];
      for (std::size_t j = 0; j < e; ++j) {
        grow[j] += go * detail::relu(hp[j]);
        g_hidden[p * e + j] += go * row[j];
      }
    }
  }

  std::vector<double> g_pre1(positions * e, 0.0);
  if (conv) {
    for (std::size_t i = 0; i < g_hidden.size(); ++i) {
      if (pre2[i] <= 0.0) g_hidden[i] = 0.0;  // now d/d(pre2)
    }
    const long k = spec.kernel, r = k / 2;
    const long h = static_cast<long>(height), wd = static_cast<long>(width);
    for (long y = 0; y < h; ++y) {
      for (long xx = 0; xx < wd; ++xx) {
        const std::size_t p = static_cast<std::size_t>(y * wd + xx);
        for (long dy = -r; dy <= r; ++dy) {
          const long sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          for (long dx = -r; dx <= r; ++dx) {
            const long sx = xx + dx;
            if (sx < 0 || sx >= wd) continue;
            const std::size_t s = static_cast<std::size_t>(sy * wd + sx);
            const std::size_t tap = static_cast<std::size_t>((dy + r) * k + (dx + r));
            for (std::size_t j = 0; j < e; ++j) {
              const double gp = g_hidden[p * e + j];
              if (gp == 0.0) continue;
              const std::size_t widx = l.wd + j * static_cast<std::size_t>(k * k) + tap;
              g.grad_w[widx] += gp * detail::relu(pre1[s * e + j]);
              g_pre1[s * e + j] += gp * w[widx];
            }
          }
        }
      }
    }
  } else {
    g_pre1 = std::move(g_hidden);
  }
  for (std::size_t i = 0; i < g_pre1.size(); ++i) {
    if (pre1[i] <= 0.0) g_pre1[i] = 0.0;
  }

  // Expansion.
  for (std::size_t p = 0; p < positions; ++p) {
    const double* xp = &x.data[p * channels];
    double* gx = &g.grad_x.data[p * channels];
    for (std::size_t j = 0; j < e; ++j) {
      const double gp = g_pre1[p * e + j];
      if (gp == 0.0) continue;
      const double* row = &w[l.w1 + j * channels];
      double* grow = &g.grad_w[l.w1 + j * channels];
      for (std::size_t c = 0; c < channels; ++c) {
        grow[c] += gp * xp[c];
        gx[c] += gp * row[c];
      }
    }
  }
  if (spec.shortcut) axpy(1.0, upstream.data, g.grad_x.data);
  return g;
}

}  // namespace splitnas

#endif  // SPLITNAS_OPS_HPP_
