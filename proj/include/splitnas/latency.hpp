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

// Completion latency of a split deployment.
//
//   chain:  T = sum_m ( sum_{n in D^m} tau_n + eps_m )
//   mesh:   T = sum_{m in C} ( sum tau + eps_m )
//             + max_{b in T\{r}} ( sum_{D^r} tau + eps_{r->b} + sum_{D^b} tau + eps_{b->agg} )
//
// eps_m is the transfer of layer d(m)'s output to the next device and is zero
// for the last device. Replacing tau_n by sum_i p_i U_n(v_i) gives the
// expected latency, which is differentiable in the architecture parameters.

#ifndef SPLITNAS_LATENCY_HPP_
#define SPLITNAS_LATENCY_HPP_

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "splitnas/errors.hpp"
#include "splitnas/supernet.hpp"
#include "splitnas/topology.hpp"

namespace splitnas {

// Execution latency U_n^m(v_i) and transfer latency eps_n^{m->dst}, in ms.
// Layers and candidates are 0-based; dst 0 matches any receiver.
struct LatencyTable {
  std::map<std::tuple<std::size_t, int, std::size_t>, double> exec;
  std::map<std::tuple<std::size_t, int, int>, double> comm;

  void set_exec(std::size_t layer, int device, std::size_t cand, double ms) {
    if (!(ms >= 0.0) || !std::isfinite(ms)) throw ValidationError("latency entries must be finite and >= 0");
    exec[{layer, device, cand}] = ms;
  }
  void set_comm(std::size_t layer, int device, int dst, double ms) {
    if (!(ms >= 0.0) || !std::isfinite(ms)) throw ValidationError("latency entries must be finite and >= 0");
    comm[{layer, device, dst}] = ms;
  }

  double exec_ms(std::size_t layer, int device, std::size_t cand) const {
    auto it = exec.find({layer, device, cand});
    if (it == exec.end()) {
      throw ValidationError("latency table has no execution entry for layer " +
                            std::to_string(layer + 1) + ", device " + std::to_string(device) +
                            ", candidate " + std::to_string(cand + 1));
    }
    return it->second;
  }

  double comm_ms(std::size_t layer, int device, int dst) const {
    auto it = comm.find({layer, device, dst});
    if (it == comm.end()) it = comm.find({layer, device, 0});
    if (it == comm.end()) {
      throw ValidationError("latency table has no transfer entry for layer " +
                            std::to_string(layer + 1) + ", device " + std::to_string(device) +
                            " -> " + std::to_string(dst));
    }
    return it->second;
  }

  friend bool operator==(const LatencyTable&, const LatencyTable&) = default;
};

// Concrete per-layer compute and per-boundary transfer costs.
struct LayerCosts {
  std::vector<double> tau;                    // layer n on its hosting device
  std::map<std::pair<int, int>, double> eps;  // (device, receiver) for the boundary at d(device)
};

struct DeviceBreakdown {
  int device = 0;
  double compute_ms = 0.0;
  std::vector<std::pair<int, double>> comm_ms;  // (receiver, ms)
};

struct CompletionLatency {
  double value = 0.0;
  std::vector<DeviceBreakdown> devices;
  int critical_branch = 0;  // mesh: branch attaining the max
};

namespace detail {

inline double eps_of(const LayerCosts& c, int from, int to) {
  auto it = c.eps.find({from, to});
  if (it == c.eps.end()) {
    throw ValidationError("missing transfer cost " + std::to_string(from) + "->" + std::to_string(to));
  }
  return it->second;
}

inline DeviceBreakdown breakdown(const Topology& topo, const LayerAssignment& a,
                                 const LayerCosts& c, int device) {
  DeviceBreakdown d;
  d.device = device;
  for (std::size_t n : a.block(device)) {
    if (n >= c.tau.size()) throw ValidationError("missing compute cost for layer " + std::to_string(n + 1));
    d.compute_ms += c.tau[n];
  }
  for (int dst : topo.successors(device)) d.comm_ms.emplace_back(dst, eps_of(c, device, dst));
  return d;
}

}  // namespace detail

inline CompletionLatency chain_latency(const Topology& topo, const LayerAssignment& a,
                                       const LayerCosts& c) {
  if (topo.kind != TopologyKind::kChain) throw ContractError("chain_latency on a mesh topology");
  CompletionLatency out;
  for (int m : topo.prefix) {
    DeviceBreakdown d = detail::breakdown(topo, a, c, m);
    out.value += d.compute_ms;
    for (const auto& [dst, ms] : d.comm_ms) out.value += ms;
    out.devices.push_back(std::move(d));
  }
  return out;
}

inline CompletionLatency mesh_latency(const Topology& topo, const LayerAssignment& a,
                                      const LayerCosts& c) {
  if (topo.kind != TopologyKind::kMesh) throw ContractError("mesh_latency on a chain topology");
  CompletionLatency out;
  std::map<int, DeviceBreakdown> by_id;
  for (int m : topo.device_order()) by_id[m] = detail::breakdown(topo, a, c, m);
  for (int m : topo.device_order()) {
    if (!topo.in_chain_part(m)) continue;
    const DeviceBreakdown& d = by_id[m];
    out.value += d.compute_ms;
    for (const auto& [dst, ms] : d.comm_ms) out.value += ms;
  }
  const int agg = topo.tail.front();
  double best = -1.0;
  for (int b : topo.branches) {
    const double term = by_id[topo.root].compute_ms + detail::eps_of(c, topo.root, b) +
                        by_id[b].compute_ms + detail::eps_of(c, b, agg);
    if (term > best) {
      best = term;
      out.critical_branch = b;
    }
  }
  out.value += best;
  for (int m : topo.device_order()) out.devices.push_back(by_id[m]);
  return out;
}

inline CompletionLatency completion_latency(const Topology& topo, const LayerAssignment& a,
                                            const LayerCosts& c) {
  return topo.kind == TopologyKind::kChain ? chain_latency(topo, a, c) : mesh_latency(topo, a, c);
}

inline std::map<std::pair<int, int>, double> boundary_costs(const Topology& topo,
                                                            const LayerAssignment& a,
                                                            const LatencyTable& table) {
  std::map<std::pair<int, int>, double> eps;
  for (int m : topo.device_order()) {
    for (int dst : topo.successors(m)) eps[{m, dst}] = table.comm_ms(a.last_layer(m), m, dst);
  }
  return eps;
}

// Costs of a fixed architecture (one candidate index per layer).
inline LayerCosts costs_for(const Topology& topo, const LayerAssignment& a, const LatencyTable& table,
                            std::span<const std::size_t> arch) {
  if (arch.size() != a.num_layers()) throw ContractError("architecture and assignment disagree on N");
  LayerCosts c;
  for (std::size_t n = 0; n < arch.size(); ++n) c.tau.push_back(table.exec_ms(n, a.layer_device[n], arch[n]));
  c.eps = boundary_costs(topo, a, table);
  return c;
}

inline double expected_op_latency(std::span<const double> p, std::span<const double> u) {
  if (p.size() != u.size()) throw ContractError("expected_op_latency: length mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) e += p[i] * u[i];
  return e;
}

// dE/dalpha_i = sum_j U_j p_j (delta_ij - p_i)
inline std::vector<double> latency_grad_alpha(std::span<const double> p, std::span<const double> u) {
  if (p.size() != u.size()) throw ContractError("latency_grad_alpha: length mismatch");
  std::vector<double> g(p.size());
  const double e = expected_op_latency(p, u);
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = u[i] * p[i] - e * p[i];
  return g;
}

// U_n^{m(n)}(v_i) for every candidate of layer n.
inline std::vector<double> layer_latencies(const SuperNet& net, const LayerAssignment& a,
                                           const LatencyTable& table, std::size_t n) {
  std::vector<double> u;
  for (std::size_t i = 0; i < net.layers[n].candidates.size(); ++i) {
    u.push_back(table.exec_ms(n, a.layer_device[n], i));
  }
  return u;
}

inline LayerCosts expected_costs(const SuperNet& net, const Topology& topo, const LayerAssignment& a,
                                 const LatencyTable& table) {
  if (net.num_layers() != a.num_layers()) throw ContractError("supernet and assignment disagree on N");
  LayerCosts c;
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    c.tau.push_back(expected_op_latency(net.probs(n), layer_latencies(net, a, table, n)));
  }
  c.eps = boundary_costs(topo, a, table);
  return c;
}

// E_alpha(T): the completion latency with every tau replaced by its expectation.
inline CompletionLatency expected_total_latency(const SuperNet& net, const Topology& topo,
                                                const LayerAssignment& a, const LatencyTable& table) {
  return completion_latency(topo, a, expected_costs(net, topo, a, table));
}

// dE_alpha(T)/dalpha for every layer. Mesh: layers on non-critical branches
// get zero (subgradient of the max, ties to the lowest branch id).
inline std::vector<std::vector<double>> expected_latency_grad(const SuperNet& net, const Topology& topo,
                                                              const LayerAssignment& a,
                                                              const LatencyTable& table) {
  int critical = 0;
  if (topo.kind == TopologyKind::kMesh) critical = expected_total_latency(net, topo, a, table).critical_branch;
  std::vector<std::vector<double>> g;
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    const int dev = a.layer_device[n];
    const bool counts = topo.kind == TopologyKind::kChain || topo.in_chain_part(dev) ||
                        dev == topo.root || dev == critical;
    std::vector<double> row = latency_grad_alpha(net.probs(n), layer_latencies(net, a, table, n));
    if (!counts) row.assign(row.size(), 0.0);
    g.push_back(std::move(row));
  }
  return g;
}

struct Penalty {
  double value = 0.0;
  double d_dt = 0.0;
};

// lambda2 (T - T_const)^2 and its derivative in T.
inline Penalty latency_penalty(double t, double t_const, double lambda2) {
  if (lambda2 < 0.0) throw ContractError("lambda2 must be >= 0");
  const double r = t - t_const;
  return {lambda2 * r * r, 2.0 * lambda2 * r};
}

// ---------------------------------------------------------------------------
// Table file: tab-separated rows, '#' comments, 1-based layers and candidates.
//   exec  <layer> <device> <candidate> <ms>
//   comm  <layer> <device> <ms> [<receiver>]

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string write_latency_table(const LatencyTable& t) {
  std::ostringstream os;
  os << "# splitnas latency table\n# exec\tlayer\tdevice\tcandidate\tms\n# comm\tlayer\tdevice\tms\treceiver\n";
  for (const auto& [key, ms] : t.exec) {
    const auto& [n, m, i] = key;
    os << "exec\t" << n + 1 << '\t' << m << '\t' << i + 1 << '\t' << format_double(ms) << '\n';
  }
  for (const auto& [key, ms] : t.comm) {
    const auto& [n, m, dst] = key;
    os << "comm\t" << n + 1 << '\t' << m << '\t' << format_double(ms);
    if (dst != 0) os << '\t' << dst;
    os << '\n';
  }
  return os.str();
}

inline LatencyTable parse_latency_table(std::string_view text) {
  LatencyTable t;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string tok; std::getline(ls, tok, '\t');) f.push_back(tok);
    auto bad = [&](const std::string& why) {
      return ValidationError("latency table line " + std::to_string(lineno) + ": " + why);
    };
    try {
      if (f.at(0) == "exec") {
        if (f.size() != 5) throw bad("exec rows have 5 fields");
        const long n = std::stol(f[1]), m = std::stol(f[2]), i = std::stol(f[3]);
        if (n < 1 || m < 1 || i < 1) throw bad("indices are 1-based");
        t.set_exec(static_cast<std::size_t>(n - 1), static_cast<int>(m), static_cast<std::size_t>(i - 1),
                   std::stod(f[4]));
      } else if (f.at(0) == "comm") {
        if (f.size() != 4 && f.size() != 5) throw bad("comm rows have 4 or 5 fields");
        const long n = std::stol(f[1]), m = std::stol(f[2]);
        const long dst = f.size() == 5 ? std::stol(f[4]) : 0;
        if (n < 1 || m < 1 || dst < 0) throw bad("indices are 1-based");
        t.set_comm(static_cast<std::size_t>(n - 1), static_cast<int>(m), static_cast<int>(dst),
                   std::stod(f[3]));
      } else {
        throw bad("unknown row type '" + f[0] + "'");
      }
    } catch (const std::logic_error&) {  // stol/stod
      throw bad("malformed number");
    }
  }
  return t;
}

struct SynthOptions {
  double ms_per_mac = 1e-5;  // reference device (speed_factor 1)
};

// U_n^m(v_i) = macs(v_i, shape_n) * ms_per_mac * speed_factor(m) for every
// layer, device and candidate; the stem is charged to layer 1. Transfers are
// the 32-bit payload of each layer over every link.
inline LatencyTable synthesize_table(const SuperNet& net, const Topology& topo,
                                     const SynthOptions& opts = {}) {
  if (!(opts.ms_per_mac >= 0.0)) throw ValidationError("ms_per_mac must be >= 0");
  LatencyTable t;
  const double stem_macs = static_cast<double>(net.input_shape[0] * net.input_shape[1] *
                                               net.input_shape[2] * net.channels);
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    const MixedOp& op = net.layers[n];
    for (const DeviceProfile& d : topo.devices) {
      for (std::size_t i = 0; i < op.candidates.size(); ++i) {
        double macs = mac_count(op.candidates[i], op.shape);
        if (n == 0) macs += stem_macs;
        t.set_exec(n, d.id, i, macs * opts.ms_per_mac * d.speed_factor);
      }
    }
    const double bits = output_bits(op.shape);
    for (const LinkSpec& l : topo.links) t.set_comm(n, l.tx, l.rx, comm_latency(bits, l));
  }
  return t;
}

}  // namespace splitnas

#endif  // SPLITNAS_LATENCY_HPP_
