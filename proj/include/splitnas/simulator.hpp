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

// Event-driven execution of one inference request over a deployment plan.
// A device starts its layer block once every inbound payload has arrived,
// runs the block sequentially, then starts all outbound transfers at once.

#ifndef SPLITNAS_SIMULATOR_HPP_
#define SPLITNAS_SIMULATOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "splitnas/errors.hpp"
#include "splitnas/latency.hpp"
#include "splitnas/supernet.hpp"
#include "splitnas/topology.hpp"

namespace splitnas {

struct PlannedLayer {
  std::size_t layer = 0;  // 0-based
  std::size_t candidate = 0;
  std::string op;
  double exec_ms = 0.0;
  friend bool operator==(const PlannedLayer&, const PlannedLayer&) = default;
};

struct PlannedSend {
  int to = 0;
  double bits = 0.0;
  double comm_ms = 0.0;
  friend bool operator==(const PlannedSend&, const PlannedSend&) = default;
};

struct DevicePlan {
  int device = 0;
  std::vector<PlannedLayer> layers;
  std::vector<PlannedSend> sends;
  friend bool operator==(const DevicePlan&, const DevicePlan&) = default;
};

struct DeploymentPlan {
  Topology topology;
  std::size_t num_layers = 0;
  double input_bits = 0.0;
  std::vector<DevicePlan> devices;  // ascending device id

  const DevicePlan* find(int device) const {
    for (const DevicePlan& d : devices) {
      if (d.device == device) return &d;
    }
    return nullptr;
  }

  friend bool operator==(const DeploymentPlan&, const DeploymentPlan&) = default;
};

// Structural checks: every layer hosted once in contiguous ascending blocks,
// every transfer backed by a link, finite non-negative costs.
inline void validate_plan(const DeploymentPlan& plan) {
  if (plan.num_layers == 0) throw ValidationError("plan has no layers");
  if (!(plan.input_bits >= 0.0)) throw ValidationError("plan input_bits must be >= 0");
  std::vector<int> host(plan.num_layers, 0);
  std::set<int> ids;
  for (const DevicePlan& d : plan.devices) {
    if (d.device < 1 || d.device > static_cast<int>(plan.topology.size())) {
      throw ValidationError("plan references unknown device " + std::to_string(d.device));
    }
    if (!ids.insert(d.device).second) throw ValidationError("device " + std::to_string(d.device) + " listed twice");
    for (std::size_t k = 0; k < d.layers.size(); ++k) {
      const PlannedLayer& l = d.layers[k];
      if (l.layer >= plan.num_layers) throw ValidationError("plan layer " + std::to_string(l.layer + 1) + " out of range");
      if (host[l.layer] != 0) throw ValidationError("layer " + std::to_string(l.layer + 1) + " is hosted twice");
      if (k > 0 && l.layer != d.layers[k - 1].layer + 1) {
        throw ValidationError("device " + std::to_string(d.device) + " holds a non-contiguous layer block");
      }
      if (!(l.exec_ms >= 0.0) || !std::isfinite(l.exec_ms)) throw ValidationError("exec_ms must be finite and >= 0");
      host[l.layer] = d.device;
    }
    for (const PlannedSend& s : d.sends) {
      if (!plan.topology.find_link(d.device, s.to)) {
        throw ValidationError("plan sends " + std::to_string(d.device) + "->" + std::to_string(s.to) +
                              " without a link");
      }
      if (!(s.comm_ms >= 0.0) || !std::isfinite(s.comm_ms) || !(s.bits >= 0.0)) {
        throw ValidationError("transfer costs must be finite and >= 0");
      }
    }
  }
  for (std::size_t n = 0; n < plan.num_layers; ++n) {
    if (host[n] == 0) throw ValidationError("layer " + std::to_string(n + 1) + " is not hosted by any device");
  }
}

enum class EventKind { kComputeStart, kComputeEnd, kTxStart, kTxEnd };

inline std::string_view event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::kComputeStart: return "compute_start";
    case EventKind::kComputeEnd: return "compute_end";
    case EventKind::kTxStart: return "tx_start";
    case EventKind::kTxEnd: return "tx_end";
  }
  return "?";
}

struct TraceEvent {
  double time_ms = 0.0;
  EventKind kind = EventKind::kComputeStart;
  int device = 0;          // computing device, or sender of a transfer
  int peer = 0;            // receiver of a transfer
  std::size_t layer = 0;   // 1-based for compute events, 0 otherwise
  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

using SimTrace = std::vector<TraceEvent>;

struct SimResult {
  double completion_ms = 0.0;
  SimTrace trace;
};

namespace detail {

struct Pending {
  double time;
  int device;
  EventKind kind;
  std::size_t index;  // layer position in the block or send index
  std::size_t seq;

  auto key() const { return std::tuple(time, device, static_cast<int>(kind), seq); }
  bool operator>(const Pending& o) const { return key() > o.key(); }
};

}  // namespace detail

inline SimResult simulate(const DeploymentPlan& plan) {
  validate_plan(plan);
  std::map<int, const DevicePlan*> dev;
  for (const DevicePlan& d : plan.devices) dev[d.device] = &d;
  std::map<int, int> pending_inbound;
  for (const DevicePlan& d : plan.devices) {
    for (const PlannedSend& s : d.sends) {
      if (!dev.count(s.to)) throw ValidationError("plan sends to device " + std::to_string(s.to) + " which has no entry");
      ++pending_inbound[s.to];
    }
  }
  std::vector<int> sources;
  for (const DevicePlan& d : plan.devices) {
    if (pending_inbound[d.device] == 0) sources.push_back(d.device);
  }
  if (sources.empty()) throw ValidationError("cyclic dependency: every device waits for an inbound payload");
  if (sources.size() > 1) {
    throw ValidationError("unreachable device " + std::to_string(sources[1]) +
                          ": it receives no payload and is not the entry device");
  }

  std::priority_queue<detail::Pending, std::vector<detail::Pending>, std::greater<>> queue;
  std::size_t seq = 0;
  auto push = [&](double t, int d, EventKind k, std::size_t i) { queue.push({t, d, k, i, seq++}); };
  std::set<int> started;
  auto start_sends = [&](int d, double t) {
    for (std::size_t s = 0; s < dev[d]->sends.size(); ++s) push(t, d, EventKind::kTxStart, s);
  };
  auto ready = [&](int d, double t) {
    started.insert(d);
    if (!dev[d]->layers.empty()) {
      push(t, d, EventKind::kComputeStart, 0);
    } else {
      start_sends(d, t);
    }
  };

  SimResult result;
  ready(sources[0], 0.0);
  while (!queue.empty()) {
    const detail::Pending e = queue.top();
    queue.pop();
    const DevicePlan& d = *dev[e.device];
    TraceEvent te{e.time, e.kind, e.device, 0, 0};
    switch (e.kind) {
      case EventKind::kComputeStart:
        te.layer = d.layers[e.index].layer + 1;
        push(e.time + d.layers[e.index].exec_ms, e.device, EventKind::kComputeEnd, e.index);
        break;
      case EventKind::kComputeEnd:
        te.layer = d.layers[e.index].layer + 1;
        if (e.index + 1 < d.layers.size()) {
          push(e.time, e.device, EventKind::kComputeStart, e.index + 1);
        } else {
          start_sends(e.device, e.time);
        }
        break;
      case EventKind::kTxStart:
        te.peer = d.sends[e.index].to;
        push(e.time + d.sends[e.index].comm_ms, e.device, EventKind::kTxEnd, e.index);
        break;
      case EventKind::kTxEnd: {
        const int to = d.sends[e.index].to;
        te.peer = to;
        if (--pending_inbound[to] == 0) ready(to, e.time);
        break;
      }
    }
    result.trace.push_back(te);
    result.completion_ms = e.time;
  }
  for (const DevicePlan& d : plan.devices) {
    if (!started.count(d.device)) {
      throw ValidationError("cyclic dependency: device " + std::to_string(d.device) + " never became ready");
    }
  }
  return result;
}

// Causality, per-device non-overlap and layer coverage. Returns one message
// per violation; an empty list means the trace is consistent with the plan.
inline std::vector<std::string> validate_trace(const SimTrace& trace, const DeploymentPlan& plan) {
  std::vector<std::string> v;
  constexpr double kTol = 1e-9;
  std::map<std::pair<int, int>, double> last_time;  // (device, peer)
  std::map<std::size_t, std::pair<int, int>> layer_events;
  std::map<std::size_t, double> start_of, end_of;
  std::map<std::pair<int, int>, double> tx_start, tx_end;
  std::map<std::pair<int, int>, int> tx_count;
  std::map<int, std::vector<std::pair<double, double>>> intervals;

  for (const TraceEvent& e : trace) {
    const std::pair<int, int> entity{e.device, e.peer};
    auto it = last_time.find(entity);
    if (it != last_time.end() && e.time_ms < it->second) {
      v.push_back("time goes backwards on entity " + std::to_string(e.device) + "/" + std::to_string(e.peer));
    }
    last_time[entity] = e.time_ms;
    if (e.kind == EventKind::kComputeStart || e.kind == EventKind::kComputeEnd) {
      if (e.layer == 0 || e.layer > plan.num_layers) {
        v.push_back("compute event for unknown layer " + std::to_string(e.layer));
        continue;
      }
      const std::size_t n = e.layer - 1;
      if (e.kind == EventKind::kComputeStart) {
        ++layer_events[n].first;
        start_of[n] = e.time_ms;
      } else {
        ++layer_events[n].second;
        end_of[n] = e.time_ms;
      }
    } else {
      const std::pair<int, int> link{e.device, e.peer};
      if (e.kind == EventKind::kTxStart) {
        tx_start[link] = e.time_ms;
        ++tx_count[link];
      } else {
        tx_end[link] = e.time_ms;
      }
    }
  }

  for (const DevicePlan& d : plan.devices) {
    double block_end = 0.0, block_start = -1.0;
    for (const PlannedLayer& l : d.layers) {
      const auto counts = layer_events[l.layer];
      if (counts.first != 1 || counts.second != 1) {
        v.push_back("layer " + std::to_string(l.layer + 1) + " not executed exactly once");
        continue;
      }
      const double s = start_of[l.layer], e = end_of[l.layer];
      if (e < s - kTol) v.push_back("layer " + std::to_string(l.layer + 1) + " ends before it starts");
      if (std::abs((e - s) - l.exec_ms) > kTol * std::max(1.0, l.exec_ms)) {
        v.push_back("layer " + std::to_string(l.layer + 1) + " duration differs from plan");
      }
      intervals[d.device].emplace_back(s, e);
      block_end = std::max(block_end, e);
      if (block_start < 0.0) block_start = s;
    }
    auto& iv = intervals[d.device];
    std::sort(iv.begin(), iv.end());
    for (std::size_t k = 1; k < iv.size(); ++k) {
      if (iv[k].first < iv[k - 1].second - kTol) {
        v.push_back("overlapping compute on device " + std::to_string(d.device));
      }
    }
    for (const PlannedSend& s : d.sends) {
      const std::pair<int, int> link{d.device, s.to};
      if (tx_count[link] != 1 || !tx_end.count(link)) {
        v.push_back("transfer " + std::to_string(d.device) + "->" + std::to_string(s.to) + " not made exactly once");
        continue;
      }
      if (tx_start[link] < block_end - kTol) {
        v.push_back("transfer " + std::to_string(d.device) + "->" + std::to_string(s.to) +
                    " starts before its producing compute ends");
      }
      if (tx_end[link] < tx_start[link] - kTol) v.push_back("transfer ends before it starts");
    }
    // Inbound payloads must arrive before the block starts.
    double first_action = block_start;
    if (first_action < 0.0) {
      for (const PlannedSend& s : d.sends) {
        const auto it = tx_start.find({d.device, s.to});
        if (it != tx_start.end()) first_action = first_action < 0.0 ? it->second : std::min(first_action, it->second);
      }
    }
    if (first_action >= 0.0) {
      for (const DevicePlan& src : plan.devices) {
        for (const PlannedSend& s : src.sends) {
          if (s.to != d.device) continue;
          const auto it = tx_end.find({src.device, d.device});
          if (it != tx_end.end() && first_action < it->second - kTol) {
            v.push_back("device " + std::to_string(d.device) + " starts before the payload from " +
                        std::to_string(src.device) + " arrives");
          }
        }
      }
    }
  }
  for (const auto& [n, counts] : layer_events) {
    bool planned = false;
    for (const DevicePlan& d : plan.devices) {
      for (const PlannedLayer& l : d.layers) planned = planned || l.layer == n;
    }
    if (!planned) v.push_back("trace executes unplanned layer " + std::to_string(n + 1));
  }
  return v;
}

// Plan from concrete costs; each device sends d(m)'s output to its successors.
inline DeploymentPlan plan_from_costs(const Topology& topo, const LayerAssignment& a, const LayerCosts& c,
                                      const std::vector<double>& layer_bits, double input_bits) {
  DeploymentPlan plan;
  plan.topology = topo;
  plan.num_layers = a.num_layers();
  plan.input_bits = input_bits;
  for (const DeviceProfile& prof : topo.devices) {
    DevicePlan d;
    d.device = prof.id;
    for (std::size_t n : a.block(prof.id)) d.layers.push_back({n, 0, "", c.tau.at(n)});
    const std::size_t last = a.last_layer(prof.id);
    for (int dst : topo.successors(prof.id)) {
      d.sends.push_back({dst, layer_bits.empty() ? 0.0 : layer_bits.at(last), c.eps.at({prof.id, dst})});
    }
    plan.devices.push_back(std::move(d));
  }
  return plan;
}

// Deployment of a derived architecture with table latencies.
inline DeploymentPlan build_plan(const SuperNet& net, std::span<const std::size_t> arch, const Topology& topo,
                                 const LayerAssignment& a, const LatencyTable& table) {
  const LayerCosts c = costs_for(topo, a, table, arch);
  std::vector<double> bits;
  for (std::size_t n = 0; n < net.num_layers(); ++n) bits.push_back(output_bits(net.layer_shape(n)));
  DeploymentPlan plan = plan_from_costs(topo, a, c, bits, output_bits(net.input_shape));
  for (DevicePlan& d : plan.devices) {
    for (PlannedLayer& l : d.layers) {
      l.candidate = arch[l.layer];
      l.op = net.layers[l.layer].candidates[arch[l.layer]].name();
    }
  }
  return plan;
}

// Devices the raw input crosses to reach the last device. In a mesh the
// branch with the cheapest two hops is used (ties to the lowest id).
inline std::vector<int> upload_path(const Topology& topo, double input_bits) {
  if (topo.kind == TopologyKind::kChain) return topo.prefix;
  std::vector<int> path = topo.prefix;
  path.push_back(topo.root);
  int best = 0;
  double best_ms = 0.0;
  for (int b : topo.branches) {
    const double ms = comm_latency(input_bits, topo.link(topo.root, b)) +
                      comm_latency(input_bits, topo.link(b, topo.tail.front()));
    if (best == 0 || ms < best_ms) {
      best = b;
      best_ms = ms;
    }
  }
  path.push_back(best);
  path.insert(path.end(), topo.tail.begin(), topo.tail.end());
  return path;
}

// Cloud-computing baseline: the raw input is relayed hop by hop to the last
// device, which runs every layer. Without a table, execution times are
// rescaled from the hosting device by the speed_factor ratio.
inline DeploymentPlan cloud_only_plan(const DeploymentPlan& split, const LatencyTable* table = nullptr) {
  validate_plan(split);
  const Topology& topo = split.topology;
  const int last = topo.last_device();
  const std::vector<int> path = upload_path(topo, split.input_bits);
  std::vector<PlannedLayer> layers(split.num_layers);
  for (const DevicePlan& d : split.devices) {
    for (const PlannedLayer& l : d.layers) {
      PlannedLayer moved = l;
      if (table) {
        moved.exec_ms = table->exec_ms(l.layer, last, l.candidate);
      } else {
        moved.exec_ms = l.exec_ms * topo.device(last).speed_factor / topo.device(d.device).speed_factor;
      }
      layers[l.layer] = moved;
    }
  }
  DeploymentPlan plan;
  plan.topology = topo;
  plan.num_layers = split.num_layers;
  plan.input_bits = split.input_bits;
  for (std::size_t k = 0; k < path.size(); ++k) {
    DevicePlan d;
    d.device = path[k];
    if (k + 1 < path.size()) {
      d.sends.push_back({path[k + 1], split.input_bits, comm_latency(split.input_bits, topo.link(path[k], path[k + 1]))});
    } else {
      d.layers = layers;
    }
    plan.devices.push_back(std::move(d));
  }
  std::sort(plan.devices.begin(), plan.devices.end(),
            [](const DevicePlan& a, const DevicePlan& b) { return a.device < b.device; });
  return plan;
}

struct Comparison {
  double split_ms = 0.0;
  double cloud_ms = 0.0;
  double reduction_pct = 0.0;  // (cloud - split) / cloud * 100
};

inline Comparison compare_with_cloud(const DeploymentPlan& split, const LatencyTable* table = nullptr) {
  Comparison c;
  c.split_ms = simulate(split).completion_ms;
  c.cloud_ms = simulate(cloud_only_plan(split, table)).completion_ms;
  c.reduction_pct = c.cloud_ms > 0.0 ? (c.cloud_ms - c.split_ms) / c.cloud_ms * 100.0 : 0.0;
  return c;
}

// ---------------------------------------------------------------------------
// Plan file (JSON, 1-based layers and candidates):
//   {"num_layers": N, "input_bits": B, "topology": {...},
//    "devices": [{"device": 1,
//                 "layers": [{"layer": 1, "candidate": 2, "op": "mb3_e3", "exec_ms": 0.4}],
//                 "sends":  [{"to": 2, "bits": 8192, "comm_ms": 0.33}]}]}

inline nlohmann::json plan_to_json(const DeploymentPlan& p) {
  nlohmann::json j;
  j["num_layers"] = p.num_layers;
  j["input_bits"] = p.input_bits;
  j["topology"] = topology_to_json(p.topology);
  j["devices"] = nlohmann::json::array();
  for (const DevicePlan& d : p.devices) {
    nlohmann::json jd;
    jd["device"] = d.device;
    jd["layers"] = nlohmann::json::array();
    for (const PlannedLayer& l : d.layers) {
      jd["layers"].push_back({{"layer", l.layer + 1}, {"candidate", l.candidate + 1}, {"op", l.op}, {"exec_ms", l.exec_ms}});
    }
    jd["sends"] = nlohmann::json::array();
    for (const PlannedSend& s : d.sends) {
      jd["sends"].push_back({{"to", s.to}, {"bits", s.bits}, {"comm_ms", s.comm_ms}});
    }
    j["devices"].push_back(std::move(jd));
  }
  return j;
}

inline std::string serialize_plan(const DeploymentPlan& p) { return plan_to_json(p).dump(2) + "\n"; }

inline DeploymentPlan parse_plan(std::string_view text) {
  DeploymentPlan p;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    p.num_layers = j.at("num_layers").get<std::size_t>();
    p.input_bits = j.value("input_bits", 0.0);
    p.topology = topology_from_json(j.at("topology"));
    for (const auto& jd : j.at("devices")) {
      DevicePlan d;
      d.device = jd.at("device").get<int>();
      for (const auto& jl : jd.value("layers", nlohmann::json::array())) {
        const auto layer = jl.at("layer").get<std::size_t>();
        const auto cand = jl.value("candidate", std::size_t{1});
        if (layer < 1 || cand < 1) throw ValidationError("plan layer and candidate indices are 1-based");
        d.layers.push_back({layer - 1, cand - 1, jl.value("op", std::string()), jl.at("exec_ms").get<double>()});
      }
      for (const auto& js : jd.value("sends", nlohmann::json::array())) {
        d.sends.push_back({js.at("to").get<int>(), js.value("bits", 0.0), js.at("comm_ms").get<double>()});
      }
      p.devices.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed plan: ") + e.what());
  }
  std::sort(p.devices.begin(), p.devices.end(),
            [](const DevicePlan& a, const DevicePlan& b) { return a.device < b.device; });
  validate_plan(p);
  return p;
}

inline std::string write_trace_tsv(const SimTrace& trace) {
  std::ostringstream os;
  os << "time_ms\tevent\tdevice\tpeer\tlayer\n";
  for (const TraceEvent& e : trace) {
    os << format_double(e.time_ms) << '\t' << event_kind_name(e.kind) << '\t' << e.device << '\t' << e.peer
       << '\t' << e.layer << '\n';
  }
  return os.str();
}

}  // namespace splitnas

#endif  // SPLITNAS_SIMULATOR_HPP_
