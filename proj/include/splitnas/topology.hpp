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

// Mobile-edge network model: devices, links, chain and mesh layouts, and the
// split of a layer sequence over the devices.
//
// Topology file (JSON):
//   {
//     "kind": "chain" | "mesh",
//     "devices": [{"id": 1, "name": "UE", "speed_factor": 4.0}, ...],
//     "links":   [{"tx": 1, "rx": 2, "capacity_mbps": 25, "kind": "wireless"}, ...],
//     "chain_set": [1, 6], "tree_set": [2, 3, 4, 5], "root": 2     (mesh only)
//   }
// Device ids are 1..M. speed_factor multiplies the reference cost of an
// operation, so larger is slower.

#ifndef SPLITNAS_TOPOLOGY_HPP_
#define SPLITNAS_TOPOLOGY_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "splitnas/errors.hpp"
#include "splitnas/tensor.hpp"

namespace splitnas {

enum class LinkKind { kWireless, kWired };
enum class TopologyKind { kChain, kMesh };

inline std::string_view link_kind_name(LinkKind k) {
  return k == LinkKind::kWireless ? "wireless" : "wired";
}
inline std::string_view topology_kind_name(TopologyKind k) {
  return k == TopologyKind::kChain ? "chain" : "mesh";
}

struct DeviceProfile {
  int id = 0;
  std::string name;
  double speed_factor = 1.0;
  friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;
};

struct LinkSpec {
  int tx = 0;
  int rx = 0;
  double capacity_mbps = 0.0;
  LinkKind kind = LinkKind::kWireless;
  friend bool operator==(const LinkSpec&, const LinkSpec&) = default;
};

struct Topology {
  TopologyKind kind = TopologyKind::kChain;
  std::vector<DeviceProfile> devices;  // ascending id
  std::vector<LinkSpec> links;
  std::vector<int> chain_set;  // mesh only
  std::vector<int> tree_set;   // mesh only
  int root = 0;                // mesh only

  // Filled by validate().
  std::vector<int> prefix;    // chain: the whole path; mesh: chain devices feeding the root
  std::vector<int> branches;  // mesh: tree devices other than the root, ascending id
  std::vector<int> tail;      // mesh: aggregation device followed by the rest of the chain

  std::size_t size() const { return devices.size(); }

  const DeviceProfile& device(int id) const {
    if (id < 1 || id > static_cast<int>(devices.size())) {
      throw ContractError("unknown device " + std::to_string(id));
    }
    return devices[static_cast<std::size_t>(id - 1)];
  }

  const LinkSpec* find_link(int tx, int rx) const {
    for (const LinkSpec& l : links) {
      if (l.tx == tx && l.rx == rx) return &l;
    }
    return nullptr;
  }

  const LinkSpec& link(int tx, int rx) const {
    const LinkSpec* l = find_link(tx, rx);
    if (!l) throw ContractError("no link " + std::to_string(tx) + "->" + std::to_string(rx));
    return *l;
  }

  // Devices receiving the output of `id`, ascending id.
  std::vector<int> successors(int id) const {
    std::vector<int> out;
    for (const LinkSpec& l : links) {
      if (l.tx == id) out.push_back(l.rx);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // Order in which consecutive layer blocks are laid out over the devices.
  std::vector<int> device_order() const {
    if (kind == TopologyKind::kChain) return prefix;
    std::vector<int> out = prefix;
    out.push_back(root);
    out.insert(out.end(), branches.begin(), branches.end());
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
  }

  int first_device() const { return device_order().front(); }
  int last_device() const { return kind == TopologyKind::kChain ? prefix.back() : tail.back(); }

  bool in_chain_part(int id) const {
    if (kind == TopologyKind::kChain) return true;
    return std::find(chain_set.begin(), chain_set.end(), id) != chain_set.end();
  }

  void validate();

  friend bool operator==(const Topology& a, const Topology& b) {
    return a.kind == b.kind && a.devices == b.devices && a.links == b.links &&
           a.chain_set == b.chain_set && a.tree_set == b.tree_set && a.root == b.root;
  }
};

namespace detail {

// Follows single outgoing links from `start` while they stay inside `allowed`.
inline std::vector<int> follow_path(const Topology& t, int start, const std::set<int>& allowed) {
  std::vector<int> path{start};
  std::set<int> seen{start};
  int cur = start;
  for (;;) {
    std::vector<int> next;
    for (int s : t.successors(cur)) {
      if (allowed.count(s)) next.push_back(s);
    }
    if (next.empty()) break;
    if (next.size() > 1) {
      throw ValidationError("device " + std::to_string(cur) + " forks inside a chain segment");
    }
    if (seen.count(next[0])) throw ValidationError("cycle through device " + std::to_string(next[0]));
    cur = next[0];
    seen.insert(cur);
    path.push_back(cur);
  }
  return path;
}

}  // namespace detail

inline void Topology::validate() {
  const int m = static_cast<int>(devices.size());
  if (m == 0) throw ValidationError("topology has no devices");
  std::sort(devices.begin(), devices.end(),
            [](const DeviceProfile& a, const DeviceProfile& b) { return a.id < b.id; });
  for (int i = 0; i < m; ++i) {
    const DeviceProfile& d = devices[static_cast<std::size_t>(i)];
    if (d.id != i + 1) throw ValidationError("device ids must be contiguous 1..M");
    if (!(d.speed_factor > 0.0) || !std::isfinite(d.speed_factor)) {
      throw ValidationError("device " + std::to_string(d.id) + " needs speed_factor > 0");
    }
  }
  std::set<std::pair<int, int>> seen_links;
  for (const LinkSpec& l : links) {
    if (l.tx < 1 || l.tx > m || l.rx < 1 || l.rx > m) {
      throw ValidationError("link " + std::to_string(l.tx) + "->" + std::to_string(l.rx) +
                            " references an unknown device");
    }
    if (l.tx == l.rx) throw ValidationError("link from device " + std::to_string(l.tx) + " to itself");
    if (!(l.capacity_mbps > 0.0) || !std::isfinite(l.capacity_mbps)) {
      throw ValidationError("link " + std::to_string(l.tx) + "->" + std::to_string(l.rx) +
                            " needs capacity_mbps > 0");
    }
    if (!seen_links.insert({l.tx, l.rx}).second) {
      throw ValidationError("duplicate link " + std::to_string(l.tx) + "->" + std::to_string(l.rx));
    }
  }
  std::map<int, int> indegree;
  for (const LinkSpec& l : links) ++indegree[l.rx];

  prefix.clear();
  branches.clear();
  tail.clear();

  if (kind == TopologyKind::kChain) {
    if (static_cast<int>(links.size()) != m - 1) {
      throw ValidationError("a chain of " + std::to_string(m) + " devices needs exactly " +
                            std::to_string(m - 1) + " links");
    }
    std::vector<int> sources;
    for (const DeviceProfile& d : devices) {
      if (indegree[d.id] == 0) sources.push_back(d.id);
    }
    if (sources.size() != 1) throw ValidationError("chain devices do not form a single connected path");
    std::set<int> all;
    for (const DeviceProfile& d : devices) all.insert(d.id);
    prefix = detail::follow_path(*this, sources[0], all);
    if (static_cast<int>(prefix.size()) != m) {
      throw ValidationError("chain is disconnected: path from device " + std::to_string(sources[0]) +
                            " reaches " + std::to_string(prefix.size()) + " of " +
                            std::to_string(m) + " devices");
    }
    return;
  }

  // Mesh.
  std::set<int> cset(chain_set.begin(), chain_set.end());
  std::set<int> tset(tree_set.begin(), tree_set.end());
  if (cset.size() != chain_set.size() || tset.size() != tree_set.size()) {
    throw ValidationError("mesh chain_set/tree_set contain duplicates");
  }
  for (int id : cset) {
    if (tset.count(id)) throw ValidationError("device " + std::to_string(id) + " is in both chain_set and tree_set");
  }
  for (int id = 1; id <= m; ++id) {
    if (!cset.count(id) && !tset.count(id)) {
      throw ValidationError("device " + std::to_string(id) + " is in neither chain_set nor tree_set");
    }
  }
  if (static_cast<int>(cset.size() + tset.size()) != m) {
    throw ValidationError("mesh sets reference unknown devices");
  }
  if (!tset.count(root)) throw ValidationError("mesh root must belong to tree_set");
  if (tset.size() < 2) throw ValidationError("mesh tree_set needs the root and at least one branch");
  if (cset.empty()) throw ValidationError("mesh chain_set needs an aggregation device");

  int aggregator = 0;
  for (int b : tset) {
    if (b == root) continue;
    branches.push_back(b);
    if (indegree[b] != 1 || !find_link(root, b)) {
      throw ValidationError("branch device " + std::to_string(b) +
                            " must receive exactly one link, from the root");
    }
    const std::vector<int> out = successors(b);
    if (out.size() != 1 || !cset.count(out[0])) {
      throw ValidationError("branch device " + std::to_string(b) +
                            " must send to exactly one aggregation device in chain_set");
    }
    if (aggregator == 0) aggregator = out[0];
    if (out[0] != aggregator) throw ValidationError("all branches must feed the same aggregation device");
  }
  for (int s : successors(root)) {
    if (!tset.count(s)) throw ValidationError("the root may only send to tree devices");
  }

  // Chain devices in front of the root.
  std::vector<int> feeders;
  for (const LinkSpec& l : links) {
    if (l.rx == root) feeders.push_back(l.tx);
  }
  if (feeders.size() > 1) throw ValidationError("the root must be fed by at most one device");
  if (!feeders.empty()) {
    if (!cset.count(feeders[0])) throw ValidationError("the root must be fed by a chain device");
    std::vector<int> rev{feeders[0]};
    for (;;) {
      std::vector<int> in;
      for (const LinkSpec& l : links) {
        if (l.rx == rev.back()) in.push_back(l.tx);
      }
      if (in.empty()) break;
      if (in.size() > 1 || !cset.count(in[0])) {
        throw ValidationError("chain prefix before the root is not a simple path");
      }
      if (std::find(rev.begin(), rev.end(), in[0]) != rev.end()) throw ValidationError("cycle in chain prefix");
      rev.push_back(in[0]);
    }
    prefix.assign(rev.rbegin(), rev.rend());
  }
  if (indegree[aggregator] != static_cast<int>(branches.size())) {
    throw ValidationError("aggregation device " + std::to_string(aggregator) +
                          " must be fed only by the branches");
  }
  tail = detail::follow_path(*this, aggregator, cset);
  if (prefix.size() + tail.size() != cset.size()) {
    throw ValidationError("mesh is disconnected: some chain devices are not on the prefix or tail");
  }
  std::size_t expected_links = (prefix.empty() ? 0 : prefix.size()) + 2 * branches.size() +
                               (tail.size() - 1);
  if (links.size() != expected_links) throw ValidationError("mesh has links outside the chain/tree layout");
  std::sort(chain_set.begin(), chain_set.end());
  std::sort(tree_set.begin(), tree_set.end());
}

inline LinkKind parse_link_kind(std::string_view s) {
  if (s == "wireless") return LinkKind::kWireless;
  if (s == "wired") return LinkKind::kWired;
  throw ValidationError("link kind must be 'wireless' or 'wired', got '" + std::string(s) + "'");
}

inline Topology topology_from_json(const nlohmann::json& j) {
  Topology t;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "chain") {
      t.kind = TopologyKind::kChain;
    } else if (kind == "mesh") {
      t.kind = TopologyKind::kMesh;
    } else {
      throw ValidationError("topology kind must be 'chain' or 'mesh', got '" + kind + "'");
    }
    for (const auto& d : j.at("devices")) {
      t.devices.push_back({d.at("id").get<int>(), d.value("name", std::string()),
                           d.value("speed_factor", 1.0)});
    }
    for (const auto& l : j.value("links", nlohmann::json::array())) {
      t.links.push_back({l.at("tx").get<int>(), l.at("rx").get<int>(),
                         l.at("capacity_mbps").get<double>(),
                         parse_link_kind(l.value("kind", std::string("wireless")))});
    }
    if (t.kind == TopologyKind::kMesh) {
      t.chain_set = j.at("chain_set").get<std::vector<int>>();
      t.tree_set = j.at("tree_set").get<std::vector<int>>();
      t.root = j.at("root").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed topology: ") + e.what());
  }
  t.validate();
  return t;
}

inline Topology parse_topology(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("topology is not valid JSON: ") + e.what());
  }
  return topology_from_json(j);
}

inline nlohmann::json topology_to_json(const Topology& t) {
  nlohmann::json j;
  j["kind"] = std::string(topology_kind_name(t.kind));
  j["devices"] = nlohmann::json::array();
  for (const auto& d : t.devices) {
    j["devices"].push_back({{"id", d.id}, {"name", d.name}, {"speed_factor", d.speed_factor}});
  }
  j["links"] = nlohmann::json::array();
  for (const auto& l : t.links) {
    j["links"].push_back({{"tx", l.tx},
                          {"rx", l.rx},
                          {"capacity_mbps", l.capacity_mbps},
                          {"kind", std::string(link_kind_name(l.kind))}});
  }
  if (t.kind == TopologyKind::kMesh) {
    j["chain_set"] = t.chain_set;
    j["tree_set"] = t.tree_set;
    j["root"] = t.root;
  }
  return j;
}

inline std::string serialize_topology(const Topology& t) { return topology_to_json(t).dump(2) + "\n"; }

// The three-hop chain UE -> SBS -> MBS -> Cloud with 25/50/200 Mbps links.
inline Topology table1_chain(double ue = 8.0, double sbs = 4.0, double mbs = 2.0, double cloud = 1.0) {
  Topology t;
  t.kind = TopologyKind::kChain;
  t.devices = {{1, "UE", ue}, {2, "SBS", sbs}, {3, "MBS", mbs}, {4, "Cloud", cloud}};
  t.links = {{1, 2, 25.0, LinkKind::kWireless},
             {2, 3, 50.0, LinkKind::kWireless},
             {3, 4, 200.0, LinkKind::kWired}};
  t.validate();
  return t;
}

// Payload of one activation: 32 bits per value.
inline double output_bits(const Shape& shape) {
  if (shape.empty()) return 0.0;
  return static_cast<double>(shape_size(shape)) * 32.0;
}

// Transmission time in milliseconds of `bits` over `link`.
inline double comm_latency(double bits, const LinkSpec& link) {
  if (bits < 0.0) throw ContractError("comm_latency: negative payload");
  return bits / (link.capacity_mbps * 1000.0);
}

// Contiguous layer blocks per device. Layers are 0-based here; D^m of device
// m is blocks[k] where devices[k] == m.
struct LayerAssignment {
  std::vector<int> devices;  // block order (Topology::device_order)
  std::vector<std::vector<std::size_t>> blocks;
  std::vector<int> layer_device;  // device hosting each layer

  std::size_t num_layers() const { return layer_device.size(); }

  const std::vector<std::size_t>& block(int device) const {
    for (std::size_t k = 0; k < devices.size(); ++k) {
      if (devices[k] == device) return blocks[k];
    }
    throw ContractError("device " + std::to_string(device) + " has no layer block");
  }

  // d(m): last layer executed on the device.
  std::size_t last_layer(int device) const { return block(device).back(); }

  static LayerAssignment from_blocks(const Topology& topo,
                                     const std::vector<std::vector<std::size_t>>& blocks_in_order) {
    const std::vector<int> order = topo.device_order();
    if (blocks_in_order.size() != order.size()) {
      throw ContractError("need one layer block per device");
    }
    LayerAssignment a;
    a.devices = order;
    a.blocks = blocks_in_order;
    std::size_t next = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (a.blocks[k].empty()) {
        throw ContractError("device " + std::to_string(order[k]) + " received no layers");
      }
      for (std::size_t layer : a.blocks[k]) {
        if (layer != next) throw ContractError("layer blocks must be contiguous and in device order");
        ++next;
        a.layer_device.push_back(order[k]);
      }
    }
    return a;
  }

  friend bool operator==(const LayerAssignment&, const LayerAssignment&) = default;
};

// Splits N layers over the devices in block order. Every device gets one
// layer; the remaining N - M are shared in proportion to 1 / speed_factor by
// largest remainder (ties to the earlier device).
inline LayerAssignment build_assignment(std::size_t num_layers, const Topology& topo) {
  const std::vector<int> order = topo.device_order();
  const std::size_t m = order.size();
  if (num_layers < m) {
    throw ContractError(std::to_string(num_layers) + " layers cannot cover " + std::to_string(m) +
                        " devices (every device needs at least one layer)");
  }
  std::vector<double> weight(m);
  double total = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    weight[k] = 1.0 / topo.device(order[k]).speed_factor;
    total += weight[k];
  }
  const std::size_t spare = num_layers - m;
  std::vector<std::size_t> count(m, 1);
  std::vector<double> remainder(m);
  std::size_t given = 0;
  for (std::size_t k = 0; k < m; ++k) {
    const double quota = static_cast<double>(spare) * weight[k] / total;
    const std::size_t whole = static_cast<std::size_t>(std::floor(quota));
    count[k] += whole;
    given += whole;
    remainder[k] = quota - static_cast<double>(whole);
  }
  std::vector<std::size_t> idx(m);
  for (std::size_t k = 0; k < m; ++k) idx[k] = k;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t r = 0; given < spare; ++r, ++given) ++count[idx[r % m]];

  std::vector<std::vector<std::size_t>> blocks(m);
  std::size_t layer = 0;
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t c = 0; c < count[k]; ++c) blocks[k].push_back(layer++);
  }
  return LayerAssignment::from_blocks(topo, blocks);
}

// Producer layers of every layer (-1 = network input). Chain: the previous
// layer. Mesh: the first layer of each branch reads d(r); the first
// aggregation layer reads the concatenation of the branch outputs.
inline std::vector<std::vector<int>> layer_inputs(const Topology& topo, const LayerAssignment& a) {
  const std::size_t n = a.num_layers();
  std::vector<std::vector<int>> inputs(n);
  for (std::size_t l = 0; l < n; ++l) inputs[l] = {static_cast<int>(l) - 1};
  if (topo.kind == TopologyKind::kChain) return inputs;
  const int root_last = static_cast<int>(a.last_layer(topo.root));
  for (int b : topo.branches) inputs[a.block(b).front()] = {root_last};
  std::vector<int> merged;
  for (int b : topo.branches) merged.push_back(static_cast<int>(a.last_layer(b)));
  inputs[a.block(topo.tail.front()).front()] = merged;
  return inputs;
}

}  // namespace splitnas

#endif  // SPLITNAS_TOPOLOGY_HPP_
