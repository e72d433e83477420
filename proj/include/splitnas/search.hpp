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

// Two-stage search driver.
//
// Stage one alternates, per mini-batch, a weight step on a sampled path
// (minimizing cross-entropy + lambda1 |theta|^2) with an architecture step on
// a separate batch (gate gradient through the softmax, plus the gradient of
// lambda2 (E_alpha(T) - T_const)^2). Warm-up epochs run weight steps only,
// with uniform gates. Stage two fixes the per-layer argmax and retrains it.

#ifndef SPLITNAS_SEARCH_HPP_
#define SPLITNAS_SEARCH_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "splitnas/config.hpp"
#include "splitnas/dataset.hpp"
#include "splitnas/errors.hpp"
#include "splitnas/latency.hpp"
#include "splitnas/optim.hpp"
#include "splitnas/rng.hpp"
#include "splitnas/simulator.hpp"
#include "splitnas/supernet.hpp"
#include "splitnas/topology.hpp"

namespace splitnas {

struct EpochRecord {
  std::string phase;  // warmup | search | retrain
  std::size_t epoch = 0;  // 1-based, counted across phases
  double train_loss = 0.0;  // mean of the epoch's weight-step batch losses
  double weight_l2 = 0.0;   // |theta|^2 at epoch end
  double expected_latency_ms = 0.0;
  double penalty = 0.0;     // lambda2 (E - T_const)^2
  double objective = 0.0;   // train_loss + lambda1 weight_l2 + penalty
  double val_accuracy = 0.0;  // current compact network
  double val_loss = 0.0;
};

struct WeightOptimizer {
  OptimizerState stem, head_w, head_b;
  std::vector<std::vector<OptimizerState>> candidates;

  static WeightOptimizer for_net(const SuperNet& net) {
    WeightOptimizer o;
    for (const auto& layer : net.weights) o.candidates.emplace_back(layer.size());
    return o;
  }
};

struct SearchState {
  SuperNet net;
  Topology topology;
  LayerAssignment assignment;
  LatencyTable table;
  WeightOptimizer weight_opt;
  std::vector<std::vector<OptimizerState>> alpha_opt;  // one per alpha entry
  std::size_t epochs_completed = 0;
  std::vector<EpochRecord> history;
  Rng rng;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

struct TrainReport {
  std::vector<std::size_t> architecture;
  std::vector<std::string> ops;
  SuperNet compact;
  double pre_retrain_accuracy = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  double expected_latency_ms = 0.0;
  double simulated_latency_ms = 0.0;
  double t_const = 0.0;
  DeploymentPlan plan;
  std::vector<EpochRecord> history;
};

inline SuperNet make_supernet(const RunConfig& cfg, const Topology& topo, const LayerAssignment& a,
                              std::uint64_t seed) {
  SuperNetSpec spec;
  spec.height = cfg.data.height;
  spec.width = cfg.data.width;
  spec.in_channels = cfg.data.channels;
  spec.channels = cfg.space.width;
  spec.num_outputs = logit_count(cfg.search.loss_mode, cfg.data.num_classes);
  spec.layer_candidates.assign(cfg.space.num_layers, cfg.space.candidates);
  spec.layer_inputs = layer_inputs(topo, a);
  Rng rng(seed);
  return SuperNet::build(spec, rng);
}

// Supernet, assignment and table for a run. Without `table` a synthetic one
// is generated from the configured cost model.
inline SearchState init_search(const Topology& topo, const LatencyTable* table, const RunConfig& cfg) {
  cfg.search.validate();
  SearchState s;
  s.topology = topo;
  try {
    s.assignment = build_assignment(cfg.space.num_layers, topo);
  } catch (const ContractError& e) {
    throw ValidationError(e.what());
  }
  s.net = make_supernet(cfg, topo, s.assignment, cfg.search.seed);
  s.table = table ? *table : synthesize_table(s.net, topo, cfg.cost);
  expected_total_latency(s.net, s.topology, s.assignment, s.table);  // every entry present
  s.weight_opt = WeightOptimizer::for_net(s.net);
  for (const MixedOp& op : s.net.layers) s.alpha_opt.emplace_back(op.candidates.size());
  s.rng = Rng(cfg.search.seed ^ 0x5851F42D4C957F2DULL);
  return s;
}

inline EvalResult evaluate(const SuperNet& net, const Mixture& mix, const Dataset& data, LossMode mode) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  EvalResult r;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const std::vector<double> logits = forward(net, data.inputs[k], mix);
    r.mean_loss += loss_ce(logits, data.labels[k], mode).loss;
    if (predicted_class(logits, mode) == data.labels[k]) ++correct;
  }
  r.mean_loss /= static_cast<double>(data.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return r;
}

// Argmax network of the current architecture parameters.
inline EvalResult evaluate_compact(const SuperNet& net, const Dataset& data, LossMode mode) {
  const std::vector<std::size_t> arch = derive_compact(net);
  return evaluate(net, one_hot_mixture(net, arch), data, mode);
}

namespace detail {

struct BatchView {
  std::vector<const Tensor*> inputs;
  std::vector<std::size_t> labels;
};

inline BatchView gather(const Dataset& d, std::span<const std::size_t> idx) {
  BatchView b;
  for (std::size_t i : idx) {
    b.inputs.push_back(&d.inputs[i]);
    b.labels.push_back(d.labels[i]);
  }
  return b;
}

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) {
    out.emplace_back(order.begin() + static_cast<long>(s), order.begin() + static_cast<long>(std::min(n, s + batch)));
  }
  return out;
}

inline void decayed_step(OptimizerState& st, std::vector<double>& params, std::vector<double>& grads,
                         double lambda1, double lr, const OptimizerOptions& opts, const char* what) {
  if (lambda1 != 0.0) axpy(2.0 * lambda1, params, grads);
  optimizer_step(st, params, grads, lr, opts, what);
}

}  // namespace detail

// One weight step on the network selected by `mix`. Only blocks on the
// selected path are updated; alpha is untouched. Returns the batch loss.
inline double weight_step(SuperNet& net, WeightOptimizer& opt, const Dataset& data,
                          std::span<const std::size_t> idx, const Mixture& mix, const SearchConfig& cfg) {
  const detail::BatchView b = detail::gather(data, idx);
  Gradients g = Gradients::zeros_like(net);
  const BatchStats stats = run_batch(net, b.inputs, b.labels, mix, cfg.loss_mode, &g);
  if (!std::isfinite(stats.loss)) throw NumericError("non-finite training loss");
  const OptimizerOptions oo{cfg.optimizer};
  detail::decayed_step(opt.stem, net.stem, g.stem, cfg.lambda1, cfg.lr_weights, oo, "stem");
  detail::decayed_step(opt.head_w, net.head_w, g.head_w, cfg.lambda1, cfg.lr_weights, oo, "head weights");
  detail::decayed_step(opt.head_b, net.head_b, g.head_b, cfg.lambda1, cfg.lr_weights, oo, "head bias");
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    for (std::size_t i = 0; i < net.weights[n].size(); ++i) {
      if (mix[n][i] == 0.0 || net.weights[n][i].empty()) continue;
      detail::decayed_step(opt.candidates[n][i], net.weights[n][i], g.weights[n][i], cfg.lambda1,
                           cfg.lr_weights, oo, "candidate weights");
    }
  }
  return stats.loss;
}

// Gradient of the penalized objective with respect to alpha, evaluated on
// one batch. In two-path mode only the sampled pair of each layer is
// non-zero. `gates` receives the sample used (empty for the relaxed point).
inline std::vector<std::vector<double>> architecture_gradient(const SearchState& s, const Dataset& data,
                                                              std::span<const std::size_t> idx,
                                                              const SearchConfig& cfg, Rng& rng,
                                                              GateSample* gates_out = nullptr) {
  const SuperNet& net = s.net;
  const std::size_t n_layers = net.num_layers();
  Mixture mix;
  std::vector<std::vector<std::size_t>> wanted(n_layers);
  GateSample gates;
  if (cfg.gate_point == GatePoint::kRelaxed) {
    mix = relaxed_mixture(net);
    for (std::size_t n = 0; n < n_layers; ++n) {
      for (std::size_t i = 0; i < net.layers[n].candidates.size(); ++i) wanted[n].push_back(i);
    }
  } else {
    gates = sample_network_gates(net, rng, cfg.two_path);
    mix = gate_mixture(net, gates);
    for (std::size_t n = 0; n < n_layers; ++n) wanted[n] = gates[n].unmasked;
  }
  const detail::BatchView b = detail::gather(data, idx);
  Gradients g = Gradients::zeros_like(net);
  BackwardOptions bo;
  bo.weights = false;
  bo.gate_candidates = &wanted;
  run_batch(net, b.inputs, b.labels, mix, cfg.loss_mode, &g, bo);

  std::vector<std::vector<double>> grad(n_layers);
  for (std::size_t n = 0; n < n_layers; ++n) {
    const ProbVector p = net.probs(n);
    grad[n].assign(p.size(), 0.0);
    if (cfg.gate_point == GatePoint::kRelaxed || gates[n].unmasked.size() == p.size()) {
      grad[n] = arch_grad(g.gates[n], p);
    } else {
      std::vector<double> dg;
      for (std::size_t j : gates[n].unmasked) dg.push_back(g.gates[n][j]);
      const std::vector<double> pair = arch_grad(dg, gates[n].probs);
      for (std::size_t k = 0; k < pair.size(); ++k) grad[n][gates[n].unmasked[k]] = pair[k];
    }
  }
  if (cfg.lambda2 > 0.0) {
    const double e = expected_total_latency(net, s.topology, s.assignment, s.table).value;
    const Penalty pen = latency_penalty(e, cfg.t_const, cfg.lambda2);
    const auto lat = expected_latency_grad(net, s.topology, s.assignment, s.table);
    for (std::size_t n = 0; n < n_layers; ++n) {
      if (cfg.gate_point == GatePoint::kRelaxed || gates[n].unmasked.size() == grad[n].size()) {
        axpy(pen.d_dt, lat[n], grad[n]);
      } else {
        for (std::size_t j : gates[n].unmasked) grad[n][j] += pen.d_dt * lat[n][j];
      }
    }
  }
  if (gates_out) *gates_out = std::move(gates);
  return grad;
}

// One architecture step. Weights are untouched.
inline void arch_step(SearchState& s, const Dataset& data, std::span<const std::size_t> idx,
                      const SearchConfig& cfg) {
  GateSample gates;
  const auto grad = architecture_gradient(s, data, idx, cfg, s.rng, &gates);
  const OptimizerOptions oo{cfg.optimizer};
  for (std::size_t n = 0; n < s.net.num_layers(); ++n) {
    std::vector<std::size_t> entries;
    if (cfg.gate_point == GatePoint::kSampled) {
      entries = gates[n].unmasked;
    } else {
      for (std::size_t i = 0; i < grad[n].size(); ++i) entries.push_back(i);
    }
    for (std::size_t i : entries) {
      const double gi = grad[n][i];
      optimizer_step(s.alpha_opt[n][i], std::span(&s.net.layers[n].alpha[i], 1), std::span(&gi, 1),
                     cfg.lr_alpha, oo, "architecture parameters");
    }
  }
}

inline EpochRecord make_record(const SearchState& s, const std::string& phase, double train_loss,
                               double expected_latency, const DataSplit& data, const SearchConfig& cfg,
                               const SuperNet& eval_net) {
  EpochRecord r;
  r.phase = phase;
  r.epoch = s.epochs_completed;
  r.train_loss = train_loss;
  r.weight_l2 = eval_net.l2_norm_sq();
  r.expected_latency_ms = expected_latency;
  r.penalty = latency_penalty(expected_latency, cfg.t_const, cfg.lambda2).value;
  r.objective = r.train_loss + cfg.lambda1 * r.weight_l2 + r.penalty;
  const EvalResult ev = evaluate_compact(eval_net, data.val, cfg.loss_mode);
  r.val_accuracy = ev.accuracy;
  r.val_loss = ev.mean_loss;
  if (!std::isfinite(r.objective)) throw NumericError("non-finite objective in " + phase + " epoch " + std::to_string(r.epoch));
  return r;
}

inline void warmup_epoch(SearchState& s, const DataSplit& data, const SearchConfig& cfg) {
  if (data.train.empty()) throw ContractError("training split is empty");
  double loss = 0.0;
  const auto batches = detail::make_batches(data.train.size(), cfg.batch_size, s.rng);
  for (const auto& b : batches) {
    const GateSample gates = sample_network_gates(s.net, s.rng, false, /*uniform=*/true);
    loss += weight_step(s.net, s.weight_opt, data.train, b, gate_mixture(s.net, gates), cfg);
  }
  ++s.epochs_completed;
  const double e = expected_total_latency(s.net, s.topology, s.assignment, s.table).value;
  s.history.push_back(make_record(s, "warmup", loss / static_cast<double>(batches.size()), e, data, cfg, s.net));
}

inline void search_epoch(SearchState& s, const DataSplit& data, const SearchConfig& cfg) {
  if (data.train.empty()) throw ContractError("training split is empty");
  const Dataset& arch_data = cfg.arch_split == ArchSplit::kValidation ? data.val : data.train;
  if (arch_data.empty()) throw ContractError("architecture split is empty");
  const auto batches = detail::make_batches(data.train.size(), cfg.batch_size, s.rng);
  auto arch_batches = detail::make_batches(arch_data.size(), cfg.batch_size, s.rng);
  double loss = 0.0;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const GateSample gates = sample_network_gates(s.net, s.rng, false);
    loss += weight_step(s.net, s.weight_opt, data.train, batches[k], gate_mixture(s.net, gates), cfg);
    if (k > 0 && k % arch_batches.size() == 0) arch_batches = detail::make_batches(arch_data.size(), cfg.batch_size, s.rng);
    arch_step(s, arch_data, arch_batches[k % arch_batches.size()], cfg);
  }
  ++s.epochs_completed;
  const double e = expected_total_latency(s.net, s.topology, s.assignment, s.table).value;
  s.history.push_back(make_record(s, "search", loss / static_cast<double>(batches.size()), e, data, cfg, s.net));
}

inline void warmup(SearchState& s, const DataSplit& data, const SearchConfig& cfg) {
  for (std::size_t e = 0; e < cfg.warmup_epochs; ++e) warmup_epoch(s, data, cfg);
}

// Stage one: warm-up followed by the alternating search.
inline SearchState run_search(const DataSplit& data, const Topology& topo, const LatencyTable* table,
                              const RunConfig& cfg) {
  SearchState s = init_search(topo, table, cfg);
  warmup(s, data, cfg.search);
  for (std::size_t e = 0; e < cfg.search.search_epochs; ++e) search_epoch(s, data, cfg.search);
  return s;
}

// Latency of a fixed architecture under the table.
inline double architecture_latency(const SearchState& s, std::span<const std::size_t> arch) {
  return completion_latency(s.topology, s.assignment, costs_for(s.topology, s.assignment, s.table, arch)).value;
}

// Trains a fixed single-candidate network for `epochs`, appending history.
inline void train_compact(SuperNet& compact, const DataSplit& data, const SearchConfig& cfg, std::size_t epochs,
                          Rng& rng, double latency_ms, std::size_t& epoch_counter,
                          std::vector<EpochRecord>* history) {
  WeightOptimizer opt = WeightOptimizer::for_net(compact);
  const Mixture all = relaxed_mixture(compact);  // single candidate, p = 1
  for (std::size_t e = 0; e < epochs; ++e) {
    double loss = 0.0;
    const auto batches = detail::make_batches(data.train.size(), cfg.batch_size, rng);
    for (const auto& b : batches) loss += weight_step(compact, opt, data.train, b, all, cfg);
    ++epoch_counter;
    if (history) {
      SearchState view;
      view.epochs_completed = epoch_counter;
      history->push_back(make_record(view, "retrain", loss / static_cast<double>(batches.size()), latency_ms,
                                     data, cfg, compact));
    }
  }
}

// Stage two: fix the argmax architecture, initialize it from the supernet
// weights, retrain, and evaluate its deployment.
inline TrainReport derive_and_retrain(SearchState& s, const DataSplit& data, const SearchConfig& cfg) {
  TrainReport r;
  r.architecture = derive_compact(s.net);
  for (std::size_t n = 0; n < r.architecture.size(); ++n) {
    r.ops.push_back(s.net.layers[n].candidates[r.architecture[n]].name());
  }
  r.compact = compact_net(s.net, r.architecture);
  r.pre_retrain_accuracy = evaluate(r.compact, relaxed_mixture(r.compact), data.val, cfg.loss_mode).accuracy;
  r.expected_latency_ms = architecture_latency(s, r.architecture);
  r.t_const = cfg.t_const;
  // Retraining draws from its own stream so a resumed derive matches a full run.
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  train_compact(r.compact, data, cfg, cfg.retrain_epochs, rng, r.expected_latency_ms, s.epochs_completed,
                &s.history);
  const EvalResult ev = evaluate(r.compact, relaxed_mixture(r.compact), data.val, cfg.loss_mode);
  r.val_accuracy = ev.accuracy;
  r.val_loss = ev.mean_loss;
  r.plan = build_plan(s.net, r.architecture, s.topology, s.assignment, s.table);
  r.simulated_latency_ms = simulate(r.plan).completion_ms;
  r.history = s.history;
  return r;
}

inline std::string write_history_tsv(const std::vector<EpochRecord>& h) {
  std::ostringstream os;
  os << "epoch\tphase\ttrain_loss\tweight_l2\texpected_latency_ms\tpenalty\tobjective\tval_accuracy\tval_loss\n";
  for (const EpochRecord& r : h) {
    os << r.epoch << '\t' << r.phase << '\t' << format_double(r.train_loss) << '\t' << format_double(r.weight_l2)
       << '\t' << format_double(r.expected_latency_ms) << '\t' << format_double(r.penalty) << '\t'
       << format_double(r.objective) << '\t' << format_double(r.val_accuracy) << '\t'
       << format_double(r.val_loss) << '\n';
  }
  return os.str();
}

inline nlohmann::json record_to_json(const EpochRecord& r) {
  return {{"phase", r.phase},          {"epoch", r.epoch},
          {"train_loss", r.train_loss}, {"weight_l2", r.weight_l2},
          {"expected_latency_ms", r.expected_latency_ms}, {"penalty", r.penalty},
          {"objective", r.objective},   {"val_accuracy", r.val_accuracy},
          {"val_loss", r.val_loss}};
}

inline EpochRecord record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.phase = j.at("phase").get<std::string>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.weight_l2 = j.at("weight_l2").get<double>();
  r.expected_latency_ms = j.at("expected_latency_ms").get<double>();
  r.penalty = j.at("penalty").get<double>();
  r.objective = j.at("objective").get<double>();
  r.val_accuracy = j.at("val_accuracy").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  return r;
}

// Snapshot of the searched supernet: alpha, weights and history. Optimizer
// moments are not kept; derive only needs the weights.
inline std::string serialize_state(const SearchState& s) {
  nlohmann::json j;
  j["epochs_completed"] = s.epochs_completed;
  nlohmann::json alpha = nlohmann::json::array();
  for (const MixedOp& op : s.net.layers) alpha.push_back(op.alpha);
  j["alpha"] = alpha;
  j["stem"] = s.net.stem;
  j["weights"] = s.net.weights;
  j["head_w"] = s.net.head_w;
  j["head_b"] = s.net.head_b;
  nlohmann::json h = nlohmann::json::array();
  for (const EpochRecord& r : s.history) h.push_back(record_to_json(r));
  j["history"] = h;
  return j.dump() + "\n";
}

// Restores a snapshot into a state built by init_search with the same
// configuration and topology.
inline void load_state(SearchState& s, std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    auto alpha = j.at("alpha").get<std::vector<std::vector<double>>>();
    auto weights = j.at("weights").get<std::vector<std::vector<std::vector<double>>>>();
    auto stem = j.at("stem").get<std::vector<double>>();
    auto head_w = j.at("head_w").get<std::vector<double>>();
    auto head_b = j.at("head_b").get<std::vector<double>>();
    const auto fail = [](const std::string& what) { throw ValidationError("state does not match the supernet: " + what); };
    if (alpha.size() != s.net.num_layers() || weights.size() != s.net.num_layers()) fail("layer count");
    for (std::size_t n = 0; n < alpha.size(); ++n) {
      if (alpha[n].size() != s.net.layers[n].alpha.size()) fail("alpha of layer " + std::to_string(n + 1));
      if (weights[n].size() != s.net.weights[n].size()) fail("candidates of layer " + std::to_string(n + 1));
      for (std::size_t i = 0; i < weights[n].size(); ++i) {
        if (weights[n][i].size() != s.net.weights[n][i].size()) fail("weights of layer " + std::to_string(n + 1));
      }
    }
    if (stem.size() != s.net.stem.size()) fail("stem");
    if (head_w.size() != s.net.head_w.size() || head_b.size() != s.net.head_b.size()) fail("head");
    for (std::size_t n = 0; n < alpha.size(); ++n) s.net.layers[n].alpha = std::move(alpha[n]);
    s.net.weights = std::move(weights);
    s.net.stem = std::move(stem);
    s.net.head_w = std::move(head_w);
    s.net.head_b = std::move(head_b);
    s.epochs_completed = j.at("epochs_completed").get<std::size_t>();
    s.history.clear();
    for (const auto& r : j.at("history")) s.history.push_back(record_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed state: ") + e.what());
  }
}

inline nlohmann::json report_to_json(const TrainReport& r) {
  nlohmann::json j;
  std::vector<std::size_t> arch;
  for (std::size_t c : r.architecture) arch.push_back(c + 1);
  j["architecture"] = arch;
  j["ops"] = r.ops;
  j["pre_retrain_accuracy"] = r.pre_retrain_accuracy;
  j["val_accuracy"] = r.val_accuracy;
  j["val_loss"] = r.val_loss;
  j["expected_latency_ms"] = r.expected_latency_ms;
  j["simulated_latency_ms"] = r.simulated_latency_ms;
  j["t_const"] = r.t_const;
  return j;
}

}  // namespace splitnas

#endif  // SPLITNAS_SEARCH_HPP_
