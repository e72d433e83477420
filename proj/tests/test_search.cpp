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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "splitnas/config.hpp"
#include "splitnas/errors.hpp"
#include "splitnas/search.hpp"
#include "test_util.hpp"

namespace splitnas {
namespace {

RunConfig small_config(std::uint64_t seed = 1) {
  RunConfig c;
  c.data.height = 6;
  c.data.width = 6;
  c.data.train_size = 192;
  c.data.val_size = 64;
  c.space.num_layers = 4;
  c.space.width = 4;
  c.search.warmup_epochs = 2;
  c.search.search_epochs = 2;
  c.search.retrain_epochs = 3;
  c.search.batch_size = 32;
  c.search.seed = seed;
  return c;
}

struct Fixture {
  RunConfig cfg;
  DataSplit data;
  Topology topo;
};

Fixture fixture(std::uint64_t seed = 1) {
  Fixture f{small_config(seed), {}, testing::make_chain(2)};
  f.data = make_toy_dataset(f.cfg.data);
  return f;
}

std::vector<std::vector<double>> alphas(const SuperNet& net) {
  std::vector<std::vector<double>> a;
  for (const MixedOp& op : net.layers) a.push_back(op.alpha);
  return a;
}

std::vector<std::size_t> first(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

// Mean training loss over a fixed set of uniformly sampled paths.
double path_loss(const SuperNet& net, const Dataset& d, LossMode mode) {
  Rng rng(99);
  const detail::BatchView b = detail::gather(d, first(d.size()));
  double total = 0.0;
  const int paths = 6;
  for (int p = 0; p < paths; ++p) {
    const GateSample g = sample_network_gates(net, rng, false, true);
    total += run_batch(net, b.inputs, b.labels, gate_mixture(net, g), mode).loss;
  }
  return total / paths;
}

TEST(WarmupTest, LeavesArchitectureParametersUnchanged) {
  Fixture f = fixture();
  SearchState s = init_search(f.topo, nullptr, f.cfg);
  const auto before = alphas(s.net);
  warmup(s, f.data, f.cfg.search);
  EXPECT_EQ(alphas(s.net), before);
  ASSERT_EQ(s.history.size(), 2u);
  EXPECT_EQ(s.history[0].phase, "warmup");
  EXPECT_EQ(s.history[1].epoch, 2u);
}

TEST(WarmupTest, UniformGateFrequencies) {
  Fixture f = fixture();
  SearchState s = init_search(f.topo, nullptr, f.cfg);
  for (MixedOp& op : s.net.layers) op.alpha[0] = 5.0;  // must not bias warm-up draws
  const std::size_t r = s.net.layers[0].candidates.size();
  std::vector<double> count(r, 0.0);
  Rng rng(3);
  const int draws = 26000;
  for (int t = 0; t < draws; ++t) count[sample_network_gates(s.net, rng, false, true)[0].active] += 1.0;
  for (double c : count) EXPECT_NEAR(c / draws, 1.0 / static_cast<double>(r), 0.01);
}

TEST(WarmupTest, LossDoesNotIncreaseMedianOfThreeSeeds) {
  std::vector<double> delta;
  for (std::uint64_t seed : {1, 2, 3}) {
    Fixture f = fixture(seed);
    f.cfg.search.warmup_epochs = 4;
    SearchState s = init_search(f.topo, nullptr, f.cfg);
    const double before = path_loss(s.net, f.data.train, f.cfg.search.loss_mode);
    warmup(s, f.data, f.cfg.search);
    delta.push_back(path_loss(s.net, f.data.train, f.cfg.search.loss_mode) - before);
  }
  std::sort(delta.begin(), delta.end());
  EXPECT_LE(delta[1], 0.0);
}

TEST(SearchStepTest, WeightStepKeepsAlpha) {
  Fixture f = fixture();
  SearchState s = init_search(f.topo, nullptr, f.cfg);
  for (MixedOp& op : s.net.layers) op.alpha[1] = 0.3;
  const auto before = alphas(s.net);
  const GateSample g = sample_network_gates(s.net, s.rng, false);
  weight_step(s.net, s.weight_opt, f.data.train, first(32), gate_mixture(s.net, g), f.cfg.search);
  EXPECT_EQ(alphas(s.net), before);
}

TEST(SearchStepTest, WeightStepTouchesOnlyTheSampledPath) {
  Fixture f = fixture();
  SearchState s = init_search(f.topo, nullptr, f.cfg);
  const SuperNet before = s.net;
  const GateSample g = sample_network_gates(s.net, s.rng, false);
  weight_step(s.net, s.weight_opt, f.data.train, first(32), gate_mixture(s.net, g), f.cfg.search);
  for (std::size_t n = 0; n < s.net.num_layers(); ++n) {
    for (std::size_t i = 0; i < s.net.weights[n].size(); ++i) {
      if (i == g[n].active && !s.net.weights[n][i].empty()) {
        EXPECT_NE(s.net.weights[n][i], before.weights[n][i]);
      } else {
        EXPECT_EQ(s.net.weights[n][i], before.weights[n][i]);
      }
    }
  }
}

TEST(SearchStepTest, ArchStepKeepsWeights) {
  Fixture f = fixture();
  f.cfg.search.lambda2 = 0.5;
  for (bool two_path : {false, true}) {
    f.cfg.search.two_path = two_path;
    SearchState s = init_search(f.topo, nullptr, f.cfg);
    const SuperNet before = s.net;
    arch_step(s, f.data.val, first(32), f.cfg.search);
    EXPECT_EQ(s.net.weights, before.weights);
    EXPECT_EQ(s.net.stem, before.stem);
    EXPECT_EQ(s.net.head_w, before.head_w);
    EXPECT_EQ(s.net.head_b, before.head_b);
    EXPECT_NE(alphas(s.net), alphas(before));
  }
}

TEST(SearchStepTest, TwoPathUpdatesOnlyThePair) {
  Fixture f = fixture();
  f.cfg.search.two_path = true;
  f.cfg.search.lambda2 = 0.5;
  SearchState s = init_search(f.topo, nullptr, f.cfg);
  Rng rng(5);
  GateSample gates;
  const auto grad = architecture_gradient(s, f.data.val, first(32), f.cfg.search, rng, &gates);
  for (std::size_t n = 0; n < grad.size(); ++n) {
    ASSERT_EQ(gates[n].unmasked.size(), 2u);
    for (std::size_t i = 0; i < grad[n].size(); ++i) {
      const bool in_pair = std::find(gates[n].unmasked.begin(), gates[n].unmasked.end(), i) != gates[n].unmasked.end();
      if (!in_pair) {
        EXPECT_EQ(grad[n][i], 0.0);
      }
    }
  }
  // Same draw through arch_step: only the pair moves.
  SearchState t = s;
  Rng copy = t.rng;
  GateSample expected = sample_network_gates(t.net, copy, true);
  const auto before = alphas(t.net);
  arch_step(t, f.data.val, first(32), f.cfg.search);
  for (std::size_t n = 0; n < before.size(); ++n) {
    for (std::size_t i = 0; i < before[n].size(); ++i) {
      const auto& u = expected[n].unmasked;
      if (std::find(u.begin(), u.end(), i) == u.end()) {
        EXPECT_EQ(t.net.layers[n].alpha[i], before[n][i]);
      }
    }
  }
}

TEST(SearchStepTest, RelaxedGradientMatchesFiniteDifferences) {
  Fixture f = fixture();
  f.cfg.search.gate_point = GatePoint::kRelaxed;
  f.cfg.search.lambda2 = 0.3;
  f.cfg.search.t_const = 0.01;
  SearchState s = init_search(f.topo, nullptr, f.cfg);
  Rng init(8);
  for (MixedOp& op : s.net.layers) {
    for (double& a : op.alpha) a = init.normal(0.0, 0.5);
  }
  const auto idx = first(8);
  Rng rng(1);
  const auto grad = architecture_gradient(s, f.data.val, idx, f.cfg.search, rng);
  const detail::BatchView b = detail::gather(f.data.val, idx);
  const auto objective = [&] {
    const double loss = run_batch(s.net, b.inputs, b.labels, relaxed_mixture(s.net), f.cfg.search.loss_mode).loss;
    const double e = expected_total_latency(s.net, s.topology, s.assignment, s.table).value;
    return loss + latency_penalty(e, f.cfg.search.t_const, f.cfg.search.lambda2).value;
  };
  std::vector<double> analytic, numeric;
  for (std::size_t n = 0; n < s.net.num_layers(); ++n) {
    for (std::size_t i = 0; i < s.net.layers[n].alpha.size(); ++i) {
      analytic.push_back(grad[n][i]);
      numeric.push_back(testing::central_diff(objective, s.net.layers[n].alpha[i], 1e-5));
    }
  }
  EXPECT_LE(testing::max_rel_error(analytic, numeric), 1e-5);
}

TEST(SearchRunTest, ZeroLambda2GivesZeroPenalty) {
  Fixture f = fixture();
  f.cfg.search.t_const = 0.0;
  const SearchState s = run_search(f.data, f.topo, nullptr, f.cfg);
  ASSERT_EQ(s.history.size(), 4u);
  for (const EpochRecord& r : s.history) EXPECT_EQ(r.penalty, 0.0);
}

TEST(SearchRunTest, ObjectiveMatchesIndependentRecomputation) {
  Fixture f = fixture();
  f.cfg.search.lambda1 = 1e-3;
  f.cfg.search.lambda2 = 0.2;
  f.cfg.search.t_const = 0.01;
  SearchState s = init_search(f.topo, nullptr, f.cfg);
  const auto check = [&](const EpochRecord& r) {
    double l2 = 0.0;
    const auto add = [&l2](const std::vector<double>& v) {
      for (double w : v) l2 += w * w;
    };
    add(s.net.stem);
    add(s.net.head_w);
    add(s.net.head_b);
    for (const auto& layer : s.net.weights) {
      for (const auto& w : layer) add(w);
    }
    const double e = completion_latency(s.topology, s.assignment, expected_costs(s.net, s.topology, s.assignment, s.table)).value;
    const double pen = f.cfg.search.lambda2 * (e - f.cfg.search.t_const) * (e - f.cfg.search.t_const);
    const double obj = r.train_loss + f.cfg.search.lambda1 * l2 + pen;
    EXPECT_NEAR(r.objective, obj, 1e-10 * std::max(1.0, std::abs(obj)));
    EXPECT_NEAR(r.penalty, pen, 1e-12);
  };
  warmup_epoch(s, f.data, f.cfg.search);
  check(s.history.back());
  search_epoch(s, f.data, f.cfg.search);
  check(s.history.back());
}

TEST(SearchRunTest, PenaltyDecreasesUnderLatencyPressure) {
  Fixture f = fixture();
  f.cfg.search.lambda2 = 5.0;
  f.cfg.search.lr_alpha = 0.1;
  f.cfg.search.t_const = 0.0;
  f.cfg.search.warmup_epochs = 1;
  f.cfg.search.search_epochs = 4;
  const SearchState s = run_search(f.data, f.topo, nullptr, f.cfg);
  EXPECT_LT(s.history.back().penalty, s.history.front().penalty);
  EXPECT_LT(s.history.back().expected_latency_ms, s.history[1].expected_latency_ms);
}

TEST(SearchRunTest, DeterministicForIdenticalSeeds) {
  Fixture f = fixture();
  f.cfg.search.lambda2 = 0.1;
  SearchState a = run_search(f.data, f.topo, nullptr, f.cfg);
  SearchState b = run_search(f.data, f.topo, nullptr, f.cfg);
  const TrainReport ra = derive_and_retrain(a, f.data, f.cfg.search);
  const TrainReport rb = derive_and_retrain(b, f.data, f.cfg.search);
  EXPECT_EQ(write_history_tsv(ra.history), write_history_tsv(rb.history));
  EXPECT_EQ(serialize_plan(ra.plan), serialize_plan(rb.plan));
  f.cfg.search.seed = 2;
  SearchState c = run_search(f.data, f.topo, nullptr, f.cfg);
  EXPECT_NE(write_history_tsv(a.history), write_history_tsv(c.history));
}

TEST(DeriveTest, CompactModelMatchesOneHotSupernet) {
  Fixture f = fixture();
  SearchState s = run_search(f.data, f.topo, nullptr, f.cfg);
  Rng rng(4);
  for (MixedOp& op : s.net.layers) {
    for (double& a : op.alpha) a = rng.normal(0.0, 1.0);
  }
  const auto arch = derive_compact(s.net);
  for (std::size_t n = 0; n < arch.size(); ++n) {
    const auto& a = s.net.layers[n].alpha;
    EXPECT_EQ(arch[n], static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin()));
  }
  const SuperNet compact = compact_net(s.net, arch);
  for (std::size_t k = 0; k < 10; ++k) {
    const Tensor& x = f.data.val.inputs[k];
    EXPECT_EQ(forward(compact, x, relaxed_mixture(compact)), forward(s.net, x, one_hot_mixture(s.net, arch)));
  }
}

TEST(DeriveTest, ReportLatenciesAgreeAndRetrainingHelps) {
  Fixture f = fixture();
  f.cfg.search.retrain_epochs = 6;
  SearchState s = run_search(f.data, f.topo, nullptr, f.cfg);
  const TrainReport r = derive_and_retrain(s, f.data, f.cfg.search);
  const double analytic = completion_latency(s.topology, s.assignment, costs_for(s.topology, s.assignment, s.table, r.architecture)).value;
  EXPECT_NEAR(r.expected_latency_ms, analytic, 1e-12);
  EXPECT_NEAR(r.simulated_latency_ms, analytic, 1e-9);
  EXPECT_GE(r.val_accuracy, r.pre_retrain_accuracy - 0.005);
  EXPECT_EQ(r.history.size(), 4u + 6u);
  EXPECT_EQ(r.history.back().phase, "retrain");
  EXPECT_EQ(r.history.back().epoch, 10u);
  for (const EpochRecord& e : r.history) {
    if (e.phase == "retrain") {
      EXPECT_EQ(e.expected_latency_ms, r.expected_latency_ms);
    }
  }
}

TEST(DeriveTest, StateRoundTripReproducesDerive) {
  Fixture f = fixture();
  SearchState s = run_search(f.data, f.topo, nullptr, f.cfg);
  const std::string snapshot = serialize_state(s);
  SearchState restored = init_search(f.topo, nullptr, f.cfg);
  load_state(restored, snapshot);
  EXPECT_EQ(serialize_state(restored), snapshot);
  const TrainReport a = derive_and_retrain(s, f.data, f.cfg.search);
  const TrainReport b = derive_and_retrain(restored, f.data, f.cfg.search);
  EXPECT_EQ(write_history_tsv(a.history), write_history_tsv(b.history));
  EXPECT_EQ(report_to_json(a), report_to_json(b));
}

TEST(DeriveTest, MismatchedStateRejected) {
  Fixture f = fixture();
  const SearchState s = init_search(f.topo, nullptr, f.cfg);
  RunConfig other = f.cfg;
  other.space.num_layers = 5;
  SearchState t = init_search(f.topo, nullptr, other);
  EXPECT_THROW(load_state(t, serialize_state(s)), ValidationError);
  EXPECT_THROW(load_state(t, "{\"alpha\": 3}"), ValidationError);
  EXPECT_THROW(load_state(t, "not json"), ValidationError);
}

TEST(EvaluateTest, PerfectAndChanceModels) {
  Fixture f = fixture();
  f.cfg.data.train_size = 10;
  f.cfg.data.val_size = 2000;
  f.data = make_toy_dataset(f.cfg.data);
  const SearchState s = init_search(f.topo, nullptr, f.cfg);
  const Mixture mix = relaxed_mixture(s.net);
  Dataset perfect = f.data.val;
  for (std::size_t k = 0; k < perfect.size(); ++k) {
    perfect.labels[k] = predicted_class(forward(s.net, perfect.inputs[k], mix), f.cfg.search.loss_mode);
  }
  EXPECT_EQ(evaluate(s.net, mix, perfect, f.cfg.search.loss_mode).accuracy, 1.0);
  Dataset random = f.data.val;
  Rng rng(6);
  for (std::size_t& l : random.labels) l = rng.index(random.num_classes);
  EXPECT_NEAR(evaluate(s.net, mix, random, f.cfg.search.loss_mode).accuracy, 0.25, 0.04);
  EXPECT_THROW(evaluate(s.net, mix, Dataset{}, f.cfg.search.loss_mode), ContractError);
}

TEST(InitTest, TooFewLayersForTopologyIsValidationError) {
  Fixture f = fixture();
  f.cfg.space.num_layers = 3;
  EXPECT_THROW(init_search(table1_chain(), nullptr, f.cfg), ValidationError);
}

TEST(InitTest, IncompleteTableIsValidationError) {
  Fixture f = fixture();
  LatencyTable table;
  table.set_exec(0, 1, 0, 1.0);
  EXPECT_THROW(init_search(f.topo, &table, f.cfg), ValidationError);
}

TEST(ConfigTest, RoundTripAndStrictness) {
  RunConfig c = small_config(9);
  c.search.two_path = true;
  c.search.gate_point = GatePoint::kRelaxed;
  c.space.candidates = {CandidateOpSpec::identity(), CandidateOpSpec::conv(5, 6, true)};
  const RunConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_THROW(parse_config(R"({"search": {"lambda_2": 1}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"search": {"lambda2": -1}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"search": {"lr_alpha": 0}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"search": {"batch_size": "x"}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"space": {"candidates": ["mb4_e3"]}})"), ValidationError);
  EXPECT_THROW(parse_config(R"({"search": {"loss_mode": "binary"}})"), ValidationError);
  EXPECT_THROW(parse_config("{"), ValidationError);
  EXPECT_NO_THROW(parse_config(""));
}

TEST(ConfigTest, BundledConfigsParse) {
  for (const char* name : {"search_small.json", "upload_heavy.json"}) {
    std::ifstream in(std::string(SPLITNAS_CONFIG_DIR) + "/" + name);
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_NO_THROW(parse_config(ss.str())) << name;
  }
}

}  // namespace
}  // namespace splitnas
