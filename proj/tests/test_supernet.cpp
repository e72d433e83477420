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

#include <cmath>
#include <numeric>
#include <vector>

#include "splitnas/errors.hpp"
#include "splitnas/supernet.hpp"
#include "test_util.hpp"

namespace splitnas {
namespace {

using testing::central_diff;
using testing::max_rel_error;
using testing::random_supernet;
using testing::random_tensor;

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

TEST(SoftmaxTest, UniformForEqualScores) {
  const ProbVector p = softmax_probs(std::vector<double>{0.0, 0.0, 0.0});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(SoftmaxTest, LnTwoAgainstZero) {
  const ProbVector p = softmax_probs(std::vector<double>{std::log(2.0), 0.0});
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, NormalizedAndShiftInvariant) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const auto a = testing::random_vector(1 + rng.index(13), rng, 4.0);
    const ProbVector p = softmax_probs(a);
    EXPECT_NEAR(sum(p), 1.0, 1e-12);
    std::vector<double> shifted = a;
    const double c = rng.normal(0.0, 50.0);
    for (double& v : shifted) v += c;
    const ProbVector q = softmax_probs(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), std::max_element(q.begin(), q.end()) - q.begin());
  }
}

TEST(SoftmaxTest, StableForLargeScores) {
  const ProbVector p = softmax_probs(std::vector<double>{1000.0, 999.0});
  EXPECT_TRUE(std::isfinite(p[0]));
  EXPECT_NEAR(p[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(GateSamplingTest, DegenerateDistributionAlwaysFirst) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_gates(std::vector<double>{1.0, 0.0, 0.0}, rng, false).active, 0u);
}

TEST(GateSamplingTest, UniformFrequenciesWithinThreeSigma) {
  Rng rng(3);
  const std::size_t r = 4, draws = 10000;
  const std::vector<double> p(r, 1.0 / r);
  std::vector<std::size_t> counts(r, 0);
  for (std::size_t i = 0; i < draws; ++i) ++counts[sample_gates(p, rng, false).active];
  const double sd = std::sqrt(draws * 0.25 * 0.75);
  for (std::size_t c : counts) EXPECT_LT(std::abs(static_cast<double>(c) - 2500.0), 3.0 * sd);
}

TEST(GateSamplingTest, TwoPathUnmasksExactlyTwo) {
  Rng rng(4);
  const ProbVector p = softmax_probs(std::vector<double>{0.3, -1.0, 2.0, 0.0, 0.5});
  for (int i = 0; i < 500; ++i) {
    const LayerGate g = sample_gates(p, rng, true);
    ASSERT_EQ(g.unmasked.size(), 2u);
    EXPECT_NE(g.unmasked[0], g.unmasked[1]);
    EXPECT_NEAR(g.probs[0] + g.probs[1], 1.0, 1e-15);
    EXPECT_NEAR(g.probs[0] / g.probs[1], p[g.unmasked[0]] / p[g.unmasked[1]], 1e-12);
    EXPECT_TRUE(g.active == g.unmasked[0] || g.active == g.unmasked[1]);
  }
}

TEST(GateSamplingTest, TwoPathWithPointMassStillPicksTwo) {
  Rng rng(5);
  const LayerGate g = sample_gates(std::vector<double>{0.0, 1.0, 0.0}, rng, true);
  EXPECT_EQ(g.unmasked.size(), 2u);
  EXPECT_EQ(g.active, 1u);
}

TEST(ArchGradTest, TwoCandidatesByHand) {
  const auto g = arch_grad(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5});
  EXPECT_DOUBLE_EQ(g[0], 0.25);
  EXPECT_DOUBLE_EQ(g[1], -0.25);
}

TEST(ArchGradTest, ConstantGateGradientGivesZero) {
  const ProbVector p = softmax_probs(std::vector<double>{0.1, 0.7, -0.4});
  for (double v : arch_grad(std::vector<double>{2.5, 2.5, 2.5}, p)) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(ArchGradTest, ComponentsSumToZero) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const std::size_t r = 1 + rng.index(13);
    const ProbVector p = softmax_probs(testing::random_vector(r, rng, 2.0));
    const auto g = arch_grad(testing::random_vector(r, rng, 10.0), p);
    EXPECT_NEAR(sum(g), 0.0, 1e-12);
  }
}

TEST(ForwardTest, OneHotSelectsSingleCandidate) {
  Rng rng(7);
  SuperNet net = random_supernet(1, 3, rng, 4);
  const Tensor x = random_tensor(net.input_shape, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    ForwardTrace tr;
    forward(net, x, one_hot_mixture(net, std::vector<std::size_t>{i}), &tr);
    const Tensor v = candidate_forward(net.layers[0].candidates[i], net.weights[0][i], tr.layer_in[0]);
    EXPECT_EQ(tr.layer_out[0], v);
  }
}

TEST(ForwardTest, RelaxedOneHotEqualsSampledExactly) {
  Rng rng(8);
  SuperNet net = random_supernet(3, 3, rng, 6);
  const Tensor x = random_tensor(net.input_shape, rng);
  const GateSample gates = sample_network_gates(net, rng, false);
  for (std::size_t n = 0; n < 3; ++n) {
    net.layers[n].alpha.assign(3, -1000.0);
    net.layers[n].alpha[gates[n].active] = 1000.0;
  }
  const Mixture relaxed = relaxed_mixture(net);
  for (const auto& row : relaxed) EXPECT_EQ(*std::max_element(row.begin(), row.end()), 1.0);
  EXPECT_EQ(forward(net, x, relaxed), forward(net, x, gate_mixture(net, gates)));
}

TEST(ForwardTest, ConvexCombinationOfScalarCandidates) {
  // Two identity candidates behind a scalar stem: layer output p1*v + p2*v'.
  SuperNetSpec spec;
  spec.height = spec.width = spec.in_channels = spec.channels = spec.num_outputs = 1;
  spec.layer_candidates = {{CandidateOpSpec::identity(), CandidateOpSpec::dense(3, true)}};
  Rng rng(9);
  SuperNet net = SuperNet::build(spec, rng);
  net.stem = {1.0};
  std::fill(net.weights[0][1].begin(), net.weights[0][1].end(), 0.0);
  net.weights[0][1][0] = 1.0;  // W1[0] = 1
  net.weights[0][1][3] = 1.0;  // W2[0] = 1: v2(x) = x + relu(x) = 2x
  ForwardTrace tr;
  const Tensor x({1, 1, 1}, std::vector<double>{2.0});
  forward(net, x, Mixture{{0.5, 0.5}}, &tr);
  EXPECT_EQ(tr.cand_out[0][0].data[0], 2.0);
  EXPECT_EQ(tr.cand_out[0][1].data[0], 4.0);
  EXPECT_EQ(tr.layer_out[0].data[0], 3.0);
}

TEST(ForwardTest, RejectsWrongInputShape) {
  Rng rng(10);
  SuperNet net = random_supernet(2, 2, rng, 4);
  EXPECT_THROW(forward(net, Tensor({5, 4, 3}), relaxed_mixture(net)), ContractError);
  Mixture empty = relaxed_mixture(net);
  std::fill(empty[1].begin(), empty[1].end(), 0.0);
  EXPECT_THROW(forward(net, Tensor({4, 4, 3}), empty), ContractError);
}

TEST(ForwardTest, DeterministicForFixedGates) {
  Rng rng(11);
  SuperNet net = random_supernet(3, 4, rng);
  const Tensor x = random_tensor(net.input_shape, rng);
  Rng a(5), b(5);
  const auto ga = sample_network_gates(net, a, false), gb = sample_network_gates(net, b, false);
  EXPECT_EQ(forward(net, x, gate_mixture(net, ga)), forward(net, x, gate_mixture(net, gb)));
}

struct BatchFixture {
  std::vector<Tensor> xs;
  std::vector<const Tensor*> ptrs;
  std::vector<std::size_t> labels;

  BatchFixture(const SuperNet& net, std::size_t k, Rng& rng) {
    for (std::size_t i = 0; i < k; ++i) {
      xs.push_back(random_tensor(net.input_shape, rng));
      labels.push_back(rng.index(net.num_outputs));
    }
    for (const Tensor& x : xs) ptrs.push_back(&x);
  }
  double loss(const SuperNet& net, const Mixture& mix) const {
    return run_batch(net, ptrs, labels, mix, LossMode::kMulticlassSoftmax).loss;
  }
};

TEST(BackwardTest, WeightGradientsMatchFiniteDifferences) {
  Rng rng(12);
  SuperNet net = random_supernet(3, 3, rng, 5);
  const BatchFixture batch(net, 2, rng);
  Gradients g = Gradients::zeros_like(net);
  run_batch(net, batch.ptrs, batch.labels, relaxed_mixture(net), LossMode::kMulticlassSoftmax, &g);
  const auto f = [&] { return batch.loss(net, relaxed_mixture(net)); };
  const auto check = [&](std::vector<double>& params, const std::vector<double>& grad, const char* what) {
    std::vector<double> a, num;
    for (std::size_t i : testing::sample_indices(params.size(), 25, rng)) {
      a.push_back(grad[i]);
      num.push_back(central_diff(f, params[i], 1e-5));
    }
    EXPECT_LE(max_rel_error(a, num), 1e-4) << what;
  };
  check(net.stem, g.stem, "stem");
  check(net.head_w, g.head_w, "head weights");
  check(net.head_b, g.head_b, "head bias");
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    for (std::size_t i = 0; i < net.weights[n].size(); ++i) {
      if (!net.weights[n][i].empty()) check(net.weights[n][i], g.weights[n][i], "candidate");
    }
  }
}

TEST(BackwardTest, ArchitectureGradientMatchesFiniteDifferencesAtRelaxedPoint) {
  Rng rng(13);
  SuperNet net = random_supernet(4, 4, rng, 5);
  const BatchFixture batch(net, 2, rng);
  std::vector<std::vector<std::size_t>> all(net.num_layers(), std::vector<std::size_t>{0, 1, 2, 3});
  Gradients g = Gradients::zeros_like(net);
  BackwardOptions bo;
  bo.weights = false;
  bo.gate_candidates = &all;
  run_batch(net, batch.ptrs, batch.labels, relaxed_mixture(net), LossMode::kMulticlassSoftmax, &g, bo);
  for (double v : g.stem) EXPECT_EQ(v, 0.0);
  const auto f = [&] { return batch.loss(net, relaxed_mixture(net)); };
  for (std::size_t n = 0; n < net.num_layers(); ++n) {
    const auto analytic = arch_grad(g.gates[n], net.probs(n));
    std::vector<double> num;
    for (double& a : net.layers[n].alpha) num.push_back(central_diff(f, a, 1e-5));
    EXPECT_LE(max_rel_error(analytic, num), 1e-5) << "layer " << n;
  }
}

TEST(BackwardTest, GateGradientOnDemandMatchesEvaluatedCandidates) {
  // At a one-hot point, unevaluated candidates are run on demand; the result
  // must equal the relaxed pass where they were evaluated in the forward pass.
  Rng rng(14);
  SuperNet net = random_supernet(2, 3, rng, 4);
  const BatchFixture batch(net, 1, rng);
  std::vector<std::vector<std::size_t>> all(2, std::vector<std::size_t>{0, 1, 2});
  BackwardOptions bo;
  bo.weights = false;
  bo.gate_candidates = &all;
  Gradients on_demand = Gradients::zeros_like(net);
  const Mixture hot = one_hot_mixture(net, std::vector<std::size_t>{1, 2});
  run_batch(net, batch.ptrs, batch.labels, hot, LossMode::kMulticlassSoftmax, &on_demand, bo);
  ForwardTrace tr;
  const auto logits = forward(net, batch.xs[0], hot, &tr);
  const LossValue lv = loss_ce(logits, batch.labels[0], LossMode::kMulticlassSoftmax);
  const std::size_t d = tr.layer_out[1].size();
  Tensor dy(tr.layer_out[1].shape);
  for (std::size_t o = 0; o < net.num_outputs; ++o) {
    axpy(lv.dlogits[o], std::span<const double>(net.head_w).subspan(o * d, d), dy.data);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const Tensor v = candidate_forward(net.layers[1].candidates[j], net.weights[1][j], tr.layer_in[1]);
    EXPECT_NEAR(on_demand.gates[1][j], dot(dy.data, v.data), 1e-12 * (1.0 + std::abs(on_demand.gates[1][j])));
  }
}

TEST(BackwardTest, ReproducibleStep) {
  const auto step = [] {
    Rng rng(15);
    SuperNet net = random_supernet(3, 3, rng, 4);
    const BatchFixture batch(net, 3, rng);
    const GateSample gates = sample_network_gates(net, rng, false);
    Gradients g = Gradients::zeros_like(net);
    run_batch(net, batch.ptrs, batch.labels, gate_mixture(net, gates), LossMode::kMulticlassSoftmax, &g);
    return g.head_w;
  };
  EXPECT_EQ(step(), step());
}

TEST(DeriveTest, ArgmaxWithLowestIndexTies) {
  Rng rng(16);
  SuperNet net = random_supernet(2, 3, rng, 4);
  net.layers[0].alpha = {0.1, 2.0, -1.0};
  net.layers[1].alpha = {0.0, 0.0, 0.0};
  EXPECT_EQ(derive_compact(net), (std::vector<std::size_t>{1, 0}));
}

TEST(DeriveTest, CompactForwardEqualsOneHotSupernet) {
  Rng rng(17);
  SuperNet net = random_supernet(3, 4, rng, 6);
  const auto arch = derive_compact(net);
  const SuperNet compact = compact_net(net, arch);
  const Tensor x = random_tensor(net.input_shape, rng);
  EXPECT_EQ(forward(compact, x, relaxed_mixture(compact)), forward(net, x, one_hot_mixture(net, arch)));
}

TEST(DeriveTest, AllIdentityIsBareHead) {
  SuperNetSpec spec;
  spec.height = spec.width = 3;
  spec.in_channels = 2;
  spec.channels = 2;
  spec.num_outputs = 2;
  spec.layer_candidates.assign(3, {CandidateOpSpec::identity(), CandidateOpSpec::conv(3, 3)});
  Rng rng(18);
  SuperNet net = SuperNet::build(spec, rng);
  for (MixedOp& op : net.layers) op.alpha = {1.0, 0.0};
  const SuperNet compact = compact_net(net, derive_compact(net));
  const Tensor x = random_tensor(net.input_shape, rng);
  ForwardTrace tr;
  const auto logits = forward(compact, x, relaxed_mixture(compact), &tr);
  // Head applied directly to the stem output.
  for (std::size_t o = 0; o < 2; ++o) {
    const double expect = compact.head_b[o] + dot(std::span<const double>(compact.head_w).subspan(o * 18, 18), tr.stem_out.data);
    EXPECT_DOUBLE_EQ(logits[o], expect);
  }
}

TEST(SupernetBuildTest, RejectsDanglingLayers) {
  SuperNetSpec spec;
  spec.layer_candidates.assign(3, {CandidateOpSpec::identity()});
  spec.layer_inputs = {{-1}, {-1}, {1}};  // layer 1 output is never read
  Rng rng(19);
  EXPECT_THROW(SuperNet::build(spec, rng), ContractError);
  spec.layer_inputs = {{-1}, {0}, {2}};
  EXPECT_THROW(SuperNet::build(spec, rng), ContractError);
}

TEST(SupernetBuildTest, ConcatenatedInputsWidenTheLayer) {
  SuperNetSpec spec;
  spec.channels = 2;
  spec.layer_candidates.assign(4, {CandidateOpSpec::identity(), CandidateOpSpec::conv(3, 3)});
  spec.layer_inputs = {{-1}, {0}, {0}, {1, 2}};
  Rng rng(20);
  const SuperNet net = SuperNet::build(spec, rng);
  EXPECT_EQ(net.layers[3].shape[2], 4u);
  EXPECT_EQ(net.head_inputs(), 8u * 8u * 4u);
}

TEST(SupernetBuildTest, ConcatenatedGradientsMatchFiniteDifferences) {
  SuperNetSpec spec;
  spec.height = spec.width = 4;
  spec.channels = 2;
  spec.num_outputs = 3;
  spec.layer_candidates.assign(4, {CandidateOpSpec::conv(3, 3, true), CandidateOpSpec::dense(3)});
  spec.layer_inputs = {{-1}, {0}, {0}, {1, 2}};
  Rng rng(21);
  SuperNet net = SuperNet::build(spec, rng);
  for (MixedOp& op : net.layers) op.alpha = {0.3, -0.2};
  const BatchFixture batch(net, 2, rng);
  Gradients g = Gradients::zeros_like(net);
  run_batch(net, batch.ptrs, batch.labels, relaxed_mixture(net), LossMode::kMulticlassSoftmax, &g);
  const auto f = [&] { return batch.loss(net, relaxed_mixture(net)); };
  std::vector<double> a, num;
  for (std::size_t i = 0; i < net.stem.size(); ++i) {
    a.push_back(g.stem[i]);
    num.push_back(central_diff(f, net.stem[i], 1e-5));
  }
  EXPECT_LE(max_rel_error(a, num), 1e-4);
}

}  // namespace
}  // namespace splitnas
