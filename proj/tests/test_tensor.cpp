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
#include <numeric>
#include <vector>

#include "splitnas/errors.hpp"
#include "splitnas/rng.hpp"
#include "splitnas/tensor.hpp"

namespace splitnas {
namespace {

TEST(TensorTest, DataLengthMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(shape_size({2, 3, 4}), 24u);
  EXPECT_EQ(shape_string({8, 8, 4}), "[8x8x4]");
}

TEST(TensorTest, RejectsZeroDims) { EXPECT_THROW(Tensor({2, 0}), ContractError); }

TEST(TensorTest, RejectsDataLengthMismatch) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ContractError);
}

TEST(TensorTest, DetectsNonFinite) {
  Tensor t({2}, std::vector<double>{1.0, 2.0});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(TensorTest, DotAndAxpy) {
  std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  EXPECT_DOUBLE_EQ(dot(a, b), 32.0);
  axpy(2.0, b, a);
  EXPECT_EQ(a, (std::vector<double>{9, 12, 15}));
  std::vector<double> c{1};
  EXPECT_THROW(dot(a, c), ContractError);
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngTest, UniformInUnitInterval) {
  Rng r(3);
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 20000.0, 0.5, 0.01);
}

TEST(RngTest, IndexFrequenciesWithinThreeSigma) {
  Rng r(5);
  const std::size_t n = 7, draws = 70000;
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t i = 0; i < draws; ++i) ++counts[r.index(n)];
  const double p = 1.0 / n, sd = std::sqrt(draws * p * (1 - p));
  for (std::size_t c : counts) EXPECT_LT(std::abs(static_cast<double>(c) - draws * p), 3.0 * sd);
}

TEST(RngTest, NormalMoments) {
  Rng r(9);
  double s = 0.0, s2 = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal(1.0, 2.0);
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 1.0, 0.05);
  EXPECT_NEAR(s2 / n - mean * mean, 4.0, 0.15);
}

TEST(RngTest, CategoricalSkipsZeroWeights) {
  Rng r(1);
  const std::vector<double> w{0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(r.categorical(w), 1u);
}

TEST(RngTest, ShuffleIsPermutation) {
  Rng r(11);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

}  // namespace
}  // namespace splitnas
