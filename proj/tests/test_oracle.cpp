/*
 * Copyright 2026 The hiddenrf Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hiddenrf/diagnostics.hpp"
#include "hiddenrf/oracle.hpp"
#include "hiddenrf/sim.hpp"
#include "test_stats.hpp"

using namespace hiddenrf;
using namespace hiddenrf::oracle;

namespace {

OracleSpec spec(sim::BetaSetting b) { return OracleSpec::from(sim::Model8Params::standard(b)); }

std::vector<double> ones_with(double x1, double x2) {
  std::vector<double> x(10, 1.0);
  x[0] = x1;
  x[1] = x2;
  return x;
}

// v' (Sigma + mu mu') v with v = (alpha - beta) / 2, written out by hand.
double excess_loss(double beta_scale) {
  double total = 0.0;
  for (int j = 0; j < 8; ++j) {
    for (int k = 0; k < 8; ++k) {
      const double vj = (1.0 - beta_scale) * (j + 1) / 16.0;
      const double vk = (1.0 - beta_scale) * (k + 1) / 16.0;
      total += vj * vk * (std::pow(2.0, -std::abs(j - k)) + 1.0);
    }
  }
  return total;
}

Dataset draw(std::size_t n, std::uint64_t seed, sim::BetaSetting b) {
  Rng rng(seed);
  return sim::simulate_model8(n, sim::Model8Params::standard(b), rng);
}

}  // namespace

TEST(Oracle, WorkedExamples) {
  const auto s = spec(sim::BetaSetting::kThreeQuarterAlpha);
  EXPECT_DOUBLE_EQ(optimal_predict(ones_with(1, 1), s), 4.5);
  EXPECT_DOUBLE_EQ(optimal_predict(ones_with(0, 0), s), 4.5);
  EXPECT_DOUBLE_EQ(optimal_predict(ones_with(1, 0), s), 3.375);
  EXPECT_DOUBLE_EQ(optimal_predict(ones_with(0, 1), s), 3.375);
  EXPECT_DOUBLE_EQ(marginal_predict(std::vector<double>(8, 1.0), s), 3.9375);
  const auto neg = spec(sim::BetaSetting::kNegativeAlpha);
  EXPECT_DOUBLE_EQ(optimal_predict(ones_with(0, 1), neg), -4.5);
  EXPECT_EQ(marginal_predict(std::vector<double>(8, 1.0), neg), 0.0);
  EXPECT_EQ(MarginalPredictor(neg).predict(ones_with(1, 0)), 0.0);
}

TEST(Oracle, RejectsNonBinaryIndicators) {
  const auto s = spec(sim::BetaSetting::kThreeQuarterAlpha);
  EXPECT_THROW(optimal_predict(ones_with(0.5, 1), s), DomainError);
  EXPECT_THROW(optimal_predict(ones_with(1, 2), s), DomainError);
  EXPECT_THROW(optimal_predict(std::vector<double>(5, 1.0), s), DomainError);
  EXPECT_THROW(marginal_predict(std::vector<double>(3, 1.0), s), DomainError);
}

TEST(Oracle, ExcessLossOfMarginalPredictor) {
  EXPECT_NEAR(excess_loss(0.75), 0.43258, 5e-5);
  EXPECT_GT(excess_loss(-1.0), 10.0);
}

class OracleMse : public ::testing::TestWithParam<sim::BetaSetting> {};

TEST_P(OracleMse, MatchesTheory) {
  const auto b = GetParam();
  const auto test = draw(100'000, 41, b);
  const auto s = spec(b);
  const auto opt = diagnostics::evaluate(OptimalPredictor(s), test);
  const auto marg = diagnostics::evaluate(MarginalPredictor(s), test);
  EXPECT_NEAR(opt.mse, 2.0, 0.05);
  const double expected = 2.0 + excess_loss(b == sim::BetaSetting::kThreeQuarterAlpha ? 0.75 : -1.0);
  EXPECT_NEAR(marg.mse, expected, 0.03 * expected);
  EXPECT_LE(opt.mse, marg.mse);
}

TEST_P(OracleMse, ResidualUncorrelatedWithCovariates) {
  const auto b = GetParam();
  const auto test = draw(100'000, 42, b);
  const OptimalPredictor p(spec(b));
  std::vector<double> resid(test.rows());
  for (std::size_t i = 0; i < test.rows(); ++i) resid[i] = test.response()[i] - p.predict(test.row(i));
  for (std::size_t j = 0; j < 10; ++j)
    EXPECT_LT(std::fabs(teststats::correlation(resid, test.column(j))), 0.01) << "x" << j + 1;
}

INSTANTIATE_TEST_SUITE_P(Beta, OracleMse,
                         ::testing::Values(sim::BetaSetting::kThreeQuarterAlpha,
                                           sim::BetaSetting::kNegativeAlpha));
