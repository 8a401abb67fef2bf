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

#ifndef HIDDENRF_ORACLE_HPP_
#define HIDDENRF_ORACLE_HPP_

#include <Eigen/Core>
#include <cstddef>
#include <span>

#include "hiddenrf/common.hpp"
#include "hiddenrf/sim.hpp"

namespace hiddenrf::oracle {

struct OracleSpec {
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;  // (alpha + beta) / 2

  static OracleSpec from(const sim::Model8Params& params) {
    return {params.alpha, params.beta, 0.5 * (params.alpha + params.beta)};
  }
};

namespace detail {
inline double dot(const Eigen::VectorXd& w, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(w.size()))
    throw DomainError("covariate block has wrong dimension");
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) s += w[static_cast<Eigen::Index>(j)] * x[j];
  return s;
}
}  // namespace detail

/// Conditional mean of Y given all predictors; x = (x1, x2, x').
inline double optimal_predict(std::span<const double> x, const OracleSpec& spec) {
  if (x.size() < 2) throw DomainError("feature vector too short");
  const double x1 = x[0];
  const double x2 = x[1];
  if ((x1 != 0.0 && x1 != 1.0) || (x2 != 0.0 && x2 != 1.0))
    throw DomainError("x1 and x2 must be binary");
  const auto x_prime = x.subspan(2);
  return x1 == x2 ? detail::dot(spec.alpha, x_prime) : detail::dot(spec.beta, x_prime);
}

/// Best predictor from x' alone: gamma . x'.
inline double marginal_predict(std::span<const double> x_prime, const OracleSpec& spec) {
  return detail::dot(spec.gamma, x_prime);
}

class OptimalPredictor {
 public:
  explicit OptimalPredictor(OracleSpec spec) : spec_(std::move(spec)) {}
  double predict(std::span<const double> x) const { return optimal_predict(x, spec_); }

 private:
  OracleSpec spec_;
};

/// Takes the full feature vector and ignores x1, x2.
class MarginalPredictor {
 public:
  explicit MarginalPredictor(OracleSpec spec) : spec_(std::move(spec)) {}
  double predict(std::span<const double> x) const {
    if (x.size() < 2) throw DomainError("feature vector too short");
    return marginal_predict(x.subspan(2), spec_);
  }

 private:
  OracleSpec spec_;
};

}  // namespace hiddenrf::oracle

#endif  // HIDDENRF_ORACLE_HPP_
