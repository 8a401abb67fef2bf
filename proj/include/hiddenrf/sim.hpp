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

// Data-generating models whose response depends jointly on two predictors
// that are each (pairwise) independent of it:
//
//  * Bernstein triples of indicators built from three fair coins;
//  * the two-branch linear model Y = d*(a.X' + e) + (1-d)*(b.X' + z) + h,
//    d = 1{X1 = X2}, with correlated Gaussian X';
//  * continuous pairwise-independent densities f0 f1 f2 (1 - phi), sampled
//    by rejection, with X0 re-expressed through the conditional quantile
//    function of X0 given the two blocks.

#ifndef HIDDENRF_SIM_HPP_
#define HIDDENRF_SIM_HPP_

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hiddenrf/common.hpp"
#include "hiddenrf/dataset.hpp"

namespace hiddenrf::sim {

// ---------------------------------------------------------------------------
// Bernstein triples

struct BernsteinTriple {
  int x0 = 0;
  int x1 = 0;
  int x2 = 0;

  bool operator==(const BernsteinTriple&) const = default;
};

constexpr BernsteinTriple bernstein_from_coins(int b1, int b2, int b3) noexcept {
  return {b1 == b2 ? 1 : 0, b1 == b3 ? 1 : 0, b2 == b3 ? 1 : 0};
}

inline BernsteinTriple sample_bernstein(Rng& rng) {
  const std::uint64_t bits = rng();
  return bernstein_from_coins(static_cast<int>(bits & 1U),
                              static_cast<int>((bits >> 1) & 1U),
                              static_cast<int>((bits >> 2) & 1U));
}

constexpr int agreement(double a, double b) noexcept { return a == b ? 1 : 0; }

// ---------------------------------------------------------------------------
// Two-branch linear model

enum class BetaSetting { kThreeQuarterAlpha, kNegativeAlpha };

struct Model8Params {
  Eigen::VectorXd alpha;
  Eigen::VectorXd beta;
  Eigen::MatrixXd sigma;
  Eigen::VectorXd mu;
  std::array<double, 3> noise_sd{1.0, 1.0, 1.0};  // epsilon, zeta, eta

  std::size_t block_dim() const { return static_cast<std::size_t>(alpha.size()); }
  std::size_t feature_dim() const { return block_dim() + 2; }

  /// alpha = (1..k)/k, sigma_jk = 2^-|j-k|, mu = diag(sigma).
  static Model8Params standard(BetaSetting setting, int k = 8) {
    Model8Params p;
    p.alpha.resize(k);
    for (int j = 0; j < k; ++j) p.alpha[j] = static_cast<double>(j + 1) / k;
    p.beta = setting == BetaSetting::kThreeQuarterAlpha ? Eigen::VectorXd(0.75 * p.alpha)
                                                        : Eigen::VectorXd(-p.alpha);
    p.sigma.resize(k, k);
    for (int j = 0; j < k; ++j)
      for (int l = 0; l < k; ++l) p.sigma(j, l) = std::ldexp(1.0, -std::abs(j - l));
    p.mu = p.sigma.diagonal();
    return p;
  }

  void validate() const {
    const auto k = alpha.size();
    if (k == 0) throw RejectedParameters("alpha must be non-empty");
    if (beta.size() != k || mu.size() != k || sigma.rows() != k || sigma.cols() != k)
      throw RejectedParameters("alpha, beta, mu and sigma dimensions disagree");
    if (!sigma.isApprox(sigma.transpose(), 1e-12))
      throw RejectedParameters("sigma is not symmetric");
    for (double s : noise_sd)
      if (!(s >= 0.0) || !std::isfinite(s)) throw RejectedParameters("invalid noise sd");
  }
};

/// Draws rows of N(mu, sigma) through the lower Cholesky factor.
class GaussianBlockSampler {
 public:
  GaussianBlockSampler(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) : mu_(mu) {
    if (sigma.rows() != sigma.cols() || sigma.rows() != mu.size())
      throw RejectedParameters("covariance and mean dimensions disagree");
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw RejectedParameters("covariance matrix is not positive definite");
    lower_ = llt.matrixL();
  }

  std::size_t dim() const { return static_cast<std::size_t>(mu_.size()); }

  void sample(Rng& rng, std::normal_distribution<double>& normal, std::span<double> out) const {
    const auto k = mu_.size();
    Eigen::VectorXd z(k);
    for (Eigen::Index j = 0; j < k; ++j) z[j] = normal(rng);
    const Eigen::VectorXd x = mu_ + lower_ * z;
    for (Eigen::Index j = 0; j < k; ++j) out[static_cast<std::size_t>(j)] = x[j];
  }

 private:
  Eigen::VectorXd mu_;
  Eigen::MatrixXd lower_;
};

/// n x k row-major matrix of N(mu, sigma) draws.
inline std::vector<double> sample_gaussian_block(std::size_t n, const Model8Params& params,
                                                 Rng& rng) {
  params.validate();
  const GaussianBlockSampler sampler(params.mu, params.sigma);
  const std::size_t k = sampler.dim();
  std::vector<double> out(n * k);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < n; ++i) sampler.sample(rng, normal, {out.data() + i * k, k});
  return out;
}

struct BranchNoise {
  double epsilon = 0.0;
  double zeta = 0.0;
  double eta = 0.0;
};

inline double model8_response(double x1, double x2, std::span<const double> x_prime,
                              const BranchNoise& noise, const Model8Params& params) {
  double a = 0.0;
  double b = 0.0;
  for (std::size_t j = 0; j < x_prime.size(); ++j) {
    a += params.alpha[static_cast<Eigen::Index>(j)] * x_prime[j];
    b += params.beta[static_cast<Eigen::Index>(j)] * x_prime[j];
  }
  return agreement(x1, x2) ? a + noise.epsilon + noise.eta : b + noise.zeta + noise.eta;
}

// Zero noise is for exact unit checks; the random draws still happen so the
// covariates match the noisy run with the same seed.
enum class NoiseMode { kRandom, kZero };

/// Columns x1..x(k+2), y. X0 of the Bernstein triple is not emitted.
inline Dataset simulate_model8(std::size_t n, const Model8Params& params, Rng& rng,
                               NoiseMode noise_mode = NoiseMode::kRandom) {
  if (n == 0) throw DomainError("simulate_model8 needs n >= 1");
  params.validate();
  const GaussianBlockSampler sampler(params.mu, params.sigma);
  const std::size_t k = sampler.dim();
  const std::size_t d = k + 2;
  std::vector<double> features(n * d);
  std::vector<double> response(n);
  std::normal_distribution<double> normal;
  for (std::size_t i = 0; i < n; ++i) {
    double* row = features.data() + i * d;
    const BernsteinTriple t = sample_bernstein(rng);
    row[0] = t.x1;
    row[1] = t.x2;
    sampler.sample(rng, normal, {row + 2, k});
    BranchNoise noise{params.noise_sd[0] * normal(rng), params.noise_sd[1] * normal(rng),
                      params.noise_sd[2] * normal(rng)};
    if (noise_mode == NoiseMode::kZero) noise = {};
    response[i] = model8_response(row[0], row[1], {row + 2, k}, noise, params);
  }
  return Dataset(d, std::move(features), std::move(response));
}

// ---------------------------------------------------------------------------
// Pairwise-independent densities

/// Univariate density handle. `scale` sets the truncation window used by the
/// conditional-CDF quadrature (+-8 scale).
struct Marginal {
  std::function<double(double)> pdf;
  std::function<double(Rng&)> sample;
  double scale = 1.0;

  static Marginal standard_normal() {
    return {[](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); },
            [](Rng& rng) { return std::normal_distribution<double>{}(rng); }, 1.0};
  }
};

using Perturbation =
    std::function<double(double x0, std::span<const double> x1, std::span<const double> x2)>;

/// Density f0(x0) prod f1(x1_i) prod f2(x2_i) (1 - phi(x0, x1, x2)).
/// When `phi` is empty the Gaussian block example is used:
///   phi = r(x0; c0) r(x1.1; c1) r(x2.1; c2),  r(s; c) = s / sqrt(c^2 + s^2).
struct PairwiseDensitySpec {
  Marginal f0 = Marginal::standard_normal();
  Marginal f1 = Marginal::standard_normal();
  Marginal f2 = Marginal::standard_normal();
  Perturbation phi;
  double c0 = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;
  std::size_t d1 = 2;
  std::size_t d2 = 3;
  std::size_t d3 = 5;

  static PairwiseDensitySpec independent(std::size_t d1 = 2, std::size_t d2 = 3,
                                         std::size_t d3 = 5) {
    PairwiseDensitySpec s;
    s.d1 = d1;
    s.d2 = d2;
    s.d3 = d3;
    s.phi = [](double, std::span<const double>, std::span<const double>) { return 0.0; };
    return s;
  }

  double perturbation(double x0, std::span<const double> x1, std::span<const double> x2) const {
    double v;
    if (phi) {
      v = phi(x0, x1, x2);
    } else {
      const double s1 = std::accumulate(x1.begin(), x1.end(), 0.0);
      const double s2 = std::accumulate(x2.begin(), x2.end(), 0.0);
      v = x0 / std::sqrt(c0 * c0 + x0 * x0) * (s1 / std::sqrt(c1 * c1 + s1 * s1)) *
          (s2 / std::sqrt(c2 * c2 + s2 * s2));
    }
    if (!(std::fabs(v) <= 1.0)) throw RejectedParameters("perturbation |phi| exceeds 1");
    return v;
  }
};

struct PairwiseDraw {
  double x0 = 0.0;
  std::vector<double> x1;
  std::vector<double> x2;
};

struct RejectionStats {
  std::uint64_t attempts = 0;
  std::uint64_t accepted = 0;
};

/// Rejection sampler: propose from the product of marginals, accept with
/// probability (1 - phi) / 2.
inline PairwiseDraw sample_pairwise_density(const PairwiseDensitySpec& spec, Rng& rng,
                                            RejectionStats* stats = nullptr,
                                            std::size_t max_attempts = 10'000) {
  PairwiseDraw draw;
  draw.x1.resize(spec.d1);
  draw.x2.resize(spec.d2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    draw.x0 = spec.f0.sample(rng);
    for (auto& v : draw.x1) v = spec.f1.sample(rng);
    for (auto& v : draw.x2) v = spec.f2.sample(rng);
    const double accept = 0.5 * (1.0 - spec.perturbation(draw.x0, draw.x1, draw.x2));
    const bool ok = unif(rng) < accept;
    if (stats) {
      ++stats->attempts;
      if (ok) ++stats->accepted;
    }
    if (ok) return draw;
  }
  throw SamplerStall("rejection sampler exceeded " + std::to_string(max_attempts) +
                     " attempts");
}

/// Adaptive composite Simpson. Throws NumericError if the recursion depth
/// runs out before the local error estimate meets `tol`.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol, int max_depth = 48) {
  struct Impl {
    const F& f;
    double step(double a, double fa, double b, double fb, double m, double fm, double whole,
                double tol, int depth) const {
      const double lm = 0.5 * (a + m);
      const double rm = 0.5 * (m + b);
      const double flm = f(lm);
      const double frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double delta = left + right - whole;
      if (std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
      if (depth <= 0) throw NumericError("adaptive quadrature did not converge");
      return step(a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
             step(m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
    }
  };
  if (b <= a) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return Impl{f}.step(a, fa, b, fb, m, fm, whole, tol, max_depth);
}

/// Conditional law of X0 given both blocks, evaluated by quadrature on the
/// truncated support [-8 s, 8 s] of f0.
class ConditionalLaw {
 public:
  static constexpr double kQuadratureTol = 1e-10;
  static constexpr double kInverseTol = 1e-8;

  ConditionalLaw(const PairwiseDensitySpec& spec, std::span<const double> x1,
                 std::span<const double> x2)
      : spec_(spec), x1_(x1), x2_(x2), lower_(-8.0 * spec.f0.scale), upper_(8.0 * spec.f0.scale) {
    if (x1.size() != spec.d1 || x2.size() != spec.d2)
      throw DomainError("block dimensions do not match the density spec");
    normalizer_ = integrate(lower_, upper_);
    if (!(normalizer_ > 0.0)) throw NumericError("conditional density integrates to zero");
  }

  double density(double x) const {
    return spec_.f0.pdf(x) * (1.0 - spec_.perturbation(x, x1_, x2_));
  }

  double cdf(double x) const {
    if (x <= lower_) return 0.0;
    if (x >= upper_) return 1.0;
    return std::min(1.0, integrate(lower_, x) / normalizer_);
  }

  /// min{x : H(x) >= u}. Safeguarded Newton on the unnormalized mass, with
  /// the density as derivative; falls back to bisection when a step leaves
  /// the bracket.
  double inverse(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("conditional_cdf_inverse needs 0 < u < 1");
    const double target = u * normalizer_;
    const double mass_tol = 1e-3 * kInverseTol * normalizer_;
    double lo = lower_;
    double hi = upper_;
    double mass_lo = 0.0;
    double mass_hi = normalizer_;
    double x = 0.5 * (lo + hi);
    double mass_x = integrate(lo, x);
    for (int iter = 0; iter < 200; ++iter) {
      if (mass_x >= target) {
        hi = x;
        mass_hi = mass_x;
      } else {
        lo = x;
        mass_lo = mass_x;
      }
      if (mass_hi - target <= mass_tol || hi - lo <= 1e-13 * std::max(1.0, std::fabs(hi))) break;
      const double f = density(x);
      double next = f > 0.0 ? x + (target - mass_x) / f : lo;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (next <= lo || next >= hi) break;
      // Integrate from whichever bracket end is nearer.
      if (next - lo <= hi - next)
        mass_x = mass_lo + integrate(lo, next);
      else
        mass_x = mass_hi - integrate(next, hi);
      x = next;
    }
    // Incremental masses may drift from a fresh evaluation by a few
    // quadrature tolerances; nudge right until the public cdf agrees.
    double tiny = 1e-14 * std::max(1.0, std::fabs(hi));
    for (int i = 0; i < 200; ++i) {
      const double h = cdf(hi);
      if (h >= u) break;
      const double f = density(hi) / normalizer_;
      hi += std::max(f > 0.0 ? 1.5 * (u - h) / f : 0.0, tiny);
      tiny *= 2.0;
    }
    return hi;
  }

 private:
  double integrate(double a, double b) const {
    return adaptive_simpson([this](double x) { return density(x); }, a, b, kQuadratureTol);
  }

  const PairwiseDensitySpec& spec_;
  std::span<const double> x1_;
  std::span<const double> x2_;
  double lower_;
  double upper_;
  double normalizer_ = 1.0;
};

inline double conditional_cdf(double x, std::span<const double> x1, std::span<const double> x2,
                              const PairwiseDensitySpec& spec) {
  return ConditionalLaw(spec, x1, x2).cdf(x);
}

inline double conditional_cdf_inverse(double u, std::span<const double> x1,
                                      std::span<const double> x2,
                                      const PairwiseDensitySpec& spec) {
  if (!(u > 0.0 && u < 1.0)) throw DomainError("conditional_cdf_inverse needs 0 < u < 1");
  return ConditionalLaw(spec, x1, x2).inverse(u);
}

/// Response map Y = psi(X0'', X', noise).
using ResponseFn = std::function<double(double h, std::span<const double> x_prime, double noise)>;

inline ResponseFn additive_response() {
  return [](double h, std::span<const double> x_prime, double noise) {
    return h + std::accumulate(x_prime.begin(), x_prime.end(), 0.0) + noise;
  };
}

/// Columns: X1 block (d1), X2 block (d2), X' block (d3), then y.
inline Dataset simulate_model3(std::size_t n, const PairwiseDensitySpec& spec,
                               const ResponseFn& psi, Rng& rng,
                               RejectionStats* stats = nullptr) {
  if (n == 0) throw DomainError("simulate_model3 needs n >= 1");
  const std::size_t d = spec.d1 + spec.d2 + spec.d3;
  std::vector<double> features(n * d);
  std::vector<double> response(n);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const PairwiseDraw draw = sample_pairwise_density(spec, rng, stats);
    double xi = unif(rng);
    while (xi <= 0.0) xi = unif(rng);
    const double h = conditional_cdf_inverse(xi, draw.x1, draw.x2, spec);
    double* row = features.data() + i * d;
    std::copy(draw.x1.begin(), draw.x1.end(), row);
    std::copy(draw.x2.begin(), draw.x2.end(), row + spec.d1);
    for (std::size_t j = 0; j < spec.d3; ++j) row[spec.d1 + spec.d2 + j] = normal(rng);
    const double noise = normal(rng);
    response[i] = psi(h, {row + spec.d1 + spec.d2, spec.d3}, noise);
  }
  return Dataset(d, std::move(features), std::move(response));
}

}  // namespace hiddenrf::sim

#endif  // HIDDENRF_SIM_HPP_
