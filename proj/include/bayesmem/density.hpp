#pragma once

// One-dimensional density estimators used per (class, feature): Gaussian
// mixtures fitted by EM, and Gaussian-kernel density estimates.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "bayesmem/detail/random.hpp"
#include "bayesmem/error.hpp"

namespace bayesmem {

inline constexpr double kDefaultSigmaFloor = 1e-4;
inline constexpr double kDefaultBandwidthFloor = 1e-4;

struct GaussianComponent {
  double weight = 1.0;
  double mu = 0.0;
  double sigma = 1.0;

  friend bool operator==(const GaussianComponent&, const GaussianComponent&) = default;
};

/// Mixture with components kept sorted by ascending mean.
struct Gmm1D {
  std::vector<GaussianComponent> components;

  friend bool operator==(const Gmm1D&, const Gmm1D&) = default;
};

struct Kde1D {
  std::vector<double> centers;
  double bandwidth = 1.0;

  friend bool operator==(const Kde1D&, const Kde1D&) = default;
};

using DensityModel = std::variant<Gmm1D, Kde1D>;

struct EmConfig {
  double tolerance = 1e-6;  ///< stop once the log-likelihood gain drops below this
  int max_iterations = 200;
  double sigma_floor = kDefaultSigmaFloor;

  friend bool operator==(const EmConfig&, const EmConfig&) = default;
};

/// Per-iteration record of an EM run, for diagnostics and monotonicity checks.
struct EmTrace {
  std::vector<double> log_likelihood;  ///< training log-likelihood evaluated before each M-step
  int rescues = 0;                     ///< accepted dead-component reinitializations
};

namespace detail {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))

inline double normal_log_pdf(double x, double mu, double sigma) noexcept {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - kLogSqrt2Pi;
}

/// log(sum(exp(terms))); -inf when every term is -inf.
inline double log_sum_exp(std::span<const double> terms) noexcept {
  double m = -std::numeric_limits<double>::infinity();
  for (double t : terms) m = std::max(m, t);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

inline double population_std(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / n);
}

/// Linear-interpolation quantile of sorted data at probability q.
inline double sorted_quantile(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline void canonicalize(Gmm1D& g) {
  std::sort(g.components.begin(), g.components.end(), [](const auto& a, const auto& b) {
    return std::tie(a.mu, a.sigma, a.weight) < std::tie(b.mu, b.sigma, b.weight);
  });
}

}  // namespace detail

/// Log-density of a mixture, evaluated by log-sum-exp. Finite for finite x as
/// long as some component has positive weight.
inline double gmm_log_pdf(const Gmm1D& model, double x) {
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& c : model.components)
    if (c.weight > 0.0) m = std::max(m, std::log(c.weight) + detail::normal_log_pdf(x, c.mu, c.sigma));
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (const auto& c : model.components)
    if (c.weight > 0.0) s += std::exp(std::log(c.weight) + detail::normal_log_pdf(x, c.mu, c.sigma) - m);
  return m + std::log(s);
}

/// Number of components actually fitted: no more than one per two samples.
inline int effective_components(std::size_t n_samples, int s_requested) {
  const int cap = std::max(1, static_cast<int>(n_samples / 2));
  return std::min(s_requested, cap);
}

namespace detail {

struct EmState {
  std::vector<double> weight, mu, sigma;
};

/// E-step. Fills resp (n x S, row-major) and per-sample log-likelihoods;
/// returns the total.
inline double em_expectation(std::span<const double> xs, const EmState& st, std::vector<double>& resp,
                             std::vector<double>& sample_ll) {
  const std::size_t S = st.mu.size();
  resp.assign(xs.size() * S, 0.0);
  sample_ll.assign(xs.size(), 0.0);
  std::vector<double> terms(S);
  std::vector<double> log_w(S);
  for (std::size_t s = 0; s < S; ++s)
    log_w[s] = st.weight[s] > 0.0 ? std::log(st.weight[s]) : -std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t s = 0; s < S; ++s) terms[s] = log_w[s] + normal_log_pdf(xs[i], st.mu[s], st.sigma[s]);
    const double lse = log_sum_exp(terms);
    sample_ll[i] = lse;
    total += lse;
    for (std::size_t s = 0; s < S; ++s) resp[i * S + s] = std::exp(terms[s] - lse);
  }
  return total;
}

/// M-step with sigma flooring; a component with no responsibility keeps its
/// location and scale and gets zero weight. Returns per-component mass.
inline std::vector<double> em_maximization(std::span<const double> xs, const std::vector<double>& resp,
                                           EmState& st, double sigma_floor) {
  const std::size_t S = st.mu.size();
  const double n = static_cast<double>(xs.size());
  std::vector<double> mass(S, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    double r_sum = 0.0, rx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      r_sum += resp[i * S + s];
      rx += resp[i * S + s] * xs[i];
    }
    mass[s] = r_sum;
    st.weight[s] = r_sum / n;
    if (r_sum <= 0.0) continue;
    const double mu = rx / r_sum;
    double rss = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) rss += resp[i * S + s] * (xs[i] - mu) * (xs[i] - mu);
    st.mu[s] = mu;
    st.sigma[s] = std::max(std::sqrt(rss / r_sum), sigma_floor);
  }
  const double wsum = std::accumulate(st.weight.begin(), st.weight.end(), 0.0);
  for (double& w : st.weight) w /= wsum;
  return mass;
}

inline double em_log_likelihood(std::span<const double> xs, const EmState& st) {
  std::vector<double> resp, ll;
  return em_expectation(xs, st, resp, ll);
}

}  // namespace detail

/// Fits a 1-D Gaussian mixture by EM.
///
/// The component count is reduced to floor(N/2) (at least 1) for small
/// samples. Initialization is deterministic: component s starts at the
/// (s+0.5)/S sample quantile with the overall sample std and uniform weights.
/// EM stops when the log-likelihood gain is below config.tolerance or after
/// config.max_iterations. A component whose responsibility mass drops below
/// 1e-8*N is moved to the worst-explained sample, but only when that does not
/// lower the likelihood, which keeps the trace non-decreasing. `seed` breaks
/// ties between equally badly explained samples.
inline Gmm1D fit_gmm(std::span<const double> samples, int s_requested, std::uint64_t seed,
                     const EmConfig& config = {}, EmTrace* trace = nullptr) {
  if (samples.empty()) throw ValidationError("fit_gmm: empty sample list");
  if (s_requested < 1) throw ValidationError("fit_gmm: component count must be >= 1");
  for (double x : samples)
    if (!std::isfinite(x)) throw ValidationError("fit_gmm: non-finite sample");

  const std::size_t S = static_cast<std::size_t>(effective_components(samples.size(), s_requested));
  const double n = static_cast<double>(samples.size());

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double init_sigma = std::max(detail::population_std(samples), config.sigma_floor);

  detail::EmState st;
  for (std::size_t s = 0; s < S; ++s) {
    st.weight.push_back(1.0 / static_cast<double>(S));
    st.mu.push_back(detail::sorted_quantile(sorted, (static_cast<double>(s) + 0.5) / static_cast<double>(S)));
    st.sigma.push_back(init_sigma);
  }

  detail::Rng tie_rng(seed);
  std::vector<double> resp, sample_ll;
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < config.max_iterations; ++it) {
    const double ll = detail::em_expectation(samples, st, resp, sample_ll);
    if (trace) trace->log_likelihood.push_back(ll);
    if (it > 0 && ll - prev_ll < config.tolerance) break;
    prev_ll = ll;

    const auto mass = detail::em_maximization(samples, resp, st, config.sigma_floor);
    for (std::size_t s = 0; s < S; ++s) {
      if (mass[s] >= 1e-8 * n) continue;
      // worst-explained sample under the post-M-step parameters
      std::vector<double> r2, ll2;
      const double base_ll = detail::em_expectation(samples, st, r2, ll2);
      const double worst = *std::min_element(ll2.begin(), ll2.end());
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < ll2.size(); ++i)
        if (ll2[i] == worst) candidates.push_back(i);
      const std::size_t pick = candidates[static_cast<std::size_t>(tie_rng.below(candidates.size()))];

      detail::EmState trial = st;
      trial.mu[s] = samples[pick];
      trial.sigma[s] = init_sigma;
      trial.weight[s] = 1.0 / static_cast<double>(S);
      const double wsum = std::accumulate(trial.weight.begin(), trial.weight.end(), 0.0);
      for (double& w : trial.weight) w /= wsum;
      if (detail::em_log_likelihood(samples, trial) >= base_ll) {
        st = std::move(trial);
        if (trace) ++trace->rescues;
      }
    }
  }

  Gmm1D out;
  for (std::size_t s = 0; s < S; ++s) out.components.push_back({st.weight[s], st.mu[s], st.sigma[s]});
  detail::canonicalize(out);
  return out;
}

/// Silverman's rule of thumb, 1.06 * std * N^(-1/5), using the population std.
inline double silverman_bandwidth(std::span<const double> samples) {
  if (samples.empty()) throw ValidationError("silverman_bandwidth: empty sample list");
  return 1.06 * detail::population_std(samples) * std::pow(static_cast<double>(samples.size()), -0.2);
}

/// Stores every sample as a kernel center. Without an explicit bandwidth,
/// Silverman's rule is used; either way the result is floored.
inline Kde1D fit_kde(std::span<const double> samples, std::optional<double> bandwidth = std::nullopt,
                     double bandwidth_floor = kDefaultBandwidthFloor) {
  if (samples.empty()) throw ValidationError("fit_kde: empty sample list");
  for (double x : samples)
    if (!std::isfinite(x)) throw ValidationError("fit_kde: non-finite sample");
  if (bandwidth && !(*bandwidth > 0.0)) throw ValidationError("fit_kde: bandwidth must be positive");
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples);
  return Kde1D{std::vector<double>(samples.begin(), samples.end()), std::max(h, bandwidth_floor)};
}

inline double kde_log_pdf(const Kde1D& model, double x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double c : model.centers) m = std::max(m, detail::normal_log_pdf(x, c, model.bandwidth));
  double s = 0.0;
  for (double c : model.centers) s += std::exp(detail::normal_log_pdf(x, c, model.bandwidth) - m);
  return m + std::log(s) - std::log(static_cast<double>(model.centers.size()));
}

inline double log_pdf(const DensityModel& model, double x) {
  return std::visit(
      [x](const auto& m) -> double {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, Gmm1D>)
          return gmm_log_pdf(m, x);
        else
          return kde_log_pdf(m, x);
      },
      model);
}

}  // namespace bayesmem
