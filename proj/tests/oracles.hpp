#pragma once

// Independent reference computations for tests. Nothing here calls the
// library's density, EM, or classifier code: densities are evaluated
// directly in long double without log-sum-exp.

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include "bayesmem/memory.hpp"

namespace oracle {

inline long double normal_pdf(long double x, long double mu, long double sigma) {
  const long double z = (x - mu) / sigma;
  return std::exp(-0.5L * z * z) / (sigma * std::sqrt(2.0L * std::numbers::pi_v<long double>));
}

/// Closed-form single-Gaussian MLE with the std floored.
inline std::pair<double, double> gaussian_mle(const std::vector<double>& xs, double sigma_floor) {
  long double mean = 0.0L;
  for (double x : xs) mean += x;
  mean /= static_cast<long double>(xs.size());
  long double ss = 0.0L;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const long double sd = std::sqrt(ss / static_cast<long double>(xs.size()));
  return {static_cast<double>(mean), static_cast<double>(std::max<long double>(sd, sigma_floor))};
}

inline long double density(const bayesmem::DensityModel& model, long double x) {
  if (const auto* g = std::get_if<bayesmem::Gmm1D>(&model)) {
    long double p = 0.0L;
    for (const auto& c : g->components) p += c.weight * normal_pdf(x, c.mu, c.sigma);
    return p;
  }
  const auto& kde = std::get<bayesmem::Kde1D>(model);
  long double p = 0.0L;
  for (double c : kde.centers) p += normal_pdf(x, c, kde.bandwidth);
  return p / static_cast<long double>(kde.centers.size());
}

/// Bayes rule with the explicit evidence denominator:
///   p(c|z) = prod_k p(z_k|c) p(c) / sum_m prod_k p(z_k|m) p(m).
/// Returns posteriors in ascending class-id order.
inline std::vector<long double> direct_posterior(const bayesmem::MemoryBank& bank, const std::vector<double>& z) {
  std::vector<long double> joint;
  long double total_n = 0.0L;
  for (const auto& [id, mem] : bank.classes()) total_n += static_cast<long double>(mem.count);
  for (const auto& [id, mem] : bank.classes()) {
    long double p = static_cast<long double>(mem.count) / total_n;
    for (std::size_t k = 0; k < z.size(); ++k) p *= density(mem.models[k], z[k]);
    joint.push_back(p);
  }
  long double evidence = 0.0L;
  for (long double p : joint) evidence += p;
  for (long double& p : joint) p /= evidence;
  return joint;
}

/// Composite Simpson's rule with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n) {
  if (n % 2) ++n;
  const double h = (b - a) / static_cast<double>(n);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) s += f(a + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace oracle
