#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bayesmem/density.hpp"
#include "oracles.hpp"

using namespace bayesmem;

namespace {

const double kLogPeak = -0.5 * std::log(2.0 * std::numbers::pi);  // log(1/sqrt(2*pi)) ~ -0.91894

std::vector<double> bimodal_samples(std::size_t n, double sep, double sd, std::uint64_t seed) {
  detail::Rng rng(seed);
  std::vector<double> xs;
  for (std::size_t i = 0; i < n; ++i) xs.push_back(rng.normal(i % 2 ? sep : -sep, sd));
  return xs;
}

}  // namespace

TEST(GmmLogPdf, Examples) {
  EXPECT_NEAR(gmm_log_pdf(Gmm1D{{{1.0, 0.0, 1.0}}}, 0.0), kLogPeak, 1e-12);
  EXPECT_NEAR(kLogPeak, -0.91894, 1e-5);
  EXPECT_NEAR(gmm_log_pdf(Gmm1D{{{0.5, 0.0, 1.0}, {0.5, 0.0, 1.0}}}, 0.0), kLogPeak, 1e-12);
  // 0.5*phi(2) + 0.5*phi(2) = exp(-2)/sqrt(2 pi)
  EXPECT_NEAR(gmm_log_pdf(Gmm1D{{{0.5, -2.0, 1.0}, {0.5, 2.0, 1.0}}}, 0.0), -2.0 + kLogPeak, 1e-12);
}

TEST(GmmLogPdf, FiniteFarFromComponents) {
  const Gmm1D g{{{0.5, 0.0, kDefaultSigmaFloor}, {0.5, 0.1, kDefaultSigmaFloor}}};
  const double v = gmm_log_pdf(g, 1.0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, -1e6);
}

TEST(FitGmm, ConstantSamplesCollapseToFloor) {
  const std::vector<double> xs(20, 0.5);
  const auto g = fit_gmm(xs, 2, 1);
  ASSERT_EQ(g.components.size(), 2u);
  for (const auto& c : g.components) {
    EXPECT_EQ(c.mu, 0.5);
    EXPECT_EQ(c.sigma, kDefaultSigmaFloor);
  }
  const Gmm1D single{{{1.0, 0.5, kDefaultSigmaFloor}}};
  for (double x : {0.5, 0.50005, 0.4999, 0.6})
    EXPECT_NEAR(gmm_log_pdf(g, x), gmm_log_pdf(single, x), 1e-9 * std::max(1.0, std::abs(gmm_log_pdf(single, x))));
}

TEST(FitGmm, RecoversWellSeparatedModes) {
  const auto xs = bimodal_samples(200, 2.0, 0.1, 2024);
  const auto g = fit_gmm(xs, 2, 0);
  ASSERT_EQ(g.components.size(), 2u);
  EXPECT_NEAR(g.components[0].mu, -2.0, 0.05);
  EXPECT_NEAR(g.components[1].mu, 2.0, 0.05);
  EXPECT_NEAR(g.components[0].weight, 0.5, 0.05);
  EXPECT_NEAR(g.components[1].weight, 0.5, 0.05);
  EXPECT_NEAR(g.components[0].sigma, 0.1, 0.03);
}

TEST(FitGmm, SingleComponentMatchesClosedForm) {
  detail::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> xs;
    const std::size_t n = 1 + rng.below(80);
    for (std::size_t i = 0; i < n; ++i) xs.push_back(rng.normal(rng.uniform(-1, 1), rng.uniform(0.01, 0.5)));
    const auto g = fit_gmm(xs, 1, trial);
    const auto [mean, sd] = oracle::gaussian_mle(xs, kDefaultSigmaFloor);
    ASSERT_EQ(g.components.size(), 1u);
    EXPECT_NEAR(g.components[0].mu, mean, 1e-9);
    EXPECT_NEAR(g.components[0].sigma, sd, 1e-9);
    EXPECT_EQ(g.components[0].weight, 1.0);
  }
}

TEST(FitGmm, FewShotComponentReduction) {
  EXPECT_EQ(effective_components(1, 2), 1);
  EXPECT_EQ(effective_components(3, 2), 1);
  EXPECT_EQ(effective_components(4, 2), 2);
  EXPECT_EQ(effective_components(10, 5), 5);
  EXPECT_EQ(effective_components(10, 6), 5);
  const auto g = fit_gmm(std::vector<double>{0.3}, 2, 0);
  ASSERT_EQ(g.components.size(), 1u);
  EXPECT_EQ(g.components[0].mu, 0.3);
  EXPECT_EQ(g.components[0].sigma, kDefaultSigmaFloor);
}

TEST(FitGmm, Errors) {
  EXPECT_THROW(fit_gmm(std::vector<double>{}, 2, 0), ValidationError);
  EXPECT_THROW(fit_gmm(std::vector<double>{1.0}, 0, 0), ValidationError);
  EXPECT_THROW(fit_gmm(std::vector<double>{1.0, NAN}, 1, 0), ValidationError);
}

TEST(FitGmm, LogLikelihoodNeverDecreases) {
  detail::Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> xs;
    const std::size_t n = 2 + rng.below(120);
    const int modes = 1 + static_cast<int>(rng.below(4));
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      if (u < 0.2)
        xs.push_back(0.0);  // ReLU-like spike
      else
        xs.push_back(rng.normal(static_cast<double>(rng.below(modes)) * 0.3, rng.uniform(0.001, 0.2)));
    }
    EmTrace trace;
    fit_gmm(xs, 1 + static_cast<int>(rng.below(5)), trial, {}, &trace);
    for (std::size_t i = 1; i < trace.log_likelihood.size(); ++i)
      ASSERT_GE(trace.log_likelihood[i], trace.log_likelihood[i - 1] - 1e-9) << "trial " << trial << " iter " << i;
  }
}

TEST(FitGmm, CanonicalAndDeterministic) {
  const auto xs = bimodal_samples(150, 0.3, 0.1, 11);
  const auto a = fit_gmm(xs, 3, 17);
  const auto b = fit_gmm(xs, 3, 17);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.components.begin(), a.components.end(),
                             [](const auto& l, const auto& r) { return l.mu < r.mu; }));
  double w = 0.0;
  for (const auto& c : a.components) w += c.weight;
  EXPECT_NEAR(w, 1.0, 1e-9);
}

TEST(FitGmm, ShiftEquivariant) {
  const auto xs = bimodal_samples(120, 0.5, 0.1, 3);
  std::vector<double> shifted;
  for (double x : xs) shifted.push_back(x + 0.25);
  const auto a = fit_gmm(xs, 2, 0);
  const auto b = fit_gmm(shifted, 2, 0);
  ASSERT_EQ(a.components.size(), b.components.size());
  for (std::size_t s = 0; s < a.components.size(); ++s) {
    EXPECT_NEAR(b.components[s].mu, a.components[s].mu + 0.25, 1e-6);
    EXPECT_NEAR(b.components[s].sigma, a.components[s].sigma, 1e-6);
  }
}

TEST(FitKde, Examples) {
  const auto one = fit_kde(std::vector<double>{0.0}, 1.0);
  EXPECT_EQ(one.centers, std::vector<double>{0.0});
  EXPECT_EQ(one.bandwidth, 1.0);

  EXPECT_EQ(fit_kde(std::vector<double>(10, 0.2)).bandwidth, kDefaultBandwidthFloor);

  // 100 samples with population std exactly 1: +/-1 alternating
  std::vector<double> xs;
  for (int i = 0; i < 100; ++i) xs.push_back(i % 2 ? 1.0 : -1.0);
  const double expected = 1.06 * std::pow(100.0, -0.2);  // 0.42199...
  EXPECT_NEAR(fit_kde(xs).bandwidth, expected, 1e-12);
  EXPECT_NEAR(expected, 0.422, 5e-4);

  EXPECT_THROW(fit_kde(std::vector<double>{}), ValidationError);
  EXPECT_THROW(fit_kde(std::vector<double>{1.0}, -1.0), ValidationError);
}

TEST(KdeLogPdf, Examples) {
  EXPECT_NEAR(kde_log_pdf(Kde1D{{0.0}, 1.0}, 0.0), kLogPeak, 1e-12);
  EXPECT_NEAR(kde_log_pdf(Kde1D{{-1.0, 1.0}, 1.0}, 0.0), -0.5 + kLogPeak, 1e-12);
  const double far = kde_log_pdf(Kde1D{{0.0, 0.1}, 0.01}, 50.0 * 0.01 + 0.1);
  EXPECT_TRUE(std::isfinite(far));
  EXPECT_LT(far, -1000.0);
}

TEST(LogPdf, Dispatch) {
  const DensityModel g = Gmm1D{{{1.0, 0.0, 1.0}}};
  const DensityModel k = Kde1D{{0.0}, 1.0};
  EXPECT_EQ(log_pdf(g, 0.3), gmm_log_pdf(std::get<Gmm1D>(g), 0.3));
  EXPECT_EQ(log_pdf(k, 0.3), kde_log_pdf(std::get<Kde1D>(k), 0.3));
}

TEST(Density, QuadratureNormalization) {
  detail::Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Gmm1D g;
    const int S = 1 + static_cast<int>(rng.below(4));
    double wsum = 0.0;
    for (int s = 0; s < S; ++s) {
      g.components.push_back({rng.uniform(0.1, 1.0), rng.uniform(-1, 1), rng.uniform(0.02, 0.5)});
      wsum += g.components.back().weight;
    }
    for (auto& c : g.components) c.weight /= wsum;
    double lo = 1e9, hi = -1e9, smin = 1e9;
    for (const auto& c : g.components) {
      lo = std::min(lo, c.mu - 10 * c.sigma);
      hi = std::max(hi, c.mu + 10 * c.sigma);
      smin = std::min(smin, c.sigma);
    }
    const auto n = static_cast<std::size_t>((hi - lo) / smin * 50);
    EXPECT_NEAR(oracle::simpson([&](double x) { return std::exp(gmm_log_pdf(g, x)); }, lo, hi, n), 1.0, 1e-3);

    std::vector<double> xs;
    for (int i = 0; i < 30; ++i) xs.push_back(rng.normal(0.0, 0.3));
    const auto kde = fit_kde(xs);
    const double klo = *std::min_element(xs.begin(), xs.end()) - 10 * kde.bandwidth;
    const double khi = *std::max_element(xs.begin(), xs.end()) + 10 * kde.bandwidth;
    EXPECT_NEAR(oracle::simpson([&](double x) { return std::exp(kde_log_pdf(kde, x)); }, klo, khi,
                                static_cast<std::size_t>((khi - klo) / kde.bandwidth * 50)),
                1.0, 1e-3);
  }
}
