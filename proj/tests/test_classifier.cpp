#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bayesmem/classifier.hpp"
#include "bayesmem/protocol.hpp"
#include "oracles.hpp"

using namespace bayesmem;

namespace {

ClassMemory hand_memory(ClassId id, std::uint64_t count, const std::vector<Gmm1D>& features) {
  ClassMemory m;
  m.class_id = id;
  m.count = count;
  for (const auto& g : features) {
    m.models.push_back(g);
    std::vector<SufficientStats> st;
    for (const auto& c : g.components) {
      const double w = c.weight * static_cast<double>(count);
      st.push_back({w, w * c.mu, w * (c.sigma * c.sigma + c.mu * c.mu)});
    }
    m.suff_stats.push_back(std::move(st));
  }
  return m;
}

Gmm1D gauss(double mu, double sigma) { return Gmm1D{{{1.0, mu, sigma}}}; }

double log_normal(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST(ClassLogLikelihood, Examples) {
  MemoryBank one(1, EstimatorConfig::gmm(1));
  one.add_class(hand_memory(0, 5, {gauss(0.2, 0.1)}));
  EXPECT_NEAR(class_log_likelihood(one, 0, std::vector<double>{0.35}), log_normal(0.35, 0.2, 0.1), 1e-12);

  MemoryBank two(2, EstimatorConfig::gmm(1));
  two.add_class(hand_memory(0, 5, {gauss(0.0, 1.0), gauss(1.0, 0.5)}));
  EXPECT_NEAR(class_log_likelihood(two, 0, std::vector<double>{0.5, 0.0}),
              log_normal(0.5, 0.0, 1.0) + log_normal(0.0, 1.0, 0.5), 1e-12);
  // at the means: sum of log(1/(sqrt(2 pi) sigma_k))
  EXPECT_NEAR(class_log_likelihood(two, 0, std::vector<double>{0.0, 1.0}),
              -std::log(std::sqrt(2.0 * std::numbers::pi)) - std::log(std::sqrt(2.0 * std::numbers::pi) * 0.5),
              1e-12);

  EXPECT_THROW(class_log_likelihood(two, 9, std::vector<double>{0.0, 1.0}), ValidationError);
  EXPECT_THROW(class_log_likelihood(two, 0, std::vector<double>{0.0}), ValidationError);
  EXPECT_THROW(class_log_likelihood(two, 0, std::vector<double>{0.0, NAN}), ValidationError);
}

TEST(LogPrior, CountRatio) {
  MemoryBank bank(1, EstimatorConfig::gmm(1));
  bank.add_class(hand_memory(0, 500, {gauss(0, 1)}));
  bank.add_class(hand_memory(1, 500, {gauss(0, 1)}));
  EXPECT_DOUBLE_EQ(log_prior(bank, 0), std::log(0.5));
  EXPECT_DOUBLE_EQ(log_prior(bank, 1), std::log(0.5));

  MemoryBank skew(1, EstimatorConfig::gmm(1));
  skew.add_class(hand_memory(0, 750, {gauss(0, 1)}));
  skew.add_class(hand_memory(1, 250, {gauss(0, 1)}));
  EXPECT_DOUBLE_EQ(log_prior(skew, 0), std::log(0.75));
  EXPECT_DOUBLE_EQ(log_prior(skew, 1), std::log(0.25));
  EXPECT_DOUBLE_EQ(log_prior(skew, 1, PriorMode::uniform), std::log(0.5));
  EXPECT_THROW(log_prior(skew, 2), ValidationError);
}

TEST(LogPrior, FollowsUpdatedCounts) {
  auto data = make_synthetic_dataset(random_synthetic_spec(2, 3, 1, 1.0, 0.1, 0.0, 1), 30, 1, 2);
  const auto parts = split_by_class(data.train);
  MemoryBank bank(3, EstimatorConfig::gmm(1));
  bank.add_class(form_memory(0, std::span(parts.at(0)).first(20), bank.estimator(), 0));
  bank.add_class(form_memory(1, std::span(parts.at(1)).first(20), bank.estimator(), 0));
  bank.update_class(0, std::span(parts.at(0)).subspan(20));
  EXPECT_DOUBLE_EQ(log_prior(bank, 0), std::log(30.0 / 50.0));
  EXPECT_DOUBLE_EQ(log_prior(bank, 1), std::log(20.0 / 50.0));
}

TEST(Predict, PriorDecidesBetweenIdenticalModels) {
  MemoryBank bank(2, EstimatorConfig::gmm(1));
  bank.add_class(hand_memory(0, 250, {gauss(0.1, 0.2), gauss(0.3, 0.1)}));
  bank.add_class(hand_memory(1, 750, {gauss(0.1, 0.2), gauss(0.3, 0.1)}));
  const std::vector<double> z{0.7, -0.2};
  const auto s = predict(bank, z);
  EXPECT_EQ(s.predicted, 1u);
  EXPECT_NEAR(s.log_joint[1] - s.log_joint[0], std::log(3.0), 1e-12);
  // uniform prior makes them tie; the smallest id wins
  EXPECT_EQ(predict(bank, z, {PriorMode::uniform, false}).predicted, 0u);
}

TEST(Predict, SingleClassAndEmptyBank) {
  MemoryBank bank(1, EstimatorConfig::gmm(1));
  EXPECT_THROW(predict(bank, std::vector<double>{0.0}), ValidationError);
  bank.add_class(hand_memory(4, 3, {gauss(0, 0.01)}));
  for (double x : {-5.0, 0.0, 3.0}) EXPECT_EQ(predict(bank, std::vector<double>{x}).predicted, 4u);
}

TEST(Predict, ClampsExtremeLogDensities) {
  MemoryBank bank(2, EstimatorConfig::gmm(1));
  bank.add_class(hand_memory(0, 1, {gauss(0, 1e-4), gauss(0, 1e-4)}));
  bank.add_class(hand_memory(1, 1, {gauss(1, 1e-4), gauss(1, 1e-4)}));
  const auto s = predict(bank, std::vector<double>{0.0, 0.5});
  EXPECT_EQ(s.clamped_terms, 3u);
  for (double v : s.log_joint) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(s.predicted, 0u);
}

TEST(Posterior, SoftmaxExamples) {
  MemoryBank same(1, EstimatorConfig::gmm(1));
  for (ClassId c : {0u, 1u, 2u}) same.add_class(hand_memory(c, 10, {gauss(0, 1)}));
  for (double p : posterior(same, std::vector<double>{0.4})) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);

  const std::vector<double> lj{std::log(3.0) - 2.0, -2.0};
  const auto p = normalize_log_joint(lj);
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
}

TEST(Posterior, MatchesDirectEvaluation) {
  detail::Rng rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    // K >= 2: a normalized 1-D vector is always +-1, collapsing every density to the floor
    const std::size_t M = 1 + rng.below(3), K = 2 + rng.below(3);
    const int S = 1 + static_cast<int>(rng.below(2));
    const bool kde = trial % 3 == 2;
    auto data = make_synthetic_dataset(random_synthetic_spec(M, K, S, 0.6, 0.15, 0.2, trial), 25, 20, trial);
    MemoryBank bank(K, kde ? EstimatorConfig::kde() : EstimatorConfig::gmm(S));
    for (const auto& [c, recs] : split_by_class(data.train))
      bank.add_class(form_memory(c, std::span(recs).first(10 + rng.below(15)), bank.estimator(), trial));
    for (int i = 0; i < 200; ++i) {
      // held-out sample plus jitter, so every class density stays representable
      auto z = data.test.records[rng.below(data.test.size())].values;
      for (double& v : z) v += rng.normal(0.0, 0.02);
      const auto s = predict(bank, z, {PriorMode::count_ratio, true});
      const auto direct = oracle::direct_posterior(bank, z);
      std::size_t best = 0;
      for (std::size_t m = 1; m < direct.size(); ++m)
        if (direct[m] > direct[best]) best = m;
      double sum = 0.0;
      for (std::size_t m = 0; m < direct.size(); ++m) {
        EXPECT_NEAR((*s.posterior)[m], static_cast<double>(direct[m]), 1e-9);
        sum += (*s.posterior)[m];
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_EQ(s.predicted, s.classes[best]);
    }
  }
}

TEST(Predict, AddingClassKeepsExistingScores) {
  auto data = make_synthetic_dataset(random_synthetic_spec(3, 5, 2, 1.0, 0.1, 0.1, 3), 20, 5, 3);
  const auto parts = split_by_class(data.train);
  MemoryBank bank(5, EstimatorConfig::gmm(2));
  bank.add_class(form_memory(0, parts.at(0), bank.estimator(), 0));
  bank.add_class(form_memory(1, parts.at(1), bank.estimator(), 0));
  std::vector<double> before;
  for (const auto& r : data.test.records) before.push_back(class_log_likelihood(bank, 0, r.values));
  bank.add_class(form_memory(2, parts.at(2), bank.estimator(), 0));
  for (std::size_t i = 0; i < data.test.size(); ++i)
    EXPECT_EQ(class_log_likelihood(bank, 0, data.test.records[i].values), before[i]);
}

TEST(PredictNcm, Examples) {
  const ClassMeans means{{2, {0.0, 1.0}}, {5, {1.0, 0.0}}};
  EXPECT_EQ(predict_ncm(means, std::vector<double>{1.0, 0.0}), 5u);
  EXPECT_EQ(predict_ncm(means, std::vector<double>{0.5, 0.5}), 2u);
  EXPECT_THROW(predict_ncm(means, std::vector<double>{0.5}), ValidationError);
  EXPECT_THROW(predict_ncm(ClassMeans{}, std::vector<double>{0.5}), ValidationError);
}

TEST(PredictNcm, AgreesWithBayesOnSeparatedClasses) {
  SyntheticSpec spec;
  spec.dim = 4;
  spec.classes = {std::vector<Gmm1D>(4, gauss(2.0, 0.05)), {gauss(-2, 0.05), gauss(2, 0.05), gauss(-2, 0.05), gauss(2, 0.05)}};
  const auto data = make_synthetic_dataset(spec, 50, 100, 8);
  MemoryBank bank(4, EstimatorConfig::gmm(2));
  for (const auto& [c, recs] : split_by_class(data.train)) bank.add_class(form_memory(c, recs, bank.estimator(), 0));
  const auto means = class_means(data.train);
  const auto bank_means = class_means(bank);
  for (const auto& r : data.test.records) {
    EXPECT_EQ(predict_ncm(means, r.values), predict(bank, r.values).predicted);
    EXPECT_EQ(predict_ncm(bank_means, r.values), r.label);
  }
}
