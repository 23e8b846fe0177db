#pragma once

// Continual-learning evaluation protocols and the mean-class-recall metric.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bayesmem/classifier.hpp"
#include "bayesmem/density.hpp"
#include "bayesmem/detail/parallel.hpp"
#include "bayesmem/detail/random.hpp"
#include "bayesmem/error.hpp"
#include "bayesmem/feature_store.hpp"
#include "bayesmem/memory.hpp"

namespace bayesmem {

enum class ProtocolMode { class_incremental, data_incremental, few_shot };

struct FeatureSubsampleConfig {
  std::size_t count = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const FeatureSubsampleConfig&, const FeatureSubsampleConfig&) = default;
};

struct ProtocolConfig {
  ProtocolMode mode = ProtocolMode::class_incremental;
  std::size_t classes_per_round = 1;             ///< class_incremental, few_shot
  std::optional<std::size_t> shots_per_class;    ///< few_shot
  std::size_t samples_per_round_per_class = 1;   ///< data_incremental
  std::optional<std::size_t> rounds;             ///< data_incremental; default uses every full round available
  std::vector<ClassId> class_order;              ///< empty: ascending ids of the training set
  std::uint64_t seed = 0;
  EstimatorConfig estimator;
  std::optional<FeatureSubsampleConfig> feature_subsample;
  PriorMode prior = PriorMode::count_ratio;
  bool refit_from_cache = false;  ///< data_incremental: refit from retained features instead of incremental EM
  unsigned threads = 0;           ///< 0: BAYESMEM_THREADS or hardware concurrency

  friend bool operator==(const ProtocolConfig&, const ProtocolConfig&) = default;
};

struct RoundReport {
  std::size_t round = 0;  ///< 1-based
  std::vector<ClassId> classes;  ///< classes learned so far, ascending
  std::vector<double> recalls;   ///< aligned with classes
  double mcr = 0.0;
  double accuracy = 0.0;
  std::size_t test_samples = 0;
  std::size_t clamped_predictions = 0;
  double duration_s = 0.0;
};

struct EvalReport {
  ProtocolConfig config;  ///< resolved config (class order filled in)
  std::vector<RoundReport> rounds;
  MemoryFootprint footprint;
  MemoryBank final_bank;
};

/// Called after every round with the bank as it stands at the end of that round.
using RoundObserver = std::function<void(const RoundReport&, const MemoryBank&)>;

// ---------------------------------------------------------------------------
// Metric

struct RecallResult {
  double mcr = 0.0;
  std::vector<ClassId> classes;  ///< ascending
  std::vector<double> recalls;
  double accuracy = 0.0;
};

/// Unweighted mean over in-scope classes of per-class recall.
inline RecallResult mean_class_recall(std::span<const ClassId> predictions, std::span<const ClassId> labels,
                                      const std::set<ClassId>& classes_in_scope) {
  if (predictions.size() != labels.size())
    throw ValidationError("mean_class_recall: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  if (classes_in_scope.empty()) throw ValidationError("mean_class_recall: no classes in scope");
  std::map<ClassId, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (ClassId c : classes_in_scope) tally[c] = {0, 0};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = tally.find(labels[i]);
    if (it == tally.end())
      throw ValidationError("mean_class_recall: label " + std::to_string(labels[i]) + " is not in scope");
    ++it->second.second;
    if (predictions[i] == labels[i]) {
      ++it->second.first;
      ++correct;
    }
  }
  RecallResult out;
  double sum = 0.0;
  for (const auto& [c, t] : tally) {
    if (t.second == 0)
      throw ValidationError("mean_class_recall: class " + std::to_string(c) + " has no test samples");
    const double recall = static_cast<double>(t.first) / static_cast<double>(t.second);
    out.classes.push_back(c);
    out.recalls.push_back(recall);
    sum += recall;
  }
  out.mcr = sum / static_cast<double>(out.classes.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  return out;
}

// ---------------------------------------------------------------------------
// Runners

namespace detail {

// tags for derive_seed
inline constexpr std::uint64_t kFewShotTag = 0x66657773686f74ULL;
inline constexpr std::uint64_t kStreamTag = 0x73747265616dULL;
inline constexpr std::uint64_t kOrderTag = 0x6f72646572ULL;

struct PreparedData {
  FeatureDataset train, test;
};

inline PreparedData prepare(const FeatureDataset& train, const FeatureDataset& test, const ProtocolConfig& config) {
  if (train.empty()) throw ValidationError("training set is empty");
  if (test.empty()) throw ValidationError("test set is empty");
  if (train.dim != test.dim)
    throw ValidationError("train K=" + std::to_string(train.dim) + " differs from test K=" + std::to_string(test.dim));
  if (!train.normalized || !test.normalized) throw ValidationError("protocol inputs must be L2-normalized");
  config.estimator.validate();
  if (!config.feature_subsample) return {train, test};
  const auto sub = subsample_features(train, config.feature_subsample->count, config.feature_subsample->seed);
  return {l2_normalize(sub.dataset), l2_normalize(project_features(test, sub.indices))};
}

inline std::vector<ClassId> resolve_class_order(const std::map<ClassId, std::vector<FeatureRecord>>& by_class,
                                                const std::vector<ClassId>& requested) {
  std::vector<ClassId> all;
  for (const auto& [id, _] : by_class) all.push_back(id);
  if (requested.empty()) return all;
  std::vector<ClassId> sorted = requested;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != all) throw ValidationError("class_order is not a permutation of the training classes");
  return requested;
}

/// Keeps `shots` records chosen by a per-class seed, in their original order.
inline std::vector<FeatureRecord> take_shots(const std::vector<FeatureRecord>& records, std::size_t shots,
                                             std::uint64_t seed, ClassId class_id) {
  if (shots >= records.size()) return records;
  Rng rng(derive_seed(seed, {kFewShotTag, class_id}));
  auto idx = sample_indices(records.size(), shots, rng);
  std::sort(idx.begin(), idx.end());
  std::vector<FeatureRecord> out;
  out.reserve(shots);
  for (std::size_t i : idx) out.push_back(records[i]);
  return out;
}

inline RoundReport evaluate_round(const MemoryBank& bank, const FeatureDataset& test, const ProtocolConfig& config,
                                  std::size_t round) {
  const auto ids = bank.class_ids();
  const std::set<ClassId> scope(ids.begin(), ids.end());
  std::vector<const FeatureRecord*> pool;
  for (const auto& r : test.records)
    if (scope.count(r.label)) pool.push_back(&r);

  std::vector<ClassId> predictions(pool.size()), labels(pool.size());
  std::vector<std::size_t> clamped(pool.size(), 0);
  parallel_for(pool.size(), config.threads, [&](std::size_t i) {
    const auto scores = predict(bank, pool[i]->values, {config.prior, false});
    predictions[i] = scores.predicted;
    labels[i] = pool[i]->label;
    clamped[i] = scores.clamped_terms > 0 ? 1 : 0;
  });
  const auto recall = mean_class_recall(predictions, labels, scope);

  RoundReport rep;
  rep.round = round;
  rep.classes = recall.classes;
  rep.recalls = recall.recalls;
  rep.mcr = recall.mcr;
  rep.accuracy = recall.accuracy;
  rep.test_samples = pool.size();
  rep.clamped_predictions = std::accumulate(clamped.begin(), clamped.end(), std::size_t{0});
  return rep;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Class-incremental (and few-shot) protocol: each round learns the next
/// `classes_per_round` classes of the class order, then evaluates MCR on the
/// test samples of every class learned so far. In few-shot mode each new
/// class contributes at most `shots_per_class` records, chosen with a seed
/// derived from (run seed, class id).
inline EvalReport run_class_incremental(const FeatureDataset& train, const FeatureDataset& test,
                                        const ProtocolConfig& config, const RoundObserver& observer = {}) {
  if (config.mode == ProtocolMode::data_incremental)
    throw ValidationError("run_class_incremental called with a data_incremental config");
  if (config.classes_per_round < 1) throw ValidationError("classes_per_round must be >= 1");
  if (config.mode == ProtocolMode::few_shot && (!config.shots_per_class || *config.shots_per_class < 1))
    throw ValidationError("few_shot mode requires shots_per_class >= 1");

  const auto data = detail::prepare(train, test, config);
  const auto by_class = split_by_class(data.train);
  EvalReport report;
  report.config = config;
  report.config.class_order = detail::resolve_class_order(by_class, config.class_order);
  const auto& order = report.config.class_order;

  MemoryBank bank(data.train.dim, config.estimator);
  std::size_t round = 0;
  for (std::size_t start = 0; start < order.size(); start += config.classes_per_round) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t end = std::min(order.size(), start + config.classes_per_round);
    for (std::size_t i = start; i < end; ++i) {
      const ClassId c = order[i];
      const auto& all = by_class.at(c);
      const auto records = config.mode == ProtocolMode::few_shot
                                ? detail::take_shots(all, *config.shots_per_class, config.seed, c)
                                : all;
      bank.add_class(form_memory(c, records, config.estimator, config.seed, config.threads));
    }
    auto rep = detail::evaluate_round(bank, data.test, config, ++round);
    rep.duration_s = detail::seconds_since(t0);
    if (observer) observer(rep, bank);
    report.rounds.push_back(std::move(rep));
  }
  report.footprint = memory_footprint(bank);
  report.final_bank = std::move(bank);
  return report;
}

/// Per-class delivery schedule of the data-incremental protocol:
/// batches[c][r] holds the records of class c delivered in round r.
struct StreamSchedule {
  std::size_t rounds = 0;
  std::map<ClassId, std::vector<std::vector<FeatureRecord>>> batches;
};

/// Each class's records are shuffled with a seed derived from (seed, class
/// id) and cut into disjoint consecutive batches.
inline StreamSchedule make_stream_schedule(const FeatureDataset& train, const ProtocolConfig& config) {
  const std::size_t n = config.samples_per_round_per_class;
  if (n < 1) throw ValidationError("samples_per_round_per_class must be >= 1");
  const auto by_class = split_by_class(train);
  std::size_t available = std::numeric_limits<std::size_t>::max();
  for (const auto& [c, recs] : by_class) available = std::min(available, recs.size() / n);
  const std::size_t rounds = config.rounds.value_or(available);
  if (rounds < 1)
    throw ValidationError("data-incremental schedule needs at least one round of " + std::to_string(n) +
                          " samples per class");
  StreamSchedule sched;
  sched.rounds = rounds;
  for (const auto& [c, recs] : by_class) {
    if (rounds * n > recs.size())
      throw ValidationError("schedule of " + std::to_string(rounds) + " rounds x " + std::to_string(n) +
                            " samples exhausts class " + std::to_string(c) + " (" + std::to_string(recs.size()) +
                            " records)");
    auto stream = recs;
    detail::Rng rng(detail::derive_seed(config.seed, {detail::kStreamTag, c}));
    detail::shuffle(stream, rng);
    auto& out = sched.batches[c];
    for (std::size_t r = 0; r < rounds; ++r)
      out.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(r * n),
                       stream.begin() + static_cast<std::ptrdiff_t>((r + 1) * n));
  }
  return sched;
}

/// Data-incremental protocol: every class is present from round 1; later
/// rounds deliver new disjoint samples of the same classes, absorbed with
/// update_class (or, with refit_from_cache, by refitting from all retained
/// samples). The test set is fixed for the whole run.
inline EvalReport run_data_incremental(const FeatureDataset& train, const FeatureDataset& test,
                                       const ProtocolConfig& config, const RoundObserver& observer = {}) {
  if (config.mode != ProtocolMode::data_incremental)
    throw ValidationError("run_data_incremental requires mode data_incremental");
  const auto data = detail::prepare(train, test, config);
  const auto sched = make_stream_schedule(data.train, config);

  EvalReport report;
  report.config = config;
  report.config.rounds = sched.rounds;
  std::map<ClassId, std::vector<FeatureRecord>> cache;

  MemoryBank bank(data.train.dim, config.estimator);
  for (std::size_t r = 0; r < sched.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& [c, batches] : sched.batches) {
      const auto& batch = batches[r];
      if (r == 0) {
        bank.add_class(form_memory(c, batch, config.estimator, config.seed, config.threads));
      } else if (config.refit_from_cache) {
        auto& kept = cache[c];
        kept.insert(kept.end(), batch.begin(), batch.end());
        bank.replace_class(form_memory(c, kept, config.estimator, config.seed, config.threads));
      } else {
        bank.update_class(c, batch, config.threads);
      }
      if (r == 0 && config.refit_from_cache) cache[c] = batch;
    }
    auto rep = detail::evaluate_round(bank, data.test, config, r + 1);
    rep.duration_s = detail::seconds_since(t0);
    if (observer) observer(rep, bank);
    report.rounds.push_back(std::move(rep));
  }
  report.footprint = memory_footprint(bank);
  report.final_bank = std::move(bank);
  return report;
}

inline EvalReport run_protocol(const FeatureDataset& train, const FeatureDataset& test, const ProtocolConfig& config,
                               const RoundObserver& observer = {}) {
  return config.mode == ProtocolMode::data_incremental ? run_data_incremental(train, test, config, observer)
                                                       : run_class_incremental(train, test, config, observer);
}

// ---------------------------------------------------------------------------
// Sweeps and repetitions

enum class SweepAxis { gmm_components, class_order, feature_count };

struct SweepSpec {
  SweepAxis axis = SweepAxis::gmm_components;
  /// S values, class-order shuffle seeds, or feature counts
  std::vector<std::uint64_t> values;
};

/// Class order obtained by shuffling the base order (ascending ids when the
/// base config has none) with the given seed.
inline std::vector<ClassId> shuffled_class_order(const FeatureDataset& train, const std::vector<ClassId>& base,
                                                 std::uint64_t seed) {
  std::vector<ClassId> order = base;
  if (order.empty()) {
    std::set<ClassId> ids;
    for (const auto& r : train.records) ids.insert(r.label);
    order.assign(ids.begin(), ids.end());
  }
  detail::Rng rng(detail::derive_seed(seed, {detail::kOrderTag}));
  detail::shuffle(order, rng);
  return order;
}

/// One full protocol run per axis value; only the swept factor changes.
inline std::vector<EvalReport> sweep(const FeatureDataset& train, const FeatureDataset& test,
                                     const ProtocolConfig& base, const SweepSpec& spec) {
  if (spec.values.empty()) throw ValidationError("sweep needs at least one axis value");
  std::vector<EvalReport> out;
  for (std::uint64_t v : spec.values) {
    ProtocolConfig cfg = base;
    switch (spec.axis) {
      case SweepAxis::gmm_components:
        if (v < 1) throw ValidationError("gmm_components sweep values must be >= 1");
        cfg.estimator.kind = EstimatorKind::gmm;
        cfg.estimator.components = static_cast<int>(v);
        break;
      case SweepAxis::class_order:
        cfg.class_order = shuffled_class_order(train, base.class_order, v);
        break;
      case SweepAxis::feature_count:
        cfg.feature_subsample = FeatureSubsampleConfig{
            static_cast<std::size_t>(v), base.feature_subsample ? base.feature_subsample->seed : base.seed};
        break;
    }
    out.push_back(run_protocol(train, test, cfg));
  }
  return out;
}

/// Repeated runs with seeds seed, seed+1, ...; for class-incremental modes
/// each run also gets its own shuffled class order (unless the base config
/// fixes one, in which case it is kept).
inline std::vector<EvalReport> repeat_runs(const FeatureDataset& train, const FeatureDataset& test,
                                           const ProtocolConfig& base, std::size_t runs) {
  if (runs < 1) throw ValidationError("repeat count must be >= 1");
  std::vector<EvalReport> out;
  for (std::size_t i = 0; i < runs; ++i) {
    ProtocolConfig cfg = base;
    cfg.seed = base.seed + i;
    if (runs > 1 && cfg.mode != ProtocolMode::data_incremental && base.class_order.empty())
      cfg.class_order = shuffled_class_order(train, {}, cfg.seed);
    out.push_back(run_protocol(train, test, cfg));
  }
  return out;
}

struct RoundSummary {
  std::size_t round = 0;
  std::size_t n_classes = 0;
  double mean_mcr = 0.0;
  double std_mcr = 0.0;  ///< population std over runs
};

/// Mean and std of MCR per round across runs with the same round structure.
inline std::vector<RoundSummary> summarize(const std::vector<EvalReport>& runs) {
  std::vector<RoundSummary> out;
  if (runs.empty()) return out;
  const std::size_t n_rounds = runs.front().rounds.size();
  for (const auto& r : runs)
    if (r.rounds.size() != n_rounds) throw ValidationError("cannot summarize runs with different round counts");
  for (std::size_t i = 0; i < n_rounds; ++i) {
    RoundSummary s;
    s.round = i + 1;
    s.n_classes = runs.front().rounds[i].classes.size();
    for (const auto& r : runs) s.mean_mcr += r.rounds[i].mcr;
    s.mean_mcr /= static_cast<double>(runs.size());
    for (const auto& r : runs) s.std_mcr += (r.rounds[i].mcr - s.mean_mcr) * (r.rounds[i].mcr - s.mean_mcr);
    s.std_mcr = std::sqrt(s.std_mcr / static_cast<double>(runs.size()));
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Generative description: classes[c][k] is the mixture of feature k for
/// class c (before L2 normalization). Class ids are 0..M-1.
struct SyntheticSpec {
  std::size_t dim = 0;
  std::vector<std::vector<Gmm1D>> classes;
};

/// Random factorized spec. Each (class, feature) gets a center drawn
/// uniformly from [0, separation]; `components` modes are spread around it at
/// +/- mode_spread with std `noise`.
inline SyntheticSpec random_synthetic_spec(std::size_t n_classes, std::size_t dim, int components, double separation,
                                           double noise, double mode_spread, std::uint64_t seed) {
  if (n_classes < 1 || dim < 1 || components < 1 || !(noise > 0.0))
    throw ValidationError("invalid synthetic spec parameters");
  detail::Rng rng(seed);
  SyntheticSpec spec;
  spec.dim = dim;
  spec.classes.resize(n_classes);
  for (auto& cls : spec.classes) {
    for (std::size_t k = 0; k < dim; ++k) {
      const double center = rng.uniform(0.0, separation);
      Gmm1D g;
      for (int s = 0; s < components; ++s) {
        const double offset =
            components == 1 ? 0.0 : mode_spread * (2.0 * s / static_cast<double>(components - 1) - 1.0);
        g.components.push_back({1.0 / components, center + offset, noise});
      }
      cls.push_back(std::move(g));
    }
  }
  return spec;
}

struct SyntheticData {
  FeatureDataset train, test;
};

namespace detail {

inline std::vector<double> draw_raw(const std::vector<Gmm1D>& features, Rng& rng) {
  std::vector<double> v;
  v.reserve(features.size());
  for (const auto& g : features) {
    double u = rng.uniform();
    std::size_t s = 0;
    while (s + 1 < g.components.size() && u >= g.components[s].weight) {
      u -= g.components[s].weight;
      ++s;
    }
    v.push_back(rng.normal(g.components[s].mu, g.components[s].sigma));
  }
  return v;
}

inline FeatureDataset draw_split(const SyntheticSpec& spec, std::size_t per_class, std::uint64_t seed,
                                 std::uint64_t split_tag) {
  FeatureDataset ds;
  ds.dim = spec.dim;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    Rng rng(derive_seed(seed, {split_tag, c}));
    for (std::size_t i = 0; i < per_class; ++i)
      ds.records.push_back({static_cast<ClassId>(c), draw_raw(spec.classes[c], rng)});
  }
  return l2_normalize(ds);
}

}  // namespace detail

/// Draws per-class train and test samples from the spec and L2-normalizes them.
inline SyntheticData make_synthetic_dataset(const SyntheticSpec& spec, std::size_t n_train, std::size_t n_test,
                                            std::uint64_t seed) {
  return {detail::draw_split(spec, n_train, seed, 1), detail::draw_split(spec, n_test, seed, 2)};
}

/// Monte Carlo estimate of the equal-prior Bayes error of the spec in the raw
/// (pre-normalization) feature space, using the true generating densities.
inline double monte_carlo_bayes_error(const SyntheticSpec& spec, std::size_t per_class, std::uint64_t seed) {
  std::size_t errors = 0;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    detail::Rng rng(detail::derive_seed(seed, {3, c}));
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto x = detail::draw_raw(spec.classes[c], rng);
      std::size_t best = 0;
      double best_ll = -std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < spec.classes.size(); ++m) {
        double ll = 0.0;
        for (std::size_t k = 0; k < spec.dim; ++k) ll += gmm_log_pdf(spec.classes[m][k], x[k]);
        if (ll > best_ll) {
          best_ll = ll;
          best = m;
        }
      }
      if (best != c) ++errors;
    }
  }
  return static_cast<double>(errors) / static_cast<double>(per_class * spec.classes.size());
}

}  // namespace bayesmem
