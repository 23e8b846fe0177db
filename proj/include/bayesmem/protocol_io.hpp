#pragma once

// JSON/CSV surfaces: experiment configs, evaluation reports, bank export.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "bayesmem/error.hpp"
#include "bayesmem/memory.hpp"
#include "bayesmem/protocol.hpp"
#include "json.hpp"

namespace bayesmem {

using json = nlohmann::ordered_json;

struct SyntheticConfig {
  std::size_t classes = 10;
  std::size_t dim = 16;
  int components = 2;
  double separation = 1.0;
  double noise = 0.05;
  double mode_spread = 0.1;
  std::size_t n_train = 50;
  std::size_t n_test = 20;
  std::uint64_t seed = 0;
};

/// Everything a `protocol` invocation needs: where the data comes from, the
/// protocol itself, and how many runs to do.
struct ExperimentConfig {
  ProtocolConfig protocol;
  std::optional<std::string> train_path;
  std::optional<std::string> test_path;
  std::optional<ShardFormat> format;  ///< inferred from extension when absent
  std::optional<SyntheticConfig> synthetic;
  std::optional<SweepSpec> sweep;
  std::size_t repeats = 1;
  bool record_timing = false;  ///< adds wall-clock durations, making reports non-reproducible
};

inline std::string to_string(ProtocolMode m) {
  switch (m) {
    case ProtocolMode::class_incremental: return "class_incremental";
    case ProtocolMode::data_incremental: return "data_incremental";
    case ProtocolMode::few_shot: return "few_shot";
  }
  return "?";
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::gmm_components: return "gmm_components";
    case SweepAxis::class_order: return "class_order";
    case SweepAxis::feature_count: return "feature_count";
  }
  return "?";
}

namespace detail {

/// Collects every schema violation before failing.
class SchemaCheck {
 public:
  explicit SchemaCheck(const json& j) : j_(j) {}

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <typename T>
  std::optional<T> get(const std::string& key, const std::string& path = "") {
    if (!has(key)) return std::nullopt;
    try {
      const auto& v = j_.at(key);
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::runtime_error("expected true or false");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw std::runtime_error("expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::runtime_error("expected an integer");
      }
      return v.get<T>();
    } catch (const std::exception& e) {
      error(path + key + ": " + e.what());
      return std::nullopt;
    }
  }

  void require(const std::string& key, const std::string& why, const std::string& path = "") {
    if (!has(key)) error(path + key + ": required " + why);
  }

  void reject_unknown(const std::set<std::string>& known, const std::string& path = "") {
    for (const auto& [k, _] : j_.items())
      if (!known.count(k)) error(path + k + ": unknown field");
  }

  void error(std::string msg) { errors_->push_back(std::move(msg)); }

  std::vector<std::string>& errors() { return *errors_; }
  void share_errors(std::vector<std::string>& sink) { errors_ = &sink; }

 private:
  const json& j_;
  std::vector<std::string> own_;
  std::vector<std::string>* errors_ = &own_;
};

}  // namespace detail

inline EstimatorConfig estimator_from_json(const json& j, std::vector<std::string>& errors,
                                           const std::string& path = "estimator.") {
  EstimatorConfig est;
  if (!j.is_object()) {
    errors.push_back(path + ": expected an object");
    return est;
  }
  detail::SchemaCheck c(j);
  c.share_errors(errors);
  c.reject_unknown({"kind", "components", "bandwidth", "sigma_floor", "bandwidth_floor", "em_tolerance",
                    "em_max_iterations"},
                   path);
  const auto kind = c.get<std::string>("kind", path).value_or("gmm");
  if (kind == "gmm") {
    est.kind = EstimatorKind::gmm;
  } else if (kind == "kde") {
    est.kind = EstimatorKind::kde;
  } else {
    c.error(path + "kind: must be 'gmm' or 'kde'");
  }
  if (auto s = c.get<int>("components", path)) {
    if (*s < 1) c.error(path + "components: must be >= 1");
    est.components = *s;
  }
  if (auto h = c.get<double>("bandwidth", path)) {
    if (!(*h > 0.0)) c.error(path + "bandwidth: must be positive");
    est.bandwidth = *h;
  }
  if (auto f = c.get<double>("sigma_floor", path)) {
    if (!(*f > 0.0)) c.error(path + "sigma_floor: must be positive");
    est.em.sigma_floor = *f;
  }
  if (auto f = c.get<double>("bandwidth_floor", path)) {
    if (!(*f > 0.0)) c.error(path + "bandwidth_floor: must be positive");
    est.bandwidth_floor = *f;
  }
  if (auto t = c.get<double>("em_tolerance", path)) est.em.tolerance = *t;
  if (auto m = c.get<int>("em_max_iterations", path)) {
    if (*m < 1) c.error(path + "em_max_iterations: must be >= 1");
    est.em.max_iterations = *m;
  }
  return est;
}

inline json to_json(const EstimatorConfig& est) {
  json j;
  if (est.kind == EstimatorKind::gmm) {
    j["kind"] = "gmm";
    j["components"] = est.components;
    j["sigma_floor"] = est.em.sigma_floor;
    j["em_tolerance"] = est.em.tolerance;
    j["em_max_iterations"] = est.em.max_iterations;
  } else {
    j["kind"] = "kde";
    j["bandwidth"] = est.bandwidth ? json(*est.bandwidth) : json("silverman");
    j["bandwidth_floor"] = est.bandwidth_floor;
  }
  return j;
}

/// Parses an experiment config; all schema violations are reported together
/// in one ValidationError, one per line.
inline ExperimentConfig experiment_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  ExperimentConfig cfg;
  auto& p = cfg.protocol;
  detail::SchemaCheck c(j);
  c.reject_unknown({"mode", "train", "test", "format", "synthetic", "classes_per_round", "shots_per_class",
                    "samples_per_round_per_class", "rounds", "class_order", "seed", "estimator",
                    "feature_subsample", "uniform_prior", "refit_from_cache", "repeats", "sweep", "record_timing",
                    "threads"});

  c.require("mode", "(class_incremental | data_incremental | few_shot)");
  if (auto mode = c.get<std::string>("mode")) {
    if (*mode == "class_incremental")
      p.mode = ProtocolMode::class_incremental;
    else if (*mode == "data_incremental")
      p.mode = ProtocolMode::data_incremental;
    else if (*mode == "few_shot")
      p.mode = ProtocolMode::few_shot;
    else
      c.error("mode: unknown mode '" + *mode + "'");
  }

  cfg.train_path = c.get<std::string>("train");
  cfg.test_path = c.get<std::string>("test");
  if (auto f = c.get<std::string>("format")) {
    if (*f == "binary")
      cfg.format = ShardFormat::binary;
    else if (*f == "csv")
      cfg.format = ShardFormat::csv;
    else
      c.error("format: must be 'binary' or 'csv'");
  }
  if (c.has("synthetic")) {
    const auto& s = j.at("synthetic");
    if (!s.is_object()) {
      c.error("synthetic: expected an object");
    } else {
      detail::SchemaCheck sc(s);
      sc.share_errors(c.errors());
      sc.reject_unknown({"classes", "dim", "components", "separation", "noise", "mode_spread", "n_train", "n_test",
                         "seed"},
                        "synthetic.");
      SyntheticConfig syn;
      syn.classes = sc.get<std::size_t>("classes", "synthetic.").value_or(syn.classes);
      syn.dim = sc.get<std::size_t>("dim", "synthetic.").value_or(syn.dim);
      syn.components = sc.get<int>("components", "synthetic.").value_or(syn.components);
      syn.separation = sc.get<double>("separation", "synthetic.").value_or(syn.separation);
      syn.noise = sc.get<double>("noise", "synthetic.").value_or(syn.noise);
      syn.mode_spread = sc.get<double>("mode_spread", "synthetic.").value_or(syn.mode_spread);
      syn.n_train = sc.get<std::size_t>("n_train", "synthetic.").value_or(syn.n_train);
      syn.n_test = sc.get<std::size_t>("n_test", "synthetic.").value_or(syn.n_test);
      syn.seed = sc.get<std::uint64_t>("seed", "synthetic.").value_or(syn.seed);
      if (syn.classes < 1 || syn.dim < 1 || syn.components < 1 || !(syn.noise > 0.0) || syn.n_train < 1 ||
          syn.n_test < 1)
        sc.error("synthetic: classes, dim, components, n_train, n_test must be >= 1 and noise > 0");
      cfg.synthetic = syn;
    }
  }
  const bool has_files = cfg.train_path || cfg.test_path;
  if (cfg.synthetic && has_files) c.error("synthetic: cannot be combined with train/test paths");
  if (!cfg.synthetic) {
    c.require("train", "(path to a training shard) unless 'synthetic' is given");
    c.require("test", "(path to a test shard) unless 'synthetic' is given");
  }

  const bool class_mode = p.mode != ProtocolMode::data_incremental;
  if (class_mode) c.require("classes_per_round", "for class_incremental and few_shot modes");
  if (auto v = c.get<std::size_t>("classes_per_round")) {
    if (*v < 1) c.error("classes_per_round: must be >= 1");
    p.classes_per_round = *v;
  }
  if (p.mode == ProtocolMode::few_shot) c.require("shots_per_class", "for few_shot mode");
  if (auto v = c.get<std::size_t>("shots_per_class")) {
    if (*v < 1) c.error("shots_per_class: must be >= 1");
    p.shots_per_class = *v;
  }
  if (!class_mode) c.require("samples_per_round_per_class", "for data_incremental mode");
  if (auto v = c.get<std::size_t>("samples_per_round_per_class")) {
    if (*v < 1) c.error("samples_per_round_per_class: must be >= 1");
    p.samples_per_round_per_class = *v;
  }
  if (auto v = c.get<std::size_t>("rounds")) {
    if (*v < 1) c.error("rounds: must be >= 1");
    p.rounds = *v;
  }
  if (auto v = c.get<std::vector<ClassId>>("class_order")) p.class_order = *v;
  p.seed = c.get<std::uint64_t>("seed").value_or(0);
  if (c.has("estimator")) p.estimator = estimator_from_json(j.at("estimator"), c.errors());
  if (c.has("feature_subsample")) {
    const auto& fs = j.at("feature_subsample");
    if (!fs.is_object()) {
      c.error("feature_subsample: expected an object");
    } else {
      detail::SchemaCheck fc(fs);
      fc.share_errors(c.errors());
      fc.reject_unknown({"count", "seed"}, "feature_subsample.");
      fc.require("count", "", "feature_subsample.");
      FeatureSubsampleConfig sub;
      sub.count = fc.get<std::size_t>("count", "feature_subsample.").value_or(0);
      sub.seed = fc.get<std::uint64_t>("seed", "feature_subsample.").value_or(p.seed);
      if (fc.has("count") && sub.count < 1) fc.error("feature_subsample.count: must be >= 1");
      p.feature_subsample = sub;
    }
  }
  if (c.get<bool>("uniform_prior").value_or(false)) p.prior = PriorMode::uniform;
  p.refit_from_cache = c.get<bool>("refit_from_cache").value_or(false);
  p.threads = c.get<unsigned>("threads").value_or(0);
  cfg.repeats = c.get<std::size_t>("repeats").value_or(1);
  if (cfg.repeats < 1) c.error("repeats: must be >= 1");
  cfg.record_timing = c.get<bool>("record_timing").value_or(false);

  if (c.has("sweep")) {
    const auto& s = j.at("sweep");
    if (!s.is_object()) {
      c.error("sweep: expected an object");
    } else {
      detail::SchemaCheck sc(s);
      sc.share_errors(c.errors());
      sc.reject_unknown({"axis", "values"}, "sweep.");
      sc.require("axis", "(gmm_components | class_order | feature_count)", "sweep.");
      sc.require("values", "(non-empty list)", "sweep.");
      SweepSpec spec;
      if (auto axis = sc.get<std::string>("axis", "sweep.")) {
        if (*axis == "gmm_components")
          spec.axis = SweepAxis::gmm_components;
        else if (*axis == "class_order")
          spec.axis = SweepAxis::class_order;
        else if (*axis == "feature_count")
          spec.axis = SweepAxis::feature_count;
        else
          sc.error("sweep.axis: unknown axis '" + *axis + "'");
      }
      spec.values = sc.get<std::vector<std::uint64_t>>("values", "sweep.").value_or(std::vector<std::uint64_t>{});
      if (sc.has("values") && spec.values.empty()) sc.error("sweep.values: must be non-empty");
      cfg.sweep = spec;
    }
    if (cfg.repeats > 1) c.error("repeats: cannot be combined with sweep");
  }

  if (!c.errors().empty()) {
    std::string msg = "invalid config (" + std::to_string(c.errors().size()) + " problem(s)):";
    for (const auto& e : c.errors()) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  return cfg;
}

/// Full echo of a resolved protocol config, defaults included.
inline json to_json(const ProtocolConfig& p) {
  json j;
  j["mode"] = to_string(p.mode);
  if (p.mode == ProtocolMode::data_incremental) {
    j["samples_per_round_per_class"] = p.samples_per_round_per_class;
    j["rounds"] = p.rounds ? json(*p.rounds) : json(nullptr);
    j["refit_from_cache"] = p.refit_from_cache;
  } else {
    j["classes_per_round"] = p.classes_per_round;
    j["class_order"] = p.class_order;
    if (p.mode == ProtocolMode::few_shot) j["shots_per_class"] = p.shots_per_class ? json(*p.shots_per_class) : json(nullptr);
  }
  j["seed"] = p.seed;
  j["estimator"] = to_json(p.estimator);
  if (p.feature_subsample)
    j["feature_subsample"] = {{"count", p.feature_subsample->count}, {"seed", p.feature_subsample->seed}};
  else
    j["feature_subsample"] = nullptr;
  j["prior"] = p.prior == PriorMode::uniform ? "uniform" : "count_ratio";
  return j;
}

inline json to_json(const MemoryFootprint& fp) {
  json j;
  j["parameter_reals"] = fp.parameter_reals;
  j["accumulator_reals"] = fp.accumulator_reals;
  j["integer_counts"] = fp.integer_counts;
  json per = json::array();
  for (const auto& c : fp.classes)
    per.push_back({{"class", c.class_id},
                   {"parameter_reals", c.parameter_reals},
                   {"accumulator_reals", c.accumulator_reals}});
  j["classes"] = std::move(per);
  return j;
}

inline json to_json(const RoundReport& r, bool with_timing) {
  json j;
  j["round"] = r.round;
  j["n_classes"] = r.classes.size();
  j["mcr"] = r.mcr;
  j["accuracy"] = r.accuracy;
  j["classes"] = r.classes;
  j["recalls"] = r.recalls;
  j["test_samples"] = r.test_samples;
  j["clamped_predictions"] = r.clamped_predictions;
  if (with_timing) j["duration_s"] = r.duration_s;
  return j;
}

/// Report JSON: {config, rounds[...], footprint}. Durations are included only
/// when requested so that default reports are reproducible byte-for-byte.
inline json to_json(const EvalReport& rep, bool with_timing = false) {
  json j;
  j["config"] = to_json(rep.config);
  json rounds = json::array();
  for (const auto& r : rep.rounds) rounds.push_back(to_json(r, with_timing));
  j["rounds"] = std::move(rounds);
  j["footprint"] = to_json(rep.footprint);
  return j;
}

namespace detail {
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}
}  // namespace detail

/// Flat "round,n_classes,mcr" table.
inline std::string report_csv(const EvalReport& rep) {
  std::string out = "round,n_classes,mcr\n";
  for (const auto& r : rep.rounds)
    out += std::to_string(r.round) + "," + std::to_string(r.classes.size()) + "," + detail::format_double(r.mcr) + "\n";
  return out;
}

inline json to_json(const std::vector<RoundSummary>& summary) {
  json arr = json::array();
  for (const auto& s : summary)
    arr.push_back({{"round", s.round}, {"n_classes", s.n_classes}, {"mean_mcr", s.mean_mcr}, {"std_mcr", s.std_mcr}});
  return arr;
}

/// Human-readable export of a bank.
inline json bank_to_json(const MemoryBank& bank) {
  json j;
  j["format_version"] = kBankFormatVersion;
  j["K"] = bank.dim();
  j["estimator"] = to_json(bank.estimator());
  j["total_count"] = bank.total_count();
  j["footprint"] = to_json(memory_footprint(bank));
  json classes = json::array();
  for (const auto& [id, mem] : bank.classes()) {
    json c;
    c["class"] = id;
    c["count"] = mem.count;
    json features = json::array();
    for (std::size_t k = 0; k < mem.models.size(); ++k) {
      if (const auto* g = std::get_if<Gmm1D>(&mem.models[k])) {
        json comps = json::array();
        for (std::size_t s = 0; s < g->components.size(); ++s) {
          const auto& comp = g->components[s];
          const auto& st = mem.suff_stats[k][s];
          comps.push_back({{"weight", comp.weight},
                           {"mu", comp.mu},
                           {"sigma", comp.sigma},
                           {"stats", {st.weight, st.sum, st.sum_sq}}});
        }
        features.push_back(std::move(comps));
      } else {
        const auto& kde = std::get<Kde1D>(mem.models[k]);
        features.push_back({{"bandwidth", kde.bandwidth}, {"centers", kde.centers}});
      }
    }
    c["features"] = std::move(features);
    classes.push_back(std::move(c));
  }
  j["classes"] = std::move(classes);
  return j;
}

}  // namespace bayesmem
