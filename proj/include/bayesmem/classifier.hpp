#pragma once

// Naive-Bayes prediction over a MemoryBank: per-class log-joint
//   sum_k log p(f_k = z_k | c) + log p(c),
// with p(c) = N_c / sum_m N_m. The evidence term is constant across classes
// and is only reinstated when a normalized posterior is requested.

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bayesmem/density.hpp"
#include "bayesmem/error.hpp"
#include "bayesmem/feature_store.hpp"
#include "bayesmem/memory.hpp"

namespace bayesmem {

/// Lower bound applied to each per-feature log-density so that K-term sums
/// stay finite in double precision.
inline constexpr double kLogDensityClamp = -745.0;

enum class PriorMode { count_ratio, uniform };

struct PredictOptions {
  PriorMode prior = PriorMode::count_ratio;
  bool with_posterior = false;
};

struct ClassScores {
  std::vector<ClassId> classes;  ///< ascending
  std::vector<double> log_joint;
  ClassId predicted = 0;
  std::optional<std::vector<double>> posterior;
  std::size_t clamped_terms = 0;  ///< per-feature log-densities raised to the clamp
};

namespace detail {

inline void check_input(const MemoryBank& bank, std::span<const double> z) {
  if (z.size() != bank.dim())
    throw ValidationError("feature vector has length " + std::to_string(z.size()) + ", bank expects K=" +
                          std::to_string(bank.dim()));
  for (double v : z)
    if (!std::isfinite(v)) throw ValidationError("feature vector contains a non-finite value");
}

inline double class_log_likelihood_unchecked(const ClassMemory& mem, std::span<const double> z,
                                             std::size_t* clamped) {
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    double lp = log_pdf(mem.models[k], z[k]);
    if (!(lp >= kLogDensityClamp)) {
      lp = kLogDensityClamp;
      if (clamped) ++*clamped;
    }
    total += lp;
  }
  return total;
}

}  // namespace detail

inline double class_log_likelihood(const MemoryBank& bank, ClassId class_id, std::span<const double> z,
                                   std::size_t* clamped_terms = nullptr) {
  const auto& mem = bank.at(class_id);
  detail::check_input(bank, z);
  return detail::class_log_likelihood_unchecked(mem, z, clamped_terms);
}

inline double log_prior(const MemoryBank& bank, ClassId class_id, PriorMode mode = PriorMode::count_ratio) {
  const auto& mem = bank.at(class_id);
  if (mode == PriorMode::uniform) return -std::log(static_cast<double>(bank.size()));
  return std::log(static_cast<double>(mem.count) / static_cast<double>(bank.total_count()));
}

/// Softmax of log-joint scores.
inline std::vector<double> normalize_log_joint(std::span<const double> log_joint) {
  const double lse = detail::log_sum_exp(log_joint);
  std::vector<double> p;
  p.reserve(log_joint.size());
  for (double v : log_joint) p.push_back(std::exp(v - lse));
  return p;
}

/// Highest log-joint wins; ties go to the smallest class id.
inline ClassScores predict(const MemoryBank& bank, std::span<const double> z, const PredictOptions& options = {}) {
  if (bank.empty()) throw ValidationError("no classes learned");
  detail::check_input(bank, z);
  ClassScores out;
  out.classes.reserve(bank.size());
  out.log_joint.reserve(bank.size());
  double best = -std::numeric_limits<double>::infinity();
  bool first = true;
  for (const auto& [id, mem] : bank.classes()) {
    const double score =
        detail::class_log_likelihood_unchecked(mem, z, &out.clamped_terms) + log_prior(bank, id, options.prior);
    out.classes.push_back(id);
    out.log_joint.push_back(score);
    if (first || score > best) {
      best = score;
      out.predicted = id;
      first = false;
    }
  }
  if (options.with_posterior) out.posterior = normalize_log_joint(out.log_joint);
  return out;
}

/// Normalized posterior over learned classes, ascending class id order.
inline std::vector<double> posterior(const MemoryBank& bank, std::span<const double> z,
                                     PriorMode mode = PriorMode::count_ratio) {
  return *predict(bank, z, {mode, true}).posterior;
}

// ---------------------------------------------------------------------------
// Nearest-class-mean baseline

using ClassMeans = std::map<ClassId, std::vector<double>>;

inline ClassMeans class_means(const FeatureDataset& ds) {
  ClassMeans sums;
  std::map<ClassId, std::size_t> counts;
  for (const auto& r : ds.records) {
    auto& s = sums[r.label];
    if (s.empty()) s.assign(ds.dim, 0.0);
    for (std::size_t k = 0; k < ds.dim; ++k) s[k] += r.values[k];
    ++counts[r.label];
  }
  for (auto& [id, s] : sums)
    for (double& v : s) v /= static_cast<double>(counts[id]);
  return sums;
}

/// Per-feature means implied by the stored densities (mixture mean for GMM,
/// center average for KDE).
inline ClassMeans class_means(const MemoryBank& bank) {
  ClassMeans out;
  for (const auto& [id, mem] : bank.classes()) {
    auto& m = out[id];
    for (const auto& model : mem.models) {
      double v = 0.0;
      if (const auto* g = std::get_if<Gmm1D>(&model)) {
        for (const auto& c : g->components) v += c.weight * c.mu;
      } else {
        const auto& kde = std::get<Kde1D>(model);
        for (double c : kde.centers) v += c;
        v /= static_cast<double>(kde.centers.size());
      }
      m.push_back(v);
    }
  }
  return out;
}

/// Nearest class mean in Euclidean distance; ties go to the smallest id.
inline ClassId predict_ncm(const ClassMeans& means, std::span<const double> z) {
  if (means.empty()) throw ValidationError("no class means available");
  ClassId best_id = 0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [id, m] : means) {
    if (m.size() != z.size())
      throw ValidationError("class mean for class " + std::to_string(id) + " has length " +
                            std::to_string(m.size()) + ", input has " + std::to_string(z.size()));
    double d = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) d += (z[k] - m[k]) * (z[k] - m[k]);
    if (d < best) {
      best = d;
      best_id = id;
    }
  }
  return best_id;
}

}  // namespace bayesmem
