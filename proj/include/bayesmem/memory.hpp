#pragma once

// Per-class knowledge: one density per feature dimension plus the number of
// training samples absorbed, collected in a MemoryBank.
//
// Bank file layout (little-endian, v1):
//   "BMB1" | u32 version | u32 estimator tag (0 gmm, 1 kde) | u32 K
//   gmm: u32 S | f64 sigma_floor | f64 em_tolerance | u32 em_max_iterations
//   kde: u32 rule (0 silverman, 1 fixed) | f64 bandwidth | f64 bandwidth_floor
//   u64 total_count | u32 class_count
//   class_count x ( u32 class_id | u64 count | u64 block_bytes )
//   class blocks, ascending class_id (see encode_class)
//   u64 FNV-1a of every preceding byte

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "bayesmem/density.hpp"
#include "bayesmem/detail/binary_io.hpp"
#include "bayesmem/detail/parallel.hpp"
#include "bayesmem/detail/random.hpp"
#include "bayesmem/error.hpp"
#include "bayesmem/feature_store.hpp"

namespace bayesmem {

enum class EstimatorKind : std::uint32_t { gmm = 0, kde = 1 };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::gmm;
  int components = 2;               ///< requested S (gmm)
  std::optional<double> bandwidth;  ///< fixed kernel width (kde); Silverman's rule when empty
  EmConfig em;
  double bandwidth_floor = kDefaultBandwidthFloor;

  static EstimatorConfig gmm(int components) {
    EstimatorConfig c;
    c.components = components;
    return c;
  }

  static EstimatorConfig kde(std::optional<double> bandwidth = std::nullopt) {
    EstimatorConfig c;
    c.kind = EstimatorKind::kde;
    c.bandwidth = bandwidth;
    return c;
  }

  void validate() const {
    if (kind == EstimatorKind::gmm && components < 1)
      throw ValidationError("GMM component count must be >= 1, got " + std::to_string(components));
    if (kind == EstimatorKind::kde && bandwidth && !(*bandwidth > 0.0))
      throw ValidationError("KDE bandwidth must be positive");
    if (!(em.sigma_floor > 0.0) || !(bandwidth_floor > 0.0)) throw ValidationError("floors must be positive");
    if (em.max_iterations < 1) throw ValidationError("EM max_iterations must be >= 1");
  }

  friend bool operator==(const EstimatorConfig&, const EstimatorConfig&) = default;
};

/// Responsibility-weighted accumulators of one mixture component.
struct SufficientStats {
  double weight = 0.0;  ///< sum of responsibilities
  double sum = 0.0;     ///< sum of r * x
  double sum_sq = 0.0;  ///< sum of r * x^2

  friend bool operator==(const SufficientStats&, const SufficientStats&) = default;
};

struct ClassMemory {
  ClassId class_id = 0;
  std::uint64_t count = 0;
  std::vector<DensityModel> models;                      ///< one per feature dimension
  std::vector<std::vector<SufficientStats>> suff_stats;  ///< gmm only; aligned with components

  std::size_t dim() const noexcept { return models.size(); }

  friend bool operator==(const ClassMemory&, const ClassMemory&) = default;
};

namespace detail {

inline void check_records(ClassId class_id, std::span<const FeatureRecord> records, std::size_t dim) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.label != class_id)
      throw ValidationError("record " + std::to_string(i) + " has label " + std::to_string(r.label) +
                            ", expected class " + std::to_string(class_id));
    if (r.values.size() != dim)
      throw ValidationError("record " + std::to_string(i) + " has " + std::to_string(r.values.size()) +
                            " features, expected " + std::to_string(dim));
    double sq = 0.0;
    for (double v : r.values) {
      if (!std::isfinite(v)) throw ValidationError("record " + std::to_string(i) + " has a non-finite value");
      sq += v * v;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
      throw ValidationError("record " + std::to_string(i) + " is not L2-normalized");
  }
}

inline std::vector<double> feature_column(std::span<const FeatureRecord> records, std::size_t k) {
  std::vector<double> col;
  col.reserve(records.size());
  for (const auto& r : records) col.push_back(r.values[k]);
  return col;
}

/// Responsibilities of x under g, written to resp.
inline void responsibilities(const Gmm1D& g, double x, std::vector<double>& resp) {
  resp.resize(g.components.size());
  std::vector<double> terms(g.components.size());
  for (std::size_t s = 0; s < g.components.size(); ++s) {
    const auto& c = g.components[s];
    terms[s] = c.weight > 0.0 ? std::log(c.weight) + normal_log_pdf(x, c.mu, c.sigma)
                              : -std::numeric_limits<double>::infinity();
  }
  const double lse = log_sum_exp(terms);
  for (std::size_t s = 0; s < terms.size(); ++s) resp[s] = std::exp(terms[s] - lse);
}

inline void accumulate(const Gmm1D& g, std::span<const double> xs, std::vector<SufficientStats>& stats) {
  std::vector<double> resp;
  for (double x : xs) {
    responsibilities(g, x, resp);
    for (std::size_t s = 0; s < resp.size(); ++s) {
      stats[s].weight += resp[s];
      stats[s].sum += resp[s] * x;
      stats[s].sum_sq += resp[s] * x * x;
    }
  }
}

/// M-step from accumulators; keeps components and stats aligned and sorted.
inline void reestimate(Gmm1D& g, std::vector<SufficientStats>& stats, double sigma_floor) {
  double total = 0.0;
  for (const auto& st : stats) total += st.weight;
  for (std::size_t s = 0; s < stats.size(); ++s) {
    auto& c = g.components[s];
    const auto& st = stats[s];
    c.weight = st.weight / total;
    if (st.weight <= 0.0) continue;
    c.mu = st.sum / st.weight;
    const double var = std::max(st.sum_sq / st.weight - c.mu * c.mu, 0.0);
    c.sigma = std::max(std::sqrt(var), sigma_floor);
  }
  std::vector<std::size_t> order(stats.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = g.components[a];
    const auto& y = g.components[b];
    return std::tie(x.mu, x.sigma, x.weight) < std::tie(y.mu, y.sigma, y.weight);
  });
  Gmm1D sorted_g;
  std::vector<SufficientStats> sorted_s;
  for (std::size_t i : order) {
    sorted_g.components.push_back(g.components[i]);
    sorted_s.push_back(stats[i]);
  }
  g = std::move(sorted_g);
  stats = std::move(sorted_s);
}

}  // namespace detail

/// Fits one density per feature dimension over the records of a single class.
/// KDE centers are kept in ascending order.
/// Per-feature seeds are derived from (seed, class_id, k), so the result does
/// not depend on which other classes exist or on the thread count.
inline ClassMemory form_memory(ClassId class_id, std::span<const FeatureRecord> records,
                               const EstimatorConfig& config, std::uint64_t seed, unsigned threads = 0) {
  config.validate();
  if (records.empty()) throw ValidationError("form_memory: class " + std::to_string(class_id) + " has no records");
  const std::size_t dim = records.front().values.size();
  if (dim == 0) throw ValidationError("form_memory: zero-dimensional records");
  detail::check_records(class_id, records, dim);

  ClassMemory mem;
  mem.class_id = class_id;
  mem.count = records.size();
  mem.models.resize(dim);
  if (config.kind == EstimatorKind::gmm) mem.suff_stats.resize(dim);

  detail::parallel_for(dim, threads, [&](std::size_t k) {
    // sorted so the fit depends on the set of records, not their order
    auto col = detail::feature_column(records, k);
    std::sort(col.begin(), col.end());
    if (config.kind == EstimatorKind::gmm) {
      auto g = fit_gmm(col, config.components, detail::derive_seed(seed, {class_id, k}), config.em);
      std::vector<SufficientStats> stats(g.components.size());
      detail::accumulate(g, col, stats);
      mem.models[k] = std::move(g);
      mem.suff_stats[k] = std::move(stats);
    } else {
      mem.models[k] = fit_kde(col, config.bandwidth, config.bandwidth_floor);
    }
  });
  return mem;
}

class MemoryBank {
 public:
  MemoryBank() = default;

  MemoryBank(std::size_t dim, EstimatorConfig estimator) : dim_(dim), estimator_(std::move(estimator)) {
    if (dim_ == 0) throw ValidationError("memory bank dimensionality must be positive");
    estimator_.validate();
  }

  std::size_t dim() const noexcept { return dim_; }
  const EstimatorConfig& estimator() const noexcept { return estimator_; }
  const std::map<ClassId, ClassMemory>& classes() const noexcept { return classes_; }
  std::uint64_t total_count() const noexcept { return total_count_; }
  std::size_t size() const noexcept { return classes_.size(); }
  bool empty() const noexcept { return classes_.empty(); }
  bool contains(ClassId id) const { return classes_.count(id) != 0; }

  const ClassMemory& at(ClassId id) const {
    auto it = classes_.find(id);
    if (it == classes_.end()) throw ValidationError("unknown class " + std::to_string(id));
    return it->second;
  }

  std::vector<ClassId> class_ids() const {
    std::vector<ClassId> ids;
    for (const auto& [id, _] : classes_) ids.push_back(id);
    return ids;
  }

  /// Inserts a new class; existing entries are neither read nor modified.
  void add_class(ClassMemory memory) {
    if (contains(memory.class_id))
      throw ValidationError("class " + std::to_string(memory.class_id) +
                            " is already in the memory bank (use update for new data of a known class)");
    check_compatible(memory);
    total_count_ += memory.count;
    const ClassId id = memory.class_id;
    classes_.emplace(id, std::move(memory));
  }

  /// Swaps in a refitted memory for a known class (refit-from-cache path).
  void replace_class(ClassMemory memory) {
    auto it = classes_.find(memory.class_id);
    if (it == classes_.end()) throw ValidationError("unknown class " + std::to_string(memory.class_id));
    check_compatible(memory);
    total_count_ = total_count_ - it->second.count + memory.count;
    it->second = std::move(memory);
  }

  /// Absorbs new samples of a known class. GMM: one E-step of the batch under
  /// the current per-feature models, then re-estimation from the merged
  /// accumulators (exact for a single component). KDE: append the samples as
  /// centers and re-derive the bandwidth when it follows Silverman's rule.
  void update_class(ClassId class_id, std::span<const FeatureRecord> records, unsigned threads = 0) {
    auto it = classes_.find(class_id);
    if (it == classes_.end())
      throw ValidationError("unknown class " + std::to_string(class_id) + " (use learn to add new classes)");
    if (records.empty()) return;
    detail::check_records(class_id, records, dim_);

    ClassMemory updated = it->second;
    detail::parallel_for(dim_, threads, [&](std::size_t k) {
      auto col = detail::feature_column(records, k);
      std::sort(col.begin(), col.end());
      auto& model = updated.models[k];
      if (auto* g = std::get_if<Gmm1D>(&model)) {
        auto& stats = updated.suff_stats[k];
        detail::accumulate(*g, col, stats);
        detail::reestimate(*g, stats, estimator_.em.sigma_floor);
      } else {
        auto& kde = std::get<Kde1D>(model);
        const auto mid = kde.centers.insert(kde.centers.end(), col.begin(), col.end());
        std::inplace_merge(kde.centers.begin(), mid, kde.centers.end());
        const double h = estimator_.bandwidth ? *estimator_.bandwidth : silverman_bandwidth(kde.centers);
        kde.bandwidth = std::max(h, estimator_.bandwidth_floor);
      }
    });
    updated.count += records.size();
    total_count_ += records.size();
    it->second = std::move(updated);
  }

  friend bool operator==(const MemoryBank&, const MemoryBank&) = default;

 private:
  void check_compatible(const ClassMemory& m) const {
    if (m.dim() != dim_)
      throw ValidationError("class " + std::to_string(m.class_id) + " has K=" + std::to_string(m.dim()) +
                            ", bank has K=" + std::to_string(dim_));
    if (m.count < 1) throw ValidationError("class memory must have count >= 1");
    const std::size_t want = estimator_.kind == EstimatorKind::gmm ? 0 : 1;
    for (const auto& model : m.models)
      if (model.index() != want) throw ValidationError("class memory estimator kind does not match the bank");
    if (estimator_.kind == EstimatorKind::gmm && m.suff_stats.size() != dim_)
      throw ValidationError("GMM class memory is missing sufficient statistics");
  }

  std::size_t dim_ = 0;
  EstimatorConfig estimator_;
  std::map<ClassId, ClassMemory> classes_;
  std::uint64_t total_count_ = 0;
};

// ---------------------------------------------------------------------------
// Serialization

inline constexpr std::uint32_t kBankFormatVersion = 1;

/// Class block: u32 class_id | u64 count | per feature:
///   gmm: u32 S | S x (f64 weight, mu, sigma, stat_weight, stat_sum, stat_sum_sq)
///   kde: f64 bandwidth | u32 n | n x f64 center
inline std::vector<std::uint8_t> encode_class(const ClassMemory& m) {
  detail::ByteWriter out;
  out.put_u32(m.class_id);
  out.put_u64(m.count);
  for (std::size_t k = 0; k < m.models.size(); ++k) {
    if (const auto* g = std::get_if<Gmm1D>(&m.models[k])) {
      out.put_u32(static_cast<std::uint32_t>(g->components.size()));
      for (std::size_t s = 0; s < g->components.size(); ++s) {
        const auto& c = g->components[s];
        const auto& st = m.suff_stats[k][s];
        out.put_f64(c.weight);
        out.put_f64(c.mu);
        out.put_f64(c.sigma);
        out.put_f64(st.weight);
        out.put_f64(st.sum);
        out.put_f64(st.sum_sq);
      }
    } else {
      const auto& kde = std::get<Kde1D>(m.models[k]);
      out.put_f64(kde.bandwidth);
      out.put_u32(static_cast<std::uint32_t>(kde.centers.size()));
      for (double c : kde.centers) out.put_f64(c);
    }
  }
  return out.take();
}

namespace detail {

inline ClassMemory decode_class(ByteReader& in, EstimatorKind kind, std::size_t dim) {
  ClassMemory m;
  m.class_id = in.get_u32();
  m.count = in.get_u64();
  m.models.reserve(dim);
  if (kind == EstimatorKind::gmm) m.suff_stats.reserve(dim);
  for (std::size_t k = 0; k < dim; ++k) {
    if (kind == EstimatorKind::gmm) {
      const std::uint32_t S = in.get_u32();
      if (S == 0 || S > in.remaining() / 48) throw LoadError("corrupt bank: bad component count");
      Gmm1D g;
      std::vector<SufficientStats> stats;
      for (std::uint32_t s = 0; s < S; ++s) {
        GaussianComponent c;
        c.weight = in.get_f64();
        c.mu = in.get_f64();
        c.sigma = in.get_f64();
        SufficientStats st;
        st.weight = in.get_f64();
        st.sum = in.get_f64();
        st.sum_sq = in.get_f64();
        if (!(c.sigma > 0.0) || !std::isfinite(c.mu) || !(c.weight >= 0.0))
          throw LoadError("corrupt bank: invalid component parameters");
        g.components.push_back(c);
        stats.push_back(st);
      }
      m.models.emplace_back(std::move(g));
      m.suff_stats.push_back(std::move(stats));
    } else {
      Kde1D kde;
      kde.bandwidth = in.get_f64();
      const std::uint32_t n = in.get_u32();
      if (n == 0 || n > in.remaining() / 8 || !(kde.bandwidth > 0.0))
        throw LoadError("corrupt bank: invalid kernel density block");
      kde.centers.resize(n);
      for (auto& c : kde.centers) c = in.get_f64();
      m.models.emplace_back(std::move(kde));
    }
  }
  return m;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_bank(const MemoryBank& bank) {
  detail::ByteWriter out;
  const auto& est = bank.estimator();
  out.put_tag("BMB1");
  out.put_u32(kBankFormatVersion);
  out.put_u32(static_cast<std::uint32_t>(est.kind));
  out.put_u32(static_cast<std::uint32_t>(bank.dim()));
  if (est.kind == EstimatorKind::gmm) {
    out.put_u32(static_cast<std::uint32_t>(est.components));
    out.put_f64(est.em.sigma_floor);
    out.put_f64(est.em.tolerance);
    out.put_u32(static_cast<std::uint32_t>(est.em.max_iterations));
  } else {
    out.put_u32(est.bandwidth ? 1u : 0u);
    out.put_f64(est.bandwidth.value_or(0.0));
    out.put_f64(est.bandwidth_floor);
  }
  out.put_u64(bank.total_count());
  out.put_u32(static_cast<std::uint32_t>(bank.size()));

  std::vector<std::vector<std::uint8_t>> blocks;
  for (const auto& [id, mem] : bank.classes()) blocks.push_back(encode_class(mem));
  std::size_t i = 0;
  for (const auto& [id, mem] : bank.classes()) {
    out.put_u32(id);
    out.put_u64(mem.count);
    out.put_u64(blocks[i++].size());
  }
  for (const auto& b : blocks) out.put_bytes(b);
  const std::uint64_t checksum = detail::fnv1a64(out.bytes());
  out.put_u64(checksum);
  return out.take();
}

inline MemoryBank decode_bank(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw LoadError("bank file is truncated");
  detail::ByteReader in(bytes);
  if (!in.match_tag("BMB1")) throw LoadError("not a memory bank file (bad magic)");
  const std::uint32_t version = in.get_u32();
  if (version != kBankFormatVersion)
    throw LoadError("unsupported bank format version " + std::to_string(version) + " (expected " +
                    std::to_string(kBankFormatVersion) + ")");
  {
    detail::ByteReader tail(bytes.subspan(bytes.size() - 8));
    if (tail.get_u64() != detail::fnv1a64(bytes.first(bytes.size() - 8)))
      throw LoadError("bank file is corrupt or truncated (checksum mismatch)");
  }

  const std::uint32_t tag = in.get_u32();
  if (tag > 1) throw LoadError("corrupt bank: unknown estimator tag");
  EstimatorConfig est;
  est.kind = static_cast<EstimatorKind>(tag);
  const std::uint32_t dim = in.get_u32();
  if (est.kind == EstimatorKind::gmm) {
    est.components = static_cast<int>(in.get_u32());
    est.em.sigma_floor = in.get_f64();
    est.em.tolerance = in.get_f64();
    est.em.max_iterations = static_cast<int>(in.get_u32());
  } else {
    const std::uint32_t rule = in.get_u32();
    const double h = in.get_f64();
    est.bandwidth_floor = in.get_f64();
    if (rule > 1) throw LoadError("corrupt bank: unknown bandwidth rule");
    if (rule == 1) est.bandwidth = h;
  }
  const std::uint64_t total = in.get_u64();
  const std::uint32_t n_classes = in.get_u32();
  if (n_classes > in.remaining() / 20) throw LoadError("corrupt bank: class table exceeds file size");

  struct Entry {
    ClassId id;
    std::uint64_t count, block_bytes;
  };
  std::vector<Entry> table(n_classes);
  for (auto& e : table) {
    e.id = in.get_u32();
    e.count = in.get_u64();
    e.block_bytes = in.get_u64();
  }

  MemoryBank bank;
  try {
    bank = MemoryBank(dim, est);
  } catch (const ValidationError& e) {
    throw LoadError(std::string("corrupt bank header: ") + e.what());
  }
  for (const auto& e : table) {
    if (e.block_bytes > in.remaining()) throw LoadError("corrupt bank: class block exceeds file size");
    detail::ByteReader block(in.get_bytes(static_cast<std::size_t>(e.block_bytes)));
    auto mem = detail::decode_class(block, est.kind, dim);
    if (block.remaining() != 0 || mem.class_id != e.id || mem.count != e.count)
      throw LoadError("corrupt bank: class block for class " + std::to_string(e.id) + " is inconsistent");
    try {
      bank.add_class(std::move(mem));
    } catch (const ValidationError& err) {
      throw LoadError(std::string("corrupt bank: ") + err.what());
    }
  }
  if (in.remaining() != 8) throw LoadError("corrupt bank: unexpected trailing data");
  if (bank.total_count() != total) throw LoadError("corrupt bank: total count does not match class counts");
  return bank;
}

inline void save_bank(const MemoryBank& bank, const std::string& path) {
  detail::write_file(path, encode_bank(bank));
}

inline MemoryBank load_bank(const std::string& path) { return decode_bank(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Footprint

struct ClassFootprint {
  ClassId class_id = 0;
  std::uint64_t parameter_reals = 0;    ///< density parameters: 3 per GMM component; centers + widths for KDE
  std::uint64_t accumulator_reals = 0;  ///< sufficient statistics kept for data-incremental updates
  std::uint64_t integer_counts = 1;     ///< N_c
};

struct MemoryFootprint {
  std::vector<ClassFootprint> classes;
  std::uint64_t parameter_reals = 0;
  std::uint64_t accumulator_reals = 0;
  std::uint64_t integer_counts = 0;
};

/// Exact number of stored values. A fixed KDE bandwidth counts once per class;
/// a Silverman bandwidth is per feature and counts K times.
inline MemoryFootprint memory_footprint(const MemoryBank& bank) {
  MemoryFootprint fp;
  for (const auto& [id, mem] : bank.classes()) {
    ClassFootprint c;
    c.class_id = id;
    for (std::size_t k = 0; k < mem.models.size(); ++k) {
      if (const auto* g = std::get_if<Gmm1D>(&mem.models[k])) {
        c.parameter_reals += 3 * g->components.size();
        c.accumulator_reals += 3 * mem.suff_stats[k].size();
      } else {
        c.parameter_reals += std::get<Kde1D>(mem.models[k]).centers.size();
      }
    }
    if (bank.estimator().kind == EstimatorKind::kde) c.parameter_reals += bank.estimator().bandwidth ? 1 : mem.dim();
    fp.parameter_reals += c.parameter_reals;
    fp.accumulator_reals += c.accumulator_reals;
    fp.integer_counts += c.integer_counts;
    fp.classes.push_back(c);
  }
  return fp;
}

}  // namespace bayesmem
