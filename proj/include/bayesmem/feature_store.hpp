#pragma once

// Labeled feature-vector datasets: shard I/O, L2 normalization, feature
// subsampling and per-class splitting.
//
// Binary shard layout (little-endian):
//   "FVS1" | u32 K | u32 N | N x ( u32 label | K x f32 value )
// CSV layout: one line per record, "label,v0,...,v{K-1}"; an optional
// leading column-name line is skipped.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bayesmem/detail/binary_io.hpp"
#include "bayesmem/detail/random.hpp"
#include "bayesmem/error.hpp"

namespace bayesmem {

using ClassId = std::uint32_t;

struct FeatureRecord {
  ClassId label = 0;
  std::vector<double> values;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureDataset {
  std::size_t dim = 0;
  std::vector<FeatureRecord> records;
  bool normalized = false;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  friend bool operator==(const FeatureDataset&, const FeatureDataset&) = default;
};

enum class ShardFormat { binary, csv };

/// Picks CSV for a ".csv" extension, binary otherwise.
inline ShardFormat format_from_path(std::string_view path) {
  return path.size() >= 4 && path.substr(path.size() - 4) == ".csv" ? ShardFormat::csv
                                                                    : ShardFormat::binary;
}

namespace detail {

inline void check_finite(const FeatureRecord& r, std::size_t index) {
  for (double v : r.values)
    if (!std::isfinite(v))
      throw LoadError("record " + std::to_string(index) + " contains a non-finite value",
                      static_cast<long long>(index));
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline FeatureDataset decode_binary_shard(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < 12 || !in.match_tag("FVS1")) throw LoadError("malformed shard header: bad magic");
  const std::uint32_t dim = in.get_u32();
  const std::uint32_t n = in.get_u32();
  if (dim == 0) throw LoadError("malformed shard header: K = 0");
  const std::size_t record_bytes = 4 + 4 * static_cast<std::size_t>(dim);

  FeatureDataset ds;
  ds.dim = dim;
  ds.records.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (in.remaining() < record_bytes)
      throw LoadError("record " + std::to_string(i) + " is truncated (record length mismatch)", i);
    FeatureRecord r;
    r.label = in.get_u32();
    r.values.resize(dim);
    for (auto& v : r.values) v = static_cast<double>(in.get_f32());
    detail::check_finite(r, i);
    ds.records.push_back(std::move(r));
  }
  if (in.remaining() != 0)
    throw LoadError("shard has " + std::to_string(in.remaining()) + " trailing bytes after record " +
                        std::to_string(n == 0 ? 0 : n - 1) + " (record length mismatch)",
                    n == 0 ? -1 : static_cast<long long>(n) - 1);
  return ds;
}

inline std::vector<std::uint8_t> encode_binary_shard(const FeatureDataset& ds) {
  detail::ByteWriter out;
  out.put_tag("FVS1");
  out.put_u32(static_cast<std::uint32_t>(ds.dim));
  out.put_u32(static_cast<std::uint32_t>(ds.records.size()));
  for (const auto& r : ds.records) {
    out.put_u32(r.label);
    for (double v : r.values) out.put_f32(static_cast<float>(v));
  }
  return out.take();
}

inline FeatureDataset parse_csv_shard(std::string_view text) {
  FeatureDataset ds;
  std::size_t line_start = 0;
  std::size_t index = 0;
  bool first_line = true;
  while (line_start < text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    const std::string_view line = detail::trim(text.substr(line_start, line_end - line_start));
    line_start = line_end + 1;
    if (line.empty()) continue;

    std::vector<std::string_view> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(detail::trim(line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos)));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    const auto bad = [&](const std::string& why) {
      return LoadError("record " + std::to_string(index) + ": " + why, static_cast<long long>(index));
    };
    if (fields.size() < 2) throw bad("expected a label and at least one value");

    FeatureRecord r;
    {
      const auto f = fields[0];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), r.label);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) {
        // a leading column-name line such as "label,f0,f1" is tolerated
        if (first_line && !f.empty() && !(f.front() >= '0' && f.front() <= '9') && f.front() != '-') {
          first_line = false;
          continue;
        }
        throw bad("invalid label '" + std::string(f) + "'");
      }
    }
    first_line = false;
    r.values.reserve(fields.size() - 1);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      const auto f = fields[j];
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) throw bad("invalid value '" + std::string(f) + "'");
      r.values.push_back(v);
    }
    if (ds.records.empty()) {
      ds.dim = r.values.size();
    } else if (r.values.size() != ds.dim) {
      throw bad("record length mismatch: expected " + std::to_string(ds.dim) + " values, got " +
                std::to_string(r.values.size()));
    }
    detail::check_finite(r, index);
    ds.records.push_back(std::move(r));
    ++index;
  }
  if (ds.records.empty()) throw LoadError("CSV shard contains no records; K is undefined");
  return ds;
}

inline std::string format_csv_shard(const FeatureDataset& ds) {
  std::string out;
  char buf[32];
  for (const auto& r : ds.records) {
    out += std::to_string(r.label);
    for (double v : r.values) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

/// Loads a shard. K comes from the header (binary) or the first line (CSV);
/// records keep file order and the result is never marked normalized.
inline FeatureDataset load_shard(const std::string& path, ShardFormat format) {
  const auto bytes = detail::read_file(path);
  if (format == ShardFormat::binary) return decode_binary_shard(bytes);
  return parse_csv_shard(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

inline FeatureDataset load_shard(const std::string& path) { return load_shard(path, format_from_path(path)); }

inline void write_shard(const FeatureDataset& ds, const std::string& path, ShardFormat format) {
  if (format == ShardFormat::binary) {
    detail::write_file(path, encode_binary_shard(ds));
  } else {
    const std::string text = format_csv_shard(ds);
    detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
}

inline void write_shard(const FeatureDataset& ds, const std::string& path) {
  write_shard(ds, path, format_from_path(path));
}

/// Scales each record to unit Euclidean norm. Applying it to an already
/// normalized dataset changes values by at most rounding.
inline FeatureDataset l2_normalize(const FeatureDataset& ds) {
  FeatureDataset out = ds;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    auto& values = out.records[i].values;
    double sum_sq = 0.0;
    for (double v : values) sum_sq += v * v;
    const double norm = std::sqrt(sum_sq);
    if (!(norm > 0.0))
      throw ValidationError("record " + std::to_string(i) + " is an all-zero feature vector; cannot normalize");
    for (double& v : values) v /= norm;
  }
  out.normalized = true;
  return out;
}

/// Restricts every record to the given feature indices, in the given order.
inline FeatureDataset project_features(const FeatureDataset& ds, std::span<const std::size_t> indices) {
  for (std::size_t idx : indices)
    if (idx >= ds.dim)
      throw ValidationError("feature index " + std::to_string(idx) + " out of range for K=" + std::to_string(ds.dim));
  FeatureDataset out;
  out.dim = indices.size();
  out.normalized = false;
  out.records.reserve(ds.records.size());
  for (const auto& r : ds.records) {
    FeatureRecord p{r.label, {}};
    p.values.reserve(indices.size());
    for (std::size_t idx : indices) p.values.push_back(r.values[idx]);
    out.records.push_back(std::move(p));
  }
  return out;
}

struct FeatureSubsample {
  FeatureDataset dataset;
  std::vector<std::size_t> indices;
};

/// Keeps `count` feature dimensions drawn without replacement. The index list
/// is returned so the same projection can be applied to test data.
inline FeatureSubsample subsample_features(const FeatureDataset& ds, std::size_t count, std::uint64_t seed) {
  if (count < 1 || count > ds.dim)
    throw ValidationError("feature subsample count " + std::to_string(count) + " outside [1, " +
                          std::to_string(ds.dim) + "]");
  detail::Rng rng(seed);
  auto indices = detail::sample_indices(ds.dim, count, rng);
  auto projected = project_features(ds, indices);
  return {std::move(projected), std::move(indices)};
}

inline std::map<ClassId, std::vector<FeatureRecord>> split_by_class(const FeatureDataset& ds) {
  if (ds.empty()) throw ValidationError("cannot split an empty dataset by class");
  std::map<ClassId, std::vector<FeatureRecord>> out;
  for (const auto& r : ds.records) out[r.label].push_back(r);
  return out;
}

}  // namespace bayesmem
