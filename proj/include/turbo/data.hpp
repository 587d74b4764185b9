// SPDX-License-Identifier: Apache-2.0
//
// Sampling, datasets, normalization and regression metrics.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "turbo/common.hpp"

namespace turbo::oracle {
class Oracle;
}

namespace turbo::data {

/// Per-variable box for the 21 design coordinates.
struct Bounds {
  DesignArray lo{};
  DesignArray hi{};

  /// beta1k [30,70] deg, beta2k [20,60] deg, chord [0.04,0.10] m, t_max [0.02,0.10],
  /// t_pos [0.25,0.65], bend and sweep [-0.01,0.01] m; same box for every section.
  static Bounds defaults();
  static Bounds load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void validate() const;
  bool contains(const DesignArray& x) const;
  DesignArray to_unit(const DesignArray& x) const;
  DesignArray from_unit(const DesignArray& z) const;
  /// Clamp into the box; returns the number of coordinates moved.
  std::size_t clamp(DesignArray& x) const;
};

using Row = std::vector<double>;
using Table = std::vector<Row>;

/// n samples in [0,1)^dim, one per stratum per dimension.
Table latin_hypercube_unit(std::size_t n, std::size_t dim, std::uint64_t seed);
std::vector<DesignArray> latin_hypercube(std::size_t n, const Bounds& bounds, std::uint64_t seed);

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct Provenance {
  std::string oracle_hash;
  std::uint64_t seed = 0;
  std::size_t n_attempt = 0;
  bool operator==(const Provenance&) const = default;
};

struct Dataset {
  std::vector<DesignArray> inputs;
  std::vector<PerformanceTriple> labels;
  std::vector<Split> split;
  Provenance provenance;

  std::size_t size() const { return inputs.size(); }
  void validate() const;
  /// Rows with the given tag.
  Dataset subset(Split tag) const;
  /// Stable content hash (hex) over rows, tags and provenance.
  std::string hash() const;
  bool operator==(const Dataset&) const = default;
};

/// Tags ~test_fraction of rows as Test using a seeded permutation.
std::vector<Split> make_split(std::size_t n, double test_fraction, std::uint64_t seed);

/// LHS over `bounds`, evaluate each sample, keep converged rows.
Dataset generate_dataset(std::size_t n_attempt, const oracle::Oracle& oracle, const Bounds& bounds,
                         std::uint64_t seed);

// Normalization ------------------------------------------------------------

enum class NormMode { ZScore, Range };

struct NormStats {
  NormMode mode = NormMode::ZScore;
  Row center;  ///< mean (z-score) or min (range)
  Row scale;   ///< std (z-score) or max-min (range)

  bool fitted() const { return !scale.empty(); }
  std::size_t dim() const { return scale.size(); }
  Row apply(const Row& x) const;
  Row inverse(const Row& z) const;
  double apply(std::size_t col, double v) const { return (v - center[col]) / scale[col]; }
  double inverse(std::size_t col, double v) const { return v * scale[col] + center[col]; }
  Table apply(const Table& t) const;
  Table inverse(const Table& t) const;
  std::string to_json() const;
  static NormStats from_json(const std::string& text);
  bool operator==(const NormStats&) const = default;
};

/// Fit per-column statistics. Zero-variance columns throw DegenerateColumn
/// unless `allow_degenerate`, in which case they get unit scale.
NormStats fit_norm(const Table& rows, NormMode mode, bool allow_degenerate = false);

Table to_table(const std::vector<DesignArray>& xs);
Table to_table(const std::vector<PerformanceTriple>& ys);

// Metrics ------------------------------------------------------------------

struct RegressionMetrics {
  double r2 = 0.0;
  double nrmse = 0.0;
  double mae = 0.0;
};

RegressionMetrics regression_metrics(const std::vector<double>& truth, const std::vector<double>& pred);

// Files --------------------------------------------------------------------

inline constexpr int kSchemaVersion = 1;

/// CSV rows plus `<path>.json` sidecar.
void save_csv(const Dataset& d, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path);
/// Columnar little-endian binary with a version byte.
void save_binary(const Dataset& d, const std::filesystem::path& path);
Dataset load_binary(const std::filesystem::path& path);
/// Dispatch on extension (.csv or anything else = binary).
void save(const Dataset& d, const std::filesystem::path& path);
Dataset load(const std::filesystem::path& path);

std::vector<std::string> csv_header();

/// Atomic file publication: write to a sibling temp file, then rename.
void write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

/// FNV-1a 64-bit, hex encoded.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace turbo::data
