// SPDX-License-Identifier: Apache-2.0
//
// Synthetic physics evaluator: design-point performance with a failure
// region, a centrifugal root-stress proxy, and speedline maps.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "turbo/common.hpp"
#include "turbo/data.hpp"
#include "turbo/geometry.hpp"

namespace turbo::oracle {

inline constexpr int kOracleVersion = 1;

struct MetricRanges {
  std::array<double, 3> lo = {13.0, 1.40, 0.82};
  std::array<double, 3> hi = {17.0, 1.80, 0.92};
};

struct OracleConfig {
  std::uint64_t seed = 2024;
  int version = kOracleVersion;
  MetricRanges ranges;
  /// Failure threshold on g_fail; NaN means "calibrate on construction".
  double theta_fail = std::numeric_limits<double>::quiet_NaN();
  double target_failure_rate = 0.05;
  double design_speed = 1300.0;  // rad/s
  double tip_radius = 0.25;      // m
  double blade_height = 0.10;    // m
  double k0 = 1.0;
  /// Emulated solver latency per call; reported as wall_time_ms.
  double latency_ms = 0.0;
  data::Bounds bounds = data::Bounds::defaults();

  std::string to_json() const;
  static OracleConfig from_json(const std::string& text);
  /// FNV hash of to_json(); recorded as dataset provenance.
  std::string hash() const;
};

struct SimulationResult {
  bool converged = false;
  std::optional<PerformanceTriple> performance;
  std::vector<double> residual_trace;
  double wall_time_ms = 0.0;
  std::string to_json() const;
  bool operator==(const SimulationResult&) const = default;
};

struct Material {
  std::string name;
  double young_modulus = 0.0;
  double poisson_ratio = 0.0;
  double density = 0.0;
  double yield_strength = 0.0;
};

void validate_material(const Material& m);
std::filesystem::path data_dir();
std::vector<Material> load_materials(const std::filesystem::path& path = data_dir() / "materials.json");
Material find_material(const std::string& name, const std::vector<Material>& library);

struct PerformanceMap {
  std::vector<PerformanceTriple> points;  ///< ordered by decreasing mass flow
  std::size_t choke_index = 0;
  std::size_t stall_index = 0;
  std::size_t design_index = 0;
  double surge_margin = 0.0;
  std::string to_json() const;
};

double surge_margin(double pi_stall, double mdot_design, double pi_design, double mdot_stall);

/// 0.5 (1 + tanh(a.z + z'Bz/21 + b)) with seeded coefficients.
struct ResponseSurface {
  std::array<double, kDesignDim> a{};
  std::array<double, kDesignDim * kDesignDim> B{};
  double b = 0.0;

  static ResponseSurface generate(std::uint64_t seed, std::uint64_t stream);
  double operator()(const DesignArray& z) const;
};

class Oracle {
 public:
  explicit Oracle(OracleConfig cfg = {});

  const OracleConfig& config() const { return cfg_; }
  const data::Bounds& bounds() const { return cfg_.bounds; }

  /// Normalized response in (0, 1): metric 0..2, failure surface, or the two
  /// speedline range surfaces.
  double g_metric(std::size_t metric, const DesignArray& z) const { return surf_[metric](z); }
  double g_fail(const DesignArray& z) const { return surf_[3](z); }

  SimulationResult simulate(const DesignArray& x) const;
  SimulationResult simulate(const geometry::BladeParamVector& x) const { return simulate(x.flatten()); }
  PerformanceMap speedline(const DesignArray& x, std::size_t n_points = 11) const;

  std::string coefficients_json() const;

 private:
  OracleConfig cfg_;
  std::array<ResponseSurface, 6> surf_;
};

/// (1 - target_rate)-quantile of g_fail over an LHS probe set; stored in cfg.
double calibrate_failure_threshold(OracleConfig& cfg, double target_rate, std::size_t n_probe,
                                   std::uint64_t probe_seed = 7);

double stress_analysis(const DesignArray& x, const Material& m, double speed,
                       const OracleConfig& cfg = {});

}  // namespace turbo::oracle
