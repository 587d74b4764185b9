// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace turbo {

/// Number of blade design variables (3 sections x 7 parameters).
inline constexpr std::size_t kDesignDim = 21;

using DesignArray = std::array<double, kDesignDim>;

enum class ErrorCode {
  InvalidArgument,
  InvalidParams,
  DegenerateProfile,
  UnsupportedFormat,
  ShapeMismatch,
  NonFiniteValue,
  NoForwardRecord,
  OddDim,
  InvalidRange,
  StepOutOfRange,
  UntrainedNet,
  UnfittedStats,
  DatasetTooSmall,
  EmptySet,
  UnknownMetricName,
  MalformedReply,
  ClientError,
  OutOfBounds,
  InvalidMaterial,
  UnconvergedBase,
  DegenerateColumn,
  ConstantTruth,
  IoError,
  SchemaVersionMismatch,
  OracleError,
  UnparseableRequest,
  ConflictingTasks,
  NodeFailure,
  GuardUndefined,
  NoEnabledEdge,
  NotFound,
  Forbidden,
  Conflict,
  Capacity,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

/// Design-point performance: mass flow (kg/s), total pressure ratio, isentropic efficiency.
struct PerformanceTriple {
  double mass_flow = 0.0;
  double pressure_ratio = 0.0;
  double efficiency = 0.0;

  std::array<double, 3> to_array() const { return {mass_flow, pressure_ratio, efficiency}; }
  static PerformanceTriple from_array(const std::array<double, 3>& a) { return {a[0], a[1], a[2]}; }
  bool operator==(const PerformanceTriple&) const = default;
};

inline constexpr std::array<std::string_view, 3> kMetricNames = {"mass_flow", "pressure_ratio",
                                                                 "efficiency"};

/// Index of a performance metric by canonical name or common alias; -1 if unknown.
int metric_index(std::string_view name) noexcept;

}  // namespace turbo
