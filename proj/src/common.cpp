// SPDX-License-Identifier: Apache-2.0
#include "turbo/common.hpp"

#include <cmath>

#include "turbo/random.hpp"

namespace turbo {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::DegenerateProfile: return "DegenerateProfile";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NoForwardRecord: return "NoForwardRecord";
    case ErrorCode::OddDim: return "OddDim";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::UntrainedNet: return "UntrainedNet";
    case ErrorCode::UnfittedStats: return "UnfittedStats";
    case ErrorCode::DatasetTooSmall: return "DatasetTooSmall";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::UnknownMetricName: return "UnknownMetricName";
    case ErrorCode::MalformedReply: return "MalformedReply";
    case ErrorCode::ClientError: return "ClientError";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::InvalidMaterial: return "InvalidMaterial";
    case ErrorCode::UnconvergedBase: return "UnconvergedBase";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::ConstantTruth: return "ConstantTruth";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::OracleError: return "OracleError";
    case ErrorCode::UnparseableRequest: return "UnparseableRequest";
    case ErrorCode::ConflictingTasks: return "ConflictingTasks";
    case ErrorCode::NodeFailure: return "NodeFailure";
    case ErrorCode::GuardUndefined: return "GuardUndefined";
    case ErrorCode::NoEnabledEdge: return "NoEnabledEdge";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Forbidden: return "Forbidden";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::Capacity: return "Capacity";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

int metric_index(std::string_view name) noexcept {
  if (name == "mass_flow" || name == "mdot" || name == "m_dot") return 0;
  if (name == "pressure_ratio" || name == "pi" || name == "pr") return 1;
  if (name == "efficiency" || name == "eta") return 2;
  return -1;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(master ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  const std::uint64_t h = splitmix64(derive_seed(seed, stream) ^ splitmix64(index));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v = engine_();
  while (v >= limit) v = engine_();
  return v % n;
}

}  // namespace turbo
