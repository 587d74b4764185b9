// SPDX-License-Identifier: Apache-2.0
#include "turbo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "json.hpp"
#include "turbo/random.hpp"

namespace turbo::oracle {
namespace {

using json = nlohmann::ordered_json;

constexpr std::size_t kDim = kDesignDim;
constexpr int kPowerIterations = 200;
constexpr std::size_t kTraceLength = 24;
constexpr double kPiCurvature = 1.0;
constexpr double kEtaDrop = 0.08;  // efficiency loss at 10% mass-flow offset

// Streams: one coefficient set per surface.
enum Surface : std::size_t { kMassFlow, kPressure, kEfficiency, kFail, kChokeRange, kStallRange };

double spectral_norm_sym(const std::array<double, kDim * kDim>& B) {
  std::array<double, kDim> v;
  v.fill(1.0 / std::sqrt(static_cast<double>(kDim)));
  double lambda = 0.0;
  for (int it = 0; it < kPowerIterations; ++it) {
    std::array<double, kDim> w{};
    for (std::size_t i = 0; i < kDim; ++i)
      for (std::size_t j = 0; j < kDim; ++j) w[i] += B[i * kDim + j] * v[j];
    double n = 0.0;
    for (double x : w) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) return 0.0;
    for (std::size_t i = 0; i < kDim; ++i) v[i] = w[i] / n;
    lambda = n;
  }
  return lambda;
}

json ranges_json(const MetricRanges& r) {
  json j;
  for (std::size_t m = 0; m < 3; ++m) j[std::string(kMetricNames[m])] = {r.lo[m], r.hi[m]};
  return j;
}

std::vector<double> residual_trace(double g_fail, bool converged) {
  // Cosmetic decay curve for display only.
  std::vector<double> out(kTraceLength);
  const double rate = converged ? 0.35 + 0.4 * (1.0 - g_fail) : 0.05;
  for (std::size_t k = 0; k < kTraceLength; ++k) {
    double r = std::exp(-rate * static_cast<double>(k));
    if (!converged) r = std::max(r, 0.3);
    out[k] = r;
  }
  return out;
}

}  // namespace

ResponseSurface ResponseSurface::generate(std::uint64_t seed, std::uint64_t stream) {
  ResponseSurface s;
  auto u = [&](std::uint64_t idx) { return 2.0 * counter_uniform(seed, stream, idx) - 1.0; };
  for (std::size_t i = 0; i < kDim; ++i) s.a[i] = u(i);
  std::array<double, kDim * kDim> raw{};
  for (std::size_t i = 0; i < kDim * kDim; ++i) raw[i] = u(kDim + i);
  for (std::size_t i = 0; i < kDim; ++i)
    for (std::size_t j = 0; j < kDim; ++j)
      s.B[i * kDim + j] = 0.5 * (raw[i * kDim + j] + raw[j * kDim + i]);
  const double sn = spectral_norm_sym(s.B);
  if (sn > 0.0)
    for (double& x : s.B) x /= sn;
  // Offset so the box center maps near g = 0.5, with a small seeded shift.
  double lin = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < kDim; ++i) {
    lin += 0.5 * s.a[i];
    for (std::size_t j = 0; j < kDim; ++j) quad += 0.25 * s.B[i * kDim + j];
  }
  s.b = -(lin + quad / static_cast<double>(kDim)) + 0.25 * u(kDim + kDim * kDim);
  return s;
}

double ResponseSurface::operator()(const DesignArray& z) const {
  double lin = 0.0;
  double quad = 0.0;
  for (std::size_t i = 0; i < kDim; ++i) {
    lin += a[i] * z[i];
    double row = 0.0;
    for (std::size_t j = 0; j < kDim; ++j) row += B[i * kDim + j] * z[j];
    quad += z[i] * row;
  }
  return 0.5 * (1.0 + std::tanh(lin + quad / static_cast<double>(kDim) + b));
}

std::string OracleConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["version"] = version;
  j["ranges"] = ranges_json(ranges);
  if (std::isfinite(theta_fail))
    j["theta_fail"] = theta_fail;
  else
    j["theta_fail"] = nullptr;
  j["target_failure_rate"] = target_failure_rate;
  j["design_speed"] = design_speed;
  j["tip_radius"] = tip_radius;
  j["blade_height"] = blade_height;
  j["k0"] = k0;
  j["latency_ms"] = latency_ms;
  j["bounds"] = {{"lo", bounds.lo}, {"hi", bounds.hi}};
  return j.dump();
}

OracleConfig OracleConfig::from_json(const std::string& text) {
  OracleConfig c;
  try {
    const auto j = json::parse(text);
    c.seed = j.value("seed", c.seed);
    c.version = j.value("version", c.version);
    if (c.version != kOracleVersion)
      fail(ErrorCode::SchemaVersionMismatch, "oracle config version " + std::to_string(c.version));
    if (j.contains("ranges")) {
      for (std::size_t m = 0; m < 3; ++m) {
        const auto& r = j["ranges"].at(std::string(kMetricNames[m]));
        c.ranges.lo[m] = r.at(0).get<double>();
        c.ranges.hi[m] = r.at(1).get<double>();
      }
    }
    if (j.contains("theta_fail") && !j["theta_fail"].is_null()) c.theta_fail = j["theta_fail"].get<double>();
    c.target_failure_rate = j.value("target_failure_rate", c.target_failure_rate);
    c.design_speed = j.value("design_speed", c.design_speed);
    c.tip_radius = j.value("tip_radius", c.tip_radius);
    c.blade_height = j.value("blade_height", c.blade_height);
    c.k0 = j.value("k0", c.k0);
    c.latency_ms = j.value("latency_ms", c.latency_ms);
    if (j.contains("bounds")) {
      c.bounds.lo = j["bounds"].at("lo").get<DesignArray>();
      c.bounds.hi = j["bounds"].at("hi").get<DesignArray>();
      c.bounds.validate();
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("oracle config: ") + e.what());
  }
  return c;
}

std::string OracleConfig::hash() const { return data::fnv1a_hex(to_json()); }

std::string SimulationResult::to_json() const {
  json j;
  j["converged"] = converged;
  if (performance) {
    j["performance"] = {{"mass_flow", performance->mass_flow},
                        {"pressure_ratio", performance->pressure_ratio},
                        {"efficiency", performance->efficiency}};
  } else {
    j["performance"] = nullptr;
  }
  j["residual_trace"] = residual_trace;
  j["wall_time_ms"] = wall_time_ms;
  return j.dump();
}

Oracle::Oracle(OracleConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.bounds.validate();
  for (std::size_t m = 0; m < 3; ++m)
    if (!(cfg_.ranges.hi[m] > cfg_.ranges.lo[m])) fail(ErrorCode::InvalidRange, "oracle metric range");
  const std::uint64_t key = cfg_.seed ^ (static_cast<std::uint64_t>(cfg_.version) << 56);
  for (std::size_t s = 0; s < surf_.size(); ++s) surf_[s] = ResponseSurface::generate(key, s);
  if (!std::isfinite(cfg_.theta_fail))
    calibrate_failure_threshold(cfg_, cfg_.target_failure_rate, 100000);
}

SimulationResult Oracle::simulate(const DesignArray& x) const {
  for (double v : x)
    if (!std::isfinite(v)) fail(ErrorCode::OutOfBounds, "non-finite design coordinate");
  if (!cfg_.bounds.contains(x)) fail(ErrorCode::OutOfBounds, "design outside bounds");
  const DesignArray z = cfg_.bounds.to_unit(x);
  SimulationResult r;
  const double gf = g_fail(z);
  r.converged = !(gf > cfg_.theta_fail);
  if (r.converged) {
    std::array<double, 3> v{};
    for (std::size_t m = 0; m < 3; ++m)
      v[m] = cfg_.ranges.lo[m] + (cfg_.ranges.hi[m] - cfg_.ranges.lo[m]) * g_metric(m, z);
    r.performance = PerformanceTriple::from_array(v);
  }
  r.residual_trace = residual_trace(gf, r.converged);
  r.wall_time_ms = cfg_.latency_ms;
  return r;
}

double surge_margin(double pi_stall, double mdot_design, double pi_design, double mdot_stall) {
  return (pi_stall * mdot_design) / (pi_design * mdot_stall) - 1.0;
}

PerformanceMap Oracle::speedline(const DesignArray& x, std::size_t n_points) const {
  if (n_points < 5) fail(ErrorCode::InvalidArgument, "speedline needs at least 5 points");
  const SimulationResult base = simulate(x);
  if (!base.converged) fail(ErrorCode::UnconvergedBase, "design point did not converge");
  const DesignArray z = cfg_.bounds.to_unit(x);
  const PerformanceTriple d = *base.performance;
  const double dc = 0.04 + 0.06 * surf_[kChokeRange](z);
  const double ds = 0.04 + 0.06 * surf_[kStallRange](z);

  // Throttle position maps linearly onto the relative mass-flow deficit
  // u = 1 - mdot/mdot_d in [-dc, ds]; the design point sits on a grid node.
  const double lambda_d = dc / (dc + ds);
  auto di = static_cast<std::size_t>(std::lround(lambda_d * static_cast<double>(n_points - 1)));
  di = std::clamp<std::size_t>(di, 1, n_points - 2);

  PerformanceMap map;
  map.points.resize(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    double u;
    if (i < di)
      u = -dc * (1.0 - static_cast<double>(i) / static_cast<double>(di));
    else
      u = ds * static_cast<double>(i - di) / static_cast<double>(n_points - 1 - di);
    if (i == di) {
      map.points[i] = d;
      continue;
    }
    PerformanceTriple p;
    p.mass_flow = d.mass_flow * (1.0 - u);
    p.pressure_ratio = d.pressure_ratio * (1.0 + kPiCurvature * (u - u * u / (2.0 * ds)));
    p.efficiency = d.efficiency * (1.0 - kEtaDrop * (u / 0.1) * (u / 0.1));
    map.points[i] = p;
  }
  map.choke_index = 0;
  map.stall_index = n_points - 1;
  map.design_index = di;
  const auto& st = map.points[map.stall_index];
  map.surge_margin = surge_margin(st.pressure_ratio, d.mass_flow, d.pressure_ratio, st.mass_flow);
  return map;
}

std::string PerformanceMap::to_json() const {
  json j;
  auto pts = json::array();
  for (const auto& p : points) pts.push_back({p.mass_flow, p.pressure_ratio, p.efficiency});
  j["columns"] = {"mass_flow", "pressure_ratio", "efficiency"};
  j["points"] = std::move(pts);
  j["choke_index"] = choke_index;
  j["stall_index"] = stall_index;
  j["design_index"] = design_index;
  j["surge_margin"] = surge_margin;
  return j.dump();
}

std::string Oracle::coefficients_json() const {
  json j;
  j["config"] = json::parse(cfg_.to_json());
  auto arr = json::array();
  for (const auto& s : surf_) arr.push_back({{"a", s.a}, {"B", s.B}, {"b", s.b}});
  j["surfaces"] = std::move(arr);
  return j.dump();
}

double calibrate_failure_threshold(OracleConfig& cfg, double target_rate, std::size_t n_probe,
                                   std::uint64_t probe_seed) {
  if (!(target_rate > 0.0 && target_rate < 0.5))
    fail(ErrorCode::InvalidArgument, "target failure rate must lie in (0, 0.5)");
  if (n_probe < 2) fail(ErrorCode::InvalidArgument, "need at least two probes");
  const std::uint64_t key = cfg.seed ^ (static_cast<std::uint64_t>(cfg.version) << 56);
  const ResponseSurface gf = ResponseSurface::generate(key, kFail);
  const auto probes = data::latin_hypercube_unit(n_probe, kDim, probe_seed);
  std::vector<double> g(n_probe);
  for (std::size_t i = 0; i < n_probe; ++i) {
    DesignArray z{};
    std::copy(probes[i].begin(), probes[i].end(), z.begin());
    g[i] = gf(z);
  }
  std::sort(g.begin(), g.end());
  // Linear-interpolated quantile.
  const double pos = (1.0 - target_rate) * static_cast<double>(n_probe - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, n_probe - 1);
  const double frac = pos - static_cast<double>(lo);
  cfg.theta_fail = g[lo] + frac * (g[hi] - g[lo]);
  cfg.target_failure_rate = target_rate;
  return cfg.theta_fail;
}

void validate_material(const Material& m) {
  const bool ok = m.young_modulus > 0.0 && m.density > 0.0 && m.yield_strength > 0.0 &&
                  m.poisson_ratio > 0.0 && m.poisson_ratio < 0.5 && std::isfinite(m.young_modulus) &&
                  std::isfinite(m.density) && std::isfinite(m.yield_strength);
  if (!ok) fail(ErrorCode::InvalidMaterial, "material '" + m.name + "' has invalid properties");
}

std::filesystem::path data_dir() {
  if (const char* env = std::getenv("TURBO_DATA_DIR"); env && *env) return env;
#ifdef TURBO_DATA_DIR
  return TURBO_DATA_DIR;
#else
  return "data";
#endif
}

std::vector<Material> load_materials(const std::filesystem::path& path) {
  std::vector<Material> out;
  try {
    const auto j = json::parse(data::read_file(path));
    for (const auto& e : j.at("materials")) {
      Material m;
      m.name = e.at("name").get<std::string>();
      m.young_modulus = e.at("young_modulus").get<double>();
      m.poisson_ratio = e.at("poisson_ratio").get<double>();
      m.density = e.at("density").get<double>();
      m.yield_strength = e.at("yield_strength").get<double>();
      validate_material(m);
      out.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "materials file: " + std::string(e.what()));
  }
  return out;
}

Material find_material(const std::string& name, const std::vector<Material>& library) {
  for (const auto& m : library)
    if (m.name == name) return m;
  fail(ErrorCode::InvalidMaterial, "unknown material '" + name + "'");
}

double stress_analysis(const DesignArray& x, const Material& m, double speed, const OracleConfig& cfg) {
  validate_material(m);
  if (!(speed > 0.0) || !std::isfinite(speed)) fail(ErrorCode::InvalidArgument, "speed must be positive");
  const auto v = geometry::BladeParamVector::unflatten(x);
  if (!(v.tip.chord > 0.0) || !(v.hub.t_max > 0.0)) fail(ErrorCode::InvalidParams, "chord and t_max must be positive");
  const double k_shape = cfg.k0 * (1.0 + 50.0 * std::abs(v.tip.bend) / v.tip.chord) * (0.05 / v.hub.t_max);
  return m.density * (speed * speed) * cfg.tip_radius * cfg.blade_height * k_shape;
}

}  // namespace turbo::oracle
