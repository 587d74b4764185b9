// SPDX-License-Identifier: Apache-2.0
#include "turbo/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "turbo/geometry.hpp"
#include "turbo/oracle.hpp"
#include "turbo/random.hpp"

namespace turbo::data {
namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'T', 'B', 'D', 'S'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) fail(ErrorCode::IoError, "truncated binary dataset");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(const std::string& in, std::size_t& pos) { return std::bit_cast<double>(get_u64(in, pos)); }

std::string encode_binary(const Dataset& d) {
  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kSchemaVersion));
  const std::size_t n = d.size();
  put_u64(out, n);
  put_u64(out, d.provenance.oracle_hash.size());
  out += d.provenance.oracle_hash;
  put_u64(out, d.provenance.seed);
  put_u64(out, d.provenance.n_attempt);
  for (std::size_t c = 0; c < kDesignDim; ++c)
    for (std::size_t i = 0; i < n; ++i) put_f64(out, d.inputs[i][c]);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i) put_f64(out, d.labels[i].to_array()[c]);
  for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>(d.split[i]));
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') fail(ErrorCode::IoError, "bad number '" + s + "'");
  return v;
}

}  // namespace

Bounds Bounds::defaults() {
  Bounds b;
  const std::array<double, 7> lo = {30.0, 20.0, 0.04, 0.02, 0.25, -0.01, -0.01};
  const std::array<double, 7> hi = {70.0, 60.0, 0.10, 0.10, 0.65, 0.01, 0.01};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < 7; ++k) {
      b.lo[s * 7 + k] = lo[k];
      b.hi[s * 7 + k] = hi[k];
    }
  return b;
}

Bounds Bounds::load(const std::filesystem::path& path) {
  Bounds b = defaults();
  try {
    const auto j = json::parse(read_file(path));
    // Either full 21-vectors or per-parameter pairs keyed by name.
    if (j.contains("lo")) {
      b.lo = j.at("lo").get<DesignArray>();
      b.hi = j.at("hi").get<DesignArray>();
    } else {
      for (std::size_t i = 0; i < kDesignDim; ++i) {
        const std::string full(geometry::param_name(i));
        const std::string shortname = full.substr(full.find('_') + 1);
        const json* e = nullptr;
        if (j.contains(full))
          e = &j.at(full);
        else if (j.contains(shortname))
          e = &j.at(shortname);
        if (e) {
          b.lo[i] = e->at(0).get<double>();
          b.hi[i] = e->at(1).get<double>();
        }
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "bounds file: " + std::string(e.what()));
  }
  b.validate();
  return b;
}

void Bounds::save(const std::filesystem::path& path) const {
  json j;
  j["lo"] = lo;
  j["hi"] = hi;
  write_file(path, j.dump(2) + "\n");
}

void Bounds::validate() const {
  for (std::size_t i = 0; i < kDesignDim; ++i)
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(hi[i] > lo[i]))
      fail(ErrorCode::InvalidRange, "bounds for " + std::string(geometry::param_name(i)));
}

bool Bounds::contains(const DesignArray& x) const {
  for (std::size_t i = 0; i < kDesignDim; ++i)
    if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
  return true;
}

DesignArray Bounds::to_unit(const DesignArray& x) const {
  DesignArray z{};
  for (std::size_t i = 0; i < kDesignDim; ++i) z[i] = (x[i] - lo[i]) / (hi[i] - lo[i]);
  return z;
}

DesignArray Bounds::from_unit(const DesignArray& z) const {
  DesignArray x{};
  for (std::size_t i = 0; i < kDesignDim; ++i)
    x[i] = std::clamp(lo[i] + z[i] * (hi[i] - lo[i]), lo[i], hi[i]);
  return x;
}

std::size_t Bounds::clamp(DesignArray& x) const {
  std::size_t moved = 0;
  for (std::size_t i = 0; i < kDesignDim; ++i) {
    const double c = std::clamp(x[i], lo[i], hi[i]);
    if (c != x[i]) ++moved;
    x[i] = c;
  }
  return moved;
}

Table latin_hypercube_unit(std::size_t n, std::size_t dim, std::uint64_t seed) {
  if (n == 0) fail(ErrorCode::InvalidArgument, "LHS needs n >= 1");
  Table out(n, Row(dim));
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  const double top = std::nextafter(1.0, 0.0);
  for (std::size_t d = 0; d < dim; ++d) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    for (std::size_t i = 0; i < n; ++i) {
      const double v = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
      out[i][d] = std::min(v, top);
    }
  }
  return out;
}

std::vector<DesignArray> latin_hypercube(std::size_t n, const Bounds& bounds, std::uint64_t seed) {
  bounds.validate();
  const Table u = latin_hypercube_unit(n, kDesignDim, seed);
  std::vector<DesignArray> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    DesignArray z{};
    std::copy(u[i].begin(), u[i].end(), z.begin());
    out[i] = bounds.from_unit(z);
  }
  return out;
}

void Dataset::validate() const {
  if (labels.size() != inputs.size() || split.size() != inputs.size())
    fail(ErrorCode::ShapeMismatch, "dataset columns have different lengths");
  if (provenance.oracle_hash.empty()) fail(ErrorCode::InvalidArgument, "dataset has no provenance");
}

Dataset Dataset::subset(Split tag) const {
  Dataset out;
  out.provenance = provenance;
  for (std::size_t i = 0; i < size(); ++i) {
    if (split[i] != tag) continue;
    out.inputs.push_back(inputs[i]);
    out.labels.push_back(labels[i]);
    out.split.push_back(tag);
  }
  return out;
}

std::string Dataset::hash() const { return fnv1a_hex(encode_binary(*this)); }

std::vector<Split> make_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));
  std::vector<Split> out(n, Split::Train);
  for (std::size_t k = 0; k < n_test && k < n; ++k) out[idx[k]] = Split::Test;
  return out;
}

Dataset generate_dataset(std::size_t n_attempt, const oracle::Oracle& oracle, const Bounds& bounds,
                         std::uint64_t seed) {
  const auto xs = latin_hypercube(n_attempt, bounds, seed);
  Dataset d;
  for (const auto& x : xs) {
    oracle::SimulationResult r;
    try {
      r = oracle.simulate(x);
    } catch (const Error& e) {
      fail(ErrorCode::OracleError, e.what());
    }
    if (!r.converged) continue;
    d.inputs.push_back(x);
    d.labels.push_back(*r.performance);
  }
  d.provenance = {oracle.config().hash(), seed, n_attempt};
  d.split = make_split(d.size(), 0.1, derive_seed(seed, 1));
  return d;
}

// Normalization ------------------------------------------------------------

Row NormStats::apply(const Row& x) const {
  if (!fitted()) fail(ErrorCode::UnfittedStats, "normalization not fitted");
  if (x.size() != dim()) fail(ErrorCode::ShapeMismatch, "row width differs from stats");
  Row z(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) z[c] = apply(c, x[c]);
  return z;
}

Row NormStats::inverse(const Row& z) const {
  if (!fitted()) fail(ErrorCode::UnfittedStats, "normalization not fitted");
  if (z.size() != dim()) fail(ErrorCode::ShapeMismatch, "row width differs from stats");
  Row x(z.size());
  for (std::size_t c = 0; c < z.size(); ++c) x[c] = inverse(c, z[c]);
  return x;
}

Table NormStats::apply(const Table& t) const {
  Table out;
  out.reserve(t.size());
  for (const auto& r : t) out.push_back(apply(r));
  return out;
}

Table NormStats::inverse(const Table& t) const {
  Table out;
  out.reserve(t.size());
  for (const auto& r : t) out.push_back(inverse(r));
  return out;
}

std::string NormStats::to_json() const {
  json j;
  j["mode"] = mode == NormMode::ZScore ? "zscore" : "range";
  j["center"] = center;
  j["scale"] = scale;
  return j.dump();
}

NormStats NormStats::from_json(const std::string& text) {
  NormStats s;
  try {
    const auto j = json::parse(text);
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "zscore")
      s.mode = NormMode::ZScore;
    else if (mode == "range")
      s.mode = NormMode::Range;
    else
      fail(ErrorCode::InvalidArgument, "unknown normalization mode " + mode);
    s.center = j.at("center").get<Row>();
    s.scale = j.at("scale").get<Row>();
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("norm stats: ") + e.what());
  }
  if (s.center.size() != s.scale.size()) fail(ErrorCode::ShapeMismatch, "norm stats widths");
  return s;
}

NormStats fit_norm(const Table& rows, NormMode mode, bool allow_degenerate) {
  if (rows.size() < 2) fail(ErrorCode::InvalidArgument, "normalization needs at least two rows");
  const std::size_t dim = rows.front().size();
  for (const auto& r : rows)
    if (r.size() != dim) fail(ErrorCode::ShapeMismatch, "ragged table");
  NormStats s;
  s.mode = mode;
  s.center.assign(dim, 0.0);
  s.scale.assign(dim, 0.0);
  const double n = static_cast<double>(rows.size());
  for (std::size_t c = 0; c < dim; ++c) {
    if (mode == NormMode::ZScore) {
      double mean = 0.0;
      for (const auto& r : rows) mean += r[c];
      mean /= n;
      double var = 0.0;
      for (const auto& r : rows) var += (r[c] - mean) * (r[c] - mean);
      s.center[c] = mean;
      s.scale[c] = std::sqrt(var / n);
    } else {
      double lo = rows.front()[c];
      double hi = lo;
      for (const auto& r : rows) {
        lo = std::min(lo, r[c]);
        hi = std::max(hi, r[c]);
      }
      s.center[c] = lo;
      s.scale[c] = hi - lo;
    }
    if (!(s.scale[c] > 0.0)) {
      if (!allow_degenerate) fail(ErrorCode::DegenerateColumn, "column " + std::to_string(c) + " is constant");
      s.scale[c] = 1.0;
    }
  }
  return s;
}

Table to_table(const std::vector<DesignArray>& xs) {
  Table t;
  t.reserve(xs.size());
  for (const auto& x : xs) t.emplace_back(x.begin(), x.end());
  return t;
}

Table to_table(const std::vector<PerformanceTriple>& ys) {
  Table t;
  t.reserve(ys.size());
  for (const auto& y : ys) {
    const auto a = y.to_array();
    t.emplace_back(a.begin(), a.end());
  }
  return t;
}

// Metrics ------------------------------------------------------------------

RegressionMetrics regression_metrics(const std::vector<double>& truth, const std::vector<double>& pred) {
  if (truth.size() != pred.size()) fail(ErrorCode::ShapeMismatch, "truth and prediction lengths differ");
  if (truth.size() < 2) fail(ErrorCode::InvalidArgument, "metrics need at least two points");
  const double n = static_cast<double>(truth.size());
  double mean = 0.0;
  for (double t : truth) mean += t;
  mean /= n;
  double ss_tot = 0.0;
  double ss_res = 0.0;
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = truth[i] - pred[i];
    ss_res += e * e;
    abs_sum += std::abs(e);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  const auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
  if (!(ss_tot > 0.0) || *hi == *lo) fail(ErrorCode::ConstantTruth, "truth series is constant");
  RegressionMetrics m;
  m.r2 = 1.0 - ss_res / ss_tot;
  m.nrmse = std::sqrt(ss_res / n) / (*hi - *lo);
  m.mae = abs_sum / n;
  return m;
}

// Files --------------------------------------------------------------------

std::vector<std::string> csv_header() {
  std::vector<std::string> h;
  for (std::size_t i = 0; i < kDesignDim; ++i) h.emplace_back(geometry::param_name(i));
  for (auto m : kMetricNames) h.emplace_back(m);
  h.emplace_back("split");
  return h;
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  std::string out;
  const auto header = csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += "\n";
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (double v : d.inputs[r]) out += format_double(v) + ",";
    for (double v : d.labels[r].to_array()) out += format_double(v) + ",";
    out += d.split[r] == Split::Train ? "train" : "test";
    out += "\n";
  }
  json side;
  side["schema_version"] = kSchemaVersion;
  side["rows"] = d.size();
  side["columns"] = header;
  side["provenance"] = {{"oracle_hash", d.provenance.oracle_hash},
                        {"seed", d.provenance.seed},
                        {"n_attempt", d.provenance.n_attempt}};
  write_file(path, out);
  write_file(path.string() + ".json", side.dump(2) + "\n");
}

Dataset load_csv(const std::filesystem::path& path) {
  Dataset d;
  json side;
  try {
    side = json::parse(read_file(path.string() + ".json"));
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "dataset sidecar: " + std::string(e.what()));
  }
  if (side.value("schema_version", -1) != kSchemaVersion)
    fail(ErrorCode::SchemaVersionMismatch, "dataset sidecar schema_version");
  try {
    const auto& p = side.at("provenance");
    d.provenance = {p.at("oracle_hash").get<std::string>(), p.at("seed").get<std::uint64_t>(),
                    p.at("n_attempt").get<std::size_t>()};
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, "dataset provenance: " + std::string(e.what()));
  }
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  const std::size_t width = kDesignDim + 3 + 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != width) fail(ErrorCode::IoError, "CSV row has wrong width");
    DesignArray x{};
    for (std::size_t c = 0; c < kDesignDim; ++c) x[c] = parse_double(cells[c]);
    std::array<double, 3> y{};
    for (std::size_t c = 0; c < 3; ++c) y[c] = parse_double(cells[kDesignDim + c]);
    d.inputs.push_back(x);
    d.labels.push_back(PerformanceTriple::from_array(y));
    if (cells.back() == "train")
      d.split.push_back(Split::Train);
    else if (cells.back() == "test")
      d.split.push_back(Split::Test);
    else
      fail(ErrorCode::IoError, "bad split tag '" + cells.back() + "'");
  }
  if (side.value("rows", std::size_t{0}) != d.size()) fail(ErrorCode::IoError, "row count differs from sidecar");
  return d;
}

void save_binary(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  write_file(path, encode_binary(d));
}

Dataset load_binary(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  if (in.size() < 5 || std::memcmp(in.data(), kMagic, 4) != 0) fail(ErrorCode::IoError, "not a dataset file");
  if (static_cast<unsigned char>(in[4]) != kSchemaVersion)
    fail(ErrorCode::SchemaVersionMismatch, "binary dataset version " + std::to_string(in[4]));
  std::size_t pos = 5;
  Dataset d;
  const std::size_t n = get_u64(in, pos);
  const std::size_t hlen = get_u64(in, pos);
  if (pos + hlen > in.size()) fail(ErrorCode::IoError, "truncated binary dataset");
  d.provenance.oracle_hash = in.substr(pos, hlen);
  pos += hlen;
  d.provenance.seed = get_u64(in, pos);
  d.provenance.n_attempt = get_u64(in, pos);
  if (in.size() - pos != n * (kDesignDim + 3) * 8 + n) fail(ErrorCode::IoError, "binary dataset size");
  d.inputs.resize(n);
  d.labels.resize(n);
  d.split.resize(n);
  for (std::size_t c = 0; c < kDesignDim; ++c)
    for (std::size_t i = 0; i < n; ++i) d.inputs[i][c] = get_f64(in, pos);
  std::vector<std::array<double, 3>> y(n);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < n; ++i) y[i][c] = get_f64(in, pos);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = PerformanceTriple::from_array(y[i]);
  for (std::size_t i = 0; i < n; ++i) {
    const auto tag = static_cast<unsigned char>(in[pos++]);
    if (tag > 1) fail(ErrorCode::IoError, "bad split tag");
    d.split[i] = static_cast<Split>(tag);
  }
  return d;
}

void save(const Dataset& d, const std::filesystem::path& path) {
  if (path.extension() == ".csv")
    save_csv(d, path);
  else
    save_binary(d, path);
}

Dataset load(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? load_csv(path) : load_binary(path);
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "cannot publish " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace turbo::data
