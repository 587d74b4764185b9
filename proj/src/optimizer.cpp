// SPDX-License-Identifier: Apache-2.0
#include "turbo/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "turbo/geometry.hpp"
#include "turbo/random.hpp"

namespace turbo::opt {
namespace {

using nlohmann::json;

constexpr double kMeanLo = -0.1;
constexpr double kMeanHi = 1.1;

std::string canonical(const std::string& name) {
  const int i = metric_index(name);
  return i >= 0 ? std::string(kMetricNames[static_cast<std::size_t>(i)]) : name;
}

double lookup(const Metrics& m, const std::string& name) {
  const auto it = m.find(canonical(name));
  if (it == m.end()) fail(ErrorCode::UnknownMetricName, "metric not available: " + name);
  return it->second;
}

const char* dir_name(Direction d) { return d == Direction::Maximize ? "maximize" : "minimize"; }
Direction parse_dir(const std::string& s) {
  if (s == "maximize" || s == "max") return Direction::Maximize;
  if (s == "minimize" || s == "min") return Direction::Minimize;
  fail(ErrorCode::InvalidArgument, "unknown direction: " + s);
}
const char* kind_name(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::AtMost: return "at_most";
    case ConstraintKind::AtLeast: return "at_least";
    case ConstraintKind::Band: return "band";
  }
  return "?";
}
ConstraintKind parse_kind(const std::string& s) {
  if (s == "at_most" || s == "<=") return ConstraintKind::AtMost;
  if (s == "at_least" || s == ">=") return ConstraintKind::AtLeast;
  if (s == "band") return ConstraintKind::Band;
  fail(ErrorCode::InvalidArgument, "unknown constraint kind: " + s);
}

json metrics_json(const Metrics& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = v;
  return j;
}

DesignArray clamp_unit(DesignArray z) {
  for (auto& v : z) v = std::clamp(v, 0.0, 1.0);
  return z;
}

// Shared evaluation, best-so-far and stopping bookkeeping for every method.
class Run {
 public:
  Run(const RewardSpec& spec, const Evaluator* eval, const OptimizerConfig& cfg, std::string method)
      : spec_(spec), eval_(eval), cfg_(cfg) {
    spec_.validate();
    cfg_.validate();
    result_.method = std::move(method);
  }

  Candidate evaluate(const DesignArray& z_in) const {
    const DesignArray z = clamp_unit(z_in);
    std::optional<Metrics> m;
    try {
      m = (*eval_)(cfg_.bounds.from_unit(z));
    } catch (const std::exception&) {
      m.reset();
    }
    return score(z, m);
  }

  Candidate score(const DesignArray& z, const std::optional<Metrics>& m) const {
    Candidate c;
    c.z = clamp_unit(z);
    const RewardResult r = compute_reward(m, spec_);
    c.reward = r.reward;
    c.failed = r.failed;
    if (m) c.metrics = *m;
    return c;
  }

  std::vector<Candidate> evaluate_all(const std::vector<DesignArray>& zs) const {
    std::vector<Candidate> out;
    out.reserve(zs.size());
    for (const auto& z : zs) out.push_back(evaluate(z));
    return out;
  }

  std::vector<DesignArray> initial_population() const {
    if (!cfg_.initial.empty()) return cfg_.initial;
    std::vector<DesignArray> out;
    for (const auto& row : data::latin_hypercube_unit(cfg_.population, kDesignDim, derive_seed(cfg_.seed, 0))) {
      DesignArray z{};
      std::copy(row.begin(), row.end(), z.begin());
      out.push_back(z);
    }
    return out;
  }

  /// Appends the log; returns true when the run should stop.
  bool record(GenerationLog log) {
    log.generation = result_.logs.size();
    for (const auto& c : log.candidates)
      if (!have_best_ || c.reward > best_.reward) {
        best_ = c;
        have_best_ = true;
      }
    log.best_z = best_.z;
    log.best_reward = best_.reward;
    log.best_metrics = best_.metrics;
    result_.logs.push_back(std::move(log));
    best_rewards_.push_back(best_.reward);
    if (convergence_generation(best_rewards_, cfg_.epsilon, cfg_.patience)) {
      result_.stop_reason = "converged";
      return true;
    }
    if (result_.logs.size() > cfg_.max_generations) {
      result_.stop_reason = "max_generations";
      return true;
    }
    return false;
  }

  OptimizeResult finish() const {
    OptimizeResult out = result_;
    out.best_z = best_.z;
    out.best_x = cfg_.bounds.from_unit(best_.z);
    out.best_reward = best_.reward;
    out.best_metrics = best_.metrics;
    return out;
  }

  OptimizeResult take() {
    result_.best_z = best_.z;
    result_.best_x = cfg_.bounds.from_unit(best_.z);
    result_.best_reward = best_.reward;
    result_.best_metrics = best_.metrics;
    return std::move(result_);
  }

  bool stopped() const { return !result_.stop_reason.empty(); }
  const OptimizerConfig& cfg() const { return cfg_; }
  const RewardSpec& spec() const { return spec_; }
  OptimizeResult& result() { return result_; }

 private:
  RewardSpec spec_;
  const Evaluator* eval_;
  OptimizerConfig cfg_;
  OptimizeResult result_;
  Candidate best_;
  bool have_best_ = false;
  std::vector<double> best_rewards_;
};

std::string design_space_text(const data::Bounds& b) {
  std::ostringstream out;
  for (std::size_t j = 0; j < kDesignDim; ++j)
    out << "  " << j << "  " << geometry::param_name(j) << "  [" << b.lo[j] << ", " << b.hi[j] << "]\n";
  return out.str();
}

std::string objectives_text(const RewardSpec& s) {
  std::ostringstream out;
  for (const auto& o : s.objectives)
    out << "  " << dir_name(o.direction) << " " << o.metric << " (weight " << o.weight << ", scored over [" << o.lo
        << ", " << o.hi << "])\n";
  return out.str();
}

std::string constraints_text(const RewardSpec& s) {
  if (s.constraints.empty()) return "  none\n";
  std::ostringstream out;
  for (const auto& c : s.constraints) {
    out << "  " << c.metric << " ";
    if (c.kind == ConstraintKind::AtMost) out << "<= " << c.hi;
    if (c.kind == ConstraintKind::AtLeast) out << ">= " << c.lo;
    if (c.kind == ConstraintKind::Band) out << "within [" << c.lo << ", " << c.hi << "]";
    out << " (penalty weight " << c.weight << ")\n";
  }
  return out.str();
}

json candidate_json(const Candidate& c) {
  return {{"x", c.z}, {"reward", c.reward}, {"failed", c.failed}};
}

std::string history_block(const std::vector<GenerationLog>& history) {
  json facts;
  facts["generation"] = history.size();
  facts["dim"] = kDesignDim;
  facts["candidates"] = json::array();
  if (!history.empty()) {
    std::vector<Candidate> ranked = history.back().candidates;
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.reward > b.reward; });
    for (const auto& c : ranked) facts["candidates"].push_back(candidate_json(c));
    facts["best"] = {{"x", history.back().best_z}, {"reward", history.back().best_reward}};
    facts["previous_sigma"] = history.back().sigma;
  }
  return llm::fence(facts.dump());
}

}  // namespace

// Reward -------------------------------------------------------------------

void RewardSpec::validate() const {
  if (objectives.empty()) fail(ErrorCode::InvalidArgument, "reward needs at least one objective");
  double wsum = 0.0;
  for (const auto& o : objectives) {
    if (!std::isfinite(o.weight) || o.weight < 0.0) fail(ErrorCode::InvalidArgument, "objective weight must be finite and >= 0");
    if (!(o.hi > o.lo) || !std::isfinite(o.lo) || !std::isfinite(o.hi))
      fail(ErrorCode::InvalidRange, "objective range needs hi > lo: " + o.metric);
    wsum += o.weight;
  }
  if (!(wsum > 0.0)) fail(ErrorCode::InvalidArgument, "objective weights sum to zero");
  for (const auto& c : constraints) {
    if (!std::isfinite(c.weight) || c.weight < 0.0) fail(ErrorCode::InvalidArgument, "constraint weight must be finite and >= 0");
    if (!(c.scale > 0.0)) fail(ErrorCode::InvalidRange, "constraint scale must be positive: " + c.metric);
    if (c.kind == ConstraintKind::Band && c.hi < c.lo) fail(ErrorCode::InvalidRange, "band needs hi >= lo: " + c.metric);
  }
}

std::string RewardSpec::to_json() const {
  json j;
  j["objectives"] = json::array();
  for (const auto& o : objectives)
    j["objectives"].push_back(
        {{"metric", o.metric}, {"direction", dir_name(o.direction)}, {"weight", o.weight}, {"lo", o.lo}, {"hi", o.hi}});
  j["constraints"] = json::array();
  for (const auto& c : constraints)
    j["constraints"].push_back({{"metric", c.metric}, {"kind", kind_name(c.kind)}, {"lo", c.lo}, {"hi", c.hi},
                                {"weight", c.weight}, {"scale", c.scale}});
  j["failure_penalty"] = failure_penalty;
  return j.dump();
}

RewardSpec RewardSpec::from_json(const std::string& text) {
  const auto j = json::parse(text);
  RewardSpec s;
  for (const auto& o : j.value("objectives", json::array()))
    s.objectives.push_back({o.at("metric"), parse_dir(o.value("direction", "maximize")), o.value("weight", 1.0),
                            o.at("lo"), o.at("hi")});
  for (const auto& c : j.value("constraints", json::array()))
    s.constraints.push_back({c.at("metric"), parse_kind(c.at("kind")), c.value("lo", 0.0), c.value("hi", 0.0),
                             c.value("weight", 1.0), c.value("scale", 1.0)});
  s.failure_penalty = j.value("failure_penalty", s.failure_penalty);
  return s;
}

Metrics to_metrics(const PerformanceTriple& p) {
  return {{"mass_flow", p.mass_flow}, {"pressure_ratio", p.pressure_ratio}, {"efficiency", p.efficiency}};
}

double normalize_score(double value, double lo, double hi, Direction direction) {
  if (!(hi > lo)) fail(ErrorCode::InvalidRange, "score range needs hi > lo");
  const double v = std::clamp((value - lo) / (hi - lo), 0.0, 1.0);
  return direction == Direction::Maximize ? 100.0 * v : 100.0 * (1.0 - v);
}

double violation(double value, const Constraint& c) {
  double d = 0.0;
  switch (c.kind) {
    case ConstraintKind::AtMost: d = value - c.hi; break;
    case ConstraintKind::AtLeast: d = c.lo - value; break;
    case ConstraintKind::Band: d = std::max(c.lo - value, value - c.hi); break;
  }
  return std::max(0.0, d) / c.scale;
}

RewardResult compute_reward(const std::optional<Metrics>& metrics, const RewardSpec& spec) {
  RewardResult r;
  if (!metrics) {
    r.failed = true;
    r.reward = spec.failure_penalty;
    return r;
  }
  double wsum = 0.0, acc = 0.0;
  for (const auto& o : spec.objectives) {
    const double s = normalize_score(lookup(*metrics, o.metric), o.lo, o.hi, o.direction);
    r.scores.push_back(s);
    acc += o.weight * s;
    wsum += o.weight;
  }
  double pen = 0.0;
  for (const auto& c : spec.constraints) {
    const double p = 100.0 * violation(lookup(*metrics, c.metric), c);
    r.penalties.push_back(p);
    pen += c.weight * p;
  }
  r.reward = acc / wsum - pen;
  if (!std::isfinite(r.reward)) {
    r = RewardResult{};
    r.failed = true;
    r.reward = spec.failure_penalty;
  }
  return r;
}

RewardResult compute_reward(const std::optional<PerformanceTriple>& perf, const RewardSpec& spec) {
  return compute_reward(perf ? std::optional<Metrics>(to_metrics(*perf)) : std::nullopt, spec);
}

// Config and logs ------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (population < 2) fail(ErrorCode::InvalidArgument, "population must be >= 2");
  if (max_generations < 1) fail(ErrorCode::InvalidArgument, "max_generations must be >= 1");
  if (!(epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "epsilon must be > 0");
  if (patience < 1) fail(ErrorCode::InvalidArgument, "patience must be >= 1");
  bounds.validate();
}

std::string OptimizerConfig::to_json() const {
  json j{{"population", population}, {"max_generations", max_generations}, {"patience", patience},
         {"seed", seed},             {"retries", retries}};
  j["epsilon"] = std::isfinite(epsilon) ? json(epsilon) : json("inf");
  return j.dump();
}

OptimizerConfig OptimizerConfig::from_json(const std::string& text) {
  const auto j = json::parse(text);
  OptimizerConfig c;
  c.population = j.value("population", c.population);
  c.max_generations = j.value("max_generations", c.max_generations);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.retries = j.value("retries", c.retries);
  if (j.contains("epsilon"))
    c.epsilon = j["epsilon"].is_string() ? INFINITY : j["epsilon"].get<double>();
  return c;
}

std::string GenerationLog::to_json() const {
  json j;
  j["generation"] = generation;
  j["best_reward"] = best_reward;
  j["best_z"] = best_z;
  j["best_metrics"] = metrics_json(best_metrics);
  j["sigma"] = sigma;
  j["mean"] = mean ? json(*mean) : json(nullptr);
  j["transcript_ref"] = transcript_ref;
  j["prompt_tokens"] = prompt_tokens;
  j["completion_tokens"] = completion_tokens;
  j["notes"] = notes;
  j["candidates"] = json::array();
  for (const auto& c : candidates)
    j["candidates"].push_back({{"z", c.z}, {"reward", c.reward}, {"failed", c.failed}, {"metrics", metrics_json(c.metrics)}});
  return j.dump();
}

std::string OptimizeResult::logs_jsonl() const {
  std::string out;
  for (const auto& l : logs) out += l.to_json() + "\n";
  return out;
}

std::optional<std::size_t> convergence_generation(const std::vector<double>& best_rewards, double epsilon,
                                                  std::size_t patience) {
  std::size_t run = 0;
  for (std::size_t g = 1; g < best_rewards.size(); ++g) {
    run = best_rewards[g] - best_rewards[g - 1] < epsilon ? run + 1 : 0;
    if (run >= patience) return g;
  }
  return std::nullopt;
}

// Proposer -----------------------------------------------------------------

ProposedMove parse_proposal(const std::string& reply) {
  const auto block = llm::fenced_json(reply);
  if (!block) fail(ErrorCode::MalformedReply, "reply has no fenced JSON block");
  json j;
  try {
    j = json::parse(*block);
  } catch (const json::exception&) {
    fail(ErrorCode::MalformedReply, "fenced block is not valid JSON");
  }
  if (!j.is_object() || !j.contains("mean") || !j["mean"].is_array() || j["mean"].size() != kDesignDim)
    fail(ErrorCode::MalformedReply, "mean must be an array of 21 numbers");
  if (!j.contains("sigma") || !j["sigma"].is_number()) fail(ErrorCode::MalformedReply, "sigma must be a number");
  ProposedMove m;
  m.sigma = j["sigma"].get<double>();
  if (!std::isfinite(m.sigma) || !(m.sigma > 0.0) || m.sigma > 1.0)
    fail(ErrorCode::MalformedReply, "sigma must lie in (0, 1]");
  std::vector<std::size_t> clamped;
  for (std::size_t i = 0; i < kDesignDim; ++i) {
    if (!j["mean"][i].is_number()) fail(ErrorCode::MalformedReply, "mean entries must be numbers");
    const double v = j["mean"][i].get<double>();
    if (!std::isfinite(v)) fail(ErrorCode::MalformedReply, "mean entries must be finite");
    m.mean[i] = std::clamp(v, kMeanLo, kMeanHi);
    if (m.mean[i] != v) clamped.push_back(i);
  }
  m.rationale = j.value("rationale", std::string{});
  if (!clamped.empty()) {
    std::string idx;
    for (auto i : clamped) idx += (idx.empty() ? "" : ",") + std::to_string(i);
    m.rationale += " [clamped mean components " + idx + " to [-0.1, 1.1]]";
  }
  return m;
}

ProposedMove llm_propose(const std::vector<GenerationLog>& history, const RewardSpec& spec, const data::Bounds& bounds,
                         llm::ChatClient& client, std::size_t retries, ProposeTrace* trace) {
  ProposeTrace local;
  ProposeTrace& t = trace ? *trace : local;
  std::ostringstream pen;
  pen << spec.failure_penalty;
  const std::string prompt = llm::render(
      llm::load_prompt("proposer"),
      {{"design_space", design_space_text(bounds)},
       {"objectives", objectives_text(spec)},
       {"constraints", constraints_text(spec)},
       {"failure_penalty", pen.str()},
       {"generation", std::to_string(history.size())},
       {"population", history.empty() ? std::string("N") : std::to_string(history.back().candidates.size())},
       {"history", history_block(history)}});
  t.messages = {{"system", llm::load_prompt("proposer_system")}, {"user", prompt}};
  const llm::ChatParams params{"propose"};
  for (std::size_t attempt = 0; attempt <= retries; ++attempt) {
    const llm::ChatReply r = client.complete(t.messages, params);
    ++t.attempts;
    t.prompt_tokens += r.prompt_tokens;
    t.completion_tokens += r.completion_tokens;
    t.messages.push_back({"assistant", r.text});
    try {
      return parse_proposal(r.text);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::MalformedReply) throw;
      t.notes.push_back(std::string("unusable reply: ") + e.what());
      if (attempt < retries)
        t.messages.push_back({"user", llm::render(llm::load_prompt("proposer_retry"), {{"reason", e.what()}})});
    }
  }
  t.fell_back = true;
  ProposedMove m;
  m.mean.fill(0.5);
  double last_sigma = 0.3;
  if (!history.empty()) {
    m.mean = history.back().best_z;
    if (history.back().sigma > 0.0) last_sigma = history.back().sigma;
  }
  m.sigma = 0.5 * last_sigma;
  m.rationale = "fallback: best-so-far mean with half the previous sigma";
  t.notes.push_back(m.rationale);
  return m;
}

// Methods ------------------------------------------------------------------

struct LlmSearch::Impl {
  Impl(const RewardSpec& spec, const OptimizerConfig& cfg, llm::ChatClient& c) : run(spec, nullptr, cfg, "llm"), client(c) {}
  Run run;
  llm::ChatClient& client;
  std::vector<DesignArray> pending;
  std::optional<ProposedMove> move;
  ProposeTrace trace;
};

LlmSearch::LlmSearch(const RewardSpec& spec, const OptimizerConfig& cfg, llm::ChatClient& client)
    : impl_(std::make_unique<Impl>(spec, cfg, client)) {
  impl_->pending = impl_->run.initial_population();
  for (auto& z : impl_->pending) z = clamp_unit(z);
}

LlmSearch::~LlmSearch() = default;
LlmSearch::LlmSearch(LlmSearch&&) noexcept = default;
LlmSearch& LlmSearch::operator=(LlmSearch&&) noexcept = default;

bool LlmSearch::done() const { return impl_->run.stopped(); }
std::size_t LlmSearch::generation() const { return impl_->run.result().logs.size(); }
const std::vector<DesignArray>& LlmSearch::pending() const { return impl_->pending; }

void LlmSearch::observe(const std::vector<std::optional<Metrics>>& metrics) {
  Impl& s = *impl_;
  if (done()) fail(ErrorCode::InvalidArgument, "search has already stopped");
  if (metrics.size() != s.pending.size()) fail(ErrorCode::ShapeMismatch, "one result per pending candidate");
  GenerationLog log;
  for (std::size_t i = 0; i < metrics.size(); ++i) log.candidates.push_back(s.run.score(s.pending[i], metrics[i]));
  if (!s.move) {
    log.notes.push_back("initial population");
  } else {
    log.sigma = s.move->sigma;
    log.mean = s.move->mean;
    log.prompt_tokens = s.trace.prompt_tokens;
    log.completion_tokens = s.trace.completion_tokens;
    log.transcript_ref = std::to_string(s.run.result().transcripts.size());
    log.notes = s.trace.notes;
    if (s.move->rationale.find("[clamped") != std::string::npos) log.notes.push_back("mean clamped");
    json tj;
    tj["generation"] = generation();
    tj["client"] = s.client.identity();
    tj["attempts"] = s.trace.attempts;
    tj["fell_back"] = s.trace.fell_back;
    tj["rationale"] = s.move->rationale;
    tj["messages"] = json::array();
    for (const auto& m : s.trace.messages) tj["messages"].push_back({{"role", m.role}, {"content", m.content}});
    s.run.result().transcripts.push_back(tj.dump());
  }
  s.pending.clear();
  if (s.run.record(std::move(log))) return;

  s.trace = ProposeTrace{};
  s.move = llm_propose(s.run.result().logs, s.run.spec(), s.run.cfg().bounds, s.client, s.run.cfg().retries, &s.trace);
  Rng rng(derive_seed(s.run.cfg().seed, generation()));
  s.pending.assign(s.run.cfg().population, DesignArray{});
  for (auto& z : s.pending) {
    for (std::size_t j = 0; j < kDesignDim; ++j) z[j] = s.move->mean[j] + s.move->sigma * rng.normal();
    z = clamp_unit(z);
  }
}

std::size_t LlmSearch::last_prompt_tokens() const { return impl_->trace.prompt_tokens; }
std::size_t LlmSearch::last_completion_tokens() const { return impl_->trace.completion_tokens; }
OptimizeResult LlmSearch::result() const { return impl_->run.finish(); }

OptimizeResult run_llm_optimizer(const RewardSpec& spec, const Evaluator& evaluator, const OptimizerConfig& cfg,
                                 llm::ChatClient& client) {
  LlmSearch search(spec, cfg, client);
  while (!search.done()) {
    std::vector<std::optional<Metrics>> out;
    for (const auto& z : search.pending()) {
      try {
        out.push_back(evaluator(cfg.bounds.from_unit(z)));
      } catch (const std::exception&) {
        out.emplace_back();
      }
    }
    search.observe(out);
  }
  return search.result();
}

Baseline parse_baseline(const std::string& name) {
  if (name == "ga") return Baseline::GA;
  if (name == "pso") return Baseline::PSO;
  fail(ErrorCode::InvalidArgument, "unknown baseline method: " + name);
}

namespace {

constexpr double kEtaC = 15.0;
constexpr double kCrossRate = 0.9;
constexpr double kEtaM = 20.0;
constexpr double kMutRate = 1.0 / static_cast<double>(kDesignDim);

std::size_t tournament(const std::vector<Candidate>& pop, Rng& rng) {
  std::size_t best = rng.below(pop.size());
  for (int k = 1; k < 3; ++k) {
    const std::size_t c = rng.below(pop.size());
    if (pop[c].reward > pop[best].reward) best = c;
  }
  return best;
}

// Bounded simulated binary crossover on [0, 1], applied to every coordinate.
void sbx(DesignArray& a, DesignArray& b, Rng& rng) {
  for (std::size_t j = 0; j < kDesignDim; ++j) {
    double y1 = std::min(a[j], b[j]), y2 = std::max(a[j], b[j]);
    if (y2 - y1 < 1e-14) continue;
    const double u = rng.uniform();
    auto child = [&](double beta) {
      const double alpha = 2.0 - std::pow(beta, -(kEtaC + 1.0));
      const double bq = u <= 1.0 / alpha ? std::pow(u * alpha, 1.0 / (kEtaC + 1.0))
                                         : std::pow(1.0 / (2.0 - u * alpha), 1.0 / (kEtaC + 1.0));
      return bq;
    };
    const double bq1 = child(1.0 + 2.0 * y1 / (y2 - y1));
    const double bq2 = child(1.0 + 2.0 * (1.0 - y2) / (y2 - y1));
    double c1 = std::clamp(0.5 * ((y1 + y2) - bq1 * (y2 - y1)), 0.0, 1.0);
    double c2 = std::clamp(0.5 * ((y1 + y2) + bq2 * (y2 - y1)), 0.0, 1.0);
    if (rng.uniform() <= 0.5) std::swap(c1, c2);
    a[j] = c1;
    b[j] = c2;
  }
}

// Bounded polynomial mutation on [0, 1].
void mutate(DesignArray& z, Rng& rng) {
  for (auto& y : z) {
    if (rng.uniform() >= kMutRate) continue;
    const double d1 = y, d2 = 1.0 - y;
    const double u = rng.uniform();
    const double p = 1.0 / (kEtaM + 1.0);
    double dq;
    if (u < 0.5) {
      const double v = 2.0 * u + (1.0 - 2.0 * u) * std::pow(1.0 - d1, kEtaM + 1.0);
      dq = std::pow(v, p) - 1.0;
    } else {
      const double v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * std::pow(1.0 - d2, kEtaM + 1.0);
      dq = 1.0 - std::pow(v, p);
    }
    y = std::clamp(y + dq, 0.0, 1.0);
  }
}

OptimizeResult run_ga(Run& run) {
  const std::size_t N = run.cfg().population;
  std::vector<Candidate> pop = run.evaluate_all(run.initial_population());
  GenerationLog g0;
  g0.candidates = pop;
  g0.notes.push_back("initial population");
  if (run.record(std::move(g0))) return run.take();
  Rng rng(derive_seed(run.cfg().seed, 1));
  for (std::size_t g = 1;; ++g) {
    const auto elite = std::max_element(pop.begin(), pop.end(),
                                        [](const Candidate& a, const Candidate& b) { return a.reward < b.reward; });
    std::vector<DesignArray> kids;
    while (kids.size() + 1 < N) {
      DesignArray a = pop[tournament(pop, rng)].z;
      DesignArray b = pop[tournament(pop, rng)].z;
      if (rng.uniform() < kCrossRate) sbx(a, b, rng);
      mutate(a, rng);
      mutate(b, rng);
      kids.push_back(a);
      if (kids.size() + 1 < N) kids.push_back(b);
    }
    std::vector<Candidate> next{*elite};
    for (auto& c : run.evaluate_all(kids)) next.push_back(std::move(c));
    pop = std::move(next);
    GenerationLog log;
    log.generation = g;
    log.candidates = pop;
    if (run.record(std::move(log))) break;
  }
  return run.take();
}

OptimizeResult run_pso(Run& run) {
  constexpr double kInertia = 0.7, kCognitive = 1.5, kSocial = 1.5, kVmax = 0.2;
  std::vector<Candidate> swarm = run.evaluate_all(run.initial_population());
  const std::size_t N = swarm.size();
  std::vector<DesignArray> vel(N);
  for (auto& v : vel) v.fill(0.0);
  std::vector<Candidate> pbest = swarm;
  auto gbest = [&] {
    return *std::max_element(pbest.begin(), pbest.end(),
                             [](const Candidate& a, const Candidate& b) { return a.reward < b.reward; });
  };
  GenerationLog g0;
  g0.candidates = swarm;
  g0.notes.push_back("initial population");
  if (run.record(std::move(g0))) return run.take();
  Rng rng(derive_seed(run.cfg().seed, 1));
  for (std::size_t g = 1;; ++g) {
    const Candidate best = gbest();
    std::vector<DesignArray> zs(N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < kDesignDim; ++j) {
        const double r1 = rng.uniform(), r2 = rng.uniform();
        double v = kInertia * vel[i][j] + kCognitive * r1 * (pbest[i].z[j] - swarm[i].z[j]) +
                   kSocial * r2 * (best.z[j] - swarm[i].z[j]);
        v = std::clamp(v, -kVmax, kVmax);
        double x = swarm[i].z[j] + v;
        if (x < 0.0 || x > 1.0) {
          x = std::clamp(x, 0.0, 1.0);
          v = 0.0;
        }
        vel[i][j] = v;
        zs[i][j] = x;
      }
    swarm = run.evaluate_all(zs);
    for (std::size_t i = 0; i < N; ++i)
      if (swarm[i].reward > pbest[i].reward) pbest[i] = swarm[i];
    GenerationLog log;
    log.generation = g;
    log.candidates = swarm;
    if (run.record(std::move(log))) break;
  }
  return run.take();
}

}  // namespace

OptimizeResult run_baseline(Baseline method, const RewardSpec& spec, const Evaluator& evaluator,
                            const OptimizerConfig& cfg) {
  Run run(spec, &evaluator, cfg, method == Baseline::GA ? "ga" : "pso");
  return method == Baseline::GA ? run_ga(run) : run_pso(run);
}

}  // namespace turbo::opt
