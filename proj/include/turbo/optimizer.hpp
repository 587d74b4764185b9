// SPDX-License-Identifier: Apache-2.0
//
// Reward shaping over named metrics, the proposer-driven Gaussian search
// loop, and GA / PSO baselines. All searches run in the normalized [0,1]^21
// box; the evaluator sees physical designs.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "turbo/common.hpp"
#include "turbo/data.hpp"
#include "turbo/llm.hpp"

namespace turbo::opt {

enum class Direction { Maximize, Minimize };
enum class ConstraintKind { AtMost, AtLeast, Band };

struct Objective {
  std::string metric;
  Direction direction = Direction::Maximize;
  double weight = 1.0;
  double lo = 0.0;
  double hi = 1.0;
};

struct Constraint {
  std::string metric;
  ConstraintKind kind = ConstraintKind::AtMost;
  double lo = 0.0;  // bound for AtLeast, lower edge for Band
  double hi = 0.0;  // bound for AtMost, upper edge for Band
  double weight = 1.0;
  /// Deviation is divided by this to normalize it.
  double scale = 1.0;
};

struct RewardSpec {
  std::vector<Objective> objectives;
  std::vector<Constraint> constraints;
  double failure_penalty = -1000.0;

  void validate() const;
  std::string to_json() const;
  static RewardSpec from_json(const std::string& text);
};

/// Metric name -> value. Performance metrics use their canonical names.
using Metrics = std::map<std::string, double>;
Metrics to_metrics(const PerformanceTriple& p);

struct RewardResult {
  double reward = 0.0;
  std::vector<double> scores;
  std::vector<double> penalties;
  bool failed = false;
};

double normalize_score(double value, double lo, double hi, Direction direction);
/// Normalized violation of one constraint (0 when satisfied).
double violation(double value, const Constraint& c);
/// nullopt means the evaluation failed.
RewardResult compute_reward(const std::optional<Metrics>& metrics, const RewardSpec& spec);
RewardResult compute_reward(const std::optional<PerformanceTriple>& perf, const RewardSpec& spec);

/// Physical design -> metrics, or nullopt on failure. Exceptions count as failures.
using Evaluator = std::function<std::optional<Metrics>(const DesignArray&)>;

struct OptimizerConfig {
  std::size_t population = 20;
  std::size_t max_generations = 30;
  double epsilon = 1e-6;
  std::size_t patience = 10;
  data::Bounds bounds = data::Bounds::defaults();
  std::uint64_t seed = 1;
  /// Replaces the LHS initial population when non-empty (normalized coordinates).
  std::vector<DesignArray> initial;
  /// Re-asks after an unusable proposer reply before falling back.
  std::size_t retries = 2;

  void validate() const;
  std::string to_json() const;
  static OptimizerConfig from_json(const std::string& text);
};

struct Candidate {
  DesignArray z{};  // normalized
  double reward = 0.0;
  bool failed = false;
  Metrics metrics;
};

struct GenerationLog {
  std::size_t generation = 0;
  std::vector<Candidate> candidates;
  DesignArray best_z{};
  double best_reward = 0.0;
  Metrics best_metrics;
  double sigma = 0.0;
  std::optional<DesignArray> mean;
  /// Index into the transcript list, or empty when no proposer was called.
  std::string transcript_ref;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  std::vector<std::string> notes;

  std::string to_json() const;
};

struct ProposedMove {
  DesignArray mean{};
  double sigma = 0.0;
  std::string rationale;
};

struct ProposeTrace {
  std::vector<llm::Message> messages;  // full exchange including replies
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  std::size_t attempts = 0;
  bool fell_back = false;
  std::vector<std::string> notes;
};

/// Parses and validates one reply: fenced JSON {mean[21], sigma, rationale}.
/// Components outside [-0.1, 1.1] are clamped with a note; throws MalformedReply.
ProposedMove parse_proposal(const std::string& reply);

/// Builds the proposer prompt from the logs and asks the client. Unusable
/// replies are retried; after the last retry the move falls back to the
/// best-so-far mean with half the last sigma.
ProposedMove llm_propose(const std::vector<GenerationLog>& history, const RewardSpec& spec, const data::Bounds& bounds,
                         llm::ChatClient& client, std::size_t retries = 2, ProposeTrace* trace = nullptr);

struct OptimizeResult {
  std::string method;
  DesignArray best_z{};
  DesignArray best_x{};
  double best_reward = 0.0;
  Metrics best_metrics;
  std::vector<GenerationLog> logs;
  /// One JSON document per proposer exchange.
  std::vector<std::string> transcripts;
  std::string stop_reason;

  std::string logs_jsonl() const;
};

/// First generation g >= patience at which the improvements of generations
/// g-patience+1..g are all below epsilon.
std::optional<std::size_t> convergence_generation(const std::vector<double>& best_rewards, double epsilon,
                                                  std::size_t patience);

/// The proposer loop driven from outside: evaluate pending(), pass the results
/// to observe(), repeat until done(). observe() asks the proposer for the next batch.
class LlmSearch {
 public:
  LlmSearch(const RewardSpec& spec, const OptimizerConfig& cfg, llm::ChatClient& client);
  ~LlmSearch();
  LlmSearch(LlmSearch&&) noexcept;
  LlmSearch& operator=(LlmSearch&&) noexcept;

  bool done() const;
  /// Index of the generation pending() belongs to.
  std::size_t generation() const;
  /// Normalized candidates awaiting evaluation; empty once done.
  const std::vector<DesignArray>& pending() const;
  /// One entry per pending candidate, nullopt for a failed evaluation.
  void observe(const std::vector<std::optional<Metrics>>& metrics);
  /// Tokens spent by the proposer call in the last observe().
  std::size_t last_prompt_tokens() const;
  std::size_t last_completion_tokens() const;
  OptimizeResult result() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

OptimizeResult run_llm_optimizer(const RewardSpec& spec, const Evaluator& evaluator, const OptimizerConfig& cfg,
                                 llm::ChatClient& client);

enum class Baseline { GA, PSO };
Baseline parse_baseline(const std::string& name);
OptimizeResult run_baseline(Baseline method, const RewardSpec& spec, const Evaluator& evaluator,
                            const OptimizerConfig& cfg);

}  // namespace turbo::opt
