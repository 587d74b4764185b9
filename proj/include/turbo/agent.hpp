// SPDX-License-Identifier: Apache-2.0
//
// Supervisor layer: request parsing, template planning of the workflow
// graph, the node registry and executor with pause points, the token
// ledger, run-directory artifacts and report synthesis.
#pragma once

#include <any>
#include <array>
#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "turbo/common.hpp"
#include "turbo/diffusion.hpp"
#include "turbo/llm.hpp"
#include "turbo/optimizer.hpp"
#include "turbo/oracle.hpp"
#include "turbo/surrogate.hpp"

namespace turbo::agent {

using nlohmann::json;

enum class Task { Generate, Predict, Optimize, Validate, Map, Stress, Report };
std::string_view task_name(Task t);
Task parse_task(std::string_view name);

// Token ledger --------------------------------------------------------------

struct LedgerEntry {
  std::string node;
  std::size_t call_index = 0;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  bool operator==(const LedgerEntry&) const = default;
};

struct TokenTotals {
  std::size_t prompt = 0;
  std::size_t completion = 0;
  std::size_t total() const { return prompt + completion; }
};

struct TokenReport {
  std::map<std::string, TokenTotals> per_node;
  TokenTotals overall;
  json to_json() const;
};

class TokenLedger {
 public:
  /// Returns the call index of the new entry.
  std::size_t record(const std::string& node, std::size_t prompt_tokens, std::size_t completion_tokens);
  const std::vector<LedgerEntry>& entries() const { return entries_; }
  json to_json() const;
  static TokenLedger from_json(const json& j);

 private:
  std::vector<LedgerEntry> entries_;
};

TokenReport account_tokens(const TokenLedger& ledger);

// Requests -----------------------------------------------------------------

struct DesignRequest {
  /// mass flow, pressure ratio, efficiency; any subset may be missing.
  std::array<std::optional<double>, 3> targets;
  std::vector<opt::Constraint> constraints;
  std::vector<opt::Objective> objectives;
  std::set<Task> tasks;
  std::size_t n_candidates = 10;
  std::string material = "Ti-6Al-4V";
  std::string raw_text;
  /// Optimization was inferred rather than asked for: confirm before running it.
  bool confirm_optimize = false;
  std::optional<std::string> pending_question;

  bool has(Task t) const { return tasks.count(t) != 0; }
  /// All three targets, when present.
  std::optional<PerformanceTriple> target() const;
  void validate() const;
  json to_json() const;
  static DesignRequest from_json(const json& j);
};

/// Rule-based extraction of numbers, units and task keywords, then a
/// "parse" client call for implied tasks. A missing target needed for
/// generation becomes pending_question. Throws UnparseableRequest.
DesignRequest parse_request(const std::string& text, llm::ChatClient& client, TokenLedger* ledger = nullptr);
/// Applies the task closure rules and sets pending_question for missing targets.
void complete_request(DesignRequest& req);
/// Merges a clarification; clears or re-asks the pending question.
void answer_pending(DesignRequest& req, const std::string& answer);
/// Reward used by the optimizer and for ranking validated schemes: the
/// request's objectives (default: maximize efficiency), plus a 1% band on a
/// mass-flow target and a floor at a pressure-ratio target.
opt::RewardSpec reward_spec(const DesignRequest& req, const oracle::MetricRanges& ranges = {});

// Workflow graph -----------------------------------------------------------

struct Node {
  std::string id;
  Task kind = Task::Generate;
  json config = json::object();
};

struct Edge {
  std::string from;
  std::string to;
  std::string guard = "always";
  bool feedback = false;
};

struct WorkflowGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::string entry;

  bool has_node(const std::string& id) const;
  const Node& node(const std::string& id) const;
  /// Reachability, acyclicity without feedback edges, defined guards.
  void validate() const;
  std::string to_json() const;
  static WorkflowGraph from_json(const std::string& text);
};

/// Pure template mapping of the task set to a graph. Throws ConflictingTasks.
WorkflowGraph plan_workflow(const DesignRequest& req);

// State --------------------------------------------------------------------

enum class NodeStatus { Pending, Running, Done, Failed, Paused };
enum class RunStatus { Planning, Running, Paused, Done, Failed };
std::string_view to_string(NodeStatus s);
std::string_view to_string(RunStatus s);
RunStatus parse_run_status(std::string_view s);

struct Event {
  std::size_t seq = 0;
  /// Logical clock (equal to seq) so replays are byte-identical.
  std::size_t ts = 0;
  std::string node;
  std::string kind;
  json payload = json::object();

  json to_json() const;
  /// One events.log line, without the newline.
  std::string line() const;
  static Event from_json(const json& j);
};

struct ArtifactRef {
  std::string path;  // relative to the run directory
  std::string node;
};

struct WorkflowState {
  std::map<std::string, ArtifactRef> context;
  std::vector<Event> events;
  std::map<std::string, NodeStatus> status;
  std::map<std::string, std::size_t> visits;
  /// Node-published values read by guards, namespaced by node kind.
  json signals = json::object();
  std::optional<std::string> pending_question;
  std::string pending_node;
  /// Node to run next; empty once finished.
  std::string current;
  RunStatus run_status = RunStatus::Planning;
  std::string failure;
  std::optional<std::string> selected;
  std::uint64_t seed = 1;

  const Event& append(const std::string& node, const std::string& kind, json payload = json::object());
  json to_json() const;
  static WorkflowState from_json(const json& j);
};

using Guard = std::function<bool(const WorkflowState&, const WorkflowGraph&, const Edge&)>;
/// always, on_failure, optimizer_active, optimizer_done.
const std::map<std::string, Guard>& guards();
bool eval_guard(const std::string& name, const WorkflowState& state, const WorkflowGraph& g, const Edge& e);

/// Successor of state.current: the first-declared enabled edge (a tie is
/// recorded as an event); nullopt when the node has no outgoing edges.
/// Throws NoEnabledEdge, or NodeFailure for a failed node without fallback.
std::optional<std::string> route_next(WorkflowState& state, const WorkflowGraph& g);

// Run directory ------------------------------------------------------------

class RunDir {
 public:
  explicit RunDir(std::filesystem::path root);
  const std::filesystem::path& root() const { return root_; }
  /// Canonical absolute path inside the run; Forbidden when it escapes.
  std::filesystem::path resolve(const std::string& rel) const;
  void write(const std::string& rel, const std::string& bytes) const;
  std::string read(const std::string& rel) const;
  bool exists(const std::string& rel) const;
  /// Sorted relative paths of every regular file.
  std::vector<std::string> list() const;

 private:
  std::filesystem::path root_;
};

std::string design_id(std::size_t k);

// Agents -------------------------------------------------------------------

struct Services {
  std::shared_ptr<const surrogate::Surrogate> surrogate;
  std::shared_ptr<const diffusion::Designer> designer;
  std::shared_ptr<const oracle::Oracle> oracle;
  std::vector<oracle::Material> materials;
  data::Bounds bounds = data::Bounds::defaults();
  std::size_t mesh_span = 5;
};

struct ModelRecipe {
  std::size_t dataset_rows = 800;
  std::size_t surrogate_epochs = 20;
  std::size_t designer_epochs = 30;
  std::uint64_t seed = 1;
};

/// Surrogate and designer from <dir>/{surrogate,designer}.ckpt, trained with
/// the recipe and saved there when missing.
Services load_services(const std::filesystem::path& models_dir, const ModelRecipe& recipe = {},
                       const oracle::OracleConfig& oracle_cfg = {});

class Workflow;

class NodeContext {
 public:
  NodeContext(Workflow& wf, const Node& node) : wf_(wf), node_(node) {}
  const Node& node() const { return node_; }
  const DesignRequest& request() const;
  const WorkflowGraph& graph() const;
  const WorkflowState& state() const;
  const Services& services() const;
  const RunDir& dir() const;
  std::size_t visit() const;

  /// Writes an artifact and binds it to `key`, which must start with "<kind>.".
  void put(const std::string& key, const std::string& rel, const std::string& bytes);
  std::string get(const std::string& key) const;
  bool has(const std::string& key) const;
  std::vector<std::string> keys(const std::string& prefix) const;
  llm::ChatReply ask(const std::vector<llm::Message>& messages, const llm::ChatParams& params);
  /// Client whose calls are logged against this node; lives as long as the workflow.
  llm::ChatClient& client();
  void emit(const std::string& kind, json payload = json::object());
  /// Sets signals[<kind>][name].
  void signal(const std::string& name, json value);
  /// Pause answer addressed to this node, if any; consumed on read.
  std::optional<std::string> take_answer();
  /// Live objects kept across visits of this node; not persisted.
  std::any& scratch();

 private:
  Workflow& wf_;
  const Node& node_;
};

struct Outcome {
  enum class Kind { Ok, Pause, Fail };
  Kind kind = Kind::Ok;
  std::string message;
  static Outcome ok() { return {}; }
  static Outcome pause(std::string question) { return {Kind::Pause, std::move(question)}; }
  static Outcome failure(std::string message) { return {Kind::Fail, std::move(message)}; }
};

using Agent = std::function<Outcome(NodeContext&)>;

class Registry {
 public:
  void add(Task kind, Agent agent) { agents_[kind] = std::move(agent); }
  bool has(Task kind) const { return agents_.count(kind) != 0; }
  const Agent& get(Task kind) const;
  /// The generate / predict / optimize / validate / map / stress / report agents.
  static Registry standard();

 private:
  std::map<Task, Agent> agents_;
};

// Schemes and reports ------------------------------------------------------

struct SchemeRow {
  std::string id;
  bool converged = false;
  std::optional<double> mass_flow, pressure_ratio, efficiency;
  std::optional<double> max_stress, surge_margin;
  std::optional<double> reward;
};

/// One row per validated scheme (oracle artifact), or per predicted scheme
/// when nothing was validated; every number is read from an artifact.
std::vector<SchemeRow> collect_schemes(const WorkflowState& state, const RunDir& dir);
/// Shortest round-trip decimal form.
std::string format_number(double v);
std::string scheme_table_markdown(const std::vector<SchemeRow>& rows);
json scheme_table_json(const std::vector<SchemeRow>& rows);

using AskFn = std::function<llm::ChatReply(const std::vector<llm::Message>&, const llm::ChatParams&)>;
/// Markdown report: request echo, stage summaries, the scheme table and the
/// selection rationale; tables come from artifacts, narrative from the client.
std::string synthesize_report(const WorkflowState& state, const DesignRequest& req, const WorkflowGraph& g,
                              const RunDir& dir, const AskFn& ask);

// Execution ----------------------------------------------------------------

struct ChatResult {
  std::string reply;
  json table = json::array();
  bool resumed = false;
};

class Workflow {
 public:
  /// Plans the request (plan.json, request.json) in `dir`. Ledger entries
  /// from parsing are carried over and logged.
  Workflow(DesignRequest req, Registry registry, Services services, llm::ChatClient& client, RunDir dir,
           std::uint64_t seed = 1, TokenLedger ledger = {});
  Workflow(const Workflow&) = delete;
  Workflow& operator=(const Workflow&) = delete;
  ~Workflow();

  /// Reloads a persisted run (request.json, plan.json, state.json, ledger.json).
  static std::unique_ptr<Workflow> restore(const RunDir& dir, Registry registry, Services services, llm::ChatClient& client);

  /// Executes nodes until done, failed, or a pause point. A set stop flag
  /// pauses at the next node boundary.
  RunStatus run(const std::atomic<bool>* stop = nullptr);
  /// Answers the pending question; execution continues on the next run().
  void answer(const std::string& text);
  /// Clarification answer when paused; scheme selection or Q&A when done.
  /// Throws Conflict otherwise.
  ChatResult chat(const std::string& message);

  const WorkflowState& state() const { return state_; }
  const DesignRequest& request() const { return req_; }
  const WorkflowGraph& graph() const { return graph_; }
  const TokenLedger& ledger() const { return ledger_; }
  const RunDir& dir() const { return dir_; }
  const Services& services() const { return services_; }

  /// Writes events.log, state.json and ledger.json.
  void persist() const;

 private:
  friend class NodeContext;
  Workflow(Registry registry, Services services, llm::ChatClient& client, RunDir dir);
  llm::ChatReply ask(const std::string& node, const std::vector<llm::Message>& messages,
                     const llm::ChatParams& params);
  void pause(const std::string& node, const std::string& question);
  void write_report();

  DesignRequest req_;
  WorkflowGraph graph_;
  Registry registry_;
  Services services_;
  llm::ChatClient* client_;
  RunDir dir_;
  TokenLedger ledger_;
  WorkflowState state_;
  std::map<std::string, std::any> scratch_;
  std::map<std::string, std::unique_ptr<llm::ChatClient>> node_clients_;
  std::map<std::string, std::string> answers_;
};

}  // namespace turbo::agent
