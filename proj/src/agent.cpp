// SPDX-License-Identifier: Apache-2.0
#include "turbo/agent.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <regex>
#include <sstream>

#include "turbo/data.hpp"

namespace turbo::agent {
namespace {

constexpr std::array<std::string_view, 7> kTaskNames = {"generate", "predict", "optimize", "validate",
                                                       "map",      "stress",  "report"};
constexpr std::array<std::string_view, 3> kTargetLabels = {"mass flow (kg/s)", "pressure ratio", "efficiency"};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

const char* kNum = "([0-9]+(?:\\.[0-9]+)?)";
const char* kMetric = "(mass[- ]?flow(?: rate)?|pressure[- ]?ratio|efficiency)";

int metric_of(const std::string& phrase) {
  if (phrase.find("mass") != std::string::npos) return 0;
  if (phrase.find("pressure") != std::string::npos) return 1;
  return 2;
}

double efficiency_value(double v, bool percent) { return percent || v > 1.0 ? v / 100.0 : v; }

struct RuleHits {
  std::array<std::optional<double>, 3> targets;
  std::vector<opt::Constraint> constraints;
  std::vector<opt::Objective> objectives;
  std::set<Task> tasks;
  std::optional<std::size_t> n;
};

std::size_t number_word(const std::string& w) {
  static const std::array<std::string_view, 12> words = {"one", "two",   "three", "four",   "five",   "six",
                                                         "seven", "eight", "nine", "ten", "eleven", "twelve"};
  for (std::size_t i = 0; i < words.size(); ++i)
    if (w == words[i]) return i + 1;
  return static_cast<std::size_t>(std::stoul(w));
}

opt::Objective objective_for(int metric, opt::Direction d, const oracle::MetricRanges& r = {}) {
  opt::Objective o;
  o.metric = std::string(kMetricNames[static_cast<std::size_t>(metric)]);
  o.direction = d;
  o.lo = r.lo[static_cast<std::size_t>(metric)];
  o.hi = r.hi[static_cast<std::size_t>(metric)];
  return o;
}

RuleHits rule_stage(const std::string& raw) {
  const std::string text = lower(raw);
  RuleHits h;
  std::smatch m;
  const auto icase = std::regex::ECMAScript;

  static const std::regex flow_unit(std::string(kNum) + "\\s*kg/s", icase);
  static const std::regex flow_named(std::string("mass[- ]?flow(?: rate)?(?:\\s+of|\\s*=|\\s*:|\\s+is)?\\s*") + kNum,
                                     icase);
  static const std::regex ratio_named(std::string("pressure[- ]?ratio(?:\\s+of|\\s*=|\\s*:|\\s+is)?\\s*") + kNum, icase);
  static const std::regex eff_named(std::string("efficiency(?:\\s+of|\\s*=|\\s*:|\\s+is)?\\s*") + kNum + "(\\s*%)?",
                                    icase);
  static const std::regex eff_before(std::string(kNum) + "\\s*%\\s*(?:isentropic\\s+)?efficiency", icase);
  if (std::regex_search(text, m, flow_named) || std::regex_search(text, m, flow_unit))
    h.targets[0] = std::stod(m[1].str());
  if (std::regex_search(text, m, ratio_named)) h.targets[1] = std::stod(m[1].str());
  if (std::regex_search(text, m, eff_named))
    h.targets[2] = efficiency_value(std::stod(m[1].str()), m[2].matched);
  else if (std::regex_search(text, m, eff_before))
    h.targets[2] = efficiency_value(std::stod(m[1].str()), true);

  static const std::regex bound(std::string(kMetric) +
                                    "\\s*(?:of\\s*)?(at least|no less than|above|>=|at most|no more than|below|<=)\\s*" +
                                    kNum + "(\\s*%)?",
                                icase);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), bound); it != std::sregex_iterator(); ++it) {
    const int idx = metric_of((*it)[1].str());
    const std::string rel = (*it)[2].str();
    double v = std::stod((*it)[3].str());
    if (idx == 2) v = efficiency_value(v, (*it)[4].matched);
    opt::Constraint c;
    c.metric = std::string(kMetricNames[static_cast<std::size_t>(idx)]);
    const bool floor = rel == "at least" || rel == "no less than" || rel == "above" || rel == ">=";
    c.kind = floor ? opt::ConstraintKind::AtLeast : opt::ConstraintKind::AtMost;
    (floor ? c.lo : c.hi) = v;
    c.scale = 0.01 * v;
    h.constraints.push_back(c);
  }

  static const std::regex up(std::string("(?:maximi[sz]e|improve|increase|raise|optimi[sz]e)\\s+(?:the\\s+)?") + kMetric,
                             icase);
  static const std::regex down(std::string("(?:minimi[sz]e|reduce|lower)\\s+(?:the\\s+)?") + kMetric, icase);
  std::set<int> seen;
  for (const auto* re : {&up, &down})
    for (auto it = std::sregex_iterator(text.begin(), text.end(), *re); it != std::sregex_iterator(); ++it) {
      const int idx = metric_of((*it)[1].str());
      if (!seen.insert(idx).second) continue;
      h.objectives.push_back(objective_for(idx, re == &up ? opt::Direction::Maximize : opt::Direction::Minimize));
    }

  static const std::regex count(
      "\\b([0-9]+|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve)\\s+(?:candidate|scheme|design|geometr|blade)",
      icase);
  if (std::regex_search(text, m, count)) h.n = number_word(m[1].str());

  auto any = [&](std::initializer_list<std::string_view> keys) {
    return std::any_of(keys.begin(), keys.end(), [&](std::string_view k) { return text.find(k) != std::string::npos; });
  };
  if (any({"design", "generat", "scheme", "candidate"})) h.tasks.insert(Task::Generate);
  if (any({"predict", "performance", "evaluat"})) h.tasks.insert(Task::Predict);
  if (any({"optimi", "maximi", "minimi"})) h.tasks.insert(Task::Optimize);
  if (any({"validat", "simulat", "verif", "high-fidelity", "cfd"})) h.tasks.insert(Task::Validate);
  if (any({"speedline", "speed line", "characteristic map", "performance map", "off-design", "surge"}))
    h.tasks.insert(Task::Map);
  if (any({"stress", "structural"})) h.tasks.insert(Task::Stress);
  if (any({"report", "summar"})) h.tasks.insert(Task::Report);
  return h;
}

void close_tasks(std::set<Task>& t) {
  if (t.count(Task::Map) || t.count(Task::Stress)) t.insert(Task::Validate);
  if (t.count(Task::Optimize) || t.count(Task::Validate)) t.insert(Task::Generate);
  if (t.count(Task::Generate)) t.insert(Task::Predict);
}

void refresh_question(DesignRequest& req) {
  req.pending_question.reset();
  if (!req.has(Task::Generate)) return;
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < 3; ++i)
    if (!req.targets[i]) missing.emplace_back(kTargetLabels[i]);
  if (missing.empty()) return;
  std::string q = "Please specify the target ";
  for (std::size_t i = 0; i < missing.size(); ++i) q += (i ? (i + 1 == missing.size() ? " and " : ", ") : "") + missing[i];
  q += " for the design point.";
  req.pending_question = q;
}

json objective_json(const opt::Objective& o) {
  return {{"metric", o.metric},
          {"direction", o.direction == opt::Direction::Maximize ? "maximize" : "minimize"},
          {"weight", o.weight},
          {"lo", o.lo},
          {"hi", o.hi}};
}

json constraint_json(const opt::Constraint& c) {
  const char* kind = c.kind == opt::ConstraintKind::AtMost ? "at_most" : c.kind == opt::ConstraintKind::AtLeast ? "at_least" : "band";
  return {{"metric", c.metric}, {"kind", kind}, {"lo", c.lo}, {"hi", c.hi}, {"weight", c.weight}, {"scale", c.scale}};
}

opt::Objective objective_from(const json& j) {
  opt::Objective o;
  o.metric = j.at("metric").get<std::string>();
  const std::string d = j.value("direction", std::string("maximize"));
  if (d != "maximize" && d != "minimize") fail(ErrorCode::InvalidArgument, "objective direction: " + d);
  o.direction = d == "maximize" ? opt::Direction::Maximize : opt::Direction::Minimize;
  const int idx = metric_index(o.metric);
  const oracle::MetricRanges r;
  o.weight = j.value("weight", 1.0);
  o.lo = j.value("lo", idx >= 0 ? r.lo[static_cast<std::size_t>(idx)] : 0.0);
  o.hi = j.value("hi", idx >= 0 ? r.hi[static_cast<std::size_t>(idx)] : 1.0);
  return o;
}

opt::Constraint constraint_from(const json& j) {
  opt::Constraint c;
  c.metric = j.at("metric").get<std::string>();
  const std::string k = j.value("kind", std::string("at_most"));
  if (k == "at_most")
    c.kind = opt::ConstraintKind::AtMost;
  else if (k == "at_least")
    c.kind = opt::ConstraintKind::AtLeast;
  else if (k == "band")
    c.kind = opt::ConstraintKind::Band;
  else
    fail(ErrorCode::InvalidArgument, "constraint kind: " + k);
  c.lo = j.value("lo", 0.0);
  c.hi = j.value("hi", 0.0);
  c.weight = j.value("weight", 1.0);
  c.scale = j.value("scale", 1.0);
  return c;
}

}  // namespace

std::string_view task_name(Task t) { return kTaskNames[static_cast<std::size_t>(t)]; }

Task parse_task(std::string_view name) {
  for (std::size_t i = 0; i < kTaskNames.size(); ++i)
    if (kTaskNames[i] == name) return static_cast<Task>(i);
  fail(ErrorCode::InvalidArgument, "unknown task: " + std::string(name));
}

// Ledger -------------------------------------------------------------------

std::size_t TokenLedger::record(const std::string& node, std::size_t prompt_tokens, std::size_t completion_tokens) {
  entries_.push_back({node, entries_.size(), prompt_tokens, completion_tokens});
  return entries_.back().call_index;
}

json TokenLedger::to_json() const {
  json j = json::array();
  for (const auto& e : entries_)
    j.push_back({{"node", e.node},
                 {"call_index", e.call_index},
                 {"prompt_tokens", e.prompt_tokens},
                 {"completion_tokens", e.completion_tokens}});
  return j;
}

TokenLedger TokenLedger::from_json(const json& j) {
  TokenLedger l;
  for (const auto& e : j)
    l.entries_.push_back({e.at("node").get<std::string>(), e.at("call_index").get<std::size_t>(),
                          e.at("prompt_tokens").get<std::size_t>(), e.at("completion_tokens").get<std::size_t>()});
  return l;
}

TokenReport account_tokens(const TokenLedger& ledger) {
  TokenReport r;
  for (const auto& e : ledger.entries()) {
    auto& n = r.per_node[e.node];
    n.prompt += e.prompt_tokens;
    n.completion += e.completion_tokens;
    r.overall.prompt += e.prompt_tokens;
    r.overall.completion += e.completion_tokens;
  }
  return r;
}

json TokenReport::to_json() const {
  auto totals = [](const TokenTotals& t) {
    return json{{"prompt_tokens", t.prompt}, {"completion_tokens", t.completion}, {"total", t.total()}};
  };
  json j;
  j["overall"] = totals(overall);
  j["per_node"] = json::object();
  for (const auto& [node, t] : per_node) j["per_node"][node] = totals(t);
  return j;
}

// Requests -----------------------------------------------------------------

std::optional<PerformanceTriple> DesignRequest::target() const {
  if (!targets[0] || !targets[1] || !targets[2]) return std::nullopt;
  return PerformanceTriple{*targets[0], *targets[1], *targets[2]};
}

void DesignRequest::validate() const {
  if (tasks.empty()) fail(ErrorCode::UnparseableRequest, "request names no task");
  if (has(Task::Generate) && n_candidates < 1) fail(ErrorCode::InvalidArgument, "n_candidates must be >= 1");
  for (const auto& t : targets)
    if (t && !std::isfinite(*t)) fail(ErrorCode::NonFiniteValue, "target must be finite");
}

json DesignRequest::to_json() const {
  json j;
  j["targets"] = json::object();
  for (std::size_t i = 0; i < 3; ++i) j["targets"][std::string(kMetricNames[i])] = targets[i] ? json(*targets[i]) : json(nullptr);
  j["constraints"] = json::array();
  for (const auto& c : constraints) j["constraints"].push_back(constraint_json(c));
  j["objectives"] = json::array();
  for (const auto& o : objectives) j["objectives"].push_back(objective_json(o));
  j["tasks"] = json::array();
  for (Task t : tasks) j["tasks"].push_back(task_name(t));
  j["n_candidates"] = n_candidates;
  j["material"] = material;
  j["raw_text"] = raw_text;
  j["confirm_optimize"] = confirm_optimize;
  j["pending_question"] = pending_question ? json(*pending_question) : json(nullptr);
  return j;
}

DesignRequest DesignRequest::from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::UnparseableRequest, "request must be a JSON object");
  DesignRequest r;
  try {
    if (j.contains("targets")) {
      const auto& t = j.at("targets");
      if (t.is_array()) {
        for (std::size_t i = 0; i < 3 && i < t.size(); ++i)
          if (!t[i].is_null()) r.targets[i] = t[i].get<double>();
      } else {
        for (auto it = t.begin(); it != t.end(); ++it) {
          const int idx = metric_index(it.key());
          if (idx < 0) fail(ErrorCode::UnknownMetricName, "unknown target metric: " + it.key());
          if (!it.value().is_null()) r.targets[static_cast<std::size_t>(idx)] = it.value().get<double>();
        }
      }
    }
    for (const auto& c : j.value("constraints", json::array())) r.constraints.push_back(constraint_from(c));
    for (const auto& o : j.value("objectives", json::array())) r.objectives.push_back(objective_from(o));
    for (const auto& t : j.value("tasks", json::array())) r.tasks.insert(parse_task(t.get<std::string>()));
    r.n_candidates = j.value("n_candidates", r.n_candidates);
    r.material = j.value("material", r.material);
    r.raw_text = j.value("raw_text", std::string{});
    r.confirm_optimize = j.value("confirm_optimize", false);
    if (j.contains("pending_question") && !j["pending_question"].is_null())
      r.pending_question = j["pending_question"].get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::UnparseableRequest, std::string("bad request field: ") + e.what());
  }
  return r;
}

DesignRequest parse_request(const std::string& text, llm::ChatClient& client, TokenLedger* ledger) {
  if (trim(text).empty()) fail(ErrorCode::UnparseableRequest, "empty request");
  RuleHits h = rule_stage(text);
  DesignRequest req;
  req.raw_text = text;
  req.targets = h.targets;
  req.constraints = h.constraints;
  req.objectives = h.objectives;
  if (h.n) req.n_candidates = *h.n;
  req.tasks = h.tasks;

  json rule_tasks = json::array();
  for (Task t : h.tasks) rule_tasks.push_back(task_name(t));
  const std::string user = llm::render(
      llm::load_prompt("parse"),
      {{"text", text}, {"rule_tasks", rule_tasks.dump()}, {"facts", llm::fence(json{{"text", text}, {"rule_tasks", rule_tasks}}.dump())}});
  const std::vector<llm::Message> msgs = {{"system", llm::load_prompt("parse_system")}, {"user", user}};
  const llm::ChatReply reply = client.complete(msgs, {"parse", 0.0, 512});
  if (ledger) ledger->record("planner", reply.prompt_tokens, reply.completion_tokens);
  if (const auto block = llm::fenced_json(reply.text)) {
    try {
      const json j = json::parse(*block);
      for (const auto& t : j.value("tasks", json::array())) {
        if (!t.is_string()) continue;
        const auto name = t.get<std::string>();
        if (std::find(kTaskNames.begin(), kTaskNames.end(), name) == kTaskNames.end()) continue;
        const Task task = parse_task(name);
        if (task == Task::Optimize && !req.has(Task::Optimize)) req.confirm_optimize = true;
        req.tasks.insert(task);
      }
    } catch (const json::exception&) {
    }
  }
  if (req.tasks.empty()) fail(ErrorCode::UnparseableRequest, "no task recognized in request");
  close_tasks(req.tasks);
  if (req.has(Task::Optimize) && req.objectives.empty()) req.objectives.push_back(objective_for(2, opt::Direction::Maximize));
  refresh_question(req);
  return req;
}

void complete_request(DesignRequest& req) {
  close_tasks(req.tasks);
  refresh_question(req);
}

void answer_pending(DesignRequest& req, const std::string& answer) {
  const RuleHits h = rule_stage(answer);
  for (std::size_t i = 0; i < 3; ++i)
    if (h.targets[i]) req.targets[i] = h.targets[i];
  req.constraints.insert(req.constraints.end(), h.constraints.begin(), h.constraints.end());
  req.raw_text += "\n" + answer;
  refresh_question(req);
}

opt::RewardSpec reward_spec(const DesignRequest& req, const oracle::MetricRanges& ranges) {
  opt::RewardSpec spec;
  spec.objectives = req.objectives;
  if (spec.objectives.empty()) spec.objectives.push_back(objective_for(2, opt::Direction::Maximize, ranges));
  spec.constraints = req.constraints;
  auto constrained = [&](std::string_view metric) {
    return std::any_of(spec.constraints.begin(), spec.constraints.end(),
                       [&](const opt::Constraint& c) { return metric_index(c.metric) == metric_index(metric); });
  };
  if (req.targets[0] && !constrained("mass_flow")) {
    opt::Constraint c;
    c.metric = "mass_flow";
    c.kind = opt::ConstraintKind::Band;
    c.lo = *req.targets[0] * 0.99;
    c.hi = *req.targets[0] * 1.01;
    c.scale = *req.targets[0] * 0.01;
    spec.constraints.push_back(c);
  }
  if (req.targets[1] && !constrained("pressure_ratio")) {
    opt::Constraint c;
    c.metric = "pressure_ratio";
    c.kind = opt::ConstraintKind::AtLeast;
    c.lo = *req.targets[1];
    c.scale = *req.targets[1] * 0.01;
    spec.constraints.push_back(c);
  }
  return spec;
}

// Graph --------------------------------------------------------------------

bool WorkflowGraph::has_node(const std::string& id) const {
  return std::any_of(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
}

const Node& WorkflowGraph::node(const std::string& id) const {
  for (const auto& n : nodes)
    if (n.id == id) return n;
  fail(ErrorCode::NotFound, "no node " + id);
}

void WorkflowGraph::validate() const {
  if (nodes.empty()) fail(ErrorCode::InvalidArgument, "graph has no nodes");
  if (!has_node(entry)) fail(ErrorCode::InvalidArgument, "entry node missing: " + entry);
  std::set<std::string> ids;
  for (const auto& n : nodes)
    if (!ids.insert(n.id).second) fail(ErrorCode::InvalidArgument, "duplicate node id: " + n.id);
  for (const auto& e : edges) {
    if (!ids.count(e.from) || !ids.count(e.to)) fail(ErrorCode::InvalidArgument, "edge endpoint missing: " + e.from + "->" + e.to);
    if (!guards().count(e.guard)) fail(ErrorCode::GuardUndefined, "undefined guard: " + e.guard);
  }
  std::set<std::string> seen = {entry};
  std::vector<std::string> stack = {entry};
  while (!stack.empty()) {
    const std::string at = stack.back();
    stack.pop_back();
    for (const auto& e : edges)
      if (e.from == at && seen.insert(e.to).second) stack.push_back(e.to);
  }
  if (seen.size() != ids.size()) fail(ErrorCode::InvalidArgument, "graph has nodes unreachable from the entry");
  std::map<std::string, std::size_t> indeg;
  for (const auto& id : ids) indeg[id] = 0;
  for (const auto& e : edges)
    if (!e.feedback) ++indeg[e.to];
  std::vector<std::string> ready;
  for (const auto& [id, d] : indeg)
    if (d == 0) ready.push_back(id);
  std::size_t visited = 0;
  while (!ready.empty()) {
    const std::string at = ready.back();
    ready.pop_back();
    ++visited;
    for (const auto& e : edges)
      if (!e.feedback && e.from == at && --indeg[e.to] == 0) ready.push_back(e.to);
  }
  if (visited != ids.size()) fail(ErrorCode::InvalidArgument, "cycle without a feedback edge");
}

std::string WorkflowGraph::to_json() const {
  json j;
  j["entry"] = entry;
  j["nodes"] = json::array();
  for (const auto& n : nodes) j["nodes"].push_back({{"id", n.id}, {"kind", task_name(n.kind)}, {"config", n.config}});
  j["edges"] = json::array();
  for (const auto& e : edges) j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"guard", e.guard}, {"feedback", e.feedback}});
  return j.dump(2) + "\n";
}

WorkflowGraph WorkflowGraph::from_json(const std::string& text) {
  WorkflowGraph g;
  try {
    const json j = json::parse(text);
    g.entry = j.at("entry").get<std::string>();
    for (const auto& n : j.at("nodes"))
      g.nodes.push_back({n.at("id").get<std::string>(), parse_task(n.at("kind").get<std::string>()), n.value("config", json::object())});
    for (const auto& e : j.at("edges"))
      g.edges.push_back({e.at("from").get<std::string>(), e.at("to").get<std::string>(), e.value("guard", std::string("always")),
                         e.value("feedback", false)});
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("bad graph: ") + e.what());
  }
  return g;
}

WorkflowGraph plan_workflow(const DesignRequest& req) {
  req.validate();
  std::set<Task> tasks = req.tasks;
  close_tasks(tasks);
  if (tasks.count(Task::Optimize) && req.objectives.empty())
    fail(ErrorCode::ConflictingTasks, "optimization requested without an objective");

  WorkflowGraph g;
  auto add = [&](Task t, json cfg = json::object()) { g.nodes.push_back({std::string(task_name(t)), t, std::move(cfg)}); };
  for (Task t : tasks) {
    switch (t) {
      case Task::Generate:
        add(t, {{"n_candidates", req.n_candidates}});
        break;
      case Task::Optimize:
        add(t, {{"population", 20},
                {"max_generations", 30},
                {"epsilon", 1e-6},
                {"patience", 10},
                {"retries", 2},
                {"max_iterations", 31},
                {"baselines", {"ga", "pso"}}});
        break;
      case Task::Map:
        add(t, {{"n_points", 11}});
        break;
      case Task::Stress:
        add(t, {{"material", req.material}, {"speed", 1300.0}});
        break;
      default:
        add(t);
    }
  }
  g.entry = g.nodes.front().id;
  for (std::size_t i = 0; i + 1 < g.nodes.size(); ++i) {
    const Node& a = g.nodes[i];
    const Node& b = g.nodes[i + 1];
    if (a.kind == Task::Optimize) {
      g.edges.push_back({"optimize", "predict", "optimizer_active", true});
      g.edges.push_back({a.id, b.id, "optimizer_done", false});
    } else {
      g.edges.push_back({a.id, b.id, "always", false});
    }
  }
  if (g.nodes.back().kind == Task::Optimize) g.edges.push_back({"optimize", "predict", "optimizer_active", true});
  g.validate();
  return g;
}

// State --------------------------------------------------------------------

std::string_view to_string(NodeStatus s) {
  static constexpr std::array<std::string_view, 5> names = {"pending", "running", "done", "failed", "paused"};
  return names[static_cast<std::size_t>(s)];
}

std::string_view to_string(RunStatus s) {
  static constexpr std::array<std::string_view, 5> names = {"planning", "running", "paused", "done", "failed"};
  return names[static_cast<std::size_t>(s)];
}

RunStatus parse_run_status(std::string_view s) {
  for (int i = 0; i < 5; ++i)
    if (to_string(static_cast<RunStatus>(i)) == s) return static_cast<RunStatus>(i);
  fail(ErrorCode::InvalidArgument, "unknown run status: " + std::string(s));
}

namespace {
NodeStatus parse_node_status(std::string_view s) {
  for (int i = 0; i < 5; ++i)
    if (to_string(static_cast<NodeStatus>(i)) == s) return static_cast<NodeStatus>(i);
  fail(ErrorCode::InvalidArgument, "unknown node status: " + std::string(s));
}
}  // namespace

json Event::to_json() const { return {{"seq", seq}, {"ts", ts}, {"node", node}, {"kind", kind}, {"payload", payload}}; }

std::string Event::line() const { return to_json().dump(); }

Event Event::from_json(const json& j) {
  return {j.at("seq").get<std::size_t>(), j.at("ts").get<std::size_t>(), j.at("node").get<std::string>(),
          j.at("kind").get<std::string>(), j.value("payload", json::object())};
}

const Event& WorkflowState::append(const std::string& node, const std::string& kind, json payload) {
  Event e;
  e.seq = events.size();
  e.ts = e.seq;
  e.node = node;
  e.kind = kind;
  e.payload = std::move(payload);
  events.push_back(std::move(e));
  return events.back();
}

json WorkflowState::to_json() const {
  json j;
  j["context"] = json::object();
  for (const auto& [k, r] : context) j["context"][k] = {{"path", r.path}, {"node", r.node}};
  j["events"] = json::array();
  for (const auto& e : events) j["events"].push_back(e.to_json());
  j["status"] = json::object();
  for (const auto& [k, s] : status) j["status"][k] = to_string(s);
  j["visits"] = visits;
  j["signals"] = signals;
  j["pending_question"] = pending_question ? json(*pending_question) : json(nullptr);
  j["pending_node"] = pending_node;
  j["current"] = current;
  j["run_status"] = to_string(run_status);
  j["failure"] = failure;
  j["selected"] = selected ? json(*selected) : json(nullptr);
  j["seed"] = seed;
  return j;
}

WorkflowState WorkflowState::from_json(const json& j) {
  WorkflowState s;
  for (auto it = j.at("context").begin(); it != j.at("context").end(); ++it)
    s.context[it.key()] = {it.value().at("path").get<std::string>(), it.value().at("node").get<std::string>()};
  for (const auto& e : j.value("events", json::array())) s.events.push_back(Event::from_json(e));
  for (auto it = j.at("status").begin(); it != j.at("status").end(); ++it)
    s.status[it.key()] = parse_node_status(it.value().get<std::string>());
  s.visits = j.at("visits").get<std::map<std::string, std::size_t>>();
  s.signals = j.value("signals", json::object());
  if (!j["pending_question"].is_null()) s.pending_question = j["pending_question"].get<std::string>();
  s.pending_node = j.value("pending_node", std::string{});
  s.current = j.value("current", std::string{});
  s.run_status = parse_run_status(j.at("run_status").get<std::string>());
  s.failure = j.value("failure", std::string{});
  if (j.contains("selected") && !j["selected"].is_null()) s.selected = j["selected"].get<std::string>();
  s.seed = j.value("seed", std::uint64_t{1});
  return s;
}

// Guards and routing --------------------------------------------------------

namespace {

bool optimizer_active(const WorkflowState& s) {
  if (!s.signals.contains("optimize")) return false;
  const json& o = s.signals["optimize"];
  if (o.value("skipped", false)) return false;
  const auto rewards = o.value("best_rewards", std::vector<double>{});
  const json& eps = o.value("epsilon", json(1e-6));
  const double epsilon = eps.is_string() ? std::numeric_limits<double>::infinity() : eps.get<double>();
  const std::size_t patience = o.value("patience", std::size_t{10});
  const std::size_t g_max = o.value("max_generations", std::size_t{30});
  if (opt::convergence_generation(rewards, epsilon, patience)) return false;
  return rewards.size() <= g_max;
}

bool feedback_exhausted(const WorkflowState& s, const WorkflowGraph& g, const Edge& e) {
  if (!e.feedback) return false;
  const Node& from = g.node(e.from);
  if (!from.config.contains("max_iterations")) return false;
  const std::string kind(task_name(from.kind));
  if (!s.signals.contains(kind)) return false;
  return s.signals[kind].value("iteration", std::size_t{0}) >= from.config["max_iterations"].get<std::size_t>();
}

}  // namespace

const std::map<std::string, Guard>& guards() {
  static const std::map<std::string, Guard> table = {
      {"always", [](const WorkflowState&, const WorkflowGraph&, const Edge&) { return true; }},
      {"on_failure",
       [](const WorkflowState& s, const WorkflowGraph&, const Edge& e) {
         const auto it = s.status.find(e.from);
         return it != s.status.end() && it->second == NodeStatus::Failed;
       }},
      {"optimizer_active", [](const WorkflowState& s, const WorkflowGraph&, const Edge&) { return optimizer_active(s); }},
      {"optimizer_done", [](const WorkflowState& s, const WorkflowGraph&, const Edge&) { return !optimizer_active(s); }},
  };
  return table;
}

bool eval_guard(const std::string& name, const WorkflowState& state, const WorkflowGraph& g, const Edge& e) {
  const auto it = guards().find(name);
  if (it == guards().end()) fail(ErrorCode::GuardUndefined, "undefined guard: " + name);
  return it->second(state, g, e);
}

std::optional<std::string> route_next(WorkflowState& state, const WorkflowGraph& g) {
  const std::string from = state.current;
  const auto st = state.status.find(from);
  const bool failed = st != state.status.end() && st->second == NodeStatus::Failed;
  std::vector<const Edge*> out, enabled;
  for (const auto& e : g.edges)
    if (e.from == from) out.push_back(&e);
  bool capped = false;
  for (const Edge* e : out) {
    const bool ok = eval_guard(e->guard, state, g, *e);
    if ((e->guard == "on_failure") != failed) continue;
    if (!ok) continue;
    if (feedback_exhausted(state, g, *e))
      capped = true;
    else
      enabled.push_back(e);
  }
  if (enabled.empty() && capped) {
    // An exhausted loop leaves through its first forward edge.
    for (const Edge* e : out)
      if (!e->feedback && e->guard != "on_failure") {
        state.append("supervisor", "loop_capped", {{"from", from}, {"to", e->to}});
        enabled.push_back(e);
        break;
      }
  }
  if (enabled.empty()) {
    if (failed) fail(ErrorCode::NodeFailure, "node " + from + " failed with no fallback edge");
    const bool loop_exit = std::all_of(out.begin(), out.end(), [](const Edge* e) { return e->feedback; });
    if (out.empty() || loop_exit) return std::nullopt;
    fail(ErrorCode::NoEnabledEdge, "no enabled edge leaves " + from);
  }
  const Edge* chosen = enabled.front();
  if (enabled.size() > 1) {
    json alts = json::array();
    for (const Edge* e : enabled) alts.push_back(e->to);
    state.append("supervisor", "tie_break", {{"from", from}, {"chosen", chosen->to}, {"enabled", alts}});
  }
  state.append("supervisor", "route", {{"from", from}, {"to", chosen->to}, {"guard", chosen->guard}, {"feedback", chosen->feedback}});
  return chosen->to;
}

// Run directory ------------------------------------------------------------

RunDir::RunDir(std::filesystem::path root) {
  std::filesystem::create_directories(root);
  root_ = std::filesystem::canonical(root);
}

std::filesystem::path RunDir::resolve(const std::string& rel) const {
  const std::filesystem::path p(rel);
  if (rel.empty() || p.is_absolute() || rel.find('\0') != std::string::npos)
    fail(ErrorCode::Forbidden, "artifact path must be relative: " + rel);
  const auto full = std::filesystem::weakly_canonical(root_ / p);
  const auto r = full.lexically_relative(root_);
  if (r.empty() || *r.begin() == ".." || r == ".") fail(ErrorCode::Forbidden, "path escapes the run directory: " + rel);
  return full;
}

void RunDir::write(const std::string& rel, const std::string& bytes) const {
  const auto p = resolve(rel);
  std::filesystem::create_directories(p.parent_path());
  data::write_file(p, bytes);
}

std::string RunDir::read(const std::string& rel) const {
  const auto p = resolve(rel);
  if (!std::filesystem::is_regular_file(p)) fail(ErrorCode::NotFound, "no artifact " + rel);
  return data::read_file(p);
}

bool RunDir::exists(const std::string& rel) const { return std::filesystem::is_regular_file(resolve(rel)); }

std::vector<std::string> RunDir::list() const {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root_))
    if (e.is_regular_file()) out.push_back(e.path().lexically_relative(root_).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

std::string design_id(std::size_t k) {
  std::string s = std::to_string(k);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

// Schemes and reports ------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<SchemeRow> collect_schemes(const WorkflowState& state, const RunDir& dir) {
  std::vector<SchemeRow> rows;
  auto read = [&](const std::string& key) -> std::optional<json> {
    const auto it = state.context.find(key);
    if (it == state.context.end()) return std::nullopt;
    return json::parse(dir.read(it->second.path));
  };
  const std::string prefix = "validate.oracle.";
  for (const auto& [key, ref] : state.context) {
    if (key.rfind(prefix, 0) != 0) continue;
    const json o = json::parse(dir.read(ref.path));
    SchemeRow r;
    r.id = key.substr(prefix.size());
    r.converged = o.value("converged", false);
    if (o.contains("performance") && o["performance"].is_object()) {
      r.mass_flow = o["performance"]["mass_flow"].get<double>();
      r.pressure_ratio = o["performance"]["pressure_ratio"].get<double>();
      r.efficiency = o["performance"]["efficiency"].get<double>();
    }
    if (o.contains("reward")) r.reward = o["reward"].get<double>();
    if (const auto s = read("stress.stress." + r.id)) r.max_stress = (*s)["max_stress"].get<double>();
    if (const auto m = read("map.map." + r.id)) r.surge_margin = (*m)["surge_margin"].get<double>();
    rows.push_back(r);
  }
  if (!rows.empty()) return rows;
  if (const auto p = read("predict.predictions"))
    for (const auto& s : (*p)["schemes"]) {
      SchemeRow r;
      r.id = s["id"].get<std::string>();
      r.converged = true;
      r.mass_flow = s["mass_flow"].get<double>();
      r.pressure_ratio = s["pressure_ratio"].get<double>();
      r.efficiency = s["efficiency"].get<double>();
      rows.push_back(r);
    }
  return rows;
}

std::string scheme_table_markdown(const std::vector<SchemeRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("n/a"); };
  std::ostringstream out;
  out << "| Scheme | Mass flow (kg/s) | Pressure ratio | Efficiency | Max stress (Pa) | Surge margin | Reward |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    out << "| " << r.id << (r.converged ? "" : " (failed)") << " | " << cell(r.mass_flow) << " | " << cell(r.pressure_ratio)
        << " | " << cell(r.efficiency) << " | " << cell(r.max_stress) << " | " << cell(r.surge_margin) << " | "
        << cell(r.reward) << " |\n";
  }
  return out.str();
}

json scheme_table_json(const std::vector<SchemeRow>& rows) {
  auto val = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json out = json::array();
  for (const auto& r : rows)
    out.push_back({{"id", r.id},
                   {"converged", r.converged},
                   {"mass_flow", val(r.mass_flow)},
                   {"pressure_ratio", val(r.pressure_ratio)},
                   {"efficiency", val(r.efficiency)},
                   {"max_stress", val(r.max_stress)},
                   {"surge_margin", val(r.surge_margin)},
                   {"reward", val(r.reward)}});
  return out;
}

namespace {

std::size_t count_keys(const WorkflowState& s, const std::string& prefix, const std::string& suffix = {}) {
  std::size_t n = 0;
  for (const auto& [k, r] : s.context)
    if (k.rfind(prefix, 0) == 0 && (suffix.empty() || (k.size() >= suffix.size() && k.compare(k.size() - suffix.size(), suffix.size(), suffix) == 0)))
      ++n;
  return n;
}

std::string stage_summary(const Node& n, const WorkflowState& s, const RunDir& dir) {
  const auto ref = [&](const std::string& key) -> std::optional<json> {
    const auto it = s.context.find(key);
    if (it == s.context.end()) return std::nullopt;
    return json::parse(dir.read(it->second.path));
  };
  std::ostringstream out;
  out << "- **" << n.id << "**: ";
  switch (n.kind) {
    case Task::Generate:
      out << count_keys(s, "generate.design.", ".params") << " designs sampled from the generative model";
      break;
    case Task::Predict:
      if (const auto p = ref("predict.predictions")) out << (*p)["schemes"].size() << " designs scored by the surrogate";
      break;
    case Task::Optimize: {
      const auto sum = ref("optimize.summary");
      if (!sum) {
        out << "skipped";
        break;
      }
      bool first = true;
      for (auto it = (*sum)["methods"].begin(); it != (*sum)["methods"].end(); ++it) {
        out << (first ? "" : "; ") << it.key() << " best reward " << format_number(it.value()["best_reward"].get<double>())
            << " after " << it.value()["generations"].get<std::size_t>() << " generations ("
            << it.value()["stop_reason"].get<std::string>() << ")";
        first = false;
      }
      break;
    }
    case Task::Validate: {
      std::size_t conv = 0, total = 0;
      for (const auto& [k, r] : s.context)
        if (k.rfind("validate.oracle.", 0) == 0) {
          ++total;
          conv += json::parse(dir.read(r.path)).value("converged", false) ? 1 : 0;
        }
      out << total << " designs simulated, " << conv << " converged";
      break;
    }
    case Task::Map:
      out << count_keys(s, "map.map.") << " speedlines computed";
      break;
    case Task::Stress:
      out << count_keys(s, "stress.stress.") << " blades checked (" << n.config.value("material", std::string("Ti-6Al-4V"))
          << ")";
      break;
    case Task::Report:
      out << "this document";
      break;
  }
  return out.str();
}

}  // namespace

std::string synthesize_report(const WorkflowState& state, const DesignRequest& req, const WorkflowGraph& g,
                              const RunDir& dir, const AskFn& ask) {
  const auto rows = collect_schemes(state, dir);
  std::vector<std::string> stages;
  std::string stage_text;
  for (const auto& n : g.nodes) {
    const auto it = state.status.find(n.id);
    const bool ran = n.kind == Task::Report || (it != state.status.end() && it->second == NodeStatus::Done);
    if (!ran) continue;
    stages.push_back(n.id);
    stage_text += stage_summary(n, state, dir) + "\n";
  }
  std::optional<std::string> selected = state.selected;
  std::string why;
  if (selected) {
    why = "Scheme " + *selected + " is the final selection, chosen by the designer.";
  } else {
    const SchemeRow* best = nullptr;
    for (const auto& r : rows)
      if (r.converged && r.reward && (!best || *r.reward > *best->reward)) best = &r;
    if (best) {
      selected = best->id;
      why = "Scheme " + best->id + " is recommended: it has the highest reward among the converged schemes.";
    }
  }
  const std::string table = scheme_table_markdown(rows);

  std::string narrative;
  if (ask) {
    json facts = {{"stages", stages}, {"selected", selected ? json(*selected) : json(nullptr)}};
    const std::string user = llm::render(
        llm::load_prompt("report"),
        {{"request", req.raw_text}, {"stages", stage_text}, {"table", table}, {"facts", llm::fence(facts.dump())}});
    narrative = trim(ask({{"system", llm::load_prompt("report_system")}, {"user", user}}, {"report", 0.0, 1024}).text);
  }

  std::ostringstream out;
  out << "# Design report\n\n## Request\n\n";
  std::istringstream lines(req.raw_text);
  for (std::string line; std::getline(lines, line);) out << "> " << line << "\n";
  out << "\n";
  for (std::size_t i = 0; i < 3; ++i)
    if (req.targets[i]) out << "- Target " << kTargetLabels[i] << ": " << format_number(*req.targets[i]) << "\n";
  out << "- Tasks:";
  for (Task t : req.tasks) out << " " << task_name(t);
  out << "\n\n## Stages\n\n" << stage_text << "\n## Schemes\n\n" << table << "\n## Selection\n\n";
  out << (why.empty() ? "No converged scheme is available for selection." : why) << "\n";
  if (!narrative.empty()) out << "\n" << narrative << "\n";
  return out.str();
}

}  // namespace turbo::agent
