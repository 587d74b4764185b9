// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>

#include "turbo/agent.hpp"
#include "turbo/data.hpp"
#include "turbo/geometry.hpp"
#include "turbo/random.hpp"

namespace turbo::agent {
namespace {

using Kind = Outcome::Kind;

/// Client adapter that routes every call through the workflow's ledger.
class BoundClient : public llm::ChatClient {
 public:
  using Fn = std::function<llm::ChatReply(const std::vector<llm::Message>&, const llm::ChatParams&)>;
  BoundClient(Fn fn, std::string identity) : fn_(std::move(fn)), identity_(std::move(identity)) {}
  llm::ChatReply complete(const std::vector<llm::Message>& messages, const llm::ChatParams& params) override {
    return fn_(messages, params);
  }
  std::string identity() const override { return identity_; }

 private:
  Fn fn_;
  std::string identity_;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct DesignEntry {
  std::string id;
  DesignArray x{};
};

/// Designs written by generate and optimize, ordered by id.
std::vector<DesignEntry> designs_of(const NodeContext& ctx) {
  std::vector<DesignEntry> out;
  for (const std::string prefix : {"generate.design.", "optimize.design."})
    for (const auto& key : ctx.keys(prefix)) {
      if (!ends_with(key, ".params")) continue;
      const json p = json::parse(ctx.get(key));
      DesignEntry e;
      e.id = p.at("id").get<std::string>();
      const auto x = p.at("x").get<std::vector<double>>();
      std::copy(x.begin(), x.end(), e.x.begin());
      out.push_back(e);
    }
  std::sort(out.begin(), out.end(), [](const DesignEntry& a, const DesignEntry& b) { return a.id < b.id; });
  return out;
}

json triple_json(const PerformanceTriple& p) {
  return {{"mass_flow", p.mass_flow}, {"pressure_ratio", p.pressure_ratio}, {"efficiency", p.efficiency}};
}

void write_design(NodeContext& ctx, std::size_t k, const DesignArray& x, json extra) {
  const std::string kind(task_name(ctx.node().kind));
  const std::string id = design_id(k);
  json p = std::move(extra);
  p["id"] = id;
  p["source"] = kind;
  p["x"] = x;
  json named = json::object();
  for (std::size_t i = 0; i < kDesignDim; ++i) named[std::string(geometry::param_name(i))] = x[i];
  p["params"] = named;
  std::string mesh;
  try {
    const auto blade = geometry::assemble_blade(geometry::BladeParamVector::unflatten(x), ctx.services().mesh_span);
    const auto report = geometry::validate_geometry(blade);
    p["geometry_valid"] = report.valid;
    p["violations"] = report.violations.size();
    mesh = geometry::export_geometry(blade, geometry::ExportFormat::MeshJson);
  } catch (const Error& e) {
    p["geometry_valid"] = false;
    p["geometry_error"] = e.what();
  }
  const std::string base = kind + ".design." + id;
  ctx.put(base + ".params", "designs/" + id + "/params.json", p.dump(2) + "\n");
  if (!mesh.empty()) ctx.put(base + ".mesh", "designs/" + id + "/geometry.mesh.json", mesh);
}

opt::RewardSpec spec_for(const NodeContext& ctx) {
  const auto& o = ctx.services().oracle;
  return reward_spec(ctx.request(), o ? o->config().ranges : oracle::MetricRanges{});
}

std::uint64_t node_seed(const NodeContext& ctx, std::uint64_t stream) { return derive_seed(ctx.state().seed, stream); }

// Agents -------------------------------------------------------------------

Outcome generate_agent(NodeContext& ctx) {
  const auto target = ctx.request().target();
  if (!target) return Outcome::failure("design targets are incomplete");
  if (!ctx.services().designer) return Outcome::failure("no generative model loaded");
  const std::size_t n = ctx.node().config.value("n_candidates", ctx.request().n_candidates);
  const auto samples = ctx.services().designer->generate(*target, n, node_seed(ctx, 11));
  for (std::size_t k = 0; k < samples.designs.size(); ++k)
    write_design(ctx, k, samples.designs[k], {{"clamped", samples.clamped.at(k)}, {"target", triple_json(*target)}});
  ctx.signal("count", samples.designs.size());
  return Outcome::ok();
}

Outcome predict_agent(NodeContext& ctx) {
  if (!ctx.services().surrogate) return Outcome::failure("no surrogate loaded");
  const auto& sur = *ctx.services().surrogate;
  const json& sig = ctx.state().signals;
  if (sig.contains("optimize") && sig["optimize"].value("pending", false) && ctx.has("optimize.pending")) {
    const json pend = json::parse(ctx.get("optimize.pending"));
    std::vector<DesignArray> xs;
    for (const auto& row : pend.at("designs")) {
      DesignArray x{};
      const auto v = row.get<std::vector<double>>();
      std::copy(v.begin(), v.end(), x.begin());
      xs.push_back(x);
    }
    json preds = json::array();
    for (const auto& p : sur.predict_batch(xs)) preds.push_back(triple_json(p));
    ctx.put("predict.batch", "optimizer/batch.predictions.json",
            json{{"generation", pend.at("generation")}, {"predictions", preds}}.dump() + "\n");
    return Outcome::ok();
  }
  const auto designs = designs_of(ctx);
  std::vector<DesignArray> xs;
  for (const auto& d : designs) xs.push_back(d.x);
  const auto preds = sur.predict_batch(xs);
  json schemes = json::array();
  for (std::size_t i = 0; i < designs.size(); ++i) {
    json row = triple_json(preds[i]);
    row["id"] = designs[i].id;
    schemes.push_back(row);
  }
  ctx.put("predict.predictions", "predictions.json", json{{"model", "surrogate"}, {"schemes", schemes}}.dump(2) + "\n");
  return Outcome::ok();
}

bool affirmative(const std::string& answer) {
  static const std::regex yes("\\b(yes|y|ok|okay|sure|proceed|go ahead|optimi[sz]e)\\b", std::regex::icase);
  static const std::regex no("\\b(no|n|skip|don't|do not|stop)\\b", std::regex::icase);
  return std::regex_search(answer, yes) && !std::regex_search(answer, no);
}

struct OptimizerScratch {
  std::shared_ptr<opt::LlmSearch> search;
};

opt::OptimizerConfig optimizer_config(const NodeContext& ctx) {
  const json& c = ctx.node().config;
  opt::OptimizerConfig cfg;
  cfg.population = c.value("population", cfg.population);
  cfg.max_generations = c.value("max_generations", cfg.max_generations);
  cfg.epsilon = c.contains("epsilon") && c["epsilon"].is_string() ? std::numeric_limits<double>::infinity()
                                                                  : c.value("epsilon", cfg.epsilon);
  cfg.patience = c.value("patience", cfg.patience);
  cfg.retries = c.value("retries", cfg.retries);
  cfg.bounds = ctx.services().bounds;
  cfg.seed = node_seed(ctx, 5);
  // Generated designs seed the population; LHS fills the rest.
  for (const auto& d : designs_of(ctx)) {
    if (cfg.initial.size() == cfg.population) break;
    cfg.initial.push_back(cfg.bounds.to_unit(d.x));
  }
  const std::size_t fill = cfg.population - cfg.initial.size();
  if (fill > 0)
    for (const auto& row : data::latin_hypercube_unit(fill, kDesignDim, derive_seed(cfg.seed, 0))) {
      DesignArray z{};
      std::copy(row.begin(), row.end(), z.begin());
      cfg.initial.push_back(z);
    }
  return cfg;
}

void publish(NodeContext& ctx, const opt::LlmSearch& search, const opt::OptimizerConfig& cfg) {
  const auto r = search.result();
  json rewards = json::array();
  for (const auto& l : r.logs) rewards.push_back(l.best_reward);
  ctx.signal("best_rewards", rewards);
  ctx.signal("epsilon", std::isfinite(cfg.epsilon) ? json(cfg.epsilon) : json("inf"));
  ctx.signal("patience", cfg.patience);
  ctx.signal("max_generations", cfg.max_generations);
  ctx.signal("iteration", r.logs.size());
  ctx.signal("pending", !search.done());
}

Outcome optimize_agent(NodeContext& ctx) {
  const json& sig = ctx.state().signals;
  if (ctx.request().confirm_optimize && !(sig.contains("optimize") && sig["optimize"].value("confirmed", false))) {
    const auto answer = ctx.take_answer();
    if (!answer) return Outcome::pause("Optimize the generated designs before validation? (yes/no)");
    if (!affirmative(*answer)) {
      ctx.signal("skipped", true);
      ctx.emit("optimizer_skipped", {{"answer", *answer}});
      return Outcome::ok();
    }
    ctx.signal("confirmed", true);
  }
  if (!ctx.services().surrogate) return Outcome::failure("no surrogate loaded");
  const opt::RewardSpec spec = spec_for(ctx);
  const opt::OptimizerConfig cfg = optimizer_config(ctx);
  auto& scratch = ctx.scratch();
  if (!scratch.has_value()) {
    scratch = OptimizerScratch{std::make_shared<opt::LlmSearch>(spec, cfg, ctx.client())};
    ctx.emit("optimizer_started", {{"population", cfg.population}, {"max_generations", cfg.max_generations}});
  } else {
    auto& search = *std::any_cast<OptimizerScratch&>(scratch).search;
    const json batch = json::parse(ctx.get("predict.batch"));
    if (batch.at("generation").get<std::size_t>() != search.generation())
      return Outcome::failure("prediction batch does not match the pending generation");
    std::vector<std::optional<opt::Metrics>> metrics;
    for (const auto& p : batch.at("predictions"))
      metrics.push_back(opt::to_metrics({p["mass_flow"].get<double>(), p["pressure_ratio"].get<double>(),
                                         p["efficiency"].get<double>()}));
    search.observe(metrics);
    const auto r = search.result();
    const auto& last = r.logs.back();
    ctx.emit("generation", {{"generation", last.generation}, {"best_reward", last.best_reward}, {"sigma", last.sigma}});
  }
  auto& search = *std::any_cast<OptimizerScratch&>(scratch).search;
  publish(ctx, search, cfg);
  if (!search.done()) {
    json designs = json::array();
    for (const auto& z : search.pending()) designs.push_back(cfg.bounds.from_unit(z));
    ctx.put("optimize.pending", "optimizer/batch.pending.json",
            json{{"generation", search.generation()}, {"designs", designs}}.dump() + "\n");
    return Outcome::ok();
  }

  const auto result = search.result();
  json summary = {{"methods", json::object()}};
  auto record = [&](const opt::OptimizeResult& r) {
    ctx.put("optimize.log." + r.method, "optimizer/" + r.method + ".jsonl", r.logs_jsonl());
    json m = {{"best_reward", r.best_reward},
              {"generations", r.logs.size()},
              {"stop_reason", r.stop_reason},
              {"best_x", r.best_x}};
    m["best_metrics"] = json::object();
    for (const auto& [k, v] : r.best_metrics) m["best_metrics"][k] = v;
    summary["methods"][r.method] = m;
  };
  record(result);
  std::string transcripts;
  for (const auto& t : result.transcripts) transcripts += t + "\n";
  ctx.put("optimize.transcripts", "optimizer/llm.transcripts.jsonl", transcripts);

  const auto& sur = *ctx.services().surrogate;
  const opt::Evaluator eval = [&sur](const DesignArray& x) -> std::optional<opt::Metrics> {
    return opt::to_metrics(sur.predict(x));
  };
  for (const auto& name : ctx.node().config.value("baselines", std::vector<std::string>{}))
    record(opt::run_baseline(opt::parse_baseline(name), spec, eval, cfg));
  ctx.put("optimize.summary", "optimizer/summary.json", summary.dump(2) + "\n");

  json predicted = json::object();
  for (const auto& [k, v] : result.best_metrics) predicted[k] = v;
  write_design(ctx, designs_of(ctx).size(), result.best_x,
               {{"predicted", predicted}, {"reward", result.best_reward}, {"method", "llm"}});
  ctx.emit("optimizer_finished", {{"stop_reason", result.stop_reason}, {"generations", result.logs.size()}});
  return Outcome::ok();
}

Outcome validate_agent(NodeContext& ctx) {
  if (!ctx.services().oracle) return Outcome::failure("no oracle configured");
  const auto& oracle = *ctx.services().oracle;
  const auto spec = spec_for(ctx);
  std::size_t conv = 0;
  const auto designs = designs_of(ctx);
  for (const auto& d : designs) {
    const auto r = oracle.simulate(d.x);
    json j = json::parse(r.to_json());
    j["id"] = d.id;
    j["reward"] = opt::compute_reward(r.performance, spec).reward;
    ctx.put("validate.oracle." + d.id, "oracle/" + d.id + ".json", j.dump(2) + "\n");
    conv += r.converged ? 1 : 0;
  }
  ctx.signal("converged", conv);
  ctx.signal("simulated", designs.size());
  return Outcome::ok();
}

std::vector<DesignEntry> converged_designs(const NodeContext& ctx) {
  std::vector<DesignEntry> out;
  for (const auto& d : designs_of(ctx)) {
    const std::string key = "validate.oracle." + d.id;
    if (ctx.has(key) && json::parse(ctx.get(key)).value("converged", false)) out.push_back(d);
  }
  return out;
}

Outcome map_agent(NodeContext& ctx) {
  if (!ctx.services().oracle) return Outcome::failure("no oracle configured");
  const std::size_t n = ctx.node().config.value("n_points", std::size_t{11});
  for (const auto& d : converged_designs(ctx)) {
    json j = json::parse(ctx.services().oracle->speedline(d.x, n).to_json());
    j["id"] = d.id;
    ctx.put("map.map." + d.id, "maps/" + d.id + ".json", j.dump(2) + "\n");
  }
  return Outcome::ok();
}

Outcome stress_agent(NodeContext& ctx) {
  if (!ctx.services().oracle) return Outcome::failure("no oracle configured");
  const auto& cfg = ctx.node().config;
  const auto material = oracle::find_material(cfg.value("material", ctx.request().material), ctx.services().materials);
  const double speed = cfg.value("speed", ctx.services().oracle->config().design_speed);
  for (const auto& d : converged_designs(ctx)) {
    const double s = oracle::stress_analysis(d.x, material, speed, ctx.services().oracle->config());
    const json j = {{"id", d.id},
                    {"material", material.name},
                    {"speed", speed},
                    {"max_stress", s},
                    {"yield_strength", material.yield_strength},
                    {"safety_factor", material.yield_strength / s},
                    {"within_yield", s < material.yield_strength}};
    ctx.put("stress.stress." + d.id, "stress/" + d.id + ".json", j.dump(2) + "\n");
  }
  return Outcome::ok();
}

Outcome report_agent(NodeContext& ctx) {
  const std::string md = synthesize_report(ctx.state(), ctx.request(), ctx.graph(), ctx.dir(),
                                           [&ctx](const auto& m, const auto& p) { return ctx.ask(m, p); });
  ctx.put("report.report", "report.md", md);
  return Outcome::ok();
}

}  // namespace

const Agent& Registry::get(Task kind) const {
  const auto it = agents_.find(kind);
  if (it == agents_.end()) fail(ErrorCode::NotFound, "no agent registered for " + std::string(task_name(kind)));
  return it->second;
}

Registry Registry::standard() {
  Registry r;
  r.add(Task::Generate, generate_agent);
  r.add(Task::Predict, predict_agent);
  r.add(Task::Optimize, optimize_agent);
  r.add(Task::Validate, validate_agent);
  r.add(Task::Map, map_agent);
  r.add(Task::Stress, stress_agent);
  r.add(Task::Report, report_agent);
  return r;
}

// Node context -------------------------------------------------------------

const DesignRequest& NodeContext::request() const { return wf_.req_; }
const WorkflowGraph& NodeContext::graph() const { return wf_.graph_; }
const WorkflowState& NodeContext::state() const { return wf_.state_; }
const Services& NodeContext::services() const { return wf_.services_; }
const RunDir& NodeContext::dir() const { return wf_.dir_; }

std::size_t NodeContext::visit() const {
  const auto it = wf_.state_.visits.find(node_.id);
  return it == wf_.state_.visits.end() ? 0 : it->second;
}

void NodeContext::put(const std::string& key, const std::string& rel, const std::string& bytes) {
  const std::string prefix = std::string(task_name(node_.kind)) + ".";
  if (key.rfind(prefix, 0) != 0) fail(ErrorCode::Forbidden, "artifact key " + key + " outside namespace " + prefix);
  wf_.dir_.write(rel, bytes);
  wf_.state_.context[key] = {rel, node_.id};
  wf_.state_.append(node_.id, "artifact", {{"key", key}, {"path", rel}, {"bytes", bytes.size()}, {"hash", data::fnv1a_hex(bytes)}});
}

std::string NodeContext::get(const std::string& key) const {
  const auto it = wf_.state_.context.find(key);
  if (it == wf_.state_.context.end()) fail(ErrorCode::NotFound, "no artifact bound to " + key);
  return wf_.dir_.read(it->second.path);
}

bool NodeContext::has(const std::string& key) const { return wf_.state_.context.count(key) != 0; }

std::vector<std::string> NodeContext::keys(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = wf_.state_.context.lower_bound(prefix); it != wf_.state_.context.end() && it->first.rfind(prefix, 0) == 0; ++it)
    out.push_back(it->first);
  return out;
}

llm::ChatReply NodeContext::ask(const std::vector<llm::Message>& messages, const llm::ChatParams& params) {
  return wf_.ask(node_.id, messages, params);
}

llm::ChatClient& NodeContext::client() {
  auto& slot = wf_.node_clients_[node_.id];
  if (!slot) {
    Workflow* wf = &wf_;
    const std::string id = node_.id;
    slot = std::make_unique<BoundClient>(
        [wf, id](const std::vector<llm::Message>& m, const llm::ChatParams& p) { return wf->ask(id, m, p); },
        wf_.client_->identity());
  }
  return *slot;
}

void NodeContext::emit(const std::string& kind, json payload) { wf_.state_.append(node_.id, kind, std::move(payload)); }

void NodeContext::signal(const std::string& name, json value) {
  wf_.state_.signals[std::string(task_name(node_.kind))][name] = std::move(value);
}

std::optional<std::string> NodeContext::take_answer() {
  const auto it = wf_.answers_.find(node_.id);
  if (it == wf_.answers_.end()) return std::nullopt;
  std::string a = it->second;
  wf_.answers_.erase(it);
  return a;
}

std::any& NodeContext::scratch() { return wf_.scratch_[node_.id]; }

// Workflow -----------------------------------------------------------------

Workflow::Workflow(Registry registry, Services services, llm::ChatClient& client, RunDir dir)
    : registry_(std::move(registry)), services_(std::move(services)), client_(&client), dir_(std::move(dir)) {}

Workflow::~Workflow() = default;

Workflow::Workflow(DesignRequest req, Registry registry, Services services, llm::ChatClient& client, RunDir dir,
                   std::uint64_t seed, TokenLedger ledger)
    : Workflow(std::move(registry), std::move(services), client, std::move(dir)) {
  req_ = std::move(req);
  graph_ = plan_workflow(req_);
  for (const auto& n : graph_.nodes)
    if (!registry_.has(n.kind)) fail(ErrorCode::NotFound, "no agent registered for " + std::string(task_name(n.kind)));
  ledger_ = std::move(ledger);
  state_.seed = seed;
  state_.current = graph_.entry;
  for (const auto& n : graph_.nodes) state_.status[n.id] = NodeStatus::Pending;
  dir_.write("request.json", req_.to_json().dump(2) + "\n");
  dir_.write("plan.json", graph_.to_json());
  state_.context["supervisor.request"] = {"request.json", "supervisor"};
  state_.context["supervisor.plan"] = {"plan.json", "supervisor"};
  state_.append("supervisor", "planned", {{"entry", graph_.entry}, {"nodes", graph_.nodes.size()}, {"seed", seed}});
  for (const auto& e : ledger_.entries())
    state_.append(e.node, "llm_call",
                  {{"call_index", e.call_index}, {"task", "parse"}, {"prompt_tokens", e.prompt_tokens},
                   {"completion_tokens", e.completion_tokens}});
  if (req_.pending_question) pause("", *req_.pending_question);
  persist();
}

std::unique_ptr<Workflow> Workflow::restore(const RunDir& dir, Registry registry, Services services,
                                            llm::ChatClient& client) {
  std::unique_ptr<Workflow> wf(new Workflow(std::move(registry), std::move(services), client, dir));
  wf->req_ = DesignRequest::from_json(json::parse(dir.read("request.json")));
  wf->graph_ = WorkflowGraph::from_json(dir.read("plan.json"));
  wf->graph_.validate();
  wf->state_ = WorkflowState::from_json(json::parse(dir.read("state.json")));
  wf->state_.events.clear();
  std::istringstream lines(dir.read("events.log"));
  for (std::string line; std::getline(lines, line);)
    if (!line.empty()) wf->state_.events.push_back(Event::from_json(json::parse(line)));
  wf->ledger_ = TokenLedger::from_json(json::parse(dir.read("ledger.json")).at("entries"));
  if (wf->state_.run_status == RunStatus::Running) {
    // Interrupted mid-node: that node runs again.
    wf->state_.run_status = RunStatus::Paused;
    if (wf->state_.status.count(wf->state_.current)) wf->state_.status[wf->state_.current] = NodeStatus::Pending;
  }
  return wf;
}

llm::ChatReply Workflow::ask(const std::string& node, const std::vector<llm::Message>& messages,
                             const llm::ChatParams& params) {
  llm::ChatReply r = client_->complete(messages, params);
  const std::size_t idx = ledger_.record(node, r.prompt_tokens, r.completion_tokens);
  state_.append(node, "llm_call",
                {{"call_index", idx}, {"task", params.task}, {"prompt_tokens", r.prompt_tokens},
                 {"completion_tokens", r.completion_tokens}});
  return r;
}

void Workflow::pause(const std::string& node, const std::string& question) {
  state_.run_status = RunStatus::Paused;
  state_.pending_question = question;
  state_.pending_node = node;
  state_.append(node.empty() ? "supervisor" : node, "paused", {{"question", question}});
}

RunStatus Workflow::run(const std::atomic<bool>* stop) {
  if (state_.run_status == RunStatus::Done || state_.run_status == RunStatus::Failed) return state_.run_status;
  if (state_.run_status == RunStatus::Paused && state_.pending_question) return state_.run_status;
  if (state_.run_status == RunStatus::Planning) state_.append("supervisor", "run_started");
  state_.run_status = RunStatus::Running;
  while (true) {
    if (stop && stop->load()) {
      state_.run_status = RunStatus::Paused;
      state_.append("supervisor", "interrupted", {{"next", state_.current}});
      persist();
      return state_.run_status;
    }
    const Node& node = graph_.node(state_.current);
    const std::size_t visit = ++state_.visits[node.id];
    state_.status[node.id] = NodeStatus::Running;
    state_.append(node.id, "node_started", {{"visit", visit}});
    Outcome out;
    try {
      NodeContext ctx(*this, node);
      out = registry_.get(node.kind)(ctx);
    } catch (const std::exception& e) {
      out = Outcome::failure(e.what());
    }
    if (out.kind == Kind::Pause) {
      --state_.visits[node.id];
      state_.status[node.id] = NodeStatus::Paused;
      pause(node.id, out.message);
      persist();
      return state_.run_status;
    }
    if (out.kind == Kind::Fail) {
      state_.status[node.id] = NodeStatus::Failed;
      state_.append(node.id, "node_failed", {{"visit", visit}, {"message", out.message}});
    } else {
      state_.status[node.id] = NodeStatus::Done;
      state_.append(node.id, "node_finished", {{"visit", visit}});
    }
    std::optional<std::string> next;
    try {
      next = route_next(state_, graph_);
    } catch (const Error& e) {
      state_.run_status = RunStatus::Failed;
      state_.failure = std::string(to_string(e.code())) + ": " + (out.kind == Kind::Fail ? out.message : e.what());
      state_.append("supervisor", "run_finished", {{"status", "failed"}, {"error", state_.failure}});
      persist();
      return state_.run_status;
    }
    if (!next) {
      state_.run_status = RunStatus::Done;
      state_.current.clear();
      state_.append("supervisor", "run_finished", {{"status", "done"}});
      persist();
      return state_.run_status;
    }
    state_.current = *next;
    persist();
  }
}

void Workflow::answer(const std::string& text) {
  if (state_.run_status != RunStatus::Paused) fail(ErrorCode::Conflict, "run is not waiting for an answer");
  if (!state_.pending_question) return;
  const std::string node = state_.pending_node;
  state_.append(node.empty() ? "supervisor" : node, "answered", {{"answer", text}});
  if (node.empty()) {
    answer_pending(req_, text);
    dir_.write("request.json", req_.to_json().dump(2) + "\n");
    state_.pending_question.reset();
    if (req_.pending_question) {
      pause("", *req_.pending_question);
    } else {
      state_.append("supervisor", "resumed");
    }
  } else {
    answers_[node] = text;
    state_.status[node] = NodeStatus::Pending;
    state_.pending_question.reset();
    state_.pending_node.clear();
    state_.append(node, "resumed");
  }
  persist();
}

void Workflow::write_report() {
  for (const auto& n : graph_.nodes)
    if (n.kind == Task::Report) {
      NodeContext ctx(*this, n);
      registry_.get(Task::Report)(ctx);
    }
}

ChatResult Workflow::chat(const std::string& message) {
  ChatResult res;
  if (state_.run_status == RunStatus::Paused && state_.pending_question) {
    state_.append("chat", "chat", {{"message", message}, {"action", "answer"}});
    answer(message);
    res.resumed = !state_.pending_question;
    res.reply = res.resumed ? "Thanks, the run continues." : *state_.pending_question;
    return res;
  }
  if (state_.run_status != RunStatus::Done) fail(ErrorCode::Conflict, "run is busy; chat is available at pause points and after completion");

  const auto rows = collect_schemes(state_, dir_);
  static const std::regex pick("\\b(?:select|choose|final(?:ize)?|pick)\\s+(?:scheme|design)\\s*#?\\s*([0-9]+)\\b",
                               std::regex::icase);
  std::smatch m;
  if (std::regex_search(message, m, pick)) {
    const std::string id = design_id(std::stoul(m[1].str()));
    const auto it = std::find_if(rows.begin(), rows.end(), [&](const SchemeRow& r) { return r.id == id; });
    if (it == rows.end()) {
      res.reply = "There is no scheme " + id + " in this run.";
      state_.append("chat", "chat", {{"message", message}, {"action", "select"}, {"error", "unknown scheme"}});
      persist();
      return res;
    }
    state_.selected = id;
    state_.append("chat", "selection", {{"scheme", id}});
    write_report();
    res.table = scheme_table_json({*it});
    res.reply = "Scheme " + id + " is recorded as the final selection.\n\n" + scheme_table_markdown({*it});
    persist();
    return res;
  }

  json schemes = json::array();
  for (const auto& r : rows) schemes.push_back({{"id", r.id}, {"reward", r.reward ? json(*r.reward) : json(nullptr)}});
  const std::string user = llm::render(
      llm::load_prompt("chat"), {{"question", message},
                                 {"table", scheme_table_markdown(rows)},
                                 {"facts", llm::fence(json{{"question", message}, {"schemes", schemes}}.dump())}});
  const auto reply = ask("chat", {{"system", llm::load_prompt("chat_system")}, {"user", user}}, {"chat", 0.0, 1024});
  std::vector<SchemeRow> picked;
  if (const auto block = llm::fenced_json(reply.text)) {
    try {
      for (const auto& id : json::parse(*block).value("select", json::array())) {
        const auto it = std::find_if(rows.begin(), rows.end(), [&](const SchemeRow& r) { return id.is_string() && r.id == id.get<std::string>(); });
        if (it != rows.end()) picked.push_back(*it);
      }
    } catch (const json::exception&) {
    }
  }
  std::string text = reply.text;
  if (const auto fence = text.find("```"); fence != std::string::npos) text = text.substr(0, fence);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
  const auto& shown = picked.empty() ? rows : picked;
  res.table = scheme_table_json(shown);
  res.reply = text + "\n\n" + scheme_table_markdown(shown);
  json ids = json::array();
  for (const auto& r : picked) ids.push_back(r.id);
  state_.append("chat", "chat", {{"message", message}, {"action", "query"}, {"schemes", ids}});
  persist();
  return res;
}

void Workflow::persist() const {
  std::string log;
  for (const auto& e : state_.events) log += e.line() + "\n";
  dir_.write("events.log", log);
  json st = state_.to_json();
  st.erase("events");
  dir_.write("state.json", st.dump(2) + "\n");
  dir_.write("ledger.json", json{{"entries", ledger_.to_json()}, {"totals", account_tokens(ledger_).to_json()}}.dump(2) + "\n");
}

// Services -----------------------------------------------------------------

Services load_services(const std::filesystem::path& models_dir, const ModelRecipe& recipe,
                       const oracle::OracleConfig& oracle_cfg) {
  Services s;
  s.oracle = std::make_shared<oracle::Oracle>(oracle_cfg);
  s.bounds = s.oracle->bounds();
  s.materials = oracle::load_materials();
  const auto sur_path = models_dir / "surrogate.ckpt";
  const auto des_path = models_dir / "designer.ckpt";
  if (std::filesystem::exists(sur_path) && std::filesystem::exists(des_path)) {
    s.surrogate = std::make_shared<surrogate::Surrogate>(surrogate::Surrogate::load(sur_path.string()));
    s.designer = std::make_shared<diffusion::Designer>(diffusion::Designer::load(des_path.string()));
    return s;
  }
  std::filesystem::create_directories(models_dir);
  const auto ds = data::generate_dataset(recipe.dataset_rows, *s.oracle, s.bounds, derive_seed(recipe.seed, 1));
  surrogate::SurrogateConfig sc;
  sc.epochs = recipe.surrogate_epochs;
  sc.seed = derive_seed(recipe.seed, 2);
  auto sur = std::make_shared<surrogate::Surrogate>(surrogate::Surrogate::train(ds.subset(data::Split::Train), sc));
  diffusion::DesignerConfig dc;
  dc.train.epochs = recipe.designer_epochs;
  dc.seed = derive_seed(recipe.seed, 3);
  auto des = std::make_shared<diffusion::Designer>(
      diffusion::Designer::fit(ds, dc, s.bounds, [&sur](const std::vector<DesignArray>& xs) { return sur->latent(xs); }));
  sur->save(sur_path.string());
  des->save(des_path.string());
  s.surrogate = sur;
  s.designer = des;
  return s;
}

}  // namespace turbo::agent
