// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include "support/services.hpp"
#include "turbo/agent.hpp"
#include "turbo/data.hpp"
#include "turbo/geometry.hpp"

using namespace turbo;
using namespace turbo::agent;
using turbo::testing::quick_services;
using turbo::testing::scratch_dir;
using Catch::Matchers::WithinAbs;

namespace {

const std::string kFull =
    "Design a rotor for 15.2 kg/s, pressure ratio 1.62, efficiency 0.88; generate 10 schemes, optimize efficiency, "
    "verify with high-fidelity simulation, compute the speedline map, and write a report";

DesignRequest parse(const std::string& text, TokenLedger* ledger = nullptr) {
  llm::MockLLM mock;
  return parse_request(text, mock, ledger);
}

std::string golden_path(const std::string& name) { return std::string(TURBO_FIXTURE_DIR) + "/golden/" + name; }

/// Byte comparison against tests/golden/<name>; TURBO_UPDATE_GOLDEN=1 rewrites it.
void check_golden(const std::string& name, const std::string& actual) {
  if (std::getenv("TURBO_UPDATE_GOLDEN")) data::write_file(golden_path(name), actual);
  REQUIRE(std::filesystem::exists(golden_path(name)));
  CHECK(data::read_file(golden_path(name)) == actual);
}

std::vector<std::string> node_sequence(const WorkflowState& s) {
  std::vector<std::string> out;
  for (const auto& e : s.events)
    if (e.kind == "node_started") out.push_back(e.node);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : " ") + x;
  return s;
}

/// Events minus the pause/resume bookkeeping, without sequence numbers.
std::vector<std::string> comparable_events(const RunDir& dir) {
  static const std::set<std::string> skip = {"paused", "answered", "resumed", "interrupted", "chat"};
  std::vector<std::string> out;
  std::istringstream in(dir.read("events.log"));
  for (std::string line; std::getline(in, line);) {
    const auto e = Event::from_json(nlohmann::json::parse(line));
    if (skip.count(e.kind)) continue;
    out.push_back(e.node + "|" + e.kind + "|" + e.payload.dump());
  }
  return out;
}

void check_same_artifacts(const RunDir& a, const RunDir& b) {
  static const std::set<std::string> skip = {"request.json", "events.log", "state.json"};
  const auto la = a.list(), lb = b.list();
  CHECK(la == lb);
  for (const auto& f : la) {
    if (skip.count(f) || !b.exists(f)) continue;
    INFO(f);
    CHECK(a.read(f) == b.read(f));
  }
  CHECK(comparable_events(a) == comparable_events(b));
}

WorkflowGraph chain(std::initializer_list<std::string> ids) {
  WorkflowGraph g;
  std::string prev;
  for (const auto& id : ids) {
    g.nodes.push_back({id, Task::Generate, nlohmann::json::object()});
    if (!prev.empty()) g.edges.push_back({prev, id, "always", false});
    prev = id;
  }
  g.entry = *ids.begin();
  return g;
}

}  // namespace

TEST_CASE("rule stage extracts targets, count and tasks", "[agent][parse]") {
  TokenLedger ledger;
  const auto req = parse(kFull, &ledger);
  REQUIRE(req.targets[0]);
  REQUIRE(req.targets[1]);
  REQUIRE(req.targets[2]);
  CHECK_THAT(*req.targets[0], WithinAbs(15.2, 1e-12));
  CHECK_THAT(*req.targets[1], WithinAbs(1.62, 1e-12));
  CHECK_THAT(*req.targets[2], WithinAbs(0.88, 1e-12));
  CHECK(req.n_candidates == 10);
  for (Task t : {Task::Generate, Task::Predict, Task::Optimize, Task::Validate, Task::Map, Task::Report})
    CHECK(req.has(t));
  CHECK_FALSE(req.has(Task::Stress));
  CHECK_FALSE(req.pending_question);
  CHECK_FALSE(req.confirm_optimize);
  REQUIRE(req.objectives.size() == 1);
  CHECK(req.objectives[0].metric == "efficiency");
  CHECK(req.objectives[0].direction == opt::Direction::Maximize);
  REQUIRE(ledger.entries().size() == 1);
  CHECK(ledger.entries()[0].node == "planner");
}

TEST_CASE("percent efficiency and written counts", "[agent][parse]") {
  const auto req = parse("Generate five candidate blades at 14 kg/s, pressure ratio 1.5 and 90% efficiency");
  REQUIRE(req.targets[2]);
  CHECK_THAT(*req.targets[2], WithinAbs(0.90, 1e-12));
  CHECK(req.n_candidates == 5);
  CHECK(req.has(Task::Generate));
  CHECK(req.has(Task::Predict));
}

TEST_CASE("missing efficiency target becomes a clarification question", "[agent][parse]") {
  const auto req = parse("Design a rotor for 15.2 kg/s and pressure ratio 1.62, generate 10 schemes");
  REQUIRE(req.pending_question);
  CHECK(req.pending_question->find("efficiency") != std::string::npos);
  auto answered = req;
  answer_pending(answered, "efficiency 0.88");
  CHECK_FALSE(answered.pending_question);
  REQUIRE(answered.targets[2]);
  CHECK_THAT(*answered.targets[2], WithinAbs(0.88, 1e-12));
}

TEST_CASE("unparseable requests are rejected", "[agent][parse]") {
  auto code_of = [](const std::string& text) {
    try {
      parse(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code_of("") == ErrorCode::UnparseableRequest);
  CHECK(code_of("   ") == ErrorCode::UnparseableRequest);
  CHECK(code_of("hello there") == ErrorCode::UnparseableRequest);
}

TEST_CASE("implied optimization asks for confirmation", "[agent][parse]") {
  const auto req = parse("Design a rotor for 15.2 kg/s, pressure ratio 1.62, efficiency 0.88 and improve efficiency");
  CHECK(req.has(Task::Optimize));
  CHECK(req.confirm_optimize);
}

TEST_CASE("constraints from comparison phrases", "[agent][parse]") {
  const auto req = parse("Generate designs at 15 kg/s, pressure ratio 1.6, efficiency 0.9 with efficiency at least 0.87");
  REQUIRE(req.constraints.size() == 1);
  CHECK(req.constraints[0].metric == "efficiency");
  CHECK(req.constraints[0].kind == opt::ConstraintKind::AtLeast);
  CHECK_THAT(req.constraints[0].lo, WithinAbs(0.87, 1e-12));
}

TEST_CASE("request JSON round trip", "[agent][parse]") {
  const auto req = parse(kFull);
  const auto back = DesignRequest::from_json(req.to_json());
  CHECK(back.to_json() == req.to_json());
}

TEST_CASE("reward spec adds the target band and floor", "[agent][parse]") {
  const auto spec = reward_spec(parse(kFull));
  REQUIRE(spec.constraints.size() == 2);
  CHECK(spec.constraints[0].metric == "mass_flow");
  CHECK(spec.constraints[0].kind == opt::ConstraintKind::Band);
  CHECK_THAT(spec.constraints[0].lo, WithinAbs(15.2 * 0.99, 1e-12));
  CHECK_THAT(spec.constraints[0].hi, WithinAbs(15.2 * 1.01, 1e-12));
  CHECK(spec.constraints[1].metric == "pressure_ratio");
  CHECK(spec.constraints[1].kind == opt::ConstraintKind::AtLeast);
}

TEST_CASE("plans match the golden graphs", "[agent][plan]") {
  const auto linear = parse("Generate 5 designs for 15 kg/s, pressure ratio 1.6, efficiency 0.9 and predict their performance");
  check_golden("plan_linear.json", plan_workflow(linear).to_json());
  const auto validated = parse("Generate 4 designs for 15 kg/s, pressure ratio 1.6, efficiency 0.9, simulate them and write a report");
  check_golden("plan_validate.json", plan_workflow(validated).to_json());
  check_golden("plan_optimize.json", plan_workflow(parse(kFull)).to_json());
}

TEST_CASE("planning is a pure function of the request", "[agent][plan]") {
  const auto req = parse(kFull);
  CHECK(plan_workflow(req).to_json() == plan_workflow(req).to_json());
  const auto g = WorkflowGraph::from_json(plan_workflow(req).to_json());
  CHECK(g.to_json() == plan_workflow(req).to_json());
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("report-only request plans a single node", "[agent][plan]") {
  DesignRequest req;
  req.tasks = {Task::Report};
  const auto g = plan_workflow(req);
  REQUIRE(g.nodes.size() == 1);
  CHECK(g.nodes[0].kind == Task::Report);
  CHECK(g.edges.empty());

  const auto dir = scratch_dir("report-only");
  llm::MockLLM mock;
  Workflow wf(req, Registry::standard(), quick_services(), mock, RunDir(dir));
  CHECK(wf.run() == RunStatus::Done);
  CHECK(wf.dir().exists("report.md"));
}

TEST_CASE("optimization without an objective conflicts", "[agent][plan]") {
  DesignRequest req;
  req.targets = {15.0, 1.6, 0.9};
  req.tasks = {Task::Generate, Task::Predict, Task::Optimize};
  try {
    plan_workflow(req);
    FAIL("expected ConflictingTasks");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConflictingTasks);
  }
}

TEST_CASE("routing follows a linear chain", "[agent][route]") {
  const auto g = chain({"a", "b", "c"});
  WorkflowState s;
  s.current = "a";
  CHECK(route_next(s, g) == std::optional<std::string>("b"));
  s.current = "b";
  CHECK(route_next(s, g) == std::optional<std::string>("c"));
  s.current = "c";
  CHECK_FALSE(route_next(s, g));
  std::size_t routes = 0;
  for (const auto& e : s.events) routes += e.kind == "route";
  CHECK(routes == 2);
}

TEST_CASE("optimizer feedback loop exits on the stopping rule", "[agent][route]") {
  const auto g = plan_workflow(parse(kFull));
  WorkflowState s;
  s.current = "optimize";
  auto set_log = [&](std::vector<double> best, std::size_t iteration) {
    s.signals["optimize"] = {{"best_rewards", best},
                             {"epsilon", 1e-6},
                             {"patience", 3},
                             {"max_generations", 30},
                             {"iteration", iteration}};
  };
  set_log({0.1, 0.2, 0.3}, 3);
  CHECK(route_next(s, g) == std::optional<std::string>("predict"));
  set_log({0.1, 0.2, 0.3, 0.3, 0.3, 0.3}, 6);
  CHECK(route_next(s, g) == std::optional<std::string>("validate"));
  // Improvements below epsilon count as stagnation.
  set_log({0.1, 0.2, 0.3, 0.3000001, 0.3000002, 0.3000003}, 6);
  CHECK(route_next(s, g) == std::optional<std::string>("validate"));
  // Generation budget.
  std::vector<double> rising;
  for (int i = 0; i < 31; ++i) rising.push_back(i);
  set_log(rising, 20);
  CHECK(route_next(s, g) == std::optional<std::string>("validate"));
  // Iteration cap on the feedback edge.
  set_log({0.1, 0.2, 0.3}, 31);
  CHECK(route_next(s, g) == std::optional<std::string>("validate"));
}

TEST_CASE("ties go to the first declared edge and are logged", "[agent][route]") {
  WorkflowGraph g = chain({"a", "b"});
  g.nodes.push_back({"c", Task::Predict, nlohmann::json::object()});
  g.edges.push_back({"a", "c", "always", false});
  WorkflowState s;
  s.current = "a";
  CHECK(route_next(s, g) == std::optional<std::string>("b"));
  const auto it = std::find_if(s.events.begin(), s.events.end(), [](const Event& e) { return e.kind == "tie_break"; });
  REQUIRE(it != s.events.end());
  CHECK(it->payload["chosen"] == "b");
  CHECK(it->payload["enabled"].size() == 2);
}

TEST_CASE("failed nodes take fallback edges or halt", "[agent][route]") {
  WorkflowGraph g = chain({"a", "b"});
  WorkflowState s;
  s.current = "a";
  s.status["a"] = NodeStatus::Failed;
  try {
    route_next(s, g);
    FAIL("expected NodeFailure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NodeFailure);
  }
  g.nodes.push_back({"fix", Task::Report, nlohmann::json::object()});
  g.edges.push_back({"a", "fix", "on_failure", false});
  CHECK(route_next(s, g) == std::optional<std::string>("fix"));
  s.status["a"] = NodeStatus::Done;
  CHECK(route_next(s, g) == std::optional<std::string>("b"));
}

TEST_CASE("undefined guards are rejected", "[agent][route]") {
  WorkflowGraph g = chain({"a", "b"});
  g.edges[0].guard = "when_the_moon_is_full";
  auto code = [&](auto&& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  CHECK(code([&] { g.validate(); }) == ErrorCode::GuardUndefined);
  WorkflowState s;
  s.current = "a";
  CHECK(code([&] { route_next(s, g); }) == ErrorCode::GuardUndefined);
}

TEST_CASE("token ledger sums", "[agent][ledger]") {
  TokenLedger empty;
  CHECK(account_tokens(empty).overall.total() == 0);
  CHECK(account_tokens(empty).per_node.empty());

  TokenLedger l;
  CHECK(l.record("optimize", 100, 50) == 0);
  CHECK(l.record("report", 200, 25) == 1);
  const auto r = account_tokens(l);
  CHECK(r.overall.total() == 375);
  CHECK(r.overall.prompt == 300);
  CHECK(r.overall.completion == 75);
  CHECK(r.per_node.at("optimize").total() == 150);
  CHECK(r.per_node.at("report").total() == 225);
  CHECK(TokenLedger::from_json(l.to_json()).entries() == l.entries());
}

TEST_CASE("run directory rejects escaping paths", "[agent][rundir]") {
  const RunDir dir(scratch_dir("rundir"));
  dir.write("designs/000/params.json", "{}");
  CHECK(dir.read("designs/000/params.json") == "{}");
  CHECK(dir.list() == std::vector<std::string>{"designs/000/params.json"});
  for (const std::string bad : {"../x", "../../etc/passwd", "/etc/passwd", "designs/../../x", ""}) {
    INFO(bad);
    try {
      dir.resolve(bad);
      FAIL("expected Forbidden");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Forbidden);
    }
  }
  try {
    dir.read("missing.json");
    FAIL("expected NotFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NotFound);
  }
}

TEST_CASE("full run produces the expected artifacts", "[agent][run]") {
  const auto dir = scratch_dir("full");
  TokenLedger ledger;
  llm::MockLLM mock;
  auto req = parse_request(kFull, mock, &ledger);
  Workflow wf(req, Registry::standard(), quick_services(), mock, RunDir(dir), 1, ledger);
  REQUIRE(wf.run() == RunStatus::Done);

  SECTION("node sequence with the optimizer loop") {
    const std::string seq = join(node_sequence(wf.state()));
    CHECK(std::regex_match(seq, std::regex("generate predict optimize( predict optimize)+ validate map report")));
  }

  SECTION("run directory layout") {
    const auto& d = wf.dir();
    for (const std::string f : {"request.json", "plan.json", "events.log", "state.json", "ledger.json", "report.md",
                                "predictions.json", "optimizer/llm.jsonl", "optimizer/ga.jsonl", "optimizer/pso.jsonl",
                                "optimizer/summary.json", "optimizer/llm.transcripts.jsonl"}) {
      INFO(f);
      CHECK(d.exists(f));
    }
    for (std::size_t k = 0; k <= 10; ++k) {
      const auto id = design_id(k);
      INFO(id);
      CHECK(d.exists("designs/" + id + "/params.json"));
      CHECK(d.exists("designs/" + id + "/geometry.mesh.json"));
      CHECK(d.exists("oracle/" + id + ".json"));
    }
    const auto mesh = geometry::parse_mesh_json(d.read("designs/000/geometry.mesh.json"));
    CHECK(mesh.n_span > 0);
    CHECK(mesh.grid.size() == mesh.n_span * mesh.n_points);
  }

  SECTION("ledger total equals the sum over llm_call events") {
    std::size_t sum = 0, calls = 0;
    for (const auto& e : wf.state().events)
      if (e.kind == "llm_call") {
        sum += e.payload["prompt_tokens"].get<std::size_t>() + e.payload["completion_tokens"].get<std::size_t>();
        ++calls;
      }
    CHECK(calls == wf.ledger().entries().size());
    CHECK(sum == account_tokens(wf.ledger()).overall.total());
    const auto stored = nlohmann::json::parse(wf.dir().read("ledger.json"));
    CHECK(stored["totals"]["overall"]["total"].get<std::size_t>() == sum);
    CHECK(stored["totals"]["per_node"].contains("planner"));
    CHECK(stored["totals"]["per_node"].contains("optimize"));
  }

  SECTION("artifact keys carry their node prefix") {
    for (const auto& [key, ref] : wf.state().context) {
      INFO(key);
      CHECK(key.rfind(ref.node + ".", 0) == 0);
    }
  }

  SECTION("report numbers are read from artifacts") {
    const std::string report = wf.dir().read("report.md");
    for (std::size_t k = 0; k <= 10; ++k) {
      const auto id = design_id(k);
      const auto j = nlohmann::json::parse(wf.dir().read("oracle/" + id + ".json"));
      REQUIRE(j["converged"].get<bool>());
      const auto& p = j["performance"];
      std::string row = "| " + id + " | " + format_number(p["mass_flow"].get<double>()) + " | " +
                        format_number(p["pressure_ratio"].get<double>()) + " | " +
                        format_number(p["efficiency"].get<double>()) + " |";
      INFO(row);
      CHECK(report.find(row) != std::string::npos);
    }
    auto ask = [&](const std::vector<llm::Message>& m, const llm::ChatParams& p) { return mock.complete(m, p); };
    const auto a = synthesize_report(wf.state(), wf.request(), wf.graph(), wf.dir(), ask);
    const auto b = synthesize_report(wf.state(), wf.request(), wf.graph(), wf.dir(), ask);
    CHECK(a == b);
    CHECK(a == report);
  }

  SECTION("two runs are artifact-identical") {
    const auto dir2 = scratch_dir("full-2");
    TokenLedger ledger2;
    auto req2 = parse_request(kFull, mock, &ledger2);
    Workflow again(req2, Registry::standard(), quick_services(), mock, RunDir(dir2), 1, ledger2);
    REQUIRE(again.run() == RunStatus::Done);
    check_same_artifacts(wf.dir(), again.dir());
    CHECK(wf.dir().read("events.log") == again.dir().read("events.log"));
  }

  SECTION("chat picks the best schemes") {
    const auto res = wf.chat("pick the best four schemes");
    REQUIRE(res.table.size() == 4);
    const auto rows = collect_schemes(wf.state(), wf.dir());
    std::vector<double> rewards;
    for (const auto& r : rows) rewards.push_back(*r.reward);
    std::sort(rewards.rbegin(), rewards.rend());
    for (std::size_t i = 0; i < 4; ++i) CHECK(res.table[i]["reward"].get<double>() == rewards[i]);
    CHECK(res.reply.find("| Scheme |") != std::string::npos);
  }

  SECTION("selecting a scheme regenerates the report") {
    const auto res = wf.chat("Select scheme 9 as the final design");
    CHECK(wf.state().selected == std::optional<std::string>("009"));
    REQUIRE(res.table.size() == 1);
    CHECK(res.table[0]["id"] == "009");
    const std::string report = wf.dir().read("report.md");
    CHECK(report.find("Scheme 009") != std::string::npos);
    CHECK(report.find("final selection") != std::string::npos);
    const auto missing = wf.chat("select scheme 42");
    CHECK(missing.reply.find("no scheme 042") != std::string::npos);
    CHECK(wf.state().selected == std::optional<std::string>("009"));
  }
}

TEST_CASE("chat is refused while a run is not at a pause point", "[agent][run]") {
  DesignRequest req;
  req.tasks = {Task::Report};
  const auto dir = scratch_dir("chat-busy");
  llm::MockLLM mock;
  Workflow wf(req, Registry::standard(), quick_services(), mock, RunDir(dir));
  try {
    wf.chat("how is it going?");
    FAIL("expected Conflict");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Conflict);
  }
}

TEST_CASE("a failing node halts the run and keeps earlier artifacts", "[agent][run]") {
  auto registry = Registry::standard();
  registry.add(Task::Validate, [](NodeContext&) { return Outcome::failure("solver crashed"); });
  const auto dir = scratch_dir("failing");
  llm::MockLLM mock;
  auto req = parse("Generate 3 designs for 15 kg/s, pressure ratio 1.6, efficiency 0.9, simulate them and write a report");
  Workflow wf(req, registry, quick_services(), mock, RunDir(dir));
  CHECK(wf.run() == RunStatus::Failed);
  CHECK(wf.state().status.at("validate") == NodeStatus::Failed);
  CHECK(wf.state().status.at("report") == NodeStatus::Pending);
  CHECK(wf.state().failure.find("solver crashed") != std::string::npos);
  CHECK(wf.dir().exists("designs/000/params.json"));
  CHECK(wf.dir().exists("predictions.json"));
  CHECK_FALSE(wf.dir().exists("report.md"));
  const auto& last = wf.state().events.back();
  CHECK(last.kind == "run_finished");
  CHECK(last.payload["status"] == "failed");
  CHECK(wf.run() == RunStatus::Failed);
}

TEST_CASE("exceptions inside agents are node failures", "[agent][run]") {
  auto registry = Registry::standard();
  registry.add(Task::Report, [](NodeContext& ctx) {
    ctx.put("generate.sneaky", "sneaky.txt", "x");
    return Outcome::ok();
  });
  DesignRequest req;
  req.tasks = {Task::Report};
  const auto dir = scratch_dir("prefix");
  llm::MockLLM mock;
  Workflow wf(req, registry, quick_services(), mock, RunDir(dir));
  CHECK(wf.run() == RunStatus::Failed);
  CHECK_FALSE(wf.dir().exists("sneaky.txt"));
  CHECK(wf.state().failure.find("generate.sneaky") != std::string::npos);
}

TEST_CASE("resuming after a clarification matches an uninterrupted run", "[agent][resume]") {
  const std::string text = "Design a rotor for 15.2 kg/s and pressure ratio 1.62; generate 6 schemes, simulate them and write a report";
  llm::MockLLM mock;

  const auto dir_a = scratch_dir("clarify-a");
  TokenLedger la;
  Workflow a(parse_request(text, mock, &la), Registry::standard(), quick_services(), mock, RunDir(dir_a), 1, la);
  CHECK(a.state().run_status == RunStatus::Paused);
  CHECK(a.run() == RunStatus::Paused);
  a.answer("efficiency 0.88");
  REQUIRE(a.run() == RunStatus::Done);

  const auto dir_b = scratch_dir("clarify-b");
  {
    TokenLedger lb;
    Workflow b(parse_request(text, mock, &lb), Registry::standard(), quick_services(), mock, RunDir(dir_b), 1, lb);
    REQUIRE(b.state().pending_question);
  }
  auto b = Workflow::restore(RunDir(dir_b), Registry::standard(), quick_services(), mock);
  REQUIRE(b->state().pending_question);
  const auto res = b->chat("efficiency 0.88");
  CHECK(res.resumed);
  REQUIRE(b->run() == RunStatus::Done);
  check_same_artifacts(a.dir(), b->dir());
}

TEST_CASE("resuming at the optimization confirmation matches an uninterrupted run", "[agent][resume]") {
  const std::string text = "Design a rotor for 15.2 kg/s, pressure ratio 1.62, efficiency 0.88, generate 5 schemes and improve efficiency";
  llm::MockLLM mock;

  const auto dir_a = scratch_dir("confirm-a");
  TokenLedger la;
  Workflow a(parse_request(text, mock, &la), Registry::standard(), quick_services(), mock, RunDir(dir_a), 1, la);
  REQUIRE(a.run() == RunStatus::Paused);
  CHECK(a.state().pending_node == "optimize");
  a.answer("yes");
  REQUIRE(a.run() == RunStatus::Done);
  CHECK(a.dir().exists("optimizer/summary.json"));

  const auto dir_b = scratch_dir("confirm-b");
  {
    TokenLedger lb;
    Workflow b(parse_request(text, mock, &lb), Registry::standard(), quick_services(), mock, RunDir(dir_b), 1, lb);
    REQUIRE(b.run() == RunStatus::Paused);
  }
  auto b = Workflow::restore(RunDir(dir_b), Registry::standard(), quick_services(), mock);
  CHECK(b->state().pending_node == "optimize");
  b->answer("yes");
  REQUIRE(b->run() == RunStatus::Done);
  check_same_artifacts(a.dir(), b->dir());

  const auto dir_c = scratch_dir("confirm-c");
  TokenLedger lc;
  Workflow c(parse_request(text, mock, &lc), Registry::standard(), quick_services(), mock, RunDir(dir_c), 1, lc);
  REQUIRE(c.run() == RunStatus::Paused);
  c.answer("no");
  REQUIRE(c.run() == RunStatus::Done);
  CHECK_FALSE(c.dir().exists("optimizer/summary.json"));
}

TEST_CASE("an interrupted run resumes at the node boundary", "[agent][resume]") {
  const std::string text = "Generate 4 designs for 15 kg/s, pressure ratio 1.6, efficiency 0.9, simulate them and write a report";
  llm::MockLLM mock;

  const auto dir_a = scratch_dir("interrupt-a");
  TokenLedger la;
  Workflow a(parse_request(text, mock, &la), Registry::standard(), quick_services(), mock, RunDir(dir_a), 1, la);
  REQUIRE(a.run() == RunStatus::Done);

  const auto dir_b = scratch_dir("interrupt-b");
  {
    TokenLedger lb;
    Workflow b(parse_request(text, mock, &lb), Registry::standard(), quick_services(), mock, RunDir(dir_b), 1, lb);
    std::atomic<bool> stop{true};
    REQUIRE(b.run(&stop) == RunStatus::Paused);
    CHECK_FALSE(b.state().pending_question);
  }
  auto b = Workflow::restore(RunDir(dir_b), Registry::standard(), quick_services(), mock);
  REQUIRE(b->run() == RunStatus::Done);
  check_same_artifacts(a.dir(), b->dir());
}
