// SPDX-License-Identifier: Apache-2.0
//
// turboagent: dataset generation, model training, optimization, one-shot
// workflow runs, the HTTP service and replay checks.
#include <csignal>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "turbo/agent.hpp"
#include "turbo/data.hpp"
#include "turbo/gateway.hpp"
#include "turbo/random.hpp"

using namespace turbo;
using nlohmann::json;

namespace {

/// Resolved settings: defaults, then the config file, then flags, then the environment.
struct Settings {
  json j = {{"seed", 1},
            {"models", "models"},
            {"runs", "runs"},
            {"host", "127.0.0.1"},
            {"port", 8080},
            {"max_runs", 4},
            {"client", "mock"},
            {"llm", json::object()},
            {"oracle", json::object()},
            {"recipe", json::object()}};

  void load_file(const std::string& path) {
    if (path.empty()) return;
    const json f = json::parse(data::read_file(path));
    for (auto it = f.begin(); it != f.end(); ++it) j[it.key()] = it.value();
  }

  void apply_env() {
    auto env = [](const char* name) -> const char* { return std::getenv(name); };
    if (const char* v = env("TURBO_CLIENT")) j["client"] = v;
    if (const char* v = env("TURBO_MODELS")) j["models"] = v;
    if (const char* v = env("TURBO_RUNS")) j["runs"] = v;
  }

  std::uint64_t seed() const { return j["seed"].get<std::uint64_t>(); }

  oracle::OracleConfig oracle_config() const {
    oracle::OracleConfig cfg;
    if (!j["oracle"].empty()) cfg = oracle::OracleConfig::from_json(j["oracle"].dump());
    return cfg;
  }

  agent::ModelRecipe recipe() const {
    agent::ModelRecipe r;
    const json& c = j["recipe"];
    r.dataset_rows = c.value("dataset_rows", r.dataset_rows);
    r.surrogate_epochs = c.value("surrogate_epochs", r.surrogate_epochs);
    r.designer_epochs = c.value("designer_epochs", r.designer_epochs);
    r.seed = c.value("seed", r.seed);
    return r;
  }

  std::unique_ptr<llm::ChatClient> client() const {
    const std::string kind = j["client"].get<std::string>();
    if (kind == "mock") return std::make_unique<llm::MockLLM>();
    if (kind != "http") throw CLI::ValidationError("client", "expected mock or http");
    llm::HttpClientConfig base;
    const json& l = j["llm"];
    base.endpoint = l.value("endpoint", base.endpoint);
    base.model = l.value("model", base.model);
    base.api_key = l.value("api_key", base.api_key);
    base.timeout_s = l.value("timeout", base.timeout_s);
    base.retries = l.value("retries", base.retries);
    return std::make_unique<llm::HttpChatClient>(llm::HttpClientConfig::from_env(base));
  }
};

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 1;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON settings file");
  cmd->add_option("--out", c.out, "Output path");
  c.seed_opt = cmd->add_option("--seed", c.seed, "Master seed");
}

Settings settings_for(const Common& c) {
  Settings s;
  s.load_file(c.config);
  if (c.seed_opt && c.seed_opt->count()) s.j["seed"] = c.seed;
  return s;
}

agent::DesignRequest read_request(const std::string& path, llm::ChatClient& client, agent::TokenLedger& ledger) {
  const std::string text = data::read_file(path);
  try {
    const json j = json::parse(text);
    if (j.is_object() && j.contains("text")) return agent::parse_request(j["text"].get<std::string>(), client, &ledger);
    if (j.is_object()) {
      auto req = agent::DesignRequest::from_json(j);
      agent::complete_request(req);
      return req;
    }
  } catch (const json::parse_error&) {
  }
  return agent::parse_request(text, client, &ledger);
}

DesignArray read_design(const std::string& path) {
  json j = json::parse(data::read_file(path));
  if (j.is_object()) j = j.at("design");
  const auto v = j.get<std::vector<double>>();
  if (v.size() != kDesignDim) throw CLI::ValidationError("design", "expected 21 values");
  DesignArray x{};
  std::copy(v.begin(), v.end(), x.begin());
  return x;
}

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

int report_status(const agent::Workflow& wf) {
  const auto& s = wf.state();
  std::cout << "run " << wf.dir().root().string() << ": " << agent::to_string(s.run_status) << "\n";
  if (s.pending_question) std::cout << "question: " << *s.pending_question << "\n";
  if (!s.failure.empty()) std::cout << "failure: " << s.failure << "\n";
  const auto t = agent::account_tokens(wf.ledger());
  std::cout << "tokens: " << t.overall.total() << " (prompt " << t.overall.prompt << ", completion " << t.overall.completion
            << ")\n";
  switch (s.run_status) {
    case agent::RunStatus::Done:
      return 0;
    case agent::RunStatus::Paused:
      return 3;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agentic compressor blade design toolkit"};
  app.require_subcommand(1);

  Common c_gen, c_sur, c_dif, c_opt, c_run, c_srv, c_rep, c_plan, c_sim;

  auto* gen = app.add_subcommand("gen-dataset", "Sample designs by LHS and label them with the oracle");
  add_common(gen, c_gen);
  std::size_t n_rows = 2000;
  gen->add_option("--n", n_rows, "Designs to attempt");

  auto* sur = app.add_subcommand("train-surrogate", "Train the performance surrogate");
  add_common(sur, c_sur);
  std::string sur_data;
  std::size_t sur_epochs = 0;
  sur->add_option("--data", sur_data, "Dataset file")->required();
  sur->add_option("--epochs", sur_epochs, "Training epochs");

  auto* dif = app.add_subcommand("train-diffusion", "Train the conditional generative model");
  add_common(dif, c_dif);
  std::string dif_data, dif_sur;
  std::size_t dif_epochs = 0;
  dif->add_option("--data", dif_data, "Dataset file")->required();
  dif->add_option("--surrogate", dif_sur, "Surrogate checkpoint for the guidance latent");
  dif->add_option("--epochs", dif_epochs, "Training epochs");

  auto* optc = app.add_subcommand("optimize", "Run one optimizer against the surrogate or the oracle");
  add_common(optc, c_opt);
  std::string method = "llm", evaluator = "surrogate", opt_request, opt_reward, opt_sur;
  std::size_t generations = 30, population = 20;
  optc->add_option("--method", method, "llm, ga or pso");
  optc->add_option("--evaluator", evaluator, "surrogate or oracle");
  optc->add_option("--surrogate", opt_sur, "Surrogate checkpoint");
  optc->add_option("--request", opt_request, "Request file the reward is derived from");
  optc->add_option("--reward", opt_reward, "Reward specification JSON");
  optc->add_option("--generations", generations, "Generation budget");
  optc->add_option("--population", population, "Population size");

  auto* run = app.add_subcommand("run", "One-shot workflow run from a request file");
  add_common(run, c_run);
  std::string req_path, models_dir;
  std::vector<std::string> answers;
  bool resume = false;
  run->add_option("--request", req_path, "Request file (text, or JSON)");
  run->add_option("--models", models_dir, "Model directory; quick models are trained there when missing");
  run->add_option("--answer", answers, "Answers to pause points, in order");
  run->add_flag("--resume", resume, "Continue the run directory given by --out");

  auto* srv = app.add_subcommand("serve", "HTTP service");
  add_common(srv, c_srv);
  std::string host, srv_models;
  int port = -1;
  srv->add_option("--host", host, "Bind address");
  srv->add_option("--port", port, "Port (0 picks one)");
  srv->add_option("--models", srv_models, "Model directory");

  auto* rep = app.add_subcommand("replay", "Re-execute a persisted run and compare every artifact");
  add_common(rep, c_rep);
  std::string rep_dir, rep_models;
  rep->add_option("run_dir", rep_dir, "Run directory")->required();
  rep->add_option("--models", rep_models, "Model directory");

  auto* plan = app.add_subcommand("plan", "Parse a request and print its workflow graph");
  add_common(plan, c_plan);
  std::string plan_req;
  plan->add_option("--request", plan_req, "Request file")->required();

  auto* sim = app.add_subcommand("simulate", "Evaluate one design with the oracle");
  add_common(sim, c_sim);
  std::string sim_design;
  std::size_t speedline_points = 0;
  sim->add_option("--design", sim_design, "JSON array of 21 values, or {\"design\": [...]}")->required();
  sim->add_option("--speedline", speedline_points, "Also compute a speedline with this many points");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto s = settings_for(c_gen);
      const oracle::Oracle o(s.oracle_config());
      const auto ds = data::generate_dataset(n_rows, o, o.bounds(), s.seed());
      const std::string out = c_gen.out.empty() ? "dataset.csv" : c_gen.out;
      data::save(ds, out);
      std::cout << "wrote " << ds.size() << " rows to " << out << " (hash " << ds.hash() << ")\n";
      return 0;
    }
    if (*sur) {
      auto s = settings_for(c_sur);
      const auto ds = data::load(sur_data);
      surrogate::SurrogateConfig cfg;
      if (s.j.contains("surrogate")) cfg = surrogate::SurrogateConfig::from_json(s.j["surrogate"].dump());
      if (sur_epochs) cfg.epochs = sur_epochs;
      cfg.seed = derive_seed(s.seed(), 2);
      surrogate::History h;
      const auto net = surrogate::Surrogate::train(ds.subset(data::Split::Train), cfg, &h);
      const std::string out = c_sur.out.empty() ? "surrogate.ckpt" : c_sur.out;
      net.save(out);
      const auto test = ds.subset(data::Split::Test);
      if (test.size() > 0) std::cout << surrogate::evaluate(net, test).to_json() << "\n";
      std::cout << "saved " << out << " (best epoch " << h.best_epoch << ")\n";
      return 0;
    }
    if (*dif) {
      auto s = settings_for(c_dif);
      const auto ds = data::load(dif_data);
      diffusion::DesignerConfig cfg;
      if (s.j.contains("designer")) cfg = diffusion::DesignerConfig::from_json(s.j["designer"].dump());
      if (dif_epochs) cfg.train.epochs = dif_epochs;
      cfg.seed = derive_seed(s.seed(), 3);
      diffusion::LatentFn latent;
      std::shared_ptr<surrogate::Surrogate> net;
      if (!dif_sur.empty()) {
        net = std::make_shared<surrogate::Surrogate>(surrogate::Surrogate::load(dif_sur));
        latent = [net](const std::vector<DesignArray>& xs) { return net->latent(xs); };
      } else {
        cfg.guidance = false;
      }
      const auto m = diffusion::Designer::fit(ds, cfg, data::Bounds::defaults(), latent);
      const std::string out = c_dif.out.empty() ? "designer.ckpt" : c_dif.out;
      m.save(out);
      std::cout << "saved " << out << " (final loss " << m.loss_history().back() << ")\n";
      return 0;
    }
    if (*optc) {
      auto s = settings_for(c_opt);
      s.apply_env();
      auto client = s.client();
      opt::RewardSpec spec;
      if (!opt_reward.empty()) {
        spec = opt::RewardSpec::from_json(data::read_file(opt_reward));
      } else if (!opt_request.empty()) {
        agent::TokenLedger ledger;
        spec = agent::reward_spec(read_request(opt_request, *client, ledger));
      } else {
        throw CLI::ValidationError("optimize", "give --reward or --request");
      }
      const oracle::Oracle o(s.oracle_config());
      std::shared_ptr<surrogate::Surrogate> net;
      opt::Evaluator eval;
      if (evaluator == "oracle") {
        eval = [&o](const DesignArray& x) -> std::optional<opt::Metrics> {
          const auto r = o.simulate(x);
          if (!r.performance) return std::nullopt;
          return opt::to_metrics(*r.performance);
        };
      } else {
        if (opt_sur.empty()) opt_sur = (std::filesystem::path(s.j["models"].get<std::string>()) / "surrogate.ckpt").string();
        net = std::make_shared<surrogate::Surrogate>(surrogate::Surrogate::load(opt_sur));
        eval = [net](const DesignArray& x) -> std::optional<opt::Metrics> { return opt::to_metrics(net->predict(x)); };
      }
      opt::OptimizerConfig cfg;
      cfg.population = population;
      cfg.max_generations = generations;
      cfg.seed = s.seed();
      cfg.bounds = o.bounds();
      const auto r = method == "llm" ? opt::run_llm_optimizer(spec, eval, cfg, *client)
                                     : opt::run_baseline(opt::parse_baseline(method), spec, eval, cfg);
      const std::filesystem::path out = c_opt.out.empty() ? "optimizer" : c_opt.out;
      std::filesystem::create_directories(out);
      data::write_file(out / (r.method + ".jsonl"), r.logs_jsonl());
      std::cout << json{{"method", r.method},
                        {"best_reward", r.best_reward},
                        {"generations", r.logs.size()},
                        {"stop_reason", r.stop_reason},
                        {"best_x", r.best_x}}
                       .dump(2)
                << "\n";
      return 0;
    }
    if (*run) {
      auto s = settings_for(c_run);
      if (!models_dir.empty()) s.j["models"] = models_dir;
      s.apply_env();
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto client = s.client();
      const std::string out = c_run.out.empty() ? "runs/run-" + std::to_string(s.seed()) : c_run.out;
      const auto services = agent::load_services(s.j["models"].get<std::string>(), s.recipe(), s.oracle_config());
      std::unique_ptr<agent::Workflow> wf;
      if (resume) {
        wf = agent::Workflow::restore(agent::RunDir(out), agent::Registry::standard(), services, *client);
      } else {
        if (req_path.empty()) throw CLI::ValidationError("run", "--request is required");
        if (std::filesystem::exists(out) && !std::filesystem::is_empty(out))
          throw CLI::ValidationError("run", "output directory is not empty: " + out);
        agent::TokenLedger ledger;
        auto req = read_request(req_path, *client, ledger);
        wf = std::make_unique<agent::Workflow>(req, agent::Registry::standard(), services, *client, agent::RunDir(out),
                                               s.seed(), ledger);
      }
      std::size_t next_answer = 0;
      while (true) {
        const auto st = wf->run(&g_stop);
        if (st != agent::RunStatus::Paused || g_stop || !wf->state().pending_question || next_answer >= answers.size()) break;
        std::cout << "question: " << *wf->state().pending_question << "\nanswer: " << answers[next_answer] << "\n";
        wf->answer(answers[next_answer++]);
      }
      return report_status(*wf);
    }
    if (*srv) {
      auto s = settings_for(c_srv);
      if (!srv_models.empty()) s.j["models"] = srv_models;
      if (!host.empty()) s.j["host"] = host;
      if (port >= 0) s.j["port"] = port;
      if (!c_srv.out.empty()) s.j["runs"] = c_srv.out;
      s.apply_env();
      const auto services = agent::load_services(s.j["models"].get<std::string>(), s.recipe(), s.oracle_config());
      gateway::StoreConfig sc;
      sc.root = s.j["runs"].get<std::string>();
      sc.max_concurrent = s.j["max_runs"].get<std::size_t>();
      sc.seed = s.seed();
      gateway::RunStore store(sc, services, [s] { return s.client(); });
      gateway::Server server(store);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int bound = server.start(s.j["host"].get<std::string>(), s.j["port"].get<int>());
      std::cout << "listening on " << s.j["host"].get<std::string>() << ":" << bound << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
      store.shutdown();
      server.stop();
      std::cout << "stopped; in-flight runs were checkpointed\n";
      return 0;
    }
    if (*rep) {
      auto s = settings_for(c_rep);
      if (!rep_models.empty()) s.j["models"] = rep_models;
      s.apply_env();
      auto client = s.client();
      const agent::RunDir orig(rep_dir);
      const auto st = agent::WorkflowState::from_json(json::parse(orig.read("state.json")));
      const json req_json = json::parse(orig.read("request.json"));
      const std::string out = c_rep.out.empty() ? rep_dir + ".replay" : c_rep.out;
      std::filesystem::remove_all(out);
      agent::TokenLedger ledger;
      auto req = agent::parse_request(json::parse(orig.read("request.json")).value("raw_text", std::string{}), *client, &ledger);
      if (req.to_json() != req_json) {
        // Structured or clarified requests replay from the stored form.
        ledger = agent::TokenLedger::from_json(json::parse(orig.read("ledger.json")).at("entries"));
        std::vector<agent::LedgerEntry> keep;
        agent::TokenLedger planner;
        for (const auto& e : ledger.entries())
          if (e.node == "planner") planner.record(e.node, e.prompt_tokens, e.completion_tokens);
        ledger = planner;
        req = agent::DesignRequest::from_json(req_json);
      }
      const auto services = agent::load_services(s.j["models"].get<std::string>(), s.recipe(), s.oracle_config());
      agent::Workflow wf(req, agent::Registry::standard(), services, *client, agent::RunDir(out), st.seed, ledger);
      wf.run();
      const agent::RunDir copy(out);
      const auto a = orig.list(), b = copy.list();
      std::size_t diffs = 0;
      for (const auto& f : a) {
        if (f == "request.json" || f == "state.json" || f == "events.log") continue;
        if (!copy.exists(f) || copy.read(f) != orig.read(f)) {
          std::cout << "differs: " << f << "\n";
          ++diffs;
        }
      }
      for (const auto& f : b)
        if (!orig.exists(f)) {
          std::cout << "extra: " << f << "\n";
          ++diffs;
        }
      std::cout << (diffs ? "replay differs in " + std::to_string(diffs) + " files" : "replay identical: " + std::to_string(a.size()) + " files")
                << "\n";
      return diffs ? 1 : 0;
    }
    if (*plan) {
      auto s = settings_for(c_plan);
      s.apply_env();
      auto client = s.client();
      agent::TokenLedger ledger;
      const auto req = read_request(plan_req, *client, ledger);
      std::cout << req.to_json().dump(2) << "\n" << agent::plan_workflow(req).to_json();
      return 0;
    }
    if (*sim) {
      auto s = settings_for(c_sim);
      const oracle::Oracle o(s.oracle_config());
      const auto x = read_design(sim_design);
      json j = json::parse(o.simulate(x).to_json());
      if (speedline_points) j["speedline"] = json::parse(o.speedline(x, speedline_points).to_json());
      std::cout << j.dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
