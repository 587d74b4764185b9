// SPDX-License-Identifier: Apache-2.0
#include "turbo/gateway.hpp"

#include <chrono>
#include <ctime>
#include <random>
#include <sstream>

#include "httplib.h"

namespace turbo::gateway {

namespace {

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<agent::Event> read_events(const agent::RunDir& dir) {
  std::vector<agent::Event> out;
  if (!dir.exists("events.log")) return out;
  std::istringstream lines(dir.read("events.log"));
  for (std::string line; std::getline(lines, line);)
    if (!line.empty()) out.push_back(agent::Event::from_json(json::parse(line)));
  return out;
}

bool live(agent::RunStatus s) { return s == agent::RunStatus::Planning || s == agent::RunStatus::Running; }

}  // namespace

json RunRecord::to_json() const {
  return {{"run_id", run_id}, {"status", agent::to_string(status)}, {"created", created}, {"updated", updated}, {"dir", dir.string()}};
}

struct RunStore::Entry {
  std::mutex mu;
  std::condition_variable cv;
  RunRecord rec;
  std::unique_ptr<llm::ChatClient> client;
  std::unique_ptr<agent::Workflow> wf;
  std::thread worker;
  bool busy = false;
};

RunStore::RunStore(StoreConfig cfg, agent::Services services, ClientFactory clients)
    : cfg_(std::move(cfg)), services_(std::move(services)), clients_(std::move(clients)) {
  std::filesystem::create_directories(cfg_.root);
  for (const auto& d : std::filesystem::directory_iterator(cfg_.root)) {
    if (!d.is_directory() || !std::filesystem::exists(d.path() / "state.json")) continue;
    auto e = std::make_shared<Entry>();
    e->client = clients_();
    try {
      e->wf = agent::Workflow::restore(agent::RunDir(d.path()), agent::Registry::standard(), services_, *e->client);
    } catch (const std::exception&) {
      continue;
    }
    e->rec.run_id = d.path().filename().string();
    e->rec.dir = e->wf->dir().root();
    e->rec.status = e->wf->state().run_status;
    e->rec.created = e->rec.updated = now_iso();
    runs_[e->rec.run_id] = e;
    ++counter_;
    // Runs interrupted by a shutdown continue where they stopped.
    if (e->rec.status == agent::RunStatus::Paused && !e->wf->state().pending_question) start(e);
  }
}

RunStore::~RunStore() { shutdown(); }

std::size_t RunStore::active_locked() const {
  std::size_t n = 0;
  for (const auto& [id, e] : runs_) {
    std::lock_guard<std::mutex> g(e->mu);
    n += e->busy ? 1 : 0;
  }
  return n;
}

std::shared_ptr<RunStore::Entry> RunStore::find(const std::string& run_id) {
  std::lock_guard<std::mutex> g(mu_);
  const auto it = runs_.find(run_id);
  if (it == runs_.end()) fail(ErrorCode::NotFound, "unknown run " + run_id);
  return it->second;
}

void RunStore::start(const std::shared_ptr<Entry>& e) {
  if (e->worker.joinable()) e->worker.join();
  e->busy = true;
  e->rec.status = agent::RunStatus::Running;
  e->rec.updated = now_iso();
  e->worker = std::thread([this, e] {
    agent::RunStatus st;
    try {
      st = e->wf->run(&stop_);
    } catch (const std::exception&) {
      st = agent::RunStatus::Failed;
    }
    std::lock_guard<std::mutex> g(e->mu);
    e->busy = false;
    e->rec.status = st;
    e->rec.updated = now_iso();
    e->cv.notify_all();
  });
}

RunRecord RunStore::submit(const json& body) {
  if (stop_) fail(ErrorCode::Capacity, "service is shutting down");
  {
    std::lock_guard<std::mutex> g(mu_);
    if (active_locked() >= cfg_.max_concurrent) fail(ErrorCode::Capacity, "maximum number of concurrent runs reached");
  }
  if (!body.is_object()) fail(ErrorCode::UnparseableRequest, "request body must be a JSON object");
  auto e = std::make_shared<Entry>();
  e->client = clients_();
  agent::TokenLedger ledger;
  agent::DesignRequest req;
  if (body.contains("text")) {
    if (!body["text"].is_string()) fail(ErrorCode::UnparseableRequest, "text must be a string");
    req = agent::parse_request(body["text"].get<std::string>(), *e->client, &ledger);
  } else {
    req = agent::DesignRequest::from_json(body);
    agent::complete_request(req);
  }
  req.validate();
  agent::plan_workflow(req);

  std::string id;
  {
    std::lock_guard<std::mutex> g(mu_);
    std::random_device rd;
    do {
      char buf[48];
      std::snprintf(buf, sizeof buf, "run-%04zu-%08x", ++counter_, static_cast<unsigned>(rd()));
      id = buf;
    } while (runs_.count(id) || std::filesystem::exists(cfg_.root / id));
  }
  e->rec.run_id = id;
  e->rec.created = e->rec.updated = now_iso();
  e->wf = std::make_unique<agent::Workflow>(req, agent::Registry::standard(), services_, *e->client,
                                            agent::RunDir(cfg_.root / id), cfg_.seed, ledger);
  e->rec.dir = e->wf->dir().root();
  e->rec.status = e->wf->state().run_status;
  std::lock_guard<std::mutex> g(e->mu);
  RunRecord out = e->rec;
  if (e->rec.status == agent::RunStatus::Planning) start(e);
  {
    std::lock_guard<std::mutex> g2(mu_);
    runs_[id] = e;
  }
  return out;
}

RunRecord RunStore::record(const std::string& run_id) {
  const auto e = find(run_id);
  std::lock_guard<std::mutex> g(e->mu);
  return e->rec;
}

json RunStore::status(const std::string& run_id) {
  const auto e = find(run_id);
  std::lock_guard<std::mutex> g(e->mu);
  json j = e->rec.to_json();
  if (!e->busy && e->wf) {
    const auto& s = e->wf->state();
    j["pending_question"] = s.pending_question ? json(*s.pending_question) : json(nullptr);
    j["current"] = s.current;
    j["failure"] = s.failure;
    j["selected"] = s.selected ? json(*s.selected) : json(nullptr);
    j["events"] = s.events.size();
    j["request"] = e->wf->request().to_json();
  } else {
    j["pending_question"] = nullptr;
  }
  return j;
}

std::vector<agent::Event> RunStore::events(const std::string& run_id, long long after, std::chrono::milliseconds wait,
                                           bool& finished) {
  const auto e = find(run_id);
  const auto deadline = std::chrono::steady_clock::now() + wait;
  while (true) {
    agent::RunStatus st;
    {
      std::lock_guard<std::mutex> g(e->mu);
      st = e->rec.status;
    }
    // The log is published by rename, so reading it needs no lock.
    std::vector<agent::Event> out;
    for (auto& ev : read_events(e->wf->dir()))
      if (static_cast<long long>(ev.seq) > after) out.push_back(std::move(ev));
    finished = st == agent::RunStatus::Done || st == agent::RunStatus::Failed;
    // Status is read before the log, so a finished run's log is already complete.
    if (!out.empty() || finished || std::chrono::steady_clock::now() >= deadline) return out;
    std::unique_lock<std::mutex> lk(e->mu);
    e->cv.wait_for(lk, std::chrono::milliseconds(50));
  }
}

agent::ChatResult RunStore::chat(const std::string& run_id, const std::string& message) {
  const auto e = find(run_id);
  std::lock_guard<std::mutex> g(e->mu);
  if (e->busy) fail(ErrorCode::Conflict, "run is executing and not at a pause point");
  agent::ChatResult r = e->wf->chat(message);
  e->rec.status = e->wf->state().run_status;
  e->rec.updated = now_iso();
  if (r.resumed) start(e);
  return r;
}

const agent::RunDir& RunStore::dir(const std::string& run_id) { return find(run_id)->wf->dir(); }

agent::RunStatus RunStore::wait(const std::string& run_id, std::chrono::milliseconds timeout) {
  const auto e = find(run_id);
  std::unique_lock<std::mutex> lk(e->mu);
  e->cv.wait_for(lk, timeout, [&] { return !e->busy && !live(e->rec.status); });
  return e->rec.status;
}

void RunStore::shutdown() {
  stop_ = true;
  std::vector<std::shared_ptr<Entry>> all;
  {
    std::lock_guard<std::mutex> g(mu_);
    for (auto& [id, e] : runs_) all.push_back(e);
  }
  for (auto& e : all)
    if (e->worker.joinable()) e->worker.join();
}

// HTTP ---------------------------------------------------------------------

std::string content_type(const std::string& path) {
  auto ends = [&](const char* s) {
    const std::string x(s);
    return path.size() >= x.size() && path.compare(path.size() - x.size(), x.size(), x) == 0;
  };
  if (ends(".json")) return "application/json";
  if (ends(".jsonl") || ends(".log")) return "application/x-ndjson";
  if (ends(".md")) return "text/markdown; charset=utf-8";
  if (ends(".csv")) return "text/csv";
  return "application/octet-stream";
}

namespace {

int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::Forbidden:
      return 403;
    case ErrorCode::Conflict:
    case ErrorCode::Capacity:
      return 409;
    default:
      return 400;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res, http_status(e.code()), {{"error", to_string(e.code())}, {"message", e.what()}});
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    send_error(res, e);
  } catch (const json::exception& e) {
    send_json(res, 400, {{"error", "UnparseableRequest"}, {"message", e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", "Internal"}, {"message", e.what()}});
  }
}

std::string frame(const agent::Event& e) {
  return "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + e.line() + "\n\n";
}

}  // namespace

struct Server::Impl {
  RunStore& store;
  httplib::Server svr;
  std::thread th;
  explicit Impl(RunStore& s) : store(s) {}
};

Server::Server(RunStore& store) : impl_(std::make_unique<Impl>(store)) {
  auto& svr = impl_->svr;
  RunStore& st = store;

  svr.Get("/api/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); });

  svr.Post("/api/runs", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception& e) {
        fail(ErrorCode::UnparseableRequest, std::string("malformed JSON: ") + e.what());
      }
      const RunRecord r = st.submit(body);
      send_json(res, 202, r.to_json());
    });
  });

  svr.Get(R"(/api/runs/([^/]+))", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, st.status(req.matches[1])); });
  });

  svr.Get(R"(/api/runs/([^/]+)/events)", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      st.record(id);
      long long after = -1;
      if (req.has_param("after")) after = std::stoll(req.get_param_value("after"));
      else if (req.has_header("Last-Event-ID")) after = std::stoll(req.get_header_value("Last-Event-ID"));
      auto cursor = std::make_shared<long long>(after);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [&st, id, cursor](std::size_t, httplib::DataSink& sink) {
        bool finished = false;
        const auto evs = st.events(id, *cursor, std::chrono::milliseconds(1000), finished);
        for (const auto& e : evs) {
          const std::string f = frame(e);
          if (!sink.write(f.data(), f.size())) return false;
          *cursor = static_cast<long long>(e.seq);
        }
        if (finished && evs.empty()) {
          sink.done();
          return true;
        }
        if (evs.empty()) {
          static const std::string ping = ": keep-alive\n\n";
          if (!sink.write(ping.data(), ping.size())) return false;
        }
        return true;
      });
    });
  });

  svr.Get(R"(/api/runs/([^/]+)/artifacts/(.+))", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string rel = req.matches[2];
      const auto& dir = st.dir(req.matches[1]);
      dir.resolve(rel);
      res.status = 200;
      res.set_content(dir.read(rel), content_type(rel));
    });
  });

  svr.Post(R"(/api/runs/([^/]+)/chat)", [&st](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body);
      if (!body.contains("message") || !body["message"].is_string())
        fail(ErrorCode::UnparseableRequest, "chat body needs a message");
      const std::string id = req.matches[1];
      const auto r = st.chat(id, body["message"].get<std::string>());
      send_json(res, 200,
                {{"reply", r.reply}, {"table", r.table}, {"resumed", r.resumed}, {"status", agent::to_string(st.record(id).status)}});
    });
  });
}

Server::~Server() { stop(); }

int Server::start(const std::string& host, int port) {
  auto& svr = impl_->svr;
  int bound = port;
  if (port == 0) {
    bound = svr.bind_to_any_port(host);
  } else if (!svr.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->th = std::thread([&svr] { svr.listen_after_bind(); });
  while (!svr.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  return bound;
}

void Server::stop() {
  if (!impl_) return;
  impl_->svr.stop();
  if (impl_->th.joinable()) impl_->th.join();
}

}  // namespace turbo::gateway
