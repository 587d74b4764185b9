// SPDX-License-Identifier: Apache-2.0
//
// Run store over the filesystem and the HTTP/JSON + server-sent-events API.
#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "turbo/agent.hpp"

namespace turbo::gateway {

using nlohmann::json;

struct RunRecord {
  std::string run_id;
  agent::RunStatus status = agent::RunStatus::Planning;
  std::string created;
  std::string updated;
  std::filesystem::path dir;
  json to_json() const;
};

struct StoreConfig {
  std::filesystem::path root = "runs";
  std::size_t max_concurrent = 4;
  std::uint64_t seed = 1;
};

using ClientFactory = std::function<std::unique_ptr<llm::ChatClient>()>;

/// Owns every run under root/; one coordinator thread per executing run.
class RunStore {
 public:
  RunStore(StoreConfig cfg, agent::Services services, ClientFactory clients);
  ~RunStore();

  /// Body is {"text": ...} or a structured request. Throws UnparseableRequest,
  /// ConflictingTasks or Capacity.
  RunRecord submit(const json& body);
  RunRecord record(const std::string& run_id);
  /// Status body: the record plus pending question, current node and failure.
  json status(const std::string& run_id);
  /// Events with seq > after (all when after < 0); blocks up to `wait` for new
  /// ones while the run is live. `finished` is set once the run is done or failed.
  std::vector<agent::Event> events(const std::string& run_id, long long after, std::chrono::milliseconds wait,
                                   bool& finished);
  agent::ChatResult chat(const std::string& run_id, const std::string& message);
  const agent::RunDir& dir(const std::string& run_id);
  /// Blocks until the run leaves planning/running.
  agent::RunStatus wait(const std::string& run_id, std::chrono::milliseconds timeout);
  /// Asks every executing run to pause at its next node boundary and joins them.
  void shutdown();

 private:
  struct Entry;
  std::shared_ptr<Entry> find(const std::string& run_id);
  void start(const std::shared_ptr<Entry>& e);
  std::size_t active_locked() const;

  StoreConfig cfg_;
  agent::Services services_;
  ClientFactory clients_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> runs_;
  std::atomic<bool> stop_{false};
  std::size_t counter_ = 0;
};

/// GET /api/health, POST /api/runs, GET /api/runs/{id}, GET /api/runs/{id}/events?after=n,
/// GET /api/runs/{id}/artifacts/{path}, POST /api/runs/{id}/chat.
class Server {
 public:
  explicit Server(RunStore& store);
  ~Server();
  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string content_type(const std::string& path);

}  // namespace turbo::gateway
