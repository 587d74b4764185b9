// SPDX-License-Identifier: Apache-2.0
#include "turbo/llm.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "turbo/common.hpp"
#include "turbo/data.hpp"

namespace turbo::llm {
namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

json facts_of(const std::vector<Message>& messages) {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role != "user") continue;
    const auto block = fenced_json(it->content);
    if (!block) continue;
    try {
      return json::parse(*block);
    } catch (const json::exception&) {
    }
  }
  return json::object();
}

std::string mock_propose(const json& f) {
  const std::size_t g = f.value("generation", std::size_t{0});
  const std::size_t dim = f.value("dim", std::size_t{21});
  double sigma = std::max(0.02, 0.3 * std::pow(0.85, static_cast<double>(g)));

  std::vector<std::pair<double, std::vector<double>>> cands;
  for (const auto& c : f.value("candidates", json::array())) {
    if (c.value("failed", false)) continue;
    cands.emplace_back(c.at("reward").get<double>(), c.at("x").get<std::vector<double>>());
  }
  std::vector<double> mean(dim, 0.5);
  std::string why = "no usable candidates yet; centering the search";
  if (!cands.empty()) {
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const std::size_t mu = std::max<std::size_t>(1, cands.size() / 4);
    std::vector<double> w(mu);
    for (std::size_t i = 0; i < mu; ++i) w[i] = std::log(static_cast<double>(mu) + 0.5) - std::log(static_cast<double>(i + 1));
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t i = 0; i < mu; ++i)
      for (std::size_t j = 0; j < dim; ++j) mean[j] += w[i] / wsum * cands[i].second.at(j);
    why = "moving the mean to the rank-weighted centroid of the best " + std::to_string(mu) +
          " candidates and shrinking the step";
  }
  return "Proposal for the next generation.\n" +
         fence(json{{"mean", mean}, {"sigma", sigma}, {"rationale", why}}.dump());
}

std::string mock_parse(const json& f) {
  const std::string text = lower(f.value("text", std::string{}));
  json tasks = json::array();
  auto add = [&](std::string_view keys, const char* task) {
    std::istringstream in{std::string(keys)};
    std::string k;
    while (in >> k)
      if (text.find(k) != std::string::npos) {
        tasks.push_back(task);
        return;
      }
  };
  add("improve refine tune better", "optimize");
  add("cfd high-fidelity accurate confirm check", "validate");
  add("off-design characteristic operating-range", "map");
  add("structural strength centrifugal", "stress");
  add("summary summarize document", "report");
  return fence(json{{"tasks", tasks}, {"intent", tasks.empty() ? "as parsed" : "implied tasks added"}}.dump());
}

std::string mock_report(const json& f) {
  std::ostringstream out;
  const auto stages = f.value("stages", json::array());
  out << "The workflow ran " << stages.size() << " stages";
  if (!stages.empty()) {
    out << " (";
    for (std::size_t i = 0; i < stages.size(); ++i) out << (i ? ", " : "") << stages[i].get<std::string>();
    out << ")";
  }
  out << ".";
  if (f.contains("selected") && !f["selected"].is_null())
    out << " Scheme " << f["selected"].get<std::string>()
        << " is recommended: it ranks first on the reward among the validated schemes.";
  out << " All figures in the tables are read from the run artifacts.";
  return out.str();
}

std::size_t count_word(const std::string& q) {
  static const std::vector<std::string> words = {"one", "two", "three", "four", "five",
                                                 "six", "seven", "eight", "nine", "ten"};
  std::istringstream in(q);
  std::string w;
  while (in >> w) {
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) w.pop_back();
    for (std::size_t i = 0; i < words.size(); ++i)
      if (w == words[i]) return i + 1;
    if (!w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      return static_cast<std::size_t>(std::stoul(w));
  }
  return 0;
}

std::string mock_chat(const json& f) {
  const std::string q = lower(f.value("question", std::string{}));
  auto schemes = f.value("schemes", json::array());
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& s : schemes) ranked.emplace_back(s.value("reward", 0.0), s.value("id", std::string{}));
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::size_t k = count_word(q);
  if (k == 0) k = q.find("best") != std::string::npos ? 1 : 0;
  k = std::min(k, ranked.size());
  json select = json::array();
  for (std::size_t i = 0; i < k; ++i) select.push_back(ranked[i].second);
  std::string text = k ? "Selected the top schemes by reward; the table lists their recorded performance."
                       : "The run artifacts are summarized below.";
  return text + "\n" + fence(json{{"select", select}}.dump());
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) fail(ErrorCode::InvalidArgument, "endpoint must be an absolute URL: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::size_t count_tokens(const std::vector<Message>& messages) {
  std::size_t n = 0;
  for (const auto& m : messages) n += count_tokens(m.content);
  return n;
}

std::optional<std::string> fenced_json(std::string_view text) {
  for (std::string_view open : {"```json", "```"}) {
    const auto a = text.find(open);
    if (a == std::string_view::npos) continue;
    const auto body = text.find('\n', a);
    if (body == std::string_view::npos) continue;
    const auto b = text.find("```", body);
    if (b == std::string_view::npos) continue;
    return std::string(text.substr(body + 1, b - body - 1));
  }
  return std::nullopt;
}

std::string fence(const std::string& json_text) { return "```json\n" + json_text + "\n```"; }

ChatReply MockLLM::complete(const std::vector<Message>& messages, const ChatParams& params) {
  const json f = facts_of(messages);
  ChatReply r;
  if (params.task == "propose")
    r.text = mock_propose(f);
  else if (params.task == "parse")
    r.text = mock_parse(f);
  else if (params.task == "report")
    r.text = mock_report(f);
  else if (params.task == "chat")
    r.text = mock_chat(f);
  else
    r.text = "Acknowledged.";
  r.prompt_tokens = count_tokens(messages);
  r.completion_tokens = count_tokens(r.text);
  return r;
}

ChatReply ScriptedLLM::complete(const std::vector<Message>& messages, const ChatParams& params) {
  ++calls_;
  ChatReply r;
  r.text = script_(messages, params);
  r.prompt_tokens = count_tokens(messages);
  r.completion_tokens = count_tokens(r.text);
  return r;
}

HttpClientConfig HttpClientConfig::from_env(HttpClientConfig base) {
  if (const char* v = std::getenv("TURBO_LLM_ENDPOINT")) base.endpoint = v;
  if (const char* v = std::getenv("TURBO_LLM_MODEL")) base.model = v;
  if (const char* v = std::getenv("TURBO_LLM_API_KEY")) base.api_key = v;
  if (const char* v = std::getenv("TURBO_LLM_TIMEOUT")) base.timeout_s = std::stod(v);
  if (const char* v = std::getenv("TURBO_LLM_RETRIES")) base.retries = std::stoul(v);
  return base;
}

HttpChatClient::HttpChatClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.endpoint.empty()) fail(ErrorCode::InvalidArgument, "no chat endpoint configured");
  std::tie(base_, path_) = split_url(cfg_.endpoint);
}

ChatReply HttpChatClient::complete(const std::vector<Message>& messages, const ChatParams& params) {
  json body;
  body["model"] = cfg_.model;
  body["temperature"] = params.temperature;
  body["max_tokens"] = params.max_tokens;
  body["messages"] = json::array();
  for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});

  httplib::Client cli(base_);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  std::string last_error;
  for (std::size_t attempt = 0; attempt <= cfg_.retries; ++attempt) {
    if (attempt) std::this_thread::sleep_for(std::chrono::milliseconds(250 << std::min<std::size_t>(attempt, 5)));
    const auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) fail(ErrorCode::ClientError, "chat endpoint returned HTTP " + std::to_string(res->status));
    try {
      const auto j = json::parse(res->body);
      ChatReply r;
      r.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      if (j.contains("usage")) {
        r.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
        r.completion_tokens = j["usage"].value("completion_tokens", std::size_t{0});
      } else {
        r.prompt_tokens = count_tokens(messages);
        r.completion_tokens = count_tokens(r.text);
      }
      return r;
    } catch (const json::exception& e) {
      fail(ErrorCode::ClientError, std::string("unreadable chat response: ") + e.what());
    }
  }
  fail(ErrorCode::ClientError, "chat endpoint unreachable: " + last_error);
}

std::filesystem::path prompt_dir() {
  if (const char* v = std::getenv("TURBO_PROMPT_DIR")) return v;
  return std::filesystem::path(TURBO_DATA_DIR) / "prompts";
}

std::string load_prompt(const std::string& name) { return data::read_file(prompt_dir() / (name + ".txt")); }

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto a = tmpl.find("{{", pos);
    if (a == std::string_view::npos) break;
    const auto b = tmpl.find("}}", a + 2);
    if (b == std::string_view::npos) break;
    out.append(tmpl.substr(pos, a - pos));
    const std::string key(tmpl.substr(a + 2, b - a - 2));
    const auto it = values.find(key);
    if (it == values.end()) fail(ErrorCode::InvalidArgument, "no value for template placeholder {{" + key + "}}");
    out += it->second;
    pos = b + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

}  // namespace turbo::llm
