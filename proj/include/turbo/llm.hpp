// SPDX-License-Identifier: Apache-2.0
//
// Chat-completion client contract, a deterministic offline mock, an
// HTTP client for OpenAI-compatible endpoints, and prompt templates.
#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace turbo::llm {

struct Message {
  std::string role;  // system | user | assistant
  std::string content;
  bool operator==(const Message&) const = default;
};

struct ChatParams {
  /// Routing hint for the mock (propose, parse, report, chat); sent as metadata only.
  std::string task;
  double temperature = 0.0;
  std::size_t max_tokens = 2048;
};

struct ChatReply {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatReply complete(const std::vector<Message>& messages, const ChatParams& params) = 0;
  virtual std::string identity() const = 0;
};

/// Whitespace-separated token count used wherever a provider reports none.
std::size_t count_tokens(std::string_view text);
std::size_t count_tokens(const std::vector<Message>& messages);

/// Contents of the first ```json fenced block (or a bare ``` block); nullopt if none.
std::optional<std::string> fenced_json(std::string_view text);
std::string fence(const std::string& json_text);

/// Offline client whose replies are a pure function of the messages.
///   propose: weighted centroid of the top quartile of the listed candidates
///            (log-rank weights), sigma = 0.3 * 0.85^generation floored at 0.02.
///   parse:   adds tasks implied by keywords the rule stage does not cover.
///   report / chat: fixed templates over the fenced facts in the prompt.
class MockLLM : public ChatClient {
 public:
  ChatReply complete(const std::vector<Message>& messages, const ChatParams& params) override;
  std::string identity() const override { return "mock-llm/1"; }
};

/// Replies produced by a caller-supplied function; token counts as for the mock.
class ScriptedLLM : public ChatClient {
 public:
  using Script = std::function<std::string(const std::vector<Message>&, const ChatParams&)>;
  explicit ScriptedLLM(Script script, std::string name = "scripted") : script_(std::move(script)), name_(std::move(name)) {}
  ChatReply complete(const std::vector<Message>& messages, const ChatParams& params) override;
  std::string identity() const override { return name_; }
  std::size_t calls() const { return calls_; }

 private:
  Script script_;
  std::string name_;
  std::size_t calls_ = 0;
};

struct HttpClientConfig {
  std::string endpoint;  // full URL of the chat-completions route
  std::string model;
  std::string api_key;
  double timeout_s = 60.0;
  std::size_t retries = 2;

  /// TURBO_LLM_ENDPOINT, TURBO_LLM_MODEL, TURBO_LLM_API_KEY, TURBO_LLM_TIMEOUT, TURBO_LLM_RETRIES
  /// override the given values.
  static HttpClientConfig from_env(HttpClientConfig base);
  static HttpClientConfig from_env() { return from_env(HttpClientConfig{}); }
};

/// JSON chat-completions over HTTP(S); provider-reported usage is recorded verbatim.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(HttpClientConfig cfg);
  ChatReply complete(const std::vector<Message>& messages, const ChatParams& params) override;
  std::string identity() const override { return "http:" + cfg_.model; }

 private:
  HttpClientConfig cfg_;
  std::string base_, path_;
};

// Prompt templates ---------------------------------------------------------

std::filesystem::path prompt_dir();
/// Reads <prompt_dir>/<name>.txt.
std::string load_prompt(const std::string& name);
/// Replaces every {{key}}; a placeholder without a value throws InvalidArgument.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values);

}  // namespace turbo::llm
