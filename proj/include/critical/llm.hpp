#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "critical/scenario.hpp"

namespace critical::llm {

enum class FailureType { none, near_miss, crash };
std::string_view to_string(FailureType f);

/// Aggregated outcome of the episodes run on one configuration.
struct OutcomeSummary {
  int episodes = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double crash_rate = 0.0;
  double mean_ttc_near_miss = 0.0;
  double mean_r_threshold_count = 0.0;
};

struct HistoryEntry {
  ScenarioConfig config;
  OutcomeSummary outcome;
  FailureType failure = FailureType::none;
};

inline constexpr std::string_view kDefaultInstruction =
    "Suggest one new highway scenario configuration that is likely to be critical for the "
    "autonomous ego vehicle, i.e. likely to cause a crash or a near miss, while staying realistic.";

struct PromptContext {
  std::vector<HistoryEntry> history;  // oldest first
  RangeTable ranges;
  std::string instruction{kDefaultInstruction};
  std::size_t history_limit = 10;
  /// Configuration being mutated; fields missing from the reply are taken from it.
  std::optional<ScenarioConfig> base;
};

/// Role instruction sent as the system message.
std::string system_message();

/// Deterministic user message: instruction, ranges as "key: [min, max]" lines,
/// the newest history_limit entries (newest last), base configuration and the
/// output-format directive.
std::string build_prompt(const PromptContext& context);

enum class Validity { valid, out_of_range, unparseable };
std::string_view to_string(Validity v);

struct LlmSuggestion {
  std::string raw;
  std::optional<ScenarioConfig> config;  // set when the object parsed (even if out of range)
  Validity validity = Validity::unparseable;
  std::string offending_key;  // for out_of_range
  std::string diagnostics;
  int attempts = 0;
};

struct ParseOptions {
  RangeTable ranges;
  bool clamp = false;  // clamp out-of-range numbers instead of rejecting
};

/// First balanced {...} in the text (string literals respected), if any.
std::optional<std::string> first_object(std::string_view text);

/// Never throws. Unknown keys are ignored, missing keys come from `base`,
/// "id" and "seed" are always taken from `base`. A valid result satisfies
/// validate(config, options.ranges).
LlmSuggestion parse_suggestion(std::string_view raw, const ScenarioConfig& base,
                               const ParseOptions& options = {});

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One chat-completion round trip. Returns the first candidate's text or
/// throws TransportError.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string complete(const std::string& system, const std::string& user) = 0;
};

struct ClientConfig {
  std::string endpoint;  // full URL, e.g. http://127.0.0.1:8000/v1/chat/completions
  std::string model = "mistral-7b-instruct";
  std::string api_key;
  double timeout_seconds = 30.0;
  double temperature = 0.7;
  int retries = 3;  // total attempts
};

/// CRITICAL_LLM_ENDPOINT, CRITICAL_LLM_MODEL, CRITICAL_LLM_API_KEY,
/// CRITICAL_LLM_TIMEOUT. Missing variables keep the defaults.
ClientConfig config_from_env();

/// Chat-completion request body for the given messages.
std::string request_body(const ClientConfig& config, const std::string& system, const std::string& user);
/// Content of choices[0].message.content; throws TransportError otherwise.
std::string response_content(const std::string& body);

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(ClientConfig config);
  std::string complete(const std::string& system, const std::string& user) override;
  int requests() const { return requests_; }

 private:
  ClientConfig config_;
  std::string origin_;
  std::string path_;
  int requests_ = 0;
};

/// Deterministic offline stand-in: the reply is a perturbation of the base
/// configuration found in the prompt, seeded by a hash of the prompt.
/// `failure_rate` of replies (chosen by the same hash) are prose without an
/// object.
class MockTransport : public Transport {
 public:
  explicit MockTransport(double failure_rate = 0.0, RangeTable ranges = {});
  std::string complete(const std::string& system, const std::string& user) override;
  int requests() const { return requests_; }

 private:
  double failure_rate_;
  RangeTable ranges_;
  int requests_ = 0;
};

/// FNV-1a, stable across platforms.
std::uint64_t fnv1a(std::string_view text);

class LlmClient {
 public:
  LlmClient(std::shared_ptr<Transport> transport, int retries = 3, ParseOptions options = {});
  explicit LlmClient(const ClientConfig& config, ParseOptions options = {});

  /// Transport and parse failures consume an attempt; an out-of-range object
  /// is a final answer. After the last failed attempt the result is
  /// unparseable with the collected diagnostics. Never throws.
  LlmSuggestion request_suggestion(const std::string& prompt, const ScenarioConfig& base);

  int retries() const { return retries_; }
  const ParseOptions& parse_options() const { return options_; }

 private:
  std::shared_ptr<Transport> transport_;
  int retries_;
  ParseOptions options_;
};

/// Local chat-completion server for tests. Listens on 127.0.0.1 with an
/// ephemeral port.
class MockServer {
 public:
  struct Reply {
    int status = 200;
    std::string content;         // wrapped into a chat-completion response
    double delay_seconds = 0.0;  // sleep before replying
    bool raw = false;            // send `content` as the body verbatim
  };
  /// Called with the user message and the 0-based request index.
  using Handler = std::function<Reply(const std::string& user, int index)>;

  explicit MockServer(Handler handler);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  std::string endpoint() const;
  int requests() const;
  /// Parsed request bodies received so far.
  std::vector<std::string> bodies() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace critical::llm
