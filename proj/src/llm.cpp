#include "critical/llm.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <regex>
#include <thread>

#include "critical/rng.hpp"
#include "httplib.h"
#include "json.hpp"

namespace critical::llm {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(FailureType f) {
  switch (f) {
    case FailureType::crash: return "crash";
    case FailureType::near_miss: return "near_miss";
    case FailureType::none: break;
  }
  return "none";
}

std::string_view to_string(Validity v) {
  switch (v) {
    case Validity::valid: return "valid";
    case Validity::out_of_range: return "out_of_range";
    case Validity::unparseable: break;
  }
  return "unparseable";
}

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

template <class T>
std::string range_line(std::string_view key, const Range<T>& r) {
  return std::string(key) + ": [" + ordered_json(r.min).dump() + ", " + ordered_json(r.max).dump() + "]\n";
}

// Configuration keys requested from the model.
ordered_json reply_shape(const ScenarioConfig& c) {
  ordered_json j;
  j["id"] = c.id;
  j["num_aggressive"] = c.num_aggressive;
  j["num_defensive"] = c.num_defensive;
  j["num_regular"] = c.num_regular;
  j["num_trucks"] = c.num_trucks;
  j["num_cars"] = c.num_cars;
  j["density"] = c.density;
  if (c.critical_pair) {
    j["vehicle_i"] = to_json(c.critical_pair->vehicle_i);
    j["vehicle_j"] = to_json(c.critical_pair->vehicle_j);
  }
  return j;
}

constexpr std::string_view kBaseMarker = "Base configuration to modify:\n";

}  // namespace

std::string system_message() {
  return "You are a traffic scenario designer for testing autonomous driving policies on a "
         "multi-lane highway. You propose scenario configurations as JSON objects.";
}

std::string build_prompt(const PromptContext& ctx) {
  const RangeTable& r = ctx.ranges;
  std::string out = ctx.instruction + "\n\n";
  out += "Valid ranges (inclusive):\n";
  out += range_line("num_aggressive", r.num_aggressive);
  out += range_line("num_defensive", r.num_defensive);
  out += range_line("num_regular", r.num_regular);
  out += range_line("num_trucks", r.num_trucks);
  out += range_line("num_cars", r.num_cars);
  out += range_line("density", r.density);
  out += range_line("lane_count", r.lane_count);
  out += range_line("vehicle.x", r.position);
  out += range_line("vehicle.speed", r.speed);
  out += range_line("vehicle.acceleration", r.acceleration);
  out += "vehicle.lane: [0, lane_count - 1]\n";
  out += "vehicle.behavior: aggressive | defensive | regular\n";
  out += "vehicle.kind: car | truck\n";
  out += "Density is in vehicles per km per lane and must be greater than 0. "
         "num_trucks + num_cars must equal num_aggressive + num_defensive + num_regular; "
         "vehicle_i and vehicle_j are counted in these totals.\n\n";

  out += "Recent configurations and outcomes (oldest first, newest last):\n";
  const std::size_t n = ctx.history.size();
  const std::size_t first = n > ctx.history_limit ? n - ctx.history_limit : 0;
  if (first == n) out += "(none yet)\n";
  for (std::size_t i = first; i < n; ++i) {
    const HistoryEntry& h = ctx.history[i];
    out += std::to_string(i - first + 1) + ". " + to_json(h.config).dump() + "\n   outcome: episodes " +
           std::to_string(h.outcome.episodes) + ", mean reward " + num(h.outcome.mean_reward) +
           ", mean length " + num(h.outcome.mean_length) + ", crash rate " + num(h.outcome.crash_rate) +
           ", mean TTC near misses " + num(h.outcome.mean_ttc_near_miss) + ", mean r threshold count " +
           num(h.outcome.mean_r_threshold_count) + ", failure: " + std::string(to_string(h.failure)) + "\n";
  }
  if (ctx.base) {
    out += "\n";
    out += kBaseMarker;
    out += to_json(*ctx.base).dump() + "\n";
  }
  out += "\nReply with a single JSON object and nothing else. It must contain exactly these keys: "
         "\"id\", \"num_aggressive\", \"num_defensive\", \"num_regular\", \"num_trucks\", \"num_cars\", "
         "\"density\", \"vehicle_i\", \"vehicle_j\". vehicle_i and vehicle_j are objects with keys "
         "\"x\", \"lane\", \"speed\", \"acceleration\", \"behavior\", \"kind\".\n";
  return out;
}

std::optional<std::string> first_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escape = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char ch = text[i];
      if (in_string) {
        if (escape) escape = false;
        else if (ch == '\\') escape = true;
        else if (ch == '"') in_string = false;
        continue;
      }
      if (ch == '"') in_string = true;
      else if (ch == '{') ++depth;
      else if (ch == '}' && --depth == 0) return std::string(text.substr(start, i - start + 1));
    }
  }
  return std::nullopt;
}

namespace {

// Outcome of reading one field: ok, or the validity and key to report.
struct Fail {
  Validity validity = Validity::valid;
  std::string key;
  std::string message;
  explicit operator bool() const { return validity != Validity::valid; }
};

Fail type_error(const std::string& key, const std::string& what) {
  return {Validity::unparseable, key, "field '" + key + "' " + what};
}

Fail range_error(const std::string& key, const std::string& what) {
  return {Validity::out_of_range, key, "field '" + key + "' " + what};
}

class Reader {
 public:
  Reader(const json& obj, bool clamp) : obj_(obj), clamp_(clamp) {}

  Fail integer(const std::string& key, const std::string& name, int& dst, Range<int> range) {
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return {};
    if (!it->is_number()) return type_error(name, "is not a number");
    const double v = it->get<double>();
    if (!std::isfinite(v) || v != std::floor(v)) return type_error(name, "is not an integer");
    if (v < range.min || v > range.max) {
      if (!clamp_) return range_error(name, "= " + it->dump() + " is outside [" + std::to_string(range.min) + ", " + std::to_string(range.max) + "]");
      dst = v < range.min ? range.min : range.max;
      return {};
    }
    dst = static_cast<int>(v);
    return {};
  }

  Fail real(const std::string& key, const std::string& name, double& dst, Range<double> range,
            bool positive = false) {
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return {};
    if (!it->is_number()) return type_error(name, "is not a number");
    const double v = it->get<double>();
    if (!std::isfinite(v)) return type_error(name, "is not finite");
    const bool bad = v < range.min || v > range.max || (positive && !(v > 0.0));
    if (bad) {
      if (!clamp_) return range_error(name, "= " + it->dump() + " is outside [" + ordered_json(range.min).dump() + ", " + ordered_json(range.max).dump() + "]");
      dst = range.clamp(v);
      if (positive && !(dst > 0.0)) dst = std::min(range.max, 0.1);
      return {};
    }
    dst = v;
    return {};
  }

  template <class E, class ParseFn>
  Fail name(const std::string& key, const std::string& full, E& dst, ParseFn parse) {
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return {};
    if (!it->is_string()) return type_error(full, "is not a string");
    try {
      dst = parse(it->get<std::string>());
    } catch (const std::invalid_argument&) {
      return range_error(full, "has unknown value " + it->dump());
    }
    return {};
  }

 private:
  const json& obj_;
  bool clamp_;
};

Fail read_seed(const json& obj, const std::string& prefix, VehicleSeed& s, const RangeTable& r,
               bool clamp) {
  if (!obj.is_object()) return type_error(prefix, "is not an object");
  Reader rd(obj, clamp);
  if (Fail f = rd.real("x", prefix + ".x", s.x, r.position)) return f;
  if (Fail f = rd.integer("lane", prefix + ".lane", s.lane, {0, r.lane_count.max - 1})) return f;
  if (Fail f = rd.real("speed", prefix + ".speed", s.speed, r.speed)) return f;
  if (Fail f = rd.real("acceleration", prefix + ".acceleration", s.acceleration, r.acceleration)) return f;
  if (Fail f = rd.name("behavior", prefix + ".behavior", s.behavior, [](const std::string& v) { return parse_behavior(v); })) return f;
  if (Fail f = rd.name("kind", prefix + ".kind", s.kind, [](const std::string& v) { return parse_kind(v); })) return f;
  return {};
}

LlmSuggestion finish(LlmSuggestion s, const Fail& f) {
  s.validity = f.validity;
  s.diagnostics = f.message;
  if (f.validity == Validity::out_of_range) s.offending_key = f.key;
  return s;
}

}  // namespace

LlmSuggestion parse_suggestion(std::string_view raw, const ScenarioConfig& base, const ParseOptions& o) {
  LlmSuggestion s;
  s.raw = std::string(raw);
  try {
    const auto text = first_object(raw);
    if (!text) return finish(std::move(s), {Validity::unparseable, "", "no JSON object in the reply"});
    json j;
    try {
      j = json::parse(*text);
    } catch (const json::parse_error& e) {
      return finish(std::move(s), {Validity::unparseable, "", std::string("malformed JSON object: ") + e.what()});
    }
    const RangeTable& r = o.ranges;
    ScenarioConfig c = base;
    Reader rd(j, o.clamp);
    if (Fail f = rd.integer("num_aggressive", "num_aggressive", c.num_aggressive, r.num_aggressive)) return finish(std::move(s), f);
    if (Fail f = rd.integer("num_defensive", "num_defensive", c.num_defensive, r.num_defensive)) return finish(std::move(s), f);
    if (Fail f = rd.integer("num_regular", "num_regular", c.num_regular, r.num_regular)) return finish(std::move(s), f);
    if (Fail f = rd.integer("num_trucks", "num_trucks", c.num_trucks, r.num_trucks)) return finish(std::move(s), f);
    if (Fail f = rd.integer("num_cars", "num_cars", c.num_cars, r.num_cars)) return finish(std::move(s), f);
    if (Fail f = rd.real("density", "density", c.density, r.density, true)) return finish(std::move(s), f);
    if (Fail f = rd.integer("lane_count", "lane_count", c.lane_count, r.lane_count)) return finish(std::move(s), f);

    const bool has_i = j.contains("vehicle_i") && !j["vehicle_i"].is_null();
    const bool has_j = j.contains("vehicle_j") && !j["vehicle_j"].is_null();
    if (has_i || has_j) {
      if (!c.critical_pair && !(has_i && has_j)) {
        return finish(std::move(s), {Validity::unparseable, has_i ? "vehicle_j" : "vehicle_i",
                                     "critical pair is incomplete: both vehicle_i and vehicle_j are needed"});
      }
      CriticalPair pair = c.critical_pair.value_or(CriticalPair{});
      if (has_i) {
        if (Fail f = read_seed(j["vehicle_i"], "vehicle_i", pair.vehicle_i, r, o.clamp)) return finish(std::move(s), f);
      }
      if (has_j) {
        if (Fail f = read_seed(j["vehicle_j"], "vehicle_j", pair.vehicle_j, r, o.clamp)) return finish(std::move(s), f);
      }
      c.critical_pair = pair;
    }
    if (c.critical_pair) {
      for (auto [seed, key] : {std::pair{&c.critical_pair->vehicle_i, "vehicle_i.lane"},
                               std::pair{&c.critical_pair->vehicle_j, "vehicle_j.lane"}}) {
        if (seed->lane >= c.lane_count) {
          if (!o.clamp) {
            s.config = c;
            return finish(std::move(s), range_error(key, "is not below lane_count " + std::to_string(c.lane_count)));
          }
          seed->lane = c.lane_count - 1;
        }
      }
    }
    s.config = c;

    // Behavior counts are authoritative; repair the type split proportionally.
    if (c.num_trucks + c.num_cars != c.background_count()) {
      const int typed = c.num_trucks + c.num_cars;
      const int base_typed = base.num_trucks + base.num_cars;
      const double fraction = typed > 0 ? static_cast<double>(c.num_trucks) / typed
                              : base_typed > 0 ? static_cast<double>(base.num_trucks) / base_typed
                                               : 0.0;
      reconcile_partition(c, fraction, r);
    }
    validate(c, r);
    s.config = c;
    s.validity = Validity::valid;
    s.diagnostics = "ok";
  } catch (const ValidationError& e) {
    return finish(std::move(s), range_error(e.field(), e.what()));
  } catch (const std::exception& e) {
    return finish(std::move(s), {Validity::unparseable, "", std::string("cannot interpret reply: ") + e.what()});
  }
  return s;
}

ClientConfig config_from_env() {
  ClientConfig c;
  if (const char* v = std::getenv("CRITICAL_LLM_ENDPOINT")) c.endpoint = v;
  if (const char* v = std::getenv("CRITICAL_LLM_MODEL")) c.model = v;
  if (const char* v = std::getenv("CRITICAL_LLM_API_KEY")) c.api_key = v;
  if (const char* v = std::getenv("CRITICAL_LLM_TIMEOUT")) {
    char* end = nullptr;
    const double t = std::strtod(v, &end);
    if (end != v && t > 0.0) c.timeout_seconds = t;
  }
  return c;
}

std::string request_body(const ClientConfig& c, const std::string& system, const std::string& user) {
  ordered_json j;
  j["model"] = c.model;
  j["messages"] = ordered_json::array({ordered_json{{"role", "system"}, {"content", system}},
                                       ordered_json{{"role", "user"}, {"content", user}}});
  j["temperature"] = c.temperature;
  return j.dump();
}

std::string response_content(const std::string& body) {
  try {
    const json j = json::parse(body);
    const json& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw TransportError("response content is not a string");
    return content.get<std::string>();
  } catch (const TransportError&) {
    throw;
  } catch (const std::exception& e) {
    throw TransportError(std::string("malformed chat-completion response: ") + e.what());
  }
}

HttpTransport::HttpTransport(ClientConfig config) : config_(std::move(config)) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, url)) {
    throw std::invalid_argument("LLM endpoint must be an http(s) URL, got '" + config_.endpoint + "'");
  }
  origin_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/v1/chat/completions";
}

std::string HttpTransport::complete(const std::string& system, const std::string& user) {
  ++requests_;
  httplib::Client cli(origin_);
  const auto sec = static_cast<time_t>(config_.timeout_seconds);
  const auto usec = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(sec)) * 1e6);
  cli.set_connection_timeout(sec, usec);
  cli.set_read_timeout(sec, usec);
  cli.set_write_timeout(sec, usec);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  auto res = cli.Post(path_, headers, request_body(config_, system, user), "application/json");
  if (!res) throw TransportError("request to " + origin_ + path_ + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw TransportError("HTTP status " + std::to_string(res->status) + " from " + origin_ + path_);
  }
  return response_content(res->body);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

MockTransport::MockTransport(double failure_rate, RangeTable ranges)
    : failure_rate_(failure_rate), ranges_(std::move(ranges)) {}

std::string MockTransport::complete(const std::string&, const std::string& user) {
  ++requests_;
  const std::uint64_t h = fnv1a(user);
  if (static_cast<double>(h % 10000) / 10000.0 < failure_rate_) {
    return "I would suggest making the traffic denser, but I cannot produce a configuration right now.";
  }
  ScenarioConfig out;
  const auto pos = user.find(kBaseMarker);
  if (pos != std::string::npos) {
    const auto start = pos + kBaseMarker.size();
    const auto end = user.find('\n', start);
    const ScenarioConfig base = config_from_json(json::parse(user.substr(start, end - start)));
    out = perturb_config(base, 0.25, h, ranges_);
  } else {
    out = sample_config(h, ranges_);
  }
  return "Here is a configuration that should stress the ego vehicle:\n" + reply_shape(out).dump(2);
}

LlmClient::LlmClient(std::shared_ptr<Transport> transport, int retries, ParseOptions options)
    : transport_(std::move(transport)), retries_(std::max(1, retries)), options_(std::move(options)) {}

LlmClient::LlmClient(const ClientConfig& config, ParseOptions options)
    : LlmClient(std::make_shared<HttpTransport>(config), config.retries, std::move(options)) {}

LlmSuggestion LlmClient::request_suggestion(const std::string& prompt, const ScenarioConfig& base) {
  std::string diagnostics;
  std::string last_raw;
  for (int attempt = 1; attempt <= retries_; ++attempt) {
    std::string text;
    try {
      text = transport_->complete(system_message(), prompt);
    } catch (const std::exception& e) {
      diagnostics += "attempt " + std::to_string(attempt) + ": " + e.what() + "\n";
      continue;
    } catch (...) {
      diagnostics += "attempt " + std::to_string(attempt) + ": unknown transport failure\n";
      continue;
    }
    LlmSuggestion s = parse_suggestion(text, base, options_);
    s.attempts = attempt;
    if (s.validity != Validity::unparseable) {
      s.diagnostics = diagnostics + s.diagnostics;
      return s;
    }
    diagnostics += "attempt " + std::to_string(attempt) + ": " + s.diagnostics + "\n";
    last_raw = std::move(text);
  }
  LlmSuggestion s;
  s.raw = std::move(last_raw);
  s.validity = Validity::unparseable;
  s.diagnostics = diagnostics + "all " + std::to_string(retries_) + " attempts failed";
  s.attempts = retries_;
  return s;
}

struct MockServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  Handler handler;
  mutable std::mutex mutex;
  int count = 0;
  std::vector<std::string> bodies;
};

MockServer::MockServer(Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->handler = std::move(handler);
  Impl* impl = impl_.get();
  impl->server.Post(R"(/.*)", [impl](const httplib::Request& req, httplib::Response& res) {
    int index = 0;
    {
      std::lock_guard<std::mutex> lock(impl->mutex);
      index = impl->count++;
      impl->bodies.push_back(req.body);
    }
    std::string user;
    try {
      const json j = json::parse(req.body);
      for (const auto& m : j.at("messages")) {
        if (m.at("role") == "user") user = m.at("content").get<std::string>();
      }
    } catch (const std::exception&) {
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      return;
    }
    const Reply r = impl->handler(user, index);
    if (r.delay_seconds > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(r.delay_seconds));
    res.status = r.status;
    if (r.raw) {
      res.set_content(r.content, "application/json");
      return;
    }
    ordered_json body;
    body["id"] = "mock-" + std::to_string(index);
    body["object"] = "chat.completion";
    body["choices"] = ordered_json::array({ordered_json{
        {"index", 0}, {"message", {{"role", "assistant"}, {"content", r.content}}}, {"finish_reason", "stop"}}});
    res.set_content(body.dump(), "application/json");
  });
  impl->port = impl->server.bind_to_any_port("127.0.0.1");
  if (impl->port <= 0) throw std::runtime_error("mock LLM server could not bind a port");
  impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
  impl->server.wait_until_ready();
}

MockServer::~MockServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port) + "/v1/chat/completions";
}

int MockServer::requests() const {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  return impl_->count;
}

std::vector<std::string> MockServer::bodies() const {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  return impl_->bodies;
}

}  // namespace critical::llm
