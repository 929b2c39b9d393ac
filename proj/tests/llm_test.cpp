#include <gtest/gtest.h>

#include <chrono>

#include "critical/llm.hpp"
#include "critical/rng.hpp"
#include "json.hpp"

using namespace critical;
using namespace critical::llm;

namespace {

ScenarioConfig base_config() {
  ScenarioConfig c;
  c.id = "base";
  c.num_aggressive = 3;
  c.num_defensive = 2;
  c.num_regular = 5;
  c.num_trucks = 2;
  c.num_cars = 8;
  c.density = 20.0;
  c.lane_count = 3;
  c.seed = 42;
  return c;
}

ScenarioConfig paired_config() {
  ScenarioConfig c = base_config();
  CriticalPair p;
  p.vehicle_i = {60.0, 1, 28.0, 0.5, Behavior::aggressive, VehicleKind::car};
  p.vehicle_j = {80.0, 1, 22.0, -1.0, Behavior::defensive, VehicleKind::car};
  c.critical_pair = p;
  return c;
}

const char* kValid = R"({"id": "x", "num_aggressive": 6, "num_defensive": 1, "num_regular": 3,
  "num_trucks": 1, "num_cars": 9, "density": 35.5,
  "vehicle_i": {"x": 100, "lane": 0, "speed": 30, "acceleration": 1, "behavior": "aggressive", "kind": "car"},
  "vehicle_j": {"x": 115, "lane": 0, "speed": 20, "acceleration": -2, "behavior": "regular", "kind": "truck"}})";

HistoryEntry entry(int i) {
  HistoryEntry h;
  h.config = base_config();
  h.config.id = "cfg-" + std::to_string(i);
  h.outcome.episodes = 10;
  h.outcome.crash_rate = 0.1 * (i % 3);
  h.failure = i % 3 == 0 ? FailureType::none : FailureType::crash;
  return h;
}

std::shared_ptr<Transport> http(const MockServer& s, double timeout = 5.0) {
  ClientConfig c;
  c.endpoint = s.endpoint();
  c.timeout_seconds = timeout;
  return std::make_shared<HttpTransport>(c);
}

}  // namespace

TEST(Prompt, MinimalContextHasRangesAndDirective) {
  PromptContext ctx;
  const std::string p = build_prompt(ctx);
  EXPECT_NE(p.find("num_aggressive: [0, 30]"), std::string::npos);
  EXPECT_NE(p.find("density: [0.0, 60.0]"), std::string::npos);
  EXPECT_NE(p.find("lane_count: [2, 4]"), std::string::npos);
  EXPECT_NE(p.find("(none yet)"), std::string::npos);
  EXPECT_NE(p.find("Reply with a single JSON object"), std::string::npos);
  for (const char* k : {"\"num_trucks\"", "\"num_cars\"", "\"vehicle_i\"", "\"vehicle_j\"", "\"density\""}) {
    EXPECT_NE(p.find(k), std::string::npos) << k;
  }
  EXPECT_EQ(build_prompt(ctx), p);
}

TEST(Prompt, HistoryTruncatedNewestLast) {
  PromptContext ctx;
  for (int i = 0; i < 15; ++i) ctx.history.push_back(entry(i));
  const std::string p = build_prompt(ctx);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(p.find("\"cfg-" + std::to_string(i) + "\""), std::string::npos);
  std::size_t last = 0;
  for (int i = 5; i < 15; ++i) {
    const auto at = p.find("\"cfg-" + std::to_string(i) + "\"");
    ASSERT_NE(at, std::string::npos);
    EXPECT_GT(at, last);
    last = at;
  }
  EXPECT_NE(p.find("failure: crash"), std::string::npos);
}

TEST(FirstObject, Extraction) {
  EXPECT_EQ(first_object("here you go: {\"a\": {\"b\": 1}} hope it helps"), "{\"a\": {\"b\": 1}}");
  EXPECT_EQ(first_object("{\"a\": \"}\"} {\"b\": 2}"), "{\"a\": \"}\"}");
  EXPECT_EQ(first_object("no braces here"), std::nullopt);
  EXPECT_EQ(first_object("{ unclosed {\"x\": 1}"), "{\"x\": 1}");
}

TEST(Parse, ValidWithProse) {
  const std::string raw = std::string("here you go: ") + kValid + " hope it helps";
  const LlmSuggestion s = parse_suggestion(raw, base_config());
  ASSERT_EQ(s.validity, Validity::valid) << s.diagnostics;
  const ScenarioConfig& c = *s.config;
  EXPECT_EQ(c.id, "base");  // identity comes from the base config
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.lane_count, 3);
  EXPECT_EQ(c.num_aggressive, 6);
  EXPECT_EQ(c.num_trucks, 1);
  EXPECT_DOUBLE_EQ(c.density, 35.5);
  ASSERT_TRUE(c.critical_pair);
  EXPECT_EQ(c.critical_pair->vehicle_j.kind, VehicleKind::truck);
  EXPECT_DOUBLE_EQ(c.critical_pair->vehicle_j.acceleration, -2.0);
  EXPECT_NO_THROW(validate(c));
}

TEST(Parse, NegativeCountIsOutOfRange) {
  const LlmSuggestion s = parse_suggestion(R"({"num_aggressive": -1})", base_config());
  EXPECT_EQ(s.validity, Validity::out_of_range);
  EXPECT_EQ(s.offending_key, "num_aggressive");
}

TEST(Parse, DensityOutOfRangeAndClampFlag) {
  const LlmSuggestion s = parse_suggestion(R"({"density": 999})", base_config());
  EXPECT_EQ(s.validity, Validity::out_of_range);
  EXPECT_EQ(s.offending_key, "density");
  ParseOptions clamp;
  clamp.clamp = true;
  const LlmSuggestion c = parse_suggestion(R"({"density": 999})", base_config(), clamp);
  ASSERT_EQ(c.validity, Validity::valid);
  EXPECT_EQ(c.config->density, 60.0);
}

TEST(Parse, FirstOfTwoObjects) {
  const LlmSuggestion s = parse_suggestion(R"({"num_regular": 7} and {"num_regular": 1})", base_config());
  ASSERT_EQ(s.validity, Validity::valid);
  EXPECT_EQ(s.config->num_regular, 7);
}

TEST(Parse, MissingKeysFromBaseUnknownIgnored) {
  const LlmSuggestion s = parse_suggestion(R"({"weather": "rain", "density": 30})", paired_config());
  ASSERT_EQ(s.validity, Validity::valid);
  ScenarioConfig want = paired_config();
  want.density = 30;
  EXPECT_EQ(*s.config, want);
}

TEST(Parse, PartitionRepaired) {
  // Behavior total 12, type total 10: the type split is rescaled to 12.
  const LlmSuggestion s =
      parse_suggestion(R"({"num_aggressive": 5, "num_defensive": 2, "num_regular": 5})", base_config());
  ASSERT_EQ(s.validity, Validity::valid) << s.diagnostics;
  EXPECT_EQ(s.config->num_trucks + s.config->num_cars, 12);
}

TEST(Parse, PartialPairMergesIntoBase) {
  const LlmSuggestion s = parse_suggestion(R"({"vehicle_j": {"speed": 5}})", paired_config());
  ASSERT_EQ(s.validity, Validity::valid);
  EXPECT_EQ(s.config->critical_pair->vehicle_j.speed, 5.0);
  EXPECT_EQ(s.config->critical_pair->vehicle_j.x, 80.0);
  const LlmSuggestion bad = parse_suggestion(R"({"vehicle_i": {"x": 5}})", base_config());
  EXPECT_EQ(bad.validity, Validity::unparseable);
}

TEST(Parse, Unparseable) {
  EXPECT_EQ(parse_suggestion("I think you should add more trucks.", base_config()).validity,
            Validity::unparseable);
  EXPECT_EQ(parse_suggestion("{not json}", base_config()).validity, Validity::unparseable);
  EXPECT_EQ(parse_suggestion(R"({"num_cars": "many"})", base_config()).validity, Validity::unparseable);
  EXPECT_EQ(parse_suggestion(R"({"num_cars": 2.5})", base_config()).validity, Validity::unparseable);
}

TEST(Parse, BadLaneAndBehavior) {
  const LlmSuggestion lane = parse_suggestion(R"({"vehicle_i": {"lane": 3}})", paired_config());
  EXPECT_EQ(lane.validity, Validity::out_of_range);
  EXPECT_EQ(lane.offending_key, "vehicle_i.lane");
  const LlmSuggestion beh = parse_suggestion(R"({"vehicle_j": {"behavior": "reckless"}})", paired_config());
  EXPECT_EQ(beh.validity, Validity::out_of_range);
  EXPECT_EQ(beh.offending_key, "vehicle_j.behavior");
}

// Property: whatever the text, a valid result always validates.
TEST(Parse, ValidImpliesValidates) {
  Rng rng(3);
  int valid = 0;
  for (int i = 0; i < 500; ++i) {
    nlohmann::json j;
    for (const char* k : {"num_aggressive", "num_defensive", "num_regular", "num_trucks", "num_cars"}) {
      if (uniform01(rng) < 0.7) j[k] = uniform_int(rng, -2, 33);
    }
    if (uniform01(rng) < 0.7) j["density"] = uniform(rng, -5, 70);
    if (uniform01(rng) < 0.3) j["lane_count"] = uniform_int(rng, 1, 5);
    ParseOptions o;
    o.clamp = uniform01(rng) < 0.5;
    const LlmSuggestion s = parse_suggestion(j.dump(), paired_config(), o);
    if (s.validity == Validity::valid) {
      ++valid;
      EXPECT_NO_THROW(validate(*s.config)) << j.dump();
    }
  }
  EXPECT_GT(valid, 50);
}

TEST(Wire, RequestAndResponseShape) {
  ClientConfig c;
  c.model = "m";
  const auto body = nlohmann::json::parse(request_body(c, "sys", "usr"));
  EXPECT_EQ(body["model"], "m");
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], "usr");
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
  EXPECT_EQ(response_content(R"({"choices":[{"message":{"role":"assistant","content":"hi"}}]})"), "hi");
  EXPECT_THROW(response_content("{}"), TransportError);
  EXPECT_THROW(HttpTransport(ClientConfig{}), std::invalid_argument);
}

TEST(MockServerClient, ValidRoundTrip) {
  MockServer server([](const std::string&, int) { return MockServer::Reply{200, kValid}; });
  LlmClient client(http(server));
  const LlmSuggestion s = client.request_suggestion(build_prompt({}), base_config());
  ASSERT_EQ(s.validity, Validity::valid) << s.diagnostics;
  EXPECT_EQ(s.attempts, 1);
  const LlmSuggestion direct = parse_suggestion(kValid, base_config());
  EXPECT_EQ(*s.config, *direct.config);
  EXPECT_EQ(server.requests(), 1);
  const auto sent = nlohmann::json::parse(server.bodies().at(0));
  EXPECT_EQ(sent["messages"][0]["role"], "system");
}

TEST(MockServerClient, OutOfRange) {
  MockServer server([](const std::string&, int) { return MockServer::Reply{200, R"({"density": 999})"}; });
  LlmClient client(http(server));
  const LlmSuggestion s = client.request_suggestion("p", base_config());
  EXPECT_EQ(s.validity, Validity::out_of_range);
  EXPECT_EQ(s.offending_key, "density");
  EXPECT_EQ(server.requests(), 1);
}

TEST(MockServerClient, ProseExhaustsRetries) {
  MockServer server([](const std::string&, int) { return MockServer::Reply{200, "Sorry, no idea."}; });
  LlmClient client(http(server), 3);
  const LlmSuggestion s = client.request_suggestion("p", base_config());
  EXPECT_EQ(s.validity, Validity::unparseable);
  EXPECT_EQ(s.attempts, 3);
  EXPECT_EQ(server.requests(), 3);
  EXPECT_EQ(s.raw, "Sorry, no idea.");
}

TEST(MockServerClient, RecoversAfterFailures) {
  MockServer server([](const std::string&, int i) {
    if (i == 0) return MockServer::Reply{500, "oops"};
    if (i == 1) return MockServer::Reply{200, "not json", 0.0, true};
    return MockServer::Reply{200, kValid};
  });
  LlmClient client(http(server), 3);
  const LlmSuggestion s = client.request_suggestion("p", base_config());
  EXPECT_EQ(s.validity, Validity::valid);
  EXPECT_EQ(s.attempts, 3);
  EXPECT_NE(s.diagnostics.find("HTTP status 500"), std::string::npos);
}

TEST(MockServerClient, TimeoutFailsSoft) {
  MockServer server([](const std::string&, int) { return MockServer::Reply{200, kValid, 1.0}; });
  LlmClient client(http(server, 0.2), 2);
  const auto t0 = std::chrono::steady_clock::now();
  const LlmSuggestion s = client.request_suggestion("p", base_config());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(s.validity, Validity::unparseable);
  EXPECT_EQ(s.attempts, 2);
  EXPECT_LT(secs, 1.5);
}

TEST(MockServerClient, UnreachableEndpointFailsSoft) {
  std::string endpoint;
  { endpoint = MockServer([](const std::string&, int) { return MockServer::Reply{}; }).endpoint(); }
  ClientConfig c;
  c.endpoint = endpoint;
  c.timeout_seconds = 0.5;
  LlmClient client(c);
  const LlmSuggestion s = client.request_suggestion("p", base_config());
  EXPECT_EQ(s.validity, Validity::unparseable);
  EXPECT_EQ(s.attempts, 3);
}

TEST(MockTransportTest, DeterministicPerturbationOfBase) {
  PromptContext ctx;
  ctx.base = paired_config();
  const std::string prompt = build_prompt(ctx);
  auto t = std::make_shared<MockTransport>();
  LlmClient client(t);
  const LlmSuggestion a = client.request_suggestion(prompt, *ctx.base);
  const LlmSuggestion b = client.request_suggestion(prompt, *ctx.base);
  ASSERT_EQ(a.validity, Validity::valid) << a.diagnostics;
  EXPECT_EQ(*a.config, *b.config);
  EXPECT_FALSE(same_content(*a.config, *ctx.base));
  EXPECT_EQ(t->requests(), 2);

  LlmClient failing(std::make_shared<MockTransport>(1.0));
  EXPECT_EQ(failing.request_suggestion(prompt, *ctx.base).validity, Validity::unparseable);
}

TEST(Env, ConfigFromEnvironment) {
  setenv("CRITICAL_LLM_ENDPOINT", "http://localhost:9/v1/chat/completions", 1);
  setenv("CRITICAL_LLM_MODEL", "mistral", 1);
  setenv("CRITICAL_LLM_TIMEOUT", "2.5", 1);
  const ClientConfig c = config_from_env();
  EXPECT_EQ(c.endpoint, "http://localhost:9/v1/chat/completions");
  EXPECT_EQ(c.model, "mistral");
  EXPECT_EQ(c.timeout_seconds, 2.5);
  unsetenv("CRITICAL_LLM_ENDPOINT");
  unsetenv("CRITICAL_LLM_MODEL");
  unsetenv("CRITICAL_LLM_TIMEOUT");
}
