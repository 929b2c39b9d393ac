#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "critical/rng.hpp"
#include "critical/scenario.hpp"

using namespace critical;

namespace {

ScenarioConfig make_config(std::string id) {
  ScenarioConfig c;
  c.id = std::move(id);
  c.num_aggressive = 3;
  c.num_defensive = 4;
  c.num_regular = 5;
  c.num_trucks = 2;
  c.num_cars = 10;
  c.density = 18.5;
  c.lane_count = 3;
  c.seed = 42;
  return c;
}

ScenarioConfig with_pair(ScenarioConfig c) {
  c.critical_pair = CriticalPair{
      VehicleSeed{100.0, 1, 30.0, 0.5, Behavior::aggressive, VehicleKind::car},
      VehicleSeed{120.0, 1, 20.0, -1.0, Behavior::defensive, VehicleKind::truck}};
  return c;
}

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << contents;
  return path;
}

}  // namespace

TEST(ScenarioModel, BehaviorDefaultsAreOrdered) {
  const auto agg = behavior_params(Behavior::aggressive);
  const auto reg = behavior_params(Behavior::regular);
  const auto def = behavior_params(Behavior::defensive);
  EXPECT_GT(agg.desired_speed, reg.desired_speed);
  EXPECT_GT(reg.desired_speed, def.desired_speed);
  EXPECT_GT(agg.max_acceleration, reg.max_acceleration);
  EXPECT_GT(reg.max_acceleration, def.max_acceleration);
  EXPECT_LT(agg.desired_time_headway, reg.desired_time_headway);
  EXPECT_LT(reg.desired_time_headway, def.desired_time_headway);
  EXPECT_LT(agg.politeness, reg.politeness);
  EXPECT_LT(reg.politeness, def.politeness);
}

TEST(ScenarioModel, ValidateRejectsPartitionMismatch) {
  auto c = make_config("a");
  c.num_cars = 11;
  try {
    validate(c);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "num_cars");
  }
}

TEST(ScenarioModel, ValidateChecksRangesAndPair) {
  auto c = make_config("a");
  c.density = 0.0;
  EXPECT_THROW(validate(c), ValidationError);
  c.density = 60.0;
  EXPECT_NO_THROW(validate(c));
  c.density = 60.5;
  EXPECT_THROW(validate(c), ValidationError);

  auto p = with_pair(make_config("b"));
  EXPECT_NO_THROW(validate(p));
  p.critical_pair->vehicle_j.lane = 3;
  try {
    validate(p);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.field(), "vehicle_j.lane");
  }
  p = with_pair(make_config("b"));
  p.num_trucks = 0;
  p.num_cars = 12;
  EXPECT_THROW(validate(p), ValidationError);
}

TEST(ScenarioModel, LoadDatabaseOfSixty) {
  std::vector<ScenarioConfig> configs;
  for (int i = 0; i < 60; ++i) {
    auto c = sample_config(static_cast<std::uint64_t>(i));
    if (i % 3 == 0) c.critical_pair = with_pair(make_config("x")).critical_pair;
    // Make room for the pair's classes.
    if (c.critical_pair) {
      c.num_aggressive = std::max(c.num_aggressive, 1);
      c.num_defensive = std::max(c.num_defensive, 1);
      reconcile_partition(c, 0.3);
    }
    configs.push_back(c);
  }
  const auto path = temp_file("critical_db60.json", serialize_database(configs));
  const auto loaded = load_database(path);
  ASSERT_EQ(loaded.size(), 60u);
  EXPECT_EQ(loaded, configs);
}

TEST(ScenarioModel, EmptyDatabase) {
  const auto path = temp_file("critical_empty.json", "[]");
  EXPECT_TRUE(load_database(path).empty());
}

TEST(ScenarioModel, MalformedRecordNamesIndexAndField) {
  std::vector<ScenarioConfig> configs{make_config("a"), make_config("b"), make_config("c")};
  configs[2].num_cars = 3;  // partition violation
  try {
    parse_database(serialize_database(configs));
    FAIL() << "expected DatabaseError";
  } catch (const DatabaseError& e) {
    EXPECT_EQ(e.record(), 2u);
    EXPECT_EQ(e.field(), "num_cars");
  }

  const std::string missing = R"([{"id":"a","num_aggressive":1}])";
  try {
    parse_database(missing);
    FAIL();
  } catch (const DatabaseError& e) {
    EXPECT_EQ(e.record(), 0u);
    EXPECT_EQ(e.field(), "num_defensive");
  }

  const std::string wrong_type =
      R"([{"id":"a","num_aggressive":1,"num_defensive":"two","num_regular":0,)"
      R"("num_trucks":0,"num_cars":1,"density":5,"lane_count":2,"seed":1}])";
  try {
    parse_database(wrong_type);
    FAIL();
  } catch (const DatabaseError& e) {
    EXPECT_EQ(e.field(), "num_defensive");
  }

  EXPECT_THROW(parse_database("{not json"), DatabaseError);
  EXPECT_THROW(parse_database(R"({"id":"a"})"), DatabaseError);
}

TEST(ScenarioModel, DuplicateIdsRejected) {
  EXPECT_THROW(parse_database(serialize_database({make_config("a"), make_config("a")})),
               DatabaseError);
}

TEST(ScenarioModel, CanonicalKeyOrder) {
  const std::string text = serialize_database({with_pair(make_config("a"))});
  const std::vector<std::string> keys{"num_aggressive", "num_defensive", "num_regular",
                                      "num_trucks",     "num_cars",      "density",
                                      "\"id\"",         "lane_count",    "\"seed\"",
                                      "vehicle_i",      "vehicle_j"};
  std::size_t pos = 0;
  for (const auto& k : keys) {
    const auto found = text.find(k, pos);
    ASSERT_NE(found, std::string::npos) << k;
    pos = found;
  }
}

TEST(ScenarioModel, SerializationRoundTripProperty) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<ScenarioConfig> configs;
    const int n = uniform_int(rng, 0, 6);
    for (int k = 0; k < n; ++k) {
      auto c = sample_config(rng());
      c.density = uniform(rng, 1e-6, 60.0);
      if (uniform01(rng) < 0.5 && c.num_regular >= 2 && c.num_cars >= 2) {
        c.critical_pair = CriticalPair{
            VehicleSeed{uniform(rng, 0, 1000), 0, uniform(rng, 0, 60), uniform(rng, -8, 5),
                        Behavior::regular, VehicleKind::car},
            VehicleSeed{uniform(rng, 0, 1000), 1, uniform(rng, 0, 60), uniform(rng, -8, 5),
                        Behavior::regular, VehicleKind::car}};
      }
      c.id += "-" + std::to_string(k);
      configs.push_back(c);
    }
    const std::string text = serialize_database(configs);
    const auto parsed = parse_database(text);
    ASSERT_EQ(parsed, configs);
    ASSERT_EQ(serialize_database(parsed), text);
  }
}

TEST(ScenarioModel, SampleConfigDeterministic) {
  EXPECT_EQ(sample_config(7), sample_config(7));
  EXPECT_NE(sample_config(7), sample_config(8));
}

TEST(ScenarioModel, SampleConfigDegenerateRanges) {
  RangeTable r;
  r.num_aggressive = {2, 2};
  r.num_defensive = {2, 2};
  r.num_regular = {2, 2};
  r.num_trucks = {1, 1};
  r.num_cars = {5, 5};
  const auto c = sample_config(3, r);
  EXPECT_EQ(c.num_aggressive, 2);
  EXPECT_EQ(c.num_defensive, 2);
  EXPECT_EQ(c.num_regular, 2);
  EXPECT_EQ(c.num_trucks, 1);
  EXPECT_EQ(c.num_cars, 5);
}

TEST(ScenarioModel, SampleConfigSweep) {
  RangeTable r;
  r.num_aggressive = {1, 9};
  r.num_defensive = {0, 4};
  r.density = {5.0, 25.0};
  r.lane_count = {2, 3};
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto c = sample_config(s, r);
    ASSERT_TRUE(is_valid(c, r)) << s;
    ASSERT_EQ(c.num_trucks + c.num_cars, c.background_count());
    ASSERT_TRUE(r.num_aggressive.contains(c.num_aggressive));
    ASSERT_TRUE(r.density.contains(c.density));
    ASSERT_TRUE(r.lane_count.contains(c.lane_count));
  }
}

TEST(ScenarioModel, SampleConfigInfeasible) {
  RangeTable r;
  r.num_aggressive = {0, 0};
  r.num_defensive = {0, 0};
  r.num_regular = {0, 0};
  r.density = {5.0, 10.0};
  EXPECT_THROW(sample_config(1, r), ConfigError);

  RangeTable t;
  t.num_aggressive = {20, 30};
  t.num_trucks = {0, 5};
  t.num_cars = {0, 5};
  EXPECT_THROW(sample_config(1, t), ConfigError);

  RangeTable inverted;
  inverted.density = {10.0, 5.0};
  EXPECT_THROW(sample_config(1, inverted), ConfigError);
}

TEST(ScenarioModel, PerturbZeroScaleKeepsEverythingButId) {
  const auto base = with_pair(make_config("base"));
  const auto p = perturb_config(base, 0.0, 99);
  EXPECT_NE(p.id, base.id);
  EXPECT_TRUE(same_content(p, base));
}

TEST(ScenarioModel, PerturbClipsDensityAtMaximum) {
  auto base = make_config("base");
  base.density = 60.0;
  int at_max = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto p = perturb_config(base, 0.3, s);
    EXPECT_LE(p.density, 60.0);
    at_max += p.density == 60.0;
  }
  EXPECT_GT(at_max, 20);  // every positive draw clips
}

TEST(ScenarioModel, PerturbRespectsBoundProperty) {
  const RangeTable r;
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto base = sample_config(rng());
    if (base.num_aggressive >= 2 && base.num_cars >= 2) {
      base.critical_pair = CriticalPair{
          VehicleSeed{300, 0, 25, 0, Behavior::aggressive, VehicleKind::car},
          VehicleSeed{330, 0, 20, 0, Behavior::aggressive, VehicleKind::car}};
    }
    const double scale = uniform(rng, 0.01, 1.0);
    double sum_abs_density = 0.0;
    for (std::uint64_t s = 0; s < 500; ++s) {
      const auto p = perturb_config(base, scale, s);
      ASSERT_TRUE(is_valid(p, r));
      ASSERT_NE(p.id, base.id);
      auto within = [&](double a, double b, double width) {
        return std::abs(a - b) <= scale * width + 1e-9;
      };
      ASSERT_TRUE(within(p.num_aggressive, base.num_aggressive, 30));
      ASSERT_TRUE(within(p.num_defensive, base.num_defensive, 30));
      ASSERT_TRUE(within(p.num_regular, base.num_regular, 30));
      ASSERT_TRUE(within(p.num_trucks, base.num_trucks, 30));
      ASSERT_TRUE(within(p.num_cars, base.num_cars, 30));
      ASSERT_TRUE(within(p.density, base.density, 60));
      ASSERT_EQ(p.lane_count, base.lane_count);
      if (base.critical_pair) {
        const auto& bi = base.critical_pair->vehicle_i;
        const auto& pi = p.critical_pair->vehicle_i;
        ASSERT_TRUE(within(pi.x, bi.x, 1000));
        ASSERT_TRUE(within(pi.speed, bi.speed, 60));
        ASSERT_TRUE(within(pi.acceleration, bi.acceleration, 13));
      }
      sum_abs_density += std::abs(p.density - base.density);
    }
    EXPECT_LE(sum_abs_density / 500, scale * 60.0);
  }
}

TEST(ScenarioModel, PerturbRejectsBadScale) {
  EXPECT_THROW(perturb_config(make_config("a"), 1.5, 1), std::invalid_argument);
  EXPECT_THROW(perturb_config(make_config("a"), -0.1, 1), std::invalid_argument);
}

TEST(ScenarioModel, ReconcileKeepsBehaviorCounts) {
  auto c = make_config("a");
  c.num_aggressive = 20;
  c.num_defensive = 20;
  c.num_regular = 10;  // total 50
  reconcile_partition(c, 0.1);
  EXPECT_EQ(c.num_trucks + c.num_cars, 50);
  EXPECT_EQ(c.num_cars, 30);  // proportional split would give 45 cars, capped at range max
  EXPECT_TRUE(is_valid(c));
  c.num_aggressive = 30;
  c.num_defensive = 30;
  c.num_regular = 30;
  EXPECT_THROW(reconcile_partition(c, 0.5), ValidationError);
}
