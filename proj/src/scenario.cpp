#include "critical/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "critical/rng.hpp"

namespace critical {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::aggressive: return "aggressive";
    case Behavior::defensive: return "defensive";
    case Behavior::regular: return "regular";
  }
  return "regular";
}

std::string_view to_string(VehicleKind k) { return k == VehicleKind::truck ? "truck" : "car"; }

Behavior parse_behavior(std::string_view name) {
  if (name == "aggressive") return Behavior::aggressive;
  if (name == "defensive") return Behavior::defensive;
  if (name == "regular" || name == "normal") return Behavior::regular;
  throw std::invalid_argument("unknown behavior class '" + std::string(name) + "'");
}

VehicleKind parse_kind(std::string_view name) {
  if (name == "car" || name == "Car") return VehicleKind::car;
  if (name == "truck" || name == "Truck") return VehicleKind::truck;
  throw std::invalid_argument("unknown vehicle kind '" + std::string(name) + "'");
}

int ScenarioConfig::count_of(Behavior b) const {
  switch (b) {
    case Behavior::aggressive: return num_aggressive;
    case Behavior::defensive: return num_defensive;
    case Behavior::regular: return num_regular;
  }
  return 0;
}

bool same_content(const ScenarioConfig& a, const ScenarioConfig& b) {
  ScenarioConfig bb = b;
  bb.id = a.id;
  return a == bb;
}

BehaviorParams behavior_params(Behavior b) {
  switch (b) {
    case Behavior::aggressive:
      return {.politeness = 0.0,
              .desired_time_headway = 0.8,
              .max_acceleration = 4.0,
              .comfortable_deceleration = 4.0,
              .desired_speed = 33.0,
              .lane_change_threshold = 0.1};
    case Behavior::defensive:
      return {.politeness = 0.7,
              .desired_time_headway = 2.5,
              .max_acceleration = 2.0,
              .comfortable_deceleration = 2.5,
              .desired_speed = 23.0,
              .lane_change_threshold = 0.3};
    case Behavior::regular:
      break;
  }
  return {.politeness = 0.3,
          .desired_time_headway = 1.5,
          .max_acceleration = 3.0,
          .comfortable_deceleration = 3.0,
          .desired_speed = 28.0,
          .lane_change_threshold = 0.2};
}

namespace {

struct PairDemand {
  std::array<int, 3> behavior{0, 0, 0};  // indexed by Behavior
  int trucks = 0;
  int cars = 0;
};

PairDemand pair_demand(const ScenarioConfig& c) {
  PairDemand d;
  if (!c.critical_pair) return d;
  for (const VehicleSeed* s : {&c.critical_pair->vehicle_i, &c.critical_pair->vehicle_j}) {
    ++d.behavior[static_cast<int>(s->behavior)];
    (s->kind == VehicleKind::truck ? d.trucks : d.cars)++;
  }
  return d;
}

void check_count(const char* field, int value, const Range<int>& r) {
  if (!r.contains(value)) {
    throw ValidationError(field, std::string(field) + " = " + std::to_string(value) +
                                     " outside [" + std::to_string(r.min) + ", " +
                                     std::to_string(r.max) + "]");
  }
}

void check_real(const std::string& field, double value, const Range<double>& r) {
  if (!std::isfinite(value) || !r.contains(value)) {
    std::ostringstream os;
    os << field << " = " << value << " outside [" << r.min << ", " << r.max << "]";
    throw ValidationError(field, os.str());
  }
}

void check_seed(const std::string& prefix, const VehicleSeed& s, int lane_count,
                const RangeTable& ranges) {
  if (s.lane < 0 || s.lane >= lane_count) {
    throw ValidationError(prefix + ".lane", prefix + ".lane = " + std::to_string(s.lane) +
                                                " not a lane of a " + std::to_string(lane_count) +
                                                "-lane road");
  }
  check_real(prefix + ".x", s.x, ranges.position);
  check_real(prefix + ".speed", s.speed, ranges.speed);
  check_real(prefix + ".acceleration", s.acceleration, ranges.acceleration);
}

}  // namespace

void validate(const ScenarioConfig& c, const RangeTable& ranges) {
  if (c.id.empty()) throw ValidationError("id", "id must be non-empty");
  check_count("num_aggressive", c.num_aggressive, ranges.num_aggressive);
  check_count("num_defensive", c.num_defensive, ranges.num_defensive);
  check_count("num_regular", c.num_regular, ranges.num_regular);
  check_count("num_trucks", c.num_trucks, ranges.num_trucks);
  check_count("num_cars", c.num_cars, ranges.num_cars);
  if (c.num_trucks + c.num_cars != c.background_count()) {
    throw ValidationError("num_cars", "num_trucks + num_cars = " +
                                          std::to_string(c.num_trucks + c.num_cars) +
                                          " differs from behavior total " +
                                          std::to_string(c.background_count()));
  }
  if (!ranges.density_ok(c.density) || !std::isfinite(c.density)) {
    std::ostringstream os;
    os << "density = " << c.density << " outside (0, " << ranges.density.max << "]";
    throw ValidationError("density", os.str());
  }
  check_count("lane_count", c.lane_count, ranges.lane_count);
  if (c.critical_pair) {
    check_seed("vehicle_i", c.critical_pair->vehicle_i, c.lane_count, ranges);
    check_seed("vehicle_j", c.critical_pair->vehicle_j, c.lane_count, ranges);
    const PairDemand d = pair_demand(c);
    for (Behavior b : {Behavior::aggressive, Behavior::defensive, Behavior::regular}) {
      if (c.count_of(b) < d.behavior[static_cast<int>(b)]) {
        const std::string field = "num_" + std::string(to_string(b));
        throw ValidationError(field, field + " too small to hold the critical pair");
      }
    }
    if (c.num_trucks < d.trucks) {
      throw ValidationError("num_trucks", "num_trucks too small to hold the critical pair");
    }
    if (c.num_cars < d.cars) {
      throw ValidationError("num_cars", "num_cars too small to hold the critical pair");
    }
  }
}

bool is_valid(const ScenarioConfig& config, const RangeTable& ranges) {
  try {
    validate(config, ranges);
    return true;
  } catch (const ValidationError&) {
    return false;
  }
}

void reconcile_partition(ScenarioConfig& c, double truck_fraction, const RangeTable& ranges) {
  const PairDemand d = pair_demand(c);
  const int total = c.background_count();
  const int lo = std::max({ranges.num_trucks.min, total - ranges.num_cars.max, d.trucks});
  const int hi = std::min({ranges.num_trucks.max, total - ranges.num_cars.min, total - d.cars});
  if (lo > hi) {
    throw ValidationError("num_trucks", "no truck/car split of " + std::to_string(total) +
                                            " vehicles fits the valid ranges");
  }
  const double frac = std::clamp(std::isfinite(truck_fraction) ? truck_fraction : 0.0, 0.0, 1.0);
  const int trucks = static_cast<int>(std::lround(frac * total));
  c.num_trucks = std::clamp(trucks, lo, hi);
  c.num_cars = total - c.num_trucks;
}

ordered_json to_json(const VehicleSeed& s) {
  ordered_json j;
  j["x"] = s.x;
  j["lane"] = s.lane;
  j["speed"] = s.speed;
  j["acceleration"] = s.acceleration;
  j["behavior"] = std::string(to_string(s.behavior));
  j["kind"] = std::string(to_string(s.kind));
  return j;
}

ordered_json to_json(const ScenarioConfig& c) {
  ordered_json j;
  j["num_aggressive"] = c.num_aggressive;
  j["num_defensive"] = c.num_defensive;
  j["num_regular"] = c.num_regular;
  j["num_trucks"] = c.num_trucks;
  j["num_cars"] = c.num_cars;
  j["density"] = c.density;
  j["id"] = c.id;
  j["lane_count"] = c.lane_count;
  j["seed"] = c.seed;
  if (c.critical_pair) {
    j["vehicle_i"] = to_json(c.critical_pair->vehicle_i);
    j["vehicle_j"] = to_json(c.critical_pair->vehicle_j);
  }
  return j;
}

namespace {

[[noreturn]] void malformed(std::size_t index, const std::string& field, const std::string& why) {
  throw DatabaseError(index, field,
                      "record " + std::to_string(index) + ": field '" + field + "' " + why);
}

const json& require(const json& obj, const std::string& key, std::size_t index,
                    const std::string& prefix = "") {
  const auto it = obj.find(key);
  if (it == obj.end()) malformed(index, prefix + key, "is missing");
  return *it;
}

int read_int(const json& obj, const std::string& key, std::size_t index,
             const std::string& prefix = "") {
  const json& v = require(obj, key, index, prefix);
  if (!v.is_number_integer()) malformed(index, prefix + key, "must be an integer");
  const auto n = v.get<std::int64_t>();
  if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
    malformed(index, prefix + key, "is out of integer range");
  }
  return static_cast<int>(n);
}

double read_real(const json& obj, const std::string& key, std::size_t index,
                 const std::string& prefix = "") {
  const json& v = require(obj, key, index, prefix);
  if (!v.is_number()) malformed(index, prefix + key, "must be a number");
  return v.get<double>();
}

VehicleSeed read_seed(const json& j, const std::string& name, std::size_t index) {
  if (!j.is_object()) malformed(index, name, "must be an object");
  const std::string prefix = name + ".";
  VehicleSeed s;
  s.x = read_real(j, "x", index, prefix);
  s.lane = read_int(j, "lane", index, prefix);
  s.speed = read_real(j, "speed", index, prefix);
  s.acceleration = read_real(j, "acceleration", index, prefix);
  const json& behavior = require(j, "behavior", index, prefix);
  const json& kind = require(j, "kind", index, prefix);
  if (!behavior.is_string()) malformed(index, prefix + "behavior", "must be a string");
  if (!kind.is_string()) malformed(index, prefix + "kind", "must be a string");
  try {
    s.behavior = parse_behavior(behavior.get<std::string>());
  } catch (const std::invalid_argument& e) {
    malformed(index, prefix + "behavior", e.what());
  }
  try {
    s.kind = parse_kind(kind.get<std::string>());
  } catch (const std::invalid_argument& e) {
    malformed(index, prefix + "kind", e.what());
  }
  return s;
}

}  // namespace

ScenarioConfig config_from_json(const json& j, std::size_t index) {
  if (!j.is_object()) malformed(index, "", "record is not an object");
  ScenarioConfig c;
  const json& id = require(j, "id", index);
  if (!id.is_string()) malformed(index, "id", "must be a string");
  c.id = id.get<std::string>();
  c.num_aggressive = read_int(j, "num_aggressive", index);
  c.num_defensive = read_int(j, "num_defensive", index);
  c.num_regular = read_int(j, "num_regular", index);
  c.num_trucks = read_int(j, "num_trucks", index);
  c.num_cars = read_int(j, "num_cars", index);
  c.density = read_real(j, "density", index);
  c.lane_count = read_int(j, "lane_count", index);
  const json& seed = require(j, "seed", index);
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    malformed(index, "seed", "must be a non-negative integer");
  }
  c.seed = seed.get<std::uint64_t>();
  const bool has_i = j.contains("vehicle_i");
  const bool has_j = j.contains("vehicle_j");
  if (has_i != has_j) malformed(index, has_i ? "vehicle_j" : "vehicle_i", "is missing (pair)");
  if (has_i) {
    c.critical_pair = CriticalPair{read_seed(j.at("vehicle_i"), "vehicle_i", index),
                                   read_seed(j.at("vehicle_j"), "vehicle_j", index)};
  }
  return c;
}

std::string serialize_database(const std::vector<ScenarioConfig>& configs) {
  ordered_json arr = ordered_json::array();
  for (const auto& c : configs) arr.push_back(to_json(c));
  return arr.dump(2) + "\n";
}

std::vector<ScenarioConfig> parse_database(std::string_view text, const RangeTable& ranges) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DatabaseError(0, "", std::string("database is not well-formed: ") + e.what());
  }
  if (!doc.is_array()) throw DatabaseError(0, "", "database must be an array of configurations");
  std::vector<ScenarioConfig> out;
  out.reserve(doc.size());
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    ScenarioConfig c = config_from_json(doc[i], i);
    try {
      validate(c, ranges);
    } catch (const ValidationError& e) {
      throw DatabaseError(i, e.field(), "record " + std::to_string(i) + ": " + e.what());
    }
    if (!ids.insert(c.id).second) malformed(i, "id", "duplicates an earlier record ('" + c.id + "')");
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ScenarioConfig> load_database(const std::filesystem::path& path,
                                          const RangeTable& ranges) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open scenario database " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_database(buf.str(), ranges);
}

void save_database(const std::filesystem::path& path, const std::vector<ScenarioConfig>& configs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write scenario database " + path.string());
  out << serialize_database(configs);
}

namespace {

std::string hex_id(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

bool ordered(const Range<int>& r) { return r.min <= r.max; }
bool ordered(const Range<double>& r) { return r.min <= r.max; }

}  // namespace

ScenarioConfig sample_config(std::uint64_t rng_seed, const RangeTable& ranges) {
  const auto& ra = ranges.num_aggressive;
  const auto& rd = ranges.num_defensive;
  const auto& rr = ranges.num_regular;
  const auto& rt = ranges.num_trucks;
  const auto& rc = ranges.num_cars;
  if (!ordered(ra) || !ordered(rd) || !ordered(rr) || !ordered(rt) || !ordered(rc) ||
      !ordered(ranges.density) || !ordered(ranges.lane_count) || ra.min < 0 || rd.min < 0 ||
      rr.min < 0 || rt.min < 0 || rc.min < 0) {
    throw ConfigError("range table has an inverted or negative range");
  }
  if (ranges.density.max <= 0.0) throw ConfigError("density range admits no positive value");
  if (ranges.lane_count.max < 2 || ranges.lane_count.min < 1) {
    throw ConfigError("lane_count range admits no road with at least two lanes");
  }
  const int behavior_max = ra.max + rd.max + rr.max;
  if (behavior_max == 0 && ranges.density.min > 0.0) {
    throw ConfigError("ranges admit no vehicles but require a positive minimum density");
  }
  const int total_lo = std::max(ra.min + rd.min + rr.min, rt.min + rc.min);
  const int total_hi = std::min(behavior_max, rt.max + rc.max);
  if (total_lo > total_hi) {
    throw ConfigError("behavior-count and vehicle-type ranges admit no common total");
  }

  Rng rng(rng_seed);
  ScenarioConfig c;
  const int total = uniform_int(rng, total_lo, total_hi);
  c.num_aggressive = uniform_int(rng, std::max(ra.min, total - rd.max - rr.max),
                                 std::min(ra.max, total - rd.min - rr.min));
  const int rest = total - c.num_aggressive;
  c.num_defensive = uniform_int(rng, std::max(rd.min, rest - rr.max), std::min(rd.max, rest - rr.min));
  c.num_regular = rest - c.num_defensive;
  c.num_trucks = uniform_int(rng, std::max(rt.min, total - rc.max), std::min(rt.max, total - rc.min));
  c.num_cars = total - c.num_trucks;
  // (min, max]: 1 - u lies in (0, 1].
  c.density = ranges.density.min + (1.0 - uniform01(rng)) * ranges.density.width();
  c.lane_count = uniform_int(rng, std::max(2, ranges.lane_count.min), ranges.lane_count.max);
  c.seed = rng();
  c.id = "sample-" + hex_id(rng_seed);
  validate(c, ranges);
  return c;
}

namespace {

// Signed draw in [-bound, bound], truncated toward zero for integer fields so
// the magnitude never exceeds the bound.
int int_step(Rng& rng, double bound) {
  return static_cast<int>(std::trunc(uniform(rng, -1.0, 1.0) * bound));
}

}  // namespace

ScenarioConfig perturb_config(const ScenarioConfig& base, double scale, std::uint64_t rng_seed,
                              const RangeTable& ranges) {
  if (!(scale >= 0.0 && scale <= 1.0)) {
    throw std::invalid_argument("perturbation scale must lie in [0, 1]");
  }
  Rng rng(rng_seed);
  ScenarioConfig out = base;
  out.id = base.id + "~" + hex_id(rng_seed).substr(8);
  if (out.id == base.id) out.id += "'";

  const PairDemand demand = pair_demand(base);
  std::array<int*, 3> counts{&out.num_aggressive, &out.num_defensive, &out.num_regular};
  std::array<const Range<int>*, 3> count_ranges{&ranges.num_aggressive, &ranges.num_defensive,
                                                &ranges.num_regular};
  std::array<int, 3> delta{};
  for (std::size_t i = 0; i < 3; ++i) {
    const Range<int>& r = *count_ranges[i];
    const int lo = std::max(r.min, demand.behavior[i]);
    const int moved = std::clamp(*counts[i] + int_step(rng, scale * r.width()), lo, r.max);
    delta[i] = moved - *counts[i];
    *counts[i] = moved;
  }
  // The type split is re-derived below and may itself move by at most the
  // per-type bound, so the total may move by at most the sum of both bounds.
  // Overshooting moves are partially undone; every count stays between its
  // base value and its draw.
  const int base_total = base.background_count();
  const int truck_bound = static_cast<int>(std::floor(scale * ranges.num_trucks.width()));
  const int car_bound = static_cast<int>(std::floor(scale * ranges.num_cars.width()));
  const int total_hi = std::min(ranges.num_trucks.max + ranges.num_cars.max,
                                base_total + truck_bound + car_bound);
  const int total_lo = std::max(ranges.num_trucks.min + ranges.num_cars.min,
                                base_total - truck_bound - car_bound);
  for (std::size_t i = 0; i < 3 && out.background_count() > total_hi; ++i) {
    if (delta[i] <= 0) continue;
    *counts[i] -= std::min(delta[i], out.background_count() - total_hi);
  }
  for (std::size_t i = 0; i < 3 && out.background_count() < total_lo; ++i) {
    if (delta[i] >= 0) continue;
    *counts[i] += std::min(-delta[i], total_lo - out.background_count());
  }

  const double density_lo = std::max(ranges.density.min, 1e-3);
  out.density = std::clamp(base.density + uniform(rng, -1.0, 1.0) * scale * ranges.density.width(),
                           density_lo, ranges.density.max);
  if (scale == 0.0) out.density = base.density;

  if (out.critical_pair) {
    VehicleSeed& vi = out.critical_pair->vehicle_i;
    VehicleSeed& vj = out.critical_pair->vehicle_j;
    const double lo = ranges.position.min - std::min(vi.x, vj.x);
    const double hi = ranges.position.max - std::max(vi.x, vj.x);
    const double shift =
        std::clamp(uniform(rng, -1.0, 1.0) * scale * ranges.position.width(), lo, hi);
    for (VehicleSeed* s : {&vi, &vj}) {
      s->x += shift;
      s->speed = ranges.speed.clamp(s->speed + uniform(rng, -1.0, 1.0) * scale * ranges.speed.width());
      s->acceleration = ranges.acceleration.clamp(
          s->acceleration + uniform(rng, -1.0, 1.0) * scale * ranges.acceleration.width());
    }
  }

  const double truck_fraction =
      base_total > 0 ? static_cast<double>(base.num_trucks) / base_total : 0.0;
  const int total = out.background_count();
  const PairDemand d = pair_demand(out);
  const int lo = std::max({ranges.num_trucks.min, total - ranges.num_cars.max, d.trucks,
                           base.num_trucks - truck_bound, total - base.num_cars - car_bound});
  const int hi = std::min({ranges.num_trucks.max, total - ranges.num_cars.min, total - d.cars,
                           base.num_trucks + truck_bound, total - base.num_cars + car_bound});
  if (lo <= hi) {
    out.num_trucks = std::clamp(static_cast<int>(std::lround(truck_fraction * total)), lo, hi);
    out.num_cars = total - out.num_trucks;
  } else {
    out.num_aggressive = base.num_aggressive;
    out.num_defensive = base.num_defensive;
    out.num_regular = base.num_regular;
    out.num_trucks = base.num_trucks;
    out.num_cars = base.num_cars;
  }
  validate(out, ranges);
  return out;
}

}  // namespace critical
