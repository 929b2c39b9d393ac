#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace critical {

enum class Behavior { aggressive, defensive, regular };
enum class VehicleKind { car, truck };

std::string_view to_string(Behavior b);
std::string_view to_string(VehicleKind k);
/// Throws std::invalid_argument on unknown names.
Behavior parse_behavior(std::string_view name);
VehicleKind parse_kind(std::string_view name);

/// Initial state of one explicitly placed vehicle (one half of a critical pair).
struct VehicleSeed {
  double x = 0.0;  // longitudinal position [m]
  int lane = 0;
  double speed = 0.0;         // [m/s]
  double acceleration = 0.0;  // [m/s^2]
  Behavior behavior = Behavior::regular;
  VehicleKind kind = VehicleKind::car;

  bool operator==(const VehicleSeed&) const = default;
};

struct CriticalPair {
  VehicleSeed vehicle_i;
  VehicleSeed vehicle_j;

  bool operator==(const CriticalPair&) const = default;
};

/// One environment configuration. Background vehicles are counted twice:
/// once by behavior class and once by vehicle type, and both partitions must
/// sum to the same total. Critical-pair vehicles are part of that total.
struct ScenarioConfig {
  std::string id;
  int num_aggressive = 0;
  int num_defensive = 0;
  int num_regular = 0;
  int num_trucks = 0;
  int num_cars = 0;
  double density = 20.0;  // vehicles per km per lane
  int lane_count = 3;
  std::uint64_t seed = 0;
  std::optional<CriticalPair> critical_pair;

  int background_count() const { return num_aggressive + num_defensive + num_regular; }
  int count_of(Behavior b) const;

  bool operator==(const ScenarioConfig&) const = default;
};

/// Same content, ignoring the identifier.
bool same_content(const ScenarioConfig& a, const ScenarioConfig& b);

/// IDM / MOBIL parameters of a behavior class.
struct BehaviorParams {
  double politeness = 0.3;
  double desired_time_headway = 1.5;      // [s]
  double max_acceleration = 3.0;          // [m/s^2]
  double comfortable_deceleration = 3.0;  // [m/s^2]
  double desired_speed = 28.0;            // [m/s]
  double lane_change_threshold = 0.2;     // [m/s^2]
};

BehaviorParams behavior_params(Behavior b);

template <class T>
struct Range {
  T min{};
  T max{};

  bool contains(T v) const { return v >= min && v <= max; }
  T width() const { return max - min; }
  T clamp(T v) const { return v < min ? min : (v > max ? max : v); }
};

/// Valid value ranges for every configuration field. The density lower bound
/// is inclusive but density must additionally be strictly positive.
struct RangeTable {
  Range<int> num_aggressive{0, 30};
  Range<int> num_defensive{0, 30};
  Range<int> num_regular{0, 30};
  Range<int> num_trucks{0, 30};
  Range<int> num_cars{0, 30};
  Range<double> density{0.0, 60.0};
  Range<int> lane_count{2, 4};
  Range<double> position{0.0, 1000.0};
  Range<double> speed{0.0, 60.0};
  Range<double> acceleration{-8.0, 5.0};

  bool density_ok(double d) const { return d > 0.0 && density.contains(d); }
};

class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string field, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class DatabaseError : public std::runtime_error {
 public:
  DatabaseError(std::size_t record, std::string field, const std::string& what)
      : std::runtime_error(what), record_(record), field_(std::move(field)) {}
  std::size_t record() const { return record_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t record_;
  std::string field_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws ValidationError naming the first offending field.
void validate(const ScenarioConfig& config, const RangeTable& ranges = {});
bool is_valid(const ScenarioConfig& config, const RangeTable& ranges = {});

/// Re-derives the truck/car split from the behavior counts (which are
/// authoritative). Trucks get round(total * truck_fraction), adjusted so that
/// both type counts stay in range and the critical-pair vehicles fit.
/// Throws ValidationError when no split satisfies the ranges.
void reconcile_partition(ScenarioConfig& config, double truck_fraction,
                         const RangeTable& ranges = {});

// Serialization. Keys are written in canonical (feature table) order.
nlohmann::ordered_json to_json(const VehicleSeed& seed);
nlohmann::ordered_json to_json(const ScenarioConfig& config);
/// Throws DatabaseError(record_index, field) on malformed input.
ScenarioConfig config_from_json(const nlohmann::json& j, std::size_t record_index = 0);

std::string serialize_database(const std::vector<ScenarioConfig>& configs);
/// Parses and validates. Throws DatabaseError on malformed or invalid records.
std::vector<ScenarioConfig> parse_database(std::string_view text, const RangeTable& ranges = {});
std::vector<ScenarioConfig> load_database(const std::filesystem::path& path,
                                          const RangeTable& ranges = {});
void save_database(const std::filesystem::path& path, const std::vector<ScenarioConfig>& configs);

/// Draws a random valid configuration (no critical pair). Throws ConfigError
/// if the ranges cannot produce one.
ScenarioConfig sample_config(std::uint64_t rng_seed, const RangeTable& ranges = {});

/// Moves every perturbable numeric field by at most scale * (range width),
/// clipped to range, then restores the type partition proportionally. The
/// result carries a fresh id derived from the base id and rng_seed.
/// Lane count and spawn seed are kept; a critical pair is shifted rigidly
/// along the road so its internal gap is preserved.
ScenarioConfig perturb_config(const ScenarioConfig& base, double scale, std::uint64_t rng_seed,
                              const RangeTable& ranges = {});

}  // namespace critical
