#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "critical/risk_metrics.hpp"
#include "critical/scenario.hpp"
#include "critical/world.hpp"

namespace critical {

enum class Action { lane_left = 0, idle = 1, lane_right = 2, faster = 3, slower = 4 };
inline constexpr int kActionCount = 5;

std::string_view to_string(Action a);

struct SimParams {
  int sim_frequency = 15;     // integration substeps per second
  int policy_frequency = 1;   // decisions per second
  double lane_width = 4.0;
  double road_length = 1000.0;
  double lane_change_duration = 1.0;  // [s]
  int max_episode_steps = 120;

  // Spawning.
  double min_initial_gap = 10.0;  // bumper-to-bumper [m]
  double ego_front_clearance = 25.0;
  double ego_rear_clearance = 15.0;
  double ego_initial_speed = 25.0;
  std::optional<int> ego_lane;  // random when unset

  // Ego low-level control.
  double speed_step = 5.0;
  double ego_speed_min = 10.0;
  double ego_speed_max = 35.0;
  double speed_gain = 1.0 / 0.6;  // proportional speed controller [1/s]
  double ego_max_acceleration = 5.0;
  double max_braking = 8.0;

  // Background vehicles.
  double idm_min_gap = 2.0;
  double idm_exponent = 4.0;
  double mobil_safe_braking = 4.0;
  double truck_max_speed = 25.0;
  /// When false the ego is invisible to background traffic and never collides.
  bool ego_interacts = true;

  // Reward.
  double reward_speed_low = 20.0;
  double reward_speed_high = 30.0;
  double speed_reward_weight = 0.6;
  double crash_reward = -1.0;
  double lane_change_reward = -0.05;

  // Observation.
  int observed_vehicles = 5;
  double obs_distance_scale = 100.0;
  double obs_speed_scale = 30.0;
  double obs_lateral_scale = 12.0;

  RiskMetricParams risk;
};

class SpawnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds the initial world for a configuration. Background vehicles are
/// spaced according to the density, critical-pair vehicles are placed as
/// seeded. Randomness comes from `seed` (config.seed when omitted).
WorldState spawn(const ScenarioConfig& config, const SimParams& params = {});
WorldState spawn(const ScenarioConfig& config, std::uint64_t seed, const SimParams& params);

struct StepResult {
  WorldState world;
  double reward = 0.0;
  bool done = false;
  bool crashed = false;
  bool truncated = false;
  bool lane_changed = false;
  RiskStepInfo info;
};

/// Advances one policy step (sim_frequency / policy_frequency substeps).
StepResult step(const WorldState& world, Action ego_action, const SimParams& params = {});

std::size_t observation_size(const SimParams& params = {});

/// Ego features followed by the K nearest vehicles, each as
/// (presence, dx, dlateral, dvx, dvy), clipped to [-1, 1].
std::vector<double> observe(const WorldState& world, const SimParams& params = {});

/// Longitudinal acceleration of a background vehicle under IDM.
double idm_acceleration(const VehicleState& self, const VehicleState* leader, double gap,
                        const SimParams& params);

using Policy = std::function<Action(const WorldState&)>;

struct EpisodeResult {
  double total_reward = 0.0;
  int length = 0;
  bool crashed = false;
  RiskReport risk;
  std::vector<WorldState> trace;  // empty unless requested

  bool operator==(const EpisodeResult&) const = default;
};

struct EpisodeOptions {
  int max_steps = 120;
  bool record_trace = false;
  std::optional<std::uint64_t> spawn_seed;  // config.seed when unset
};

EpisodeResult run_episode(const ScenarioConfig& config, const Policy& policy,
                          const EpisodeOptions& options = {}, const SimParams& params = {});

/// One line per world state: time, then all vehicles (ego included) sorted by id.
std::string trace_line(const WorldState& world);
void write_trace(std::ostream& out, const std::vector<WorldState>& trace);

}  // namespace critical
