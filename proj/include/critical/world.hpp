#pragma once

#include <optional>
#include <vector>

#include "critical/scenario.hpp"

namespace critical {

struct VehicleState {
  int id = 0;  // ego is always 0
  double x = 0.0;  // longitudinal center position [m]
  int lane = 0;    // lane whose center is nearest to y
  double y = 0.0;  // lateral center position [m], lane k centered at k * lane_width
  double vx = 0.0;
  double vy = 0.0;
  double ax = 0.0;
  Behavior behavior = Behavior::regular;
  VehicleKind kind = VehicleKind::car;
  double length = 5.0;
  double width = 2.0;
  int target_lane = 0;
  double target_speed = 25.0;  // ego: controller set point; background: desired speed
  bool crashed = false;

  bool changing_lane() const { return target_lane != lane || vy != 0.0; }
  bool operator==(const VehicleState&) const = default;
};

/// Full scene on a ring road of road_length meters.
struct WorldState {
  double time = 0.0;
  int steps = 0;  // policy steps taken
  VehicleState ego;
  std::vector<VehicleState> others;
  int lane_count = 3;
  double lane_width = 4.0;
  double road_length = 1000.0;

  bool operator==(const WorldState&) const = default;
};

/// Signed shortest displacement from `from` to `to` along the ring, in
/// [-road_length/2, road_length/2).
double ring_delta(double from, double to, double road_length);

/// Wraps a position into [0, road_length).
double wrap_position(double x, double road_length);

/// Axis-aligned rectangle overlap on the ring. Symmetric in its arguments.
bool overlap(const VehicleState& a, const VehicleState& b, double road_length);

/// True if the vehicle occupies lane `lane` (its current or its target lane).
inline bool occupies_lane(const VehicleState& v, int lane) {
  return v.lane == lane || v.target_lane == lane;
}

struct Neighbor {
  const VehicleState* vehicle = nullptr;
  double delta = 0.0;  // signed center displacement from the reference vehicle
  double gap = 0.0;    // bumper-to-bumper distance, may be negative on overlap
};

/// Nearest vehicle strictly ahead of `self` that occupies `lane`.
/// `exclude_ego` skips the ego vehicle.
std::optional<Neighbor> find_leader(const WorldState& w, const VehicleState& self, int lane,
                                    bool exclude_ego = false);
std::optional<Neighbor> find_follower(const WorldState& w, const VehicleState& self, int lane,
                                      bool exclude_ego = false);

/// Vehicle in a lane adjacent to the ego lane minimizing |dx| (ties: lower id).
std::optional<Neighbor> nearest_lane_neighbor(const WorldState& w);

}  // namespace critical
