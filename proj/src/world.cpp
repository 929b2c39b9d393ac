#include "critical/world.hpp"

#include <cmath>

namespace critical {

double ring_delta(double from, double to, double road_length) {
  double d = std::fmod(to - from, road_length);
  if (d < -road_length / 2) d += road_length;
  if (d >= road_length / 2) d -= road_length;
  return d;
}

double wrap_position(double x, double road_length) {
  double r = std::fmod(x, road_length);
  if (r < 0) r += road_length;
  if (r >= road_length) r -= road_length;
  return r;
}

bool overlap(const VehicleState& a, const VehicleState& b, double road_length) {
  const double dx = std::abs(ring_delta(a.x, b.x, road_length));
  const double dy = std::abs(a.y - b.y);
  return dx < (a.length + b.length) / 2 && dy < (a.width + b.width) / 2;
}

namespace {

template <class Better>
std::optional<Neighbor> scan(const WorldState& w, const VehicleState& self, int lane,
                             bool exclude_ego, Better better) {
  std::optional<Neighbor> best;
  auto consider = [&](const VehicleState& o) {
    if (o.id == self.id || !occupies_lane(o, lane)) return;
    const double d = ring_delta(self.x, o.x, w.road_length);
    if (!better(d, best ? best->delta : 0.0, best.has_value())) return;
    best = Neighbor{&o, d, std::abs(d) - (self.length + o.length) / 2};
  };
  if (!exclude_ego) consider(w.ego);
  for (const auto& o : w.others) consider(o);
  return best;
}

}  // namespace

std::optional<Neighbor> find_leader(const WorldState& w, const VehicleState& self, int lane,
                                    bool exclude_ego) {
  return scan(w, self, lane, exclude_ego, [](double d, double cur, bool has) {
    return d > 0.0 && (!has || d < cur);
  });
}

std::optional<Neighbor> find_follower(const WorldState& w, const VehicleState& self, int lane,
                                      bool exclude_ego) {
  return scan(w, self, lane, exclude_ego, [](double d, double cur, bool has) {
    return d <= 0.0 && (!has || d > cur);
  });
}

std::optional<Neighbor> nearest_lane_neighbor(const WorldState& w) {
  std::optional<Neighbor> best;
  const VehicleState& ego = w.ego;
  for (const auto& o : w.others) {
    if (std::abs(o.lane - ego.lane) != 1) continue;
    const double d = ring_delta(ego.x, o.x, w.road_length);
    if (best) {
      const double cur = std::abs(best->delta);
      if (std::abs(d) > cur || (std::abs(d) == cur && o.id > best->vehicle->id)) continue;
    }
    best = Neighbor{&o, d, std::abs(d) - (ego.length + o.length) / 2};
  }
  return best;
}

}  // namespace critical
