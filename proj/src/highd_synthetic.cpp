#include <algorithm>
#include <cmath>
#include <random>

#include "critical/highd.hpp"
#include "critical/rng.hpp"

namespace critical::highd {

namespace {

struct Style {
  double headway;   // [s]
  double a_max;     // [m/s^2]
  double b_comf;    // [m/s^2]
  double noise;     // std of the per-frame acceleration noise [m/s^2]
  double eagerness; // probability per second of acting on a lane-change opportunity
};

Style style_of(Behavior b) {
  switch (b) {
    case Behavior::aggressive: return {0.8, 2.5, 3.0, 0.5, 1.0};
    case Behavior::defensive: return {2.0, 1.0, 1.5, 0.1, 0.05};
    case Behavior::regular: break;
  }
  return {1.4, 1.5, 2.0, 0.25, 0.4};
}

struct Agent {
  int id = 0;
  Behavior behavior = Behavior::regular;
  VehicleKind kind = VehicleKind::car;
  Style style;
  double length = 4.6;
  double width = 1.9;
  double desired = 30.0;
  double x = 0.0;  // center
  double v = 0.0;
  double a = 0.0;
  int lane = 0;  // 0-based
  int home_lane = 0;  // fast styles keep left, slow ones right
  bool active = false;
  bool done = false;
  VehicleTrack track;
};

double lane_center(int lane) { return 4.0 * lane + 2.0; }

// Nearest active agent ahead of / behind position x in a lane.
const Agent* ahead(const std::vector<Agent>& agents, const Agent& self, int lane) {
  const Agent* best = nullptr;
  for (const auto& o : agents) {
    if (!o.active || &o == &self || o.lane != lane || o.x <= self.x) continue;
    if (!best || o.x < best->x) best = &o;
  }
  return best;
}

const Agent* behind(const std::vector<Agent>& agents, const Agent& self, int lane) {
  const Agent* best = nullptr;
  for (const auto& o : agents) {
    if (!o.active || &o == &self || o.lane != lane || o.x > self.x) continue;
    if (!best || o.x > best->x) best = &o;
  }
  return best;
}

double gap(const Agent& rear, const Agent& front) {
  return front.x - front.length / 2 - (rear.x + rear.length / 2);
}

double follow(const Agent& self, const Agent* leader) {
  const Style& s = self.style;
  double acc = s.a_max * (1.0 - std::pow(self.v / self.desired, 4));
  if (leader) {
    const double dv = self.v - leader->v;
    const double s_star =
        2.0 + std::max(0.0, self.v * s.headway + self.v * dv / (2.0 * std::sqrt(s.a_max * s.b_comf)));
    const double g = std::max(gap(self, *leader), 0.5);
    acc -= s.a_max * (s_star / g) * (s_star / g);
  }
  return acc;
}

}  // namespace

SyntheticRecording generate_synthetic(int recording_id, std::uint64_t seed,
                                      const SyntheticOptions& o) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double dt = 1.0 / o.frame_rate;
  const int frames = static_cast<int>(std::lround(o.duration * o.frame_rate));

  // Balanced style mix in random arrival order.
  std::vector<Agent> agents(static_cast<std::size_t>(o.vehicles));
  for (std::size_t i = 0; i < agents.size(); ++i) agents[i].behavior = static_cast<Behavior>(i % 3);
  std::shuffle(agents.begin(), agents.end(), rng);
  for (auto& ag : agents) {
    ag.style = style_of(ag.behavior);
    const double mean = ag.behavior == Behavior::aggressive  ? o.aggressive_speed
                        : ag.behavior == Behavior::defensive ? o.defensive_speed
                                                             : o.regular_speed;
    ag.desired = std::max(5.0, mean + o.speed_spread * normal(rng));
    if (ag.behavior == Behavior::defensive && uniform01(rng) < o.defensive_truck_fraction) {
      ag.kind = VehicleKind::truck;
      ag.length = uniform(rng, 12.0, 18.0);
      ag.width = 2.5;
    } else {
      ag.length = uniform(rng, 4.2, 5.0);
      ag.width = uniform(rng, 1.8, 2.0);
    }
  }

  for (auto& ag : agents) {
    const int last = o.lanes - 1;
    switch (ag.behavior) {
      case Behavior::aggressive: ag.home_lane = 0; break;
      case Behavior::defensive: ag.home_lane = last; break;
      case Behavior::regular:
        ag.home_lane = last <= 1 ? uniform_int(rng, 0, last) : uniform_int(rng, 1, last - 1);
        break;
    }
  }

  const double arrival_window = 0.75 * o.duration;
  std::size_t next_arrival = 0;
  int next_id = 1;
  for (int f = 1; f <= frames; ++f) {
    const double t = (f - 1) * dt;

    // Entry at the upstream end when the lane start is clear.
    while (next_arrival < agents.size() &&
           t >= arrival_window * static_cast<double>(next_arrival) / static_cast<double>(agents.size())) {
      Agent& ag = agents[next_arrival];
      // Pick the lane where the new vehicle would take longest to catch up
      // with the last entrant.
      int best_lane = -1;
      double best_score = -1.0;
      double best_v0 = 0.0;
      const int first_lane = uniform_int(rng, 0, o.lanes - 1);
      for (int k = 0; k < o.lanes; ++k) {
        const int lane = (first_lane + k) % o.lanes;
        double clear = kInfinity;
        double lead_v = ag.desired;
        for (const auto& other : agents) {
          if (!other.active || other.lane != lane) continue;
          const double rear = other.x - other.length / 2;
          if (rear < clear) {
            clear = rear;
            lead_v = other.v;
          }
        }
        const double v0 = std::min(ag.desired, lead_v + 2.0);
        if (clear - ag.length < 10.0 + v0 * ag.style.headway) continue;
        double score = std::isinf(clear) ? 1e12 : clear / std::max(ag.desired - lead_v, 0.5);
        if (lane == ag.home_lane) score *= 1e6;
        if (score > best_score) {
          best_score = score;
          best_lane = lane;
          best_v0 = v0;
        }
      }
      const bool placed = best_lane >= 0;
      if (placed) {
        ag.lane = best_lane;
        ag.x = ag.length / 2;
        ag.v = best_v0;
      }
      if (!placed) break;  // retry next frame
      ag.active = true;
      ag.id = next_id++;
      ++next_arrival;
    }

    // Lane changes for blocked vehicles, then longitudinal control.
    for (auto& ag : agents) {
      if (!ag.active) continue;
      const Agent* lead = ahead(agents, ag, ag.lane);
      const bool blocked = lead && lead->v < ag.desired - 1.0 &&
                           gap(ag, *lead) < 2.0 * std::max(ag.v, 1.0) * ag.style.headway + 10.0;
      auto lane_ok = [&](int lane, double front_needed) {
        if (lane < 0 || lane >= o.lanes) return false;
        const Agent* nl = ahead(agents, ag, lane);
        const Agent* nf = behind(agents, ag, lane);
        const bool front_ok = !nl || gap(ag, *nl) > front_needed;
        const bool rear_ok = !nf || gap(*nf, ag) > 10.0 + nf->v * 0.6;
        return front_ok && rear_ok;
      };
      if (blocked && uniform01(rng) < ag.style.eagerness * dt) {
        const double current_gap = gap(ag, *lead);
        for (int lane : {ag.lane - 1, ag.lane + 1}) {
          if (lane_ok(lane, current_gap + 10.0)) {
            ag.lane = lane;
            break;
          }
        }
      } else if (!blocked && ag.lane != ag.home_lane && uniform01(rng) < 0.5 * dt) {
        const int toward = ag.lane + (ag.home_lane > ag.lane ? 1 : -1);
        if (lane_ok(toward, 2.0 * ag.v * ag.style.headway + 10.0)) ag.lane = toward;
      }
    }
    for (auto& ag : agents) {
      if (!ag.active) continue;
      ag.a = std::clamp(follow(ag, ahead(agents, ag, ag.lane)) + ag.style.noise * normal(rng), -8.0, 4.0);
    }
    for (auto& ag : agents) {
      if (!ag.active) continue;
      const double v_new = std::max(0.0, ag.v + ag.a * dt);
      ag.a = (v_new - ag.v) / dt;
      ag.x += 0.5 * (ag.v + v_new) * dt;
      ag.v = v_new;
    }

    for (auto& ag : agents) {
      if (!ag.active) continue;
      if (ag.x - ag.length / 2 > o.road_length) {
        ag.active = false;
        ag.done = true;
        continue;
      }
      TrackRow r;
      r.frame = f;
      r.vehicle_id = ag.id;
      r.x = ag.x - ag.length / 2;
      r.y = lane_center(ag.lane) - ag.width / 2;
      r.width = ag.length;
      r.height = ag.width;
      r.x_velocity = ag.v;
      r.x_acceleration = ag.a;
      r.lane_id = ag.lane + 2;
      if (const Agent* lead = ahead(agents, ag, ag.lane)) {
        r.preceding_id = lead->id;
        r.dhw = std::max(gap(ag, *lead), 0.0);
        r.thw = ag.v > 0.0 ? r.dhw / ag.v : 0.0;
        r.ttc = ag.v > lead->v ? r.dhw / (ag.v - lead->v) : 0.0;
      }
      ag.track.rows.push_back(r);
    }
  }

  SyntheticRecording out;
  out.recording.name = (recording_id < 10 ? "0" : "") + std::to_string(recording_id);
  out.recording.meta.id = recording_id;
  out.recording.meta.frame_rate = o.frame_rate;
  for (auto& ag : agents) {
    if (ag.id == 0 || ag.track.rows.empty()) continue;
    ag.track.id = ag.id;
    ag.track.kind = ag.kind;
    ag.track.driving_direction = 2;
    for (std::size_t i = 1; i < ag.track.rows.size(); ++i) {
      ag.track.num_lane_changes += ag.track.rows[i].lane_id != ag.track.rows[i - 1].lane_id;
    }
    out.truth[ag.id] = ag.behavior;
    out.recording.tracks.push_back(std::move(ag.track));
  }
  std::sort(out.recording.tracks.begin(), out.recording.tracks.end(),
            [](const VehicleTrack& a, const VehicleTrack& b) { return a.id < b.id; });
  out.recording.meta.num_vehicles = static_cast<int>(out.recording.tracks.size());
  return out;
}

SyntheticFeatures synthetic_features(int per_class, std::uint64_t seed, double speed_gap) {
  struct Blob {
    double speed, speed_std, mean_acc, max_acc, thw, lane_changes;
  };
  // Indexed by Behavior: aggressive, defensive, regular.
  const Blob blobs[3] = {{30.0 + speed_gap, 1.2, 0.6, 2.5, 0.9, 1.5},
                         {30.0 - speed_gap, 0.3, 0.15, 0.8, 2.3, 0.2},
                         {30.0, 0.6, 0.3, 1.5, 1.5, 0.6}};
  // Same truck share in every class, so the categorical column carries no
  // class information.
  constexpr double kTruckShare = 0.2;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticFeatures out;
  int id = 1;
  for (int i = 0; i < per_class; ++i) {
    for (int b = 0; b < 3; ++b) {
      const Blob& m = blobs[b];
      DriverFeatures f;
      f.vehicle_id = id++;
      f.mean_speed = m.speed + 2.0 * normal(rng);
      f.speed_std = std::max(0.0, m.speed_std + 0.2 * normal(rng));
      f.mean_abs_accel = std::max(0.0, m.mean_acc + 0.1 * normal(rng));
      f.max_abs_accel = std::max(f.mean_abs_accel, m.max_acc + 0.4 * normal(rng));
      f.min_thw = std::max(0.2, m.thw + 0.3 * normal(rng));
      f.lane_change_count = std::poisson_distribution<int>(m.lane_changes)(rng);
      f.kind = uniform01(rng) < kTruckShare ? VehicleKind::truck : VehicleKind::car;
      out.rows.push_back(f);
      out.truth.push_back(static_cast<Behavior>(b));
    }
  }
  return out;
}

}  // namespace critical::highd
