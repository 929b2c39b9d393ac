#include "critical/traffic_sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "critical/rng.hpp"
#include "json.hpp"

namespace critical {

std::string_view to_string(Action a) {
  switch (a) {
    case Action::lane_left: return "LANE_LEFT";
    case Action::idle: return "IDLE";
    case Action::lane_right: return "LANE_RIGHT";
    case Action::faster: return "FASTER";
    case Action::slower: return "SLOWER";
  }
  return "IDLE";
}

namespace {

constexpr double kCarLength = 5.0;
constexpr double kCarWidth = 2.0;
constexpr double kTruckLength = 12.0;
constexpr double kTruckWidth = 2.5;

void set_dimensions(VehicleState& v) {
  v.length = v.kind == VehicleKind::truck ? kTruckLength : kCarLength;
  v.width = v.kind == VehicleKind::truck ? kTruckWidth : kCarWidth;
}

double desired_speed(Behavior b, VehicleKind k, const SimParams& p) {
  const double v0 = behavior_params(b).desired_speed;
  return k == VehicleKind::truck ? std::min(v0, p.truck_max_speed) : v0;
}

VehicleState from_seed(const VehicleSeed& s, int id, const SimParams& p) {
  VehicleState v;
  v.id = id;
  v.x = wrap_position(s.x, p.road_length);
  v.lane = s.lane;
  v.target_lane = s.lane;
  v.y = s.lane * p.lane_width;
  v.vx = s.speed;
  v.ax = s.acceleration;
  v.behavior = s.behavior;
  v.kind = s.kind;
  v.target_speed = desired_speed(s.behavior, s.kind, p);
  set_dimensions(v);
  return v;
}

struct Interval {
  double start;
  double end;
};

// First conflicting interval on the ring (checked at shifts -L, 0, +L), if any.
std::optional<Interval> conflict(const Interval& cand, const std::vector<Interval>& occupied,
                                 double gap, double road_length) {
  for (const Interval& o : occupied) {
    for (double shift : {-road_length, 0.0, road_length}) {
      const double s = o.start + shift;
      const double e = o.end + shift;
      if (cand.start < e + gap && s < cand.end + gap) return Interval{s, e};
    }
  }
  return std::nullopt;
}

}  // namespace

WorldState spawn(const ScenarioConfig& config, const SimParams& params) {
  return spawn(config, config.seed, params);
}

WorldState spawn(const ScenarioConfig& config, std::uint64_t seed, const SimParams& p) {
  validate(config);
  Rng rng(seed);
  WorldState w;
  w.lane_count = config.lane_count;
  w.lane_width = p.lane_width;
  w.road_length = p.road_length;

  VehicleState& ego = w.ego;
  ego.id = 0;
  ego.x = 0.0;
  ego.lane = p.ego_lane ? *p.ego_lane : uniform_int(rng, 0, config.lane_count - 1);
  if (ego.lane < 0 || ego.lane >= config.lane_count) throw SpawnError("ego lane outside the road");
  ego.target_lane = ego.lane;
  ego.y = ego.lane * p.lane_width;
  ego.vx = p.ego_initial_speed;
  ego.target_speed = p.ego_initial_speed;
  ego.kind = VehicleKind::car;
  set_dimensions(ego);

  std::vector<int> behavior_left{config.num_aggressive, config.num_defensive, config.num_regular};
  int trucks_left = config.num_trucks;
  int cars_left = config.num_cars;
  int next_id = 1;

  // Occupied stretches per lane, in coordinates relative to the ego.
  std::vector<std::vector<Interval>> occupied(static_cast<std::size_t>(config.lane_count));
  occupied[static_cast<std::size_t>(ego.lane)].push_back(
      {-ego.length / 2 - p.ego_rear_clearance, ego.length / 2 + p.ego_front_clearance});

  if (config.critical_pair) {
    for (const VehicleSeed* s : {&config.critical_pair->vehicle_i, &config.critical_pair->vehicle_j}) {
      VehicleState v = from_seed(*s, next_id++, p);
      if (overlap(v, ego, p.road_length)) throw SpawnError("critical-pair vehicle overlaps the ego");
      for (const auto& o : w.others) {
        if (overlap(v, o, p.road_length)) throw SpawnError("critical-pair vehicles overlap");
      }
      --behavior_left[static_cast<std::size_t>(s->behavior)];
      (s->kind == VehicleKind::truck ? trucks_left : cars_left)--;
      const double u = wrap_position(v.x - ego.x, p.road_length);
      occupied[static_cast<std::size_t>(v.lane)].push_back({u - v.length / 2, u + v.length / 2});
      w.others.push_back(v);
    }
  }

  std::vector<Behavior> behaviors;
  for (std::size_t b = 0; b < 3; ++b) {
    behaviors.insert(behaviors.end(), static_cast<std::size_t>(behavior_left[b]),
                     static_cast<Behavior>(b));
  }
  std::vector<VehicleKind> kinds(static_cast<std::size_t>(trucks_left), VehicleKind::truck);
  kinds.insert(kinds.end(), static_cast<std::size_t>(cars_left), VehicleKind::car);
  std::shuffle(behaviors.begin(), behaviors.end(), rng);
  std::shuffle(kinds.begin(), kinds.end(), rng);

  std::vector<int> lane_order(static_cast<std::size_t>(config.lane_count));
  for (int l = 0; l < config.lane_count; ++l) lane_order[static_cast<std::size_t>(l)] = l;
  std::shuffle(lane_order.begin(), lane_order.end(), rng);

  const std::size_t first_background = w.others.size();
  std::vector<VehicleState> pending;
  std::vector<int> lane_load(static_cast<std::size_t>(config.lane_count), 0);
  for (const auto& o : w.others) ++lane_load[static_cast<std::size_t>(o.lane)];
  ++lane_load[static_cast<std::size_t>(ego.lane)];
  for (std::size_t k = 0; k < behaviors.size(); ++k) {
    VehicleState v;
    v.id = next_id++;
    v.behavior = behaviors[k];
    v.kind = kinds[k];
    set_dimensions(v);
    v.lane = lane_order[k % lane_order.size()];
    v.target_lane = v.lane;
    v.y = v.lane * p.lane_width;
    v.target_speed = desired_speed(v.behavior, v.kind, p) * uniform(rng, 0.9, 1.1);
    if (v.kind == VehicleKind::truck) v.target_speed = std::min(v.target_speed, p.truck_max_speed);
    ++lane_load[static_cast<std::size_t>(v.lane)];
    pending.push_back(v);
  }

  // A density too low for the vehicle count would not fit on the ring; the
  // spacing then shrinks to spread the lane's vehicles evenly.
  const double nominal = 1000.0 / config.density;  // mean center spacing per lane [m]
  std::vector<double> spacing(static_cast<std::size_t>(config.lane_count));
  for (std::size_t l = 0; l < spacing.size(); ++l) {
    spacing[l] = std::min(nominal, p.road_length / std::max(lane_load[l], 1));
  }
  std::vector<double> start(spacing.size());
  for (std::size_t l = 0; l < spacing.size(); ++l) start[l] = uniform(rng, 0.0, spacing[l]);
  std::vector<double> jitter(pending.size());
  for (auto& j : jitter) j = uniform(rng, 0.5, 1.5);

  // Fallback spreads the lane's leftover room evenly over its gaps.
  std::vector<double> slack(spacing.size(), p.road_length);
  std::vector<int> gaps(spacing.size(), 0);
  for (std::size_t l = 0; l < spacing.size(); ++l) {
    for (const Interval& o : occupied[l]) slack[l] -= o.end - o.start + p.min_initial_gap;
    gaps[l] = static_cast<int>(occupied[l].size());
  }
  for (const auto& v : pending) {
    const auto l = static_cast<std::size_t>(v.lane);
    slack[l] -= v.length + p.min_initial_gap;
    ++gaps[l];
  }

  auto place = [&](bool jittered) -> std::optional<std::vector<VehicleState>> {
    auto occ = occupied;
    std::vector<double> cursor = start;
    std::vector<VehicleState> placed = pending;
    for (std::size_t k = 0; k < placed.size(); ++k) {
      VehicleState& v = placed[k];
      const auto lane = static_cast<std::size_t>(v.lane);
      double& cur = cursor[lane];
      Interval cand{cur, cur + v.length};
      while (const auto hit = conflict(cand, occ[lane], p.min_initial_gap, p.road_length)) {
        cur = hit->end + p.min_initial_gap;
        cand = {cur, cur + v.length};
        if (cand.end > start[lane] + p.road_length) break;
      }
      if (cand.end > start[lane] + p.road_length ||
          conflict(cand, occ[lane], p.min_initial_gap, p.road_length)) {
        return std::nullopt;
      }
      occ[lane].push_back(cand);
      v.x = wrap_position(ego.x + (cand.start + cand.end) / 2, p.road_length);
      if (jittered) {
        cur = cand.end + std::max(p.min_initial_gap, spacing[lane] * jitter[k] - v.length);
      } else {
        cur = cand.end + p.min_initial_gap + std::max(0.0, slack[lane]) / std::max(gaps[lane], 1);
      }
    }
    return placed;
  };
  auto placed = place(true);
  if (!placed) placed = place(false);
  if (!placed) {
    throw SpawnError("cannot place " + std::to_string(pending.size()) +
                     " background vehicles on a " + std::to_string(config.lane_count) +
                     "-lane ring of " + std::to_string(p.road_length) + " m with the minimum gap");
  }
  w.others.insert(w.others.end(), placed->begin(), placed->end());

  // Start every generated vehicle no faster than IDM equilibrium for its gap.
  for (std::size_t i = first_background; i < w.others.size(); ++i) {
    VehicleState& v = w.others[i];
    double speed = v.target_speed * uniform(rng, 0.85, 1.0);
    if (const auto lead = find_leader(w, v, v.lane)) {
      const double headway = behavior_params(v.behavior).desired_time_headway;
      speed = std::min(speed, std::max(0.0, (lead->gap - p.idm_min_gap) / headway));
    }
    v.vx = speed;
  }
  return w;
}

double idm_acceleration(const VehicleState& self, const VehicleState* leader, double gap,
                        const SimParams& p) {
  const BehaviorParams bp = behavior_params(self.behavior);
  const double v0 = std::max(self.target_speed, 1e-3);
  double a = bp.max_acceleration * (1.0 - std::pow(self.vx / v0, p.idm_exponent));
  if (leader) {
    const double dv = self.vx - leader->vx;
    const double s_star =
        p.idm_min_gap +
        std::max(0.0, self.vx * bp.desired_time_headway +
                          self.vx * dv / (2.0 * std::sqrt(bp.max_acceleration *
                                                          bp.comfortable_deceleration)));
    const double s = std::max(gap, 0.1);
    a -= bp.max_acceleration * (s_star / s) * (s_star / s);
  }
  return std::clamp(a, -p.max_braking, bp.max_acceleration);
}

namespace {

double gap_between(const VehicleState& rear, const VehicleState& front, double road_length) {
  return ring_delta(rear.x, front.x, road_length) - (rear.length + front.length) / 2;
}

double idm_to(const VehicleState& self, const std::optional<Neighbor>& leader, const SimParams& p) {
  return leader ? idm_acceleration(self, leader->vehicle, leader->gap, p)
                : idm_acceleration(self, nullptr, 0.0, p);
}

double idm_behind(const VehicleState& self, const VehicleState* leader, const WorldState& w,
                  const SimParams& p) {
  if (!leader || leader->id == self.id) return idm_acceleration(self, nullptr, 0.0, p);
  const double d = ring_delta(self.x, leader->x, w.road_length);
  if (d <= 0.0) return idm_acceleration(self, nullptr, 0.0, p);
  return idm_acceleration(self, leader, gap_between(self, *leader, w.road_length), p);
}

// MOBIL: each idle background vehicle may start one lane change per policy
// step. Decisions are taken in id order so later vehicles see earlier targets.
void decide_lane_changes(WorldState& w, const SimParams& p) {
  const bool skip_ego = !p.ego_interacts;
  for (auto& v : w.others) {
    if (v.crashed || v.changing_lane()) continue;
    const BehaviorParams bp = behavior_params(v.behavior);
    const auto lead = find_leader(w, v, v.lane, skip_ego);
    const auto old_follower = find_follower(w, v, v.lane, skip_ego);
    const double a_self = idm_to(v, lead, p);
    double a_old_before = 0.0;
    double a_old_after = 0.0;
    if (old_follower) {
      const VehicleState& f = *old_follower->vehicle;
      a_old_before = idm_behind(f, &v, w, p);
      a_old_after = idm_behind(f, lead ? lead->vehicle : nullptr, w, p);
    }

    int best_lane = -1;
    double best_gain = -kInfinity;
    for (int target : {v.lane - 1, v.lane + 1}) {
      if (target < 0 || target >= w.lane_count) continue;
      const auto new_lead = find_leader(w, v, target, skip_ego);
      const auto new_follower = find_follower(w, v, target, skip_ego);
      if ((new_lead && new_lead->gap < 1.0) || (new_follower && new_follower->gap < 1.0)) continue;
      const double a_self_new = idm_to(v, new_lead, p);
      if (a_self_new < -p.mobil_safe_braking) continue;
      double a_new_before = 0.0;
      double a_new_after = 0.0;
      if (new_follower) {
        const VehicleState& f = *new_follower->vehicle;
        a_new_after = idm_acceleration(f, &v, new_follower->gap, p);
        if (a_new_after < -p.mobil_safe_braking) continue;
        a_new_before = idm_behind(f, new_lead ? new_lead->vehicle : nullptr, w, p);
      }
      const double gain = a_self_new - a_self +
                          bp.politeness * ((a_new_after - a_new_before) + (a_old_after - a_old_before));
      if (gain > bp.lane_change_threshold && gain > best_gain) {
        best_gain = gain;
        best_lane = target;
      }
    }
    if (best_lane >= 0) v.target_lane = best_lane;
  }
}

void integrate(VehicleState& v, double a, double dt, const WorldState& w, const SimParams& p) {
  const double v_new = std::max(0.0, v.vx + a * dt);
  v.x = wrap_position(v.x + 0.5 * (v.vx + v_new) * dt, w.road_length);
  v.ax = (v_new - v.vx) / dt;
  v.vx = v_new;

  const double target_y = v.target_lane * w.lane_width;
  const double lateral_speed = w.lane_width / p.lane_change_duration;
  const double dy = target_y - v.y;
  if (dy != 0.0) {
    const double dir = dy > 0 ? 1.0 : -1.0;
    const double move = std::min(lateral_speed * dt, std::abs(dy));
    v.y += dir * move;
    v.vy = dir * lateral_speed;
    if (v.y == target_y || std::abs(target_y - v.y) < 1e-9) {
      v.y = target_y;
      v.vy = 0.0;
    }
  } else {
    v.vy = 0.0;
  }
  v.lane = std::clamp(static_cast<int>(std::lround(v.y / w.lane_width)), 0, w.lane_count - 1);
}

void crash(VehicleState& v) {
  v.crashed = true;
  if (v.id != 0) {
    v.vx = 0.0;
    v.ax = 0.0;
    v.vy = 0.0;
    v.target_lane = v.lane;
  }
}

}  // namespace

StepResult step(const WorldState& in, Action action, const SimParams& p) {
  StepResult res;
  WorldState w = in;
  VehicleState& ego = w.ego;

  switch (action) {
    case Action::faster:
      ego.target_speed = std::min(ego.target_speed + p.speed_step, p.ego_speed_max);
      break;
    case Action::slower:
      ego.target_speed = std::max(ego.target_speed - p.speed_step, p.ego_speed_min);
      break;
    case Action::lane_left:
    case Action::lane_right:
      if (!ego.changing_lane()) {
        const int target = ego.lane + (action == Action::lane_left ? -1 : 1);
        if (target >= 0 && target < w.lane_count) {
          ego.target_lane = target;
          res.lane_changed = true;
        }
      }
      break;
    case Action::idle:
      break;
  }

  decide_lane_changes(w, p);

  const int substeps = std::max(1, p.sim_frequency / p.policy_frequency);
  const double dt = 1.0 / p.sim_frequency;
  const bool skip_ego = !p.ego_interacts;
  std::vector<double> acc(w.others.size());
  for (int s = 0; s < substeps; ++s) {
    for (std::size_t i = 0; i < w.others.size(); ++i) {
      const VehicleState& v = w.others[i];
      if (v.crashed) {
        acc[i] = 0.0;
        continue;
      }
      double a = idm_to(v, find_leader(w, v, v.lane, skip_ego), p);
      if (v.target_lane != v.lane) {
        a = std::min(a, idm_to(v, find_leader(w, v, v.target_lane, skip_ego), p));
      }
      acc[i] = a;
    }
    const double ego_acc = std::clamp(p.speed_gain * (ego.target_speed - ego.vx), -p.max_braking,
                                      p.ego_max_acceleration);

    integrate(ego, ego_acc, dt, w, p);
    for (std::size_t i = 0; i < w.others.size(); ++i) {
      if (!w.others[i].crashed) integrate(w.others[i], acc[i], dt, w, p);
    }
    w.time += dt;

    for (std::size_t i = 0; i < w.others.size(); ++i) {
      VehicleState& a = w.others[i];
      if (p.ego_interacts && overlap(ego, a, w.road_length)) {
        crash(ego);
        crash(a);
      }
      for (std::size_t j = i + 1; j < w.others.size(); ++j) {
        VehicleState& b = w.others[j];
        if ((!a.crashed || !b.crashed) && overlap(a, b, w.road_length)) {
          crash(a);
          crash(b);
        }
      }
    }
    if (ego.crashed) break;
  }
  w.steps += 1;

  res.crashed = ego.crashed;
  const bool off_road = ego.y < -w.lane_width / 2 || ego.y > (w.lane_count - 0.5) * w.lane_width;
  res.truncated = !res.crashed && w.steps >= p.max_episode_steps;
  res.done = res.crashed || off_road || w.steps >= p.max_episode_steps;
  if (res.crashed) {
    res.reward = p.crash_reward;
  } else {
    const double speed_term = std::clamp(
        (ego.vx - p.reward_speed_low) / (p.reward_speed_high - p.reward_speed_low), 0.0, 1.0);
    res.reward = p.speed_reward_weight * speed_term + (res.lane_changed ? p.lane_change_reward : 0.0);
  }
  res.info = evaluate_step(w, p.risk);
  res.world = std::move(w);
  return res;
}

std::size_t observation_size(const SimParams& p) {
  return 5u * static_cast<std::size_t>(p.observed_vehicles + 1);
}

std::vector<double> observe(const WorldState& w, const SimParams& p) {
  auto clip = [](double v) { return std::clamp(v, -1.0, 1.0); };
  std::vector<double> obs(observation_size(p), 0.0);
  const VehicleState& ego = w.ego;
  obs[0] = 1.0;
  obs[1] = clip(ego.vx / p.obs_speed_scale);
  obs[2] = w.lane_count > 1 ? clip(2.0 * ego.y / (w.lane_width * (w.lane_count - 1)) - 1.0) : 0.0;
  obs[3] = clip(ego.vy / p.obs_speed_scale);
  obs[4] = clip((ego.target_speed - ego.vx) / p.obs_speed_scale);

  struct Candidate {
    double abs_dx;
    int id;
    double dx;
    const VehicleState* v;
  };
  std::vector<Candidate> cands;
  cands.reserve(w.others.size());
  for (const auto& o : w.others) {
    const double dx = ring_delta(ego.x, o.x, w.road_length);
    cands.push_back({std::abs(dx), o.id, dx, &o});
  }
  const auto k = std::min(cands.size(), static_cast<std::size_t>(p.observed_vehicles));
  std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(k), cands.end(),
                    [](const Candidate& a, const Candidate& b) {
                      return a.abs_dx != b.abs_dx ? a.abs_dx < b.abs_dx : a.id < b.id;
                    });
  for (std::size_t i = 0; i < k; ++i) {
    const VehicleState& o = *cands[i].v;
    double* slot = obs.data() + 5 * (i + 1);
    slot[0] = 1.0;
    slot[1] = clip(cands[i].dx / p.obs_distance_scale);
    slot[2] = clip((o.y - ego.y) / p.obs_lateral_scale);
    slot[3] = clip((o.vx - ego.vx) / p.obs_speed_scale);
    slot[4] = clip((o.vy - ego.vy) / p.obs_speed_scale);
  }
  return obs;
}

EpisodeResult run_episode(const ScenarioConfig& config, const Policy& policy,
                          const EpisodeOptions& options, const SimParams& params) {
  EpisodeResult result;
  if (options.max_steps <= 0) return result;
  SimParams p = params;
  p.max_episode_steps = options.max_steps;
  WorldState world = spawn(config, options.spawn_seed.value_or(config.seed), p);
  if (options.record_trace) result.trace.push_back(world);
  while (true) {
    StepResult r = step(world, policy(world), p);
    result.total_reward += r.reward;
    result.length += 1;
    result.risk = accumulate(result.risk, r.info, p.risk.risk);
    result.crashed = r.crashed;
    world = std::move(r.world);
    if (options.record_trace) result.trace.push_back(world);
    if (r.done) break;
  }
  result.risk.crashed = result.crashed;
  return result;
}

std::string trace_line(const WorldState& w) {
  nlohmann::ordered_json j;
  j["time"] = w.time;
  std::vector<const VehicleState*> all{&w.ego};
  for (const auto& o : w.others) all.push_back(&o);
  std::sort(all.begin(), all.end(),
            [](const VehicleState* a, const VehicleState* b) { return a->id < b->id; });
  auto& vehicles = j["vehicles"] = nlohmann::ordered_json::array();
  for (const VehicleState* v : all) {
    nlohmann::ordered_json o;
    o["id"] = v->id;
    o["x"] = v->x;
    o["lane"] = v->lane;
    o["y"] = v->y;
    o["vx"] = v->vx;
    o["vy"] = v->vy;
    o["ax"] = v->ax;
    o["behavior"] = std::string(to_string(v->behavior));
    o["kind"] = std::string(to_string(v->kind));
    o["length"] = v->length;
    o["width"] = v->width;
    vehicles.push_back(std::move(o));
  }
  return j.dump();
}

void write_trace(std::ostream& out, const std::vector<WorldState>& trace) {
  for (const auto& w : trace) out << trace_line(w) << '\n';
}

}  // namespace critical
