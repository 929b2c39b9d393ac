#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "critical/highd.hpp"
#include "critical/rng.hpp"

namespace critical::highd {

std::vector<PairInstance> extract_critical_pairs(const std::vector<VehicleTrack>& tracks,
                                                 const RpParams& params, std::size_t top_n) {
  std::map<std::pair<int, int>, const TrackRow*> at;  // (vehicle, frame)
  std::map<int, const VehicleTrack*> by_id;
  for (const auto& t : tracks) {
    by_id[t.id] = &t;
    for (const auto& r : t.rows) at[{t.id, r.frame}] = &r;
  }

  std::map<std::pair<int, int>, PairInstance> peaks;  // (follower, leader)
  for (const auto& t : tracks) {
    for (const auto& r : t.rows) {
      if (r.preceding_id == 0) continue;
      const auto lead = at.find({r.preceding_id, r.frame});
      if (lead == at.end()) continue;
      // Non-positive headway or time to collision means undefined.
      const double thw = r.thw > 0.0 ? r.thw : kInfinity;
      const double ttc_value = r.ttc > 0.0 ? r.ttc : kInfinity;
      const double value = rp(thw, ttc_value, params);
      if (!(value > 0.0)) continue;
      const std::pair<int, int> key{t.id, r.preceding_id};
      auto it = peaks.find(key);
      if (it != peaks.end() && it->second.rp >= value) continue;
      const VehicleTrack& lt = *by_id.at(r.preceding_id);
      PairInstance p;
      p.follower = {t.id, r, t.kind, t.driving_direction};
      p.leader = {lt.id, *lead->second, lt.kind, lt.driving_direction};
      p.frame = r.frame;
      p.rp = value;
      peaks[key] = p;
    }
  }

  std::vector<PairInstance> out;
  out.reserve(peaks.size());
  for (auto& [key, p] : peaks) out.push_back(p);
  std::stable_sort(out.begin(), out.end(), [](const PairInstance& a, const PairInstance& b) {
    if (a.rp != b.rp) return a.rp > b.rp;
    if (a.follower.vehicle_id != b.follower.vehicle_id) {
      return a.follower.vehicle_id < b.follower.vehicle_id;
    }
    return a.leader.vehicle_id < b.leader.vehicle_id;
  });
  if (top_n > 0 && out.size() > top_n) out.resize(top_n);
  return out;
}

namespace {

struct Loaded {
  std::size_t file_index = 0;
  Recording recording;
  FeatureTable features;
  std::size_t offset = 0;  // first row in the pooled feature table
};

// Largest-remainder apportionment of `total` over the raw counts.
std::vector<int> apportion(const std::vector<int>& raw, int total) {
  const int sum = std::accumulate(raw.begin(), raw.end(), 0);
  std::vector<int> out(raw.size(), 0);
  if (sum == 0 || total <= 0) return out;
  std::vector<std::pair<double, std::size_t>> remainder;
  int assigned = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double quota = static_cast<double>(raw[i]) * total / sum;
    out[i] = static_cast<int>(std::floor(quota));
    assigned += out[i];
    remainder.push_back({quota - out[i], i});
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[remainder[r % remainder.size()].second];
  return out;
}

// Lane index in the simulator: rank of the highD lane id among the lanes
// used by the same driving direction.
int lane_rank(const std::vector<VehicleTrack>& tracks, int direction, int lane_id) {
  std::set<int> lanes;
  for (const auto& t : tracks) {
    if (t.driving_direction != direction) continue;
    for (const auto& r : t.rows) lanes.insert(r.lane_id);
  }
  return static_cast<int>(std::distance(lanes.begin(), lanes.find(lane_id)));
}

VehicleSeed to_seed(const PairVehicle& v, double x, int lane, Behavior behavior,
                    const RangeTable& ranges) {
  const double sign = v.driving_direction == 1 ? -1.0 : 1.0;
  VehicleSeed s;
  s.x = ranges.position.clamp(x);
  s.lane = lane;
  s.speed = ranges.speed.clamp(std::abs(v.row.x_velocity));
  s.acceleration = ranges.acceleration.clamp(sign * v.row.x_acceleration);
  s.behavior = behavior;
  s.kind = v.kind;
  return s;
}

ScenarioConfig make_config(const Loaded& l, const ClusterModel& model, const IngestOptions& o,
                           std::vector<PairInstance>& pairs) {
  const auto& tracks = l.recording.tracks;
  ScenarioConfig c;
  c.id = "highd-" + l.recording.name;
  c.seed = derive_seed(o.seed, l.file_index);

  std::map<int, Behavior> label;
  std::vector<int> raw(3, 0);
  int trucks = 0;
  for (std::size_t i = 0; i < l.features.rows.size(); ++i) {
    const Behavior b = model.labels[l.offset + i];
    label[l.features.rows[i].vehicle_id] = b;
    ++raw[static_cast<std::size_t>(b)];
    trucks += l.features.rows[i].kind == VehicleKind::truck;
  }
  const int raw_total = raw[0] + raw[1] + raw[2];

  // Geometry: lanes of the dominant direction, density over all frames.
  int dir_count[3] = {0, 0, 0};
  for (const auto& t : tracks) ++dir_count[t.driving_direction == 1 ? 1 : 2];
  const int main_dir = dir_count[1] > dir_count[2] ? 1 : 2;
  std::set<int> main_lanes;
  std::set<int> all_lanes;
  std::map<int, int> per_frame;
  double x_min = kInfinity;
  double x_max = -kInfinity;
  for (const auto& t : tracks) {
    for (const auto& r : t.rows) {
      all_lanes.insert(r.lane_id);
      if (t.driving_direction == main_dir) main_lanes.insert(r.lane_id);
      ++per_frame[r.frame];
      x_min = std::min(x_min, r.x);
      x_max = std::max(x_max, r.x + r.width);
    }
  }
  c.lane_count = o.ranges.lane_count.clamp(static_cast<int>(main_lanes.size()));
  double density = o.ranges.density.max;
  if (!per_frame.empty() && x_max > x_min) {
    double mean = 0.0;
    for (const auto& [frame, n] : per_frame) mean += n;
    mean /= static_cast<double>(per_frame.size());
    density = mean / ((x_max - x_min) / 1000.0 * static_cast<double>(all_lanes.size()));
  }
  c.density = std::clamp(density, std::max(o.ranges.density.min, 0.1), o.ranges.density.max);

  pairs = extract_critical_pairs(tracks, o.rp);
  std::vector<int> need(3, 0);
  if (!pairs.empty()) {
    const PairInstance& top = pairs.front();
    const double sign = top.follower.driving_direction == 1 ? -1.0 : 1.0;
    const double fc = top.follower.row.x + top.follower.row.width / 2;
    const double lc = top.leader.row.x + top.leader.row.width / 2;
    const int max_lane = c.lane_count - 1;
    const int lf = std::min(lane_rank(tracks, top.follower.driving_direction, top.follower.row.lane_id), max_lane);
    const int ll = std::min(lane_rank(tracks, top.leader.driving_direction, top.leader.row.lane_id), max_lane);
    const Behavior bf = label.count(top.follower.vehicle_id) ? label.at(top.follower.vehicle_id) : Behavior::regular;
    const Behavior bl = label.count(top.leader.vehicle_id) ? label.at(top.leader.vehicle_id) : Behavior::regular;
    CriticalPair cp;
    cp.vehicle_i = to_seed(top.follower, o.follower_x, lf, bf, o.ranges);
    cp.vehicle_j = to_seed(top.leader, o.follower_x + sign * (lc - fc), ll, bl, o.ranges);
    c.critical_pair = cp;
    ++need[static_cast<std::size_t>(bf)];
    ++need[static_cast<std::size_t>(bl)];
  }

  // Scale the behavior counts down to the simulator budget.
  const int total = std::max(std::min(raw_total, o.max_vehicles), need[0] + need[1] + need[2]);
  std::vector<int> counts = apportion(raw, total);
  for (std::size_t b = 0; b < 3; ++b) {
    while (counts[b] < need[b]) {
      std::size_t donor = 3;
      for (std::size_t d = 0; d < 3; ++d) {
        if (counts[d] > need[d] && (donor == 3 || counts[d] - need[d] > counts[donor] - need[donor])) donor = d;
      }
      if (donor == 3) break;
      --counts[donor];
      ++counts[b];
    }
  }
  c.num_aggressive = counts[0];
  c.num_defensive = counts[1];
  c.num_regular = counts[2];
  const double truck_fraction = raw_total > 0 ? static_cast<double>(trucks) / raw_total : 0.0;
  reconcile_partition(c, truck_fraction, o.ranges);
  validate(c, o.ranges);
  return c;
}

}  // namespace

IngestResult ingest(const std::vector<std::filesystem::path>& recordings,
                    const IngestOptions& options) {
  IngestResult res;
  std::vector<Loaded> loaded;
  std::vector<DriverFeatures> pooled;
  res.files.resize(recordings.size());
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    FileStatus& st = res.files[i];
    st.recording = recordings[i].string();
    try {
      Loaded l;
      l.file_index = i;
      l.recording = load_recording(recordings[i]);
      l.features = extract_features(l.recording.tracks);
      res.skipped_tracks += l.features.skipped;
      if (l.features.rows.empty()) {
        st.message = "no track with at least two frames";
        continue;
      }
      l.offset = pooled.size();
      pooled.insert(pooled.end(), l.features.rows.begin(), l.features.rows.end());
      loaded.push_back(std::move(l));
      st.ok = true;
    } catch (const std::exception& e) {
      st.message = e.what();
    }
  }
  if (loaded.empty()) return res;

  res.model = fit_kprototypes(pooled, options.k, options.gamma_mix, options.seed);
  for (const Loaded& l : loaded) {
    FileStatus& st = res.files[l.file_index];
    try {
      std::vector<PairInstance> pairs;
      ScenarioConfig c = make_config(l, *res.model, options, pairs);
      // Recordings with the same file name from different directories.
      const std::string base = c.id;
      for (int n = 2; std::any_of(res.configs.begin(), res.configs.end(),
                                  [&](const ScenarioConfig& o) { return o.id == c.id; });
           ++n) {
        c.id = base + "-" + std::to_string(n);
      }
      res.configs.push_back(std::move(c));
      res.pairs.push_back(std::move(pairs));
      st.config_id = res.configs.back().id;
      st.message = "ok";
    } catch (const std::exception& e) {
      st.ok = false;
      st.message = e.what();
    }
  }
  return res;
}

std::size_t build_database(const std::vector<std::filesystem::path>& recordings,
                           const std::filesystem::path& out_path, const IngestOptions& options,
                           IngestResult* result) {
  IngestResult res = ingest(recordings, options);
  save_database(out_path, res.configs);
  const std::size_t n = res.configs.size();
  if (result) *result = std::move(res);
  return n;
}

}  // namespace critical::highd
