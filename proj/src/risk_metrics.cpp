#include "critical/risk_metrics.hpp"

#include <algorithm>
#include <cmath>

namespace critical {

double ttc(double x_rel, double v_rel_closing) {
  if (!(x_rel >= 0.0)) throw std::domain_error("ttc: relative distance must be non-negative");
  if (!(v_rel_closing > 0.0)) return kInfinity;
  return x_rel / v_rel_closing;
}

double d_min_lon(double v_r, double v_f, const RssParams& p) {
  const double response = v_r * p.rho + 0.5 * p.rho * p.rho * p.a_max;
  const double v_after = v_r + p.rho * p.a_max;
  const double d = response + v_after * v_after / (2.0 * p.b_min) - v_f * v_f / (2.0 * p.b_max);
  return std::max(d, 0.0);
}

double d_min_lat(double v_lat_ego, double v_lat_nln, const RssParams& p) {
  const double ego = v_lat_ego * p.rho + v_lat_ego * v_lat_ego / (4.0 * p.b_min);
  const double nln = v_lat_nln * p.rho + v_lat_nln * v_lat_nln / (4.0 * p.b_min);
  return std::max(ego - nln, 0.0);
}

RiskIndices risk_indices(double d_lon, double d_lat, double dmin_lon, double dmin_lat) {
  RiskIndices r;
  if (dmin_lon > d_lon) r.lon = 1.0 - d_lon / dmin_lon;
  if (dmin_lat > d_lat) r.lat = 1.0 - d_lat / dmin_lat;
  return r;
}

double unified_risk(double r_lon, double r_lat, const RiskParams& p) {
  return std::pow(r_lon, p.beta) * std::pow(r_lat, p.gamma);
}

double rp(double thw, double ttc_value, const RpParams& p) {
  if (!(thw > 0.0) || !(ttc_value > 0.0)) {
    throw std::domain_error("rp: headway and time to collision must be positive");
  }
  const double headway_term = std::isinf(thw) ? 0.0 : p.a_coeff / thw;
  const double ttc_term = std::isinf(ttc_value) ? 0.0 : p.b_coeff / ttc_value;
  return headway_term + ttc_term;
}

RiskStepInfo evaluate_step(const WorldState& world, const RiskMetricParams& params) {
  RiskStepInfo info;
  const VehicleState& ego = world.ego;
  if (const auto leader = find_leader(world, ego, ego.lane)) {
    info.leader_id = leader->vehicle->id;
    info.d_lon = std::max(leader->gap, 0.0);
    info.ttc = ttc(info.d_lon, ego.vx - leader->vehicle->vx);
    info.dmin_lon = d_min_lon(ego.vx, leader->vehicle->vx, params.rss);
  }
  if (const auto nln = nearest_lane_neighbor(world)) {
    const VehicleState& n = *nln->vehicle;
    info.neighbor_id = n.id;
    const double axis = n.y >= ego.y ? 1.0 : -1.0;
    info.d_lat = std::max(std::abs(n.y - ego.y) - (ego.width + n.width) / 2, 0.0);
    info.dmin_lat = d_min_lat(axis * ego.vy, axis * n.vy, params.rss);
  }
  const RiskIndices idx = risk_indices(info.d_lon, info.d_lat, info.dmin_lon, info.dmin_lat);
  info.r_lon = idx.lon;
  info.r_lat = idx.lat;
  info.r = unified_risk(idx.lon, idx.lat, params.risk);
  return info;
}

RiskReport accumulate(RiskReport report, const RiskStepInfo& info, const RiskParams& params) {
  if (info.ttc < params.ttc_threshold) ++report.ttc_near_miss_count;
  if (info.r > params.r_threshold) ++report.r_threshold_count;
  report.min_ttc = std::min(report.min_ttc, info.ttc);
  report.max_r = std::max(report.max_r, info.r);
  return report;
}

RiskReport accumulate(const RiskReport& report, const WorldState& world,
                      const RiskMetricParams& params) {
  RiskReport out = accumulate(report, evaluate_step(world, params), params.risk);
  out.crashed = out.crashed || world.ego.crashed;
  return out;
}

}  // namespace critical
