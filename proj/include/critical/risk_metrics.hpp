#pragma once

#include <limits>
#include <stdexcept>

#include "critical/world.hpp"

namespace critical {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Worst-case response model behind the minimum safe distances.
struct RssParams {
  double rho = 1.0;    // response time [s]
  double a_max = 3.0;  // max acceleration during the response time [m/s^2]
  double b_min = 4.0;  // minimum braking applied after the response [m/s^2]
  double b_max = 8.0;  // maximum braking of the leading vehicle [m/s^2]
};

struct RiskParams {
  double beta = 1.0;   // longitudinal risk propensity
  double gamma = 1.0;  // lateral risk propensity
  double ttc_threshold = 2.0;  // [s]
  double r_threshold = 0.3;
};

struct RpParams {
  double a_coeff = 1.0;
  double b_coeff = 4.0;
};

struct RiskMetricParams {
  RssParams rss;
  RiskParams risk;
};

/// Per-episode surrogate safety summary.
struct RiskReport {
  int ttc_near_miss_count = 0;
  int r_threshold_count = 0;
  double min_ttc = kInfinity;
  double max_r = 0.0;
  bool crashed = false;

  bool operator==(const RiskReport&) const = default;
};

/// Time to collision. Infinite when the gap is not closing.
/// Throws std::domain_error for a negative gap.
double ttc(double x_rel, double v_rel_closing);

/// Minimum safe longitudinal distance for a rear vehicle at v_r following a
/// front vehicle at v_f.
double d_min_lon(double v_r, double v_f, const RssParams& p);

/// Minimum safe lateral distance. Velocities are signed on the axis pointing
/// from the ego toward the neighbor, so a neighbor moving toward the ego has a
/// negative v_lat_nln.
double d_min_lat(double v_lat_ego, double v_lat_nln, const RssParams& p);

struct RiskIndices {
  double lon = 0.0;
  double lat = 0.0;
};

/// Proportional encroachment below the minimum safe distances, each in [0, 1].
RiskIndices risk_indices(double d_lon, double d_lat, double dmin_lon, double dmin_lat);

double unified_risk(double r_lon, double r_lat, const RiskParams& p);

/// Risk perception A/THW + B/TTC. Infinite inputs contribute zero.
/// Throws std::domain_error for non-positive inputs.
double rp(double thw, double ttc_value, const RpParams& p = {});

/// Everything the metrics see for one policy step.
struct RiskStepInfo {
  int leader_id = -1;
  int neighbor_id = -1;
  double ttc = kInfinity;
  double d_lon = kInfinity;
  double dmin_lon = 0.0;
  double d_lat = kInfinity;
  double dmin_lat = 0.0;
  double r_lon = 0.0;
  double r_lat = 0.0;
  double r = 0.0;
};

/// Evaluates the ego against its same-lane leader (longitudinal terms) and its
/// nearest lane neighbor (lateral terms).
RiskStepInfo evaluate_step(const WorldState& world, const RiskMetricParams& params = {});

RiskReport accumulate(RiskReport report, const RiskStepInfo& info, const RiskParams& params);
RiskReport accumulate(const RiskReport& report, const WorldState& world,
                      const RiskMetricParams& params = {});

}  // namespace critical
