#include <gtest/gtest.h>

#include <cmath>

#include "critical/risk_metrics.hpp"
#include "critical/rng.hpp"
#include "oracles/risk_oracle.hpp"

using namespace critical;

namespace {

VehicleState car(int id, double x, int lane, double vx, double lane_width = 4.0) {
  VehicleState v;
  v.id = id;
  v.x = x;
  v.lane = lane;
  v.target_lane = lane;
  v.y = lane * lane_width;
  v.vx = vx;
  return v;
}

WorldState world_with(std::vector<VehicleState> others, VehicleState ego = car(0, 0, 1, 20)) {
  WorldState w;
  w.lane_count = 3;
  w.ego = ego;
  w.others = std::move(others);
  return w;
}

}  // namespace

TEST(Ttc, SpotValues) {
  EXPECT_DOUBLE_EQ(ttc(50, 25), 2.0);
  EXPECT_TRUE(std::isinf(ttc(50, 0)));
  EXPECT_TRUE(std::isinf(ttc(50, -3)));
  EXPECT_DOUBLE_EQ(ttc(0, 10), 0.0);
  EXPECT_THROW(ttc(-1, 3), std::domain_error);
}

TEST(DMinLon, SpotValues) {
  const RssParams p{1.0, 3.0, 4.0, 8.0};
  EXPECT_DOUBLE_EQ(d_min_lon(20, 10, p), 81.375);
  const RssParams zero{0.0, 0.0, 4.0, 8.0};
  EXPECT_EQ(d_min_lon(0, 15, zero), 0.0);
  EXPECT_EQ(d_min_lon(0, 0, zero), 0.0);
}

TEST(DMinLat, SpotValues) {
  const RssParams p{1.0, 3.0, 4.0, 8.0};
  EXPECT_DOUBLE_EQ(d_min_lat(1.0, -0.5, p), 1.546875);
  EXPECT_EQ(d_min_lat(0, 0, p), 0.0);
  EXPECT_EQ(d_min_lat(0, 1, p), 0.0);
}

TEST(RiskIndices, SpotValues) {
  EXPECT_DOUBLE_EQ(risk_indices(10, 0, 20, 0).lon, 0.5);
  EXPECT_EQ(risk_indices(25, 0, 20, 0).lon, 0.0);
  EXPECT_EQ(risk_indices(0, 0, 20, 0).lon, 1.0);
  EXPECT_EQ(risk_indices(0, 0, 0, 0).lon, 0.0);
  EXPECT_DOUBLE_EQ(risk_indices(0, 1, 0, 4).lat, 0.75);
}

TEST(UnifiedRisk, SpotValues) {
  const RiskParams p;
  EXPECT_DOUBLE_EQ(unified_risk(0.5, 0.4, p), 0.2);
  EXPECT_EQ(unified_risk(0.7, 0.0, {2.0, 3.0}), 0.0);
  EXPECT_EQ(unified_risk(1.0, 1.0, {2.0, 0.5}), 1.0);
}

TEST(Rp, SpotValues) {
  EXPECT_DOUBLE_EQ(rp(2, 4), 1.5);
  EXPECT_EQ(rp(kInfinity, kInfinity), 0.0);
  EXPECT_DOUBLE_EQ(rp(1, kInfinity), 1.0);
  EXPECT_THROW(rp(0, 1), std::domain_error);
  EXPECT_THROW(rp(1, -2), std::domain_error);
}

TEST(RiskMetrics, MonotonicityProbes) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double x = uniform(rng, 0, 200);
    const double v = uniform(rng, 0.01, 40);
    const double dx = uniform(rng, 0, 10);
    const double dv = uniform(rng, 0, 10);
    ASSERT_GE(ttc(x + dx, v), ttc(x, v));
    ASSERT_LE(ttc(x, v + dv), ttc(x, v));

    const RssParams p{uniform(rng, 0, 2), uniform(rng, 0, 5), uniform(rng, 1, 8), 0};
    RssParams q = p;
    q.b_max = uniform(rng, p.b_min, 10);
    const double vr = uniform(rng, 0, 40);
    const double vf = uniform(rng, 0, 40);
    const double base = d_min_lon(vr, vf, q);
    ASSERT_GE(d_min_lon(vr + dv, vf, q), base);
    ASSERT_LE(d_min_lon(vr, vf + dv, q), base);
    RssParams more = q;
    more.rho += 0.3;
    ASSERT_GE(d_min_lon(vr, vf, more), base);
    more = q;
    more.a_max += 0.5;
    ASSERT_GE(d_min_lon(vr, vf, more), base);
    more = q;
    more.b_min += 0.5;
    more.b_max = std::max(more.b_max, more.b_min);
    if (more.b_max == q.b_max) ASSERT_LE(d_min_lon(vr, vf, more), base + 1e-12);
  }
}

TEST(RiskMetrics, IndicesBoundedAndProductBelowMin) {
  Rng rng(4);
  const RiskParams p;
  for (int i = 0; i < 5000; ++i) {
    const auto idx = risk_indices(uniform(rng, 0, 50), uniform(rng, 0, 5), uniform(rng, 0, 60),
                                  uniform(rng, 0, 6));
    ASSERT_GE(idx.lon, 0.0);
    ASSERT_LE(idx.lon, 1.0);
    ASSERT_GE(idx.lat, 0.0);
    ASSERT_LE(idx.lat, 1.0);
    const double r = unified_risk(idx.lon, idx.lat, p);
    ASSERT_LE(r, std::min(idx.lon, idx.lat) + 1e-15);
  }
  EXPECT_EQ(risk_indices(30, 3, 20, 2).lon, 0.0);
  EXPECT_EQ(unified_risk(0, 0, p), 0.0);
}

TEST(RiskMetrics, MatchesOracle) {
  Rng rng(8);
  for (int i = 0; i < 1000; ++i) {
    const double rho = uniform(rng, 0.1, 2), amax = uniform(rng, 0, 5), bmin = uniform(rng, 1, 8);
    const RssParams p{rho, amax, bmin, uniform(rng, bmin, 10)};
    const double vr = uniform(rng, 0, 40), vf = uniform(rng, 0, 40);
    ASSERT_TRUE(oracle::close(d_min_lon(vr, vf, p), oracle::d_min_lon(vr, vf, rho, amax, bmin, p.b_max)));
    const double ve = uniform(rng, -3, 3), vn = uniform(rng, -3, 3);
    ASSERT_TRUE(oracle::close(d_min_lat(ve, vn, p), oracle::d_min_lat(ve, vn, rho, bmin)));
    const double x = uniform(rng, 0, 150), v = uniform(rng, -5, 30);
    ASSERT_TRUE(oracle::close(ttc(x, v), oracle::ttc(x, v)));
    const double dl = uniform(rng, 0, 80), dm = uniform(rng, 0, 100);
    const double dlat = uniform(rng, 0, 4), dmlat = uniform(rng, 0, 6);
    const auto idx = risk_indices(dl, dlat, dm, dmlat);
    ASSERT_TRUE(oracle::close(idx.lon, oracle::risk_index(dl, dm)));
    ASSERT_TRUE(oracle::close(idx.lat, oracle::risk_index(dlat, dmlat)));
    const RiskParams rp_params{uniform(rng, 0.5, 3), uniform(rng, 0.5, 3)};
    ASSERT_TRUE(oracle::close(unified_risk(idx.lon, idx.lat, rp_params),
                              oracle::unified(idx.lon, idx.lat, rp_params.beta, rp_params.gamma)));
    const double thw = uniform(rng, 0.05, 10), t = uniform(rng, 0.05, 20);
    ASSERT_TRUE(oracle::close(rp(thw, t), oracle::rp(thw, t, 1, 4)));
  }
}

TEST(Accumulate, EgoAloneLeavesReportUntouched) {
  const RiskReport r = accumulate(RiskReport{}, world_with({}));
  EXPECT_EQ(r.ttc_near_miss_count, 0);
  EXPECT_EQ(r.r_threshold_count, 0);
  EXPECT_TRUE(std::isinf(r.min_ttc));
}

TEST(Accumulate, CloseLeaderCountsNearMiss) {
  // Leader 10 m ahead bumper to bumper, closing at 10 m/s.
  auto w = world_with({car(1, 15, 1, 10)}, car(0, 0, 1, 20));
  RiskMetricParams params;
  params.risk.ttc_threshold = 2.0;
  const auto info = evaluate_step(w, params);
  EXPECT_DOUBLE_EQ(info.ttc, 1.0);
  const RiskReport r = accumulate(RiskReport{}, w, params);
  EXPECT_EQ(r.ttc_near_miss_count, 1);
  EXPECT_DOUBLE_EQ(r.min_ttc, 1.0);
}

TEST(Accumulate, SafeBranchesGiveZeroRisk) {
  auto n = car(2, 3, 2, 20);
  n.vy = 2.0;  // moving away from the ego
  auto w = world_with({car(1, 400, 1, 25), n});
  const auto info = evaluate_step(w);
  EXPECT_EQ(info.neighbor_id, 2);
  EXPECT_EQ(info.r, 0.0);
  EXPECT_EQ(accumulate(RiskReport{}, w).r_threshold_count, 0);
}

TEST(Accumulate, CutInTowardsNeighborRaisesUnifiedRisk) {
  auto ego = car(0, 0, 1, 25);
  ego.vy = 4.0;
  ego.y = 5.0;  // drifting toward lane 2
  auto neighbor = car(2, 2, 2, 25);
  auto w = world_with({car(1, 12, 1, 15), neighbor}, ego);
  const auto info = evaluate_step(w);
  EXPECT_GT(info.r_lon, 0.0);
  EXPECT_GT(info.r_lat, 0.0);
  EXPECT_NEAR(info.r, info.r_lon * info.r_lat, 1e-15);
  EXPECT_GT(info.r, 0.3);
  EXPECT_EQ(accumulate(RiskReport{}, w).r_threshold_count, 1);
}
