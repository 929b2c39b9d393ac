#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "critical/ppo.hpp"
#include "critical/scenario.hpp"
#include "critical/traffic_sim.hpp"

namespace critical {

struct EvaluationEpisode {
  std::string config_id;
  int run = 0;
  double reward = 0.0;
  int length = 0;
  bool crashed = false;
  int ttc_near_miss_count = 0;
  int r_threshold_count = 0;
};

struct ConfigEvaluation {
  std::string config_id;
  int runs = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  int crashes = 0;
  double mean_ttc_near_miss = 0.0;
  double mean_r_threshold_count = 0.0;
};

/// Reward, episode length and crashes. Crashes are summed over all episodes.
struct EvaluationSummary {
  std::vector<EvaluationEpisode> episodes;
  std::vector<ConfigEvaluation> per_config;  // in input order
  double mean_reward = 0.0;
  double mean_length = 0.0;
  int total_crashes = 0;
  double mean_ttc_near_miss = 0.0;
  double mean_r_threshold_count = 0.0;
};

/// Spawn seed of evaluation run `run` on a configuration. Independent of any
/// training seed so every policy meets the same traffic.
std::uint64_t evaluation_seed(const ScenarioConfig& config, int run);

/// Greedy rollouts, `runs` per configuration.
EvaluationSummary evaluate_policy(const ppo::PolicyParams& params,
                                  const std::vector<ScenarioConfig>& configs, int runs,
                                  const SimParams& sim = {});

/// Count value -> number of episodes, ascending by value.
using Histogram = std::map<int, int>;
Histogram ttc_histogram(const std::vector<EvaluationEpisode>& episodes);
Histogram r_histogram(const std::vector<EvaluationEpisode>& episodes);

}  // namespace critical
