#include "critical/evaluation.hpp"

#include <stdexcept>

#include "critical/rng.hpp"

namespace critical {

std::uint64_t evaluation_seed(const ScenarioConfig& config, int run) {
  return derive_seed(config.seed ^ 0xe7a1ULL, static_cast<std::uint64_t>(run));
}

EvaluationSummary evaluate_policy(const ppo::PolicyParams& params,
                                  const std::vector<ScenarioConfig>& configs, int runs,
                                  const SimParams& sim) {
  if (runs < 0) throw std::invalid_argument("runs must be non-negative");
  EvaluationSummary s;
  const Policy policy = ppo::greedy_policy(params, sim);
  for (const ScenarioConfig& c : configs) {
    ConfigEvaluation ce;
    ce.config_id = c.id;
    ce.runs = runs;
    for (int run = 0; run < runs; ++run) {
      EpisodeOptions opt;
      opt.max_steps = sim.max_episode_steps;
      opt.spawn_seed = evaluation_seed(c, run);
      const EpisodeResult r = run_episode(c, policy, opt, sim);
      EvaluationEpisode e{c.id, run, r.total_reward, r.length, r.crashed, r.risk.ttc_near_miss_count,
                          r.risk.r_threshold_count};
      ce.mean_reward += e.reward;
      ce.mean_length += e.length;
      ce.crashes += e.crashed;
      ce.mean_ttc_near_miss += e.ttc_near_miss_count;
      ce.mean_r_threshold_count += e.r_threshold_count;
      s.episodes.push_back(std::move(e));
    }
    if (runs > 0) {
      ce.mean_reward /= runs;
      ce.mean_length /= runs;
      ce.mean_ttc_near_miss /= runs;
      ce.mean_r_threshold_count /= runs;
    }
    s.per_config.push_back(ce);
  }
  for (const auto& e : s.episodes) {
    s.mean_reward += e.reward;
    s.mean_length += e.length;
    s.total_crashes += e.crashed;
    s.mean_ttc_near_miss += e.ttc_near_miss_count;
    s.mean_r_threshold_count += e.r_threshold_count;
  }
  if (!s.episodes.empty()) {
    const double n = static_cast<double>(s.episodes.size());
    s.mean_reward /= n;
    s.mean_length /= n;
    s.mean_ttc_near_miss /= n;
    s.mean_r_threshold_count /= n;
  }
  return s;
}

Histogram ttc_histogram(const std::vector<EvaluationEpisode>& episodes) {
  Histogram h;
  for (const auto& e : episodes) ++h[e.ttc_near_miss_count];
  return h;
}

Histogram r_histogram(const std::vector<EvaluationEpisode>& episodes) {
  Histogram h;
  for (const auto& e : episodes) ++h[e.r_threshold_count];
  return h;
}

}  // namespace critical
