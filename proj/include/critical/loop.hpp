#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "critical/evaluation.hpp"
#include "critical/llm.hpp"
#include "critical/ppo.hpp"
#include "critical/scenario.hpp"
#include "critical/traffic_sim.hpp"
#include "json.hpp"

namespace critical::loop {

struct CriticalityWeights {
  double ttc_near_miss = 1.0;
  double r_threshold = 1.0;
  double crash = 5.0;
};

struct CriticalityRecord {
  std::string config_id;
  int episodes_seen = 0;  // occurrence N
  double mean_ttc_near_miss = 0.0;
  double mean_r_threshold_count = 0.0;
  double exceedance_fraction = 0.0;  // episodes where either count > 0
  double crash_rate = 0.0;
  double criticality_score = 0.0;  // Gamma
  double mean_reward = 0.0;
  double mean_length = 0.0;
};

/// One record per config id that occurs in `rows`, ordered as in `known_ids`.
/// Throws std::invalid_argument for a row whose id is not known.
std::vector<CriticalityRecord> aggregate(const std::vector<ppo::EpisodeRecord>& rows,
                                         const std::vector<std::string>& known_ids,
                                         const CriticalityWeights& weights = {});

struct Thresholds {
  double gamma_threshold = 1.0;
  double occurrence_threshold = 1.0;
  double repeat_fraction = 0.5;
};

/// 75th percentile of Gamma (floored at `gamma_floor`) and median episodes_seen.
Thresholds adaptive_thresholds(const std::vector<CriticalityRecord>& records,
                               double repeat_fraction = 0.5, double gamma_floor = 1e-9);

/// Linear-interpolation percentile (q in [0, 1]). Throws on empty input.
double percentile(std::vector<double> values, double q);

enum class Label { boundary, edge_case, critical, benign };
std::string_view to_string(Label l);

struct Classification {
  Label label = Label::benign;  // boundary before edge_case; never `critical` on its own
  bool boundary = false;
  bool edge_case = false;
  bool critical = false;
};

/// Throws std::invalid_argument for non-positive thresholds.
Classification classify(const CriticalityRecord& record, const Thresholds& thresholds);

enum class Strategy { direct, llm };
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

struct SelectionOptions {
  std::size_t budget = 1;
  Strategy strategy = Strategy::direct;
  std::uint64_t seed = 0;
  double perturb_scale = 0.1;
  double verbatim_fraction = 0.5;  // share of the budget copied verbatim (rounded up)
  std::string id_prefix = "gen";   // offspring ids: <prefix>-<index>
  RangeTable ranges;
  std::size_t history_limit = 10;
  /// Extra acceptance test for offspring (empty: accept all valid configs).
  std::function<bool(const ScenarioConfig&)> admissible;
};

/// True when the configuration spawns for every possible ego lane.
bool spawnable(const ScenarioConfig& config, const SimParams& sim = {});

struct SelectionResult {
  std::vector<ScenarioConfig> configs;  // exactly budget entries
  std::vector<std::string> parents;     // ranked parent ids
  bool fallback_to_top_gamma = false;   // no config was critical
  int verbatim = 0;
  int perturbed = 0;
  int llm_requests = 0;
  int llm_accepted = 0;
  int llm_fallbacks = 0;
  std::vector<std::string> notes;
};

/// Builds the next epoch's configurations. `pool` must contain every config
/// referenced by `records`. `llm` is required iff strategy is llm. Throws
/// std::invalid_argument on a zero budget or missing pieces.
SelectionResult next_epoch_configs(const std::vector<CriticalityRecord>& records,
                                   const std::vector<Classification>& classes,
                                   const std::vector<ScenarioConfig>& pool,
                                   const SelectionOptions& options, llm::LlmClient* llm = nullptr,
                                   const std::vector<llm::HistoryEntry>& history = {});

llm::FailureType failure_of(const CriticalityRecord& record);
llm::OutcomeSummary outcome_of(const CriticalityRecord& record);

struct TrainingSummary {
  std::uint64_t steps = 0;  // cumulative environment steps at epoch end
  int episodes = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  int crashes = 0;
  double mean_ttc_near_miss = 0.0;
  double mean_r_threshold_count = 0.0;
  int updates = 0;
  double mean_loss = 0.0;  // NaN when no update ran in the epoch
};

struct EpochLog {
  int epoch = 0;
  std::vector<std::string> config_ids;  // trained on this epoch
  TrainingSummary training;
  std::vector<CriticalityRecord> records;  // cumulative statistics
  std::vector<Classification> classes;
  Thresholds thresholds;
  std::optional<SelectionResult> selection;  // absent for the baseline arm
  std::optional<EvaluationSummary> test;
};

struct LoopOptions {
  int epochs = 1;
  std::size_t episodes_per_config = 10;
  std::size_t budget = 0;  // 0: size of the initial config set
  Strategy strategy = Strategy::direct;
  bool adapt = true;  // false: train on the initial configs every epoch (baseline)
  std::uint64_t seed = 0;
  CriticalityWeights weights;
  double repeat_fraction = 0.5;
  double perturb_scale = 0.1;
  double verbatim_fraction = 0.5;
  std::size_t history_limit = 10;
  RangeTable ranges;
  std::vector<ScenarioConfig> test_configs;  // evaluated after every epoch when non-empty
  int test_runs = 10;
  SimParams sim;
};

struct LoopResult {
  ppo::PolicyParams params;
  std::vector<EpochLog> epochs;
  std::vector<ScenarioConfig> final_configs;
};

/// Train one epoch, aggregate over the whole history, classify, select.
/// With adapt = false the selection step is skipped entirely.
LoopResult run_closed_loop(ppo::Trainer& trainer, const std::vector<ScenarioConfig>& initial,
                           const LoopOptions& options, llm::LlmClient* llm = nullptr,
                           const std::function<void(const EpochLog&)>& on_epoch = {});

nlohmann::ordered_json to_json(const CriticalityRecord& r);
nlohmann::ordered_json to_json(const EpochLog& e);

}  // namespace critical::loop
