#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "critical/evaluation.hpp"
#include "critical/loop.hpp"
#include "critical/ppo.hpp"
#include "json.hpp"

namespace critical::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

/// Experiment manifest. Stored as a JSON object, like the scenario database.
struct RunManifest {
  std::string arm = "critical";  // baseline | critical | llm
  std::uint64_t seed = 0;
  std::string train_db;
  std::string test_db;  // optional; enables per-epoch test evaluation
  int epochs = 8;
  std::size_t episodes_per_config = 10;
  std::size_t budget = 0;  // 0: size of the training database
  std::uint64_t max_steps = 500000;
  int test_runs = 10;
  bool mock_llm = false;
  double mock_failure_rate = 0.0;
  double perturb_scale = 0.1;
  double verbatim_fraction = 0.5;
  double repeat_fraction = 0.5;
  std::size_t history_limit = 10;
  loop::CriticalityWeights weights;
  double ttc_threshold = 2.0;
  double r_threshold = 0.3;
  int max_episode_steps = 120;
  ppo::PpoConfig ppo;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unknown keys and wrong types raise UsageError.
RunManifest manifest_from_json(const nlohmann::json& j, RunManifest defaults = {});
nlohmann::ordered_json to_json(const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);
/// Arm name, positive sizes and the worst-case step budget. Throws UsageError.
void validate(const RunManifest& m);

SimParams sim_params(const RunManifest& m);

struct IngestArgs {
  std::vector<std::filesystem::path> recordings;
  std::filesystem::path out_dir = ".";
  int synthetic = 0;  // synthetic recordings generated and ingested
  bool skip_bad = false;
  std::uint64_t seed = 0;
};

/// Writes <out>/database.json. Exit 3 on any unreadable recording unless skip_bad.
int cmd_ingest(const IngestArgs& args, std::ostream& err);

struct TrainOutputs {
  std::string training_log;    // JSONL, one record per update or episode
  std::string experiment_log;  // JSONL, a run header then one line per epoch
  ppo::PolicyParams params;
};

/// In-memory training run. Throws UsageError, DatabaseError or
/// std::runtime_error.
TrainOutputs train_run(const RunManifest& m, const std::vector<ScenarioConfig>& train,
                       const std::vector<ScenarioConfig>& test, std::ostream* progress = nullptr);

/// Writes training_log.jsonl, experiment_log.jsonl and policy.json.
int cmd_train(const RunManifest& m, const std::filesystem::path& out_dir, std::ostream& err);

struct EvaluateArgs {
  std::filesystem::path policy;
  std::filesystem::path test_db;
  int runs = 10;
  std::filesystem::path out_dir = ".";
  std::string label = "policy";
};

/// Summary row (reward, length, crashes), then the per-config breakdown.
std::string evaluation_table(const EvaluationSummary& s, const std::string& label);
std::string per_config_table(const EvaluationSummary& s);

/// Writes evaluation.tsv, evaluation_per_config.tsv, evaluation_episodes.jsonl.
int cmd_evaluate(const EvaluateArgs& args, const SimParams& sim, std::ostream& err);

/// Raw data of one arm read back from its logs.
struct ArmLogs {
  std::string arm;
  std::filesystem::path dir;
  std::vector<std::pair<int, double>> losses;  // update_index, loss
  std::vector<EvaluationEpisode> final_episodes;  // final-epoch test episodes
  std::vector<double> epoch_mean_r;   // per epoch test mean r_threshold_count
  std::vector<double> epoch_mean_ttc;
  std::optional<EvaluationSummary> final_test;
};

/// Accepts an arm directory or a directory of arm directories.
std::vector<ArmLogs> read_logs(const std::filesystem::path& logs);

std::string loss_table(const ArmLogs& a);
std::string histogram_table(const Histogram& h, const std::string& value_column);
std::string summary_table(const std::vector<ArmLogs>& arms);
std::string report_svg(const std::vector<ArmLogs>& arms);

/// Per arm: loss_<arm>.tsv, ttc_histogram_<arm>.tsv, r_histogram_<arm>.tsv;
/// plus summary.tsv and report.svg.
int cmd_report(const std::filesystem::path& logs, const std::filesystem::path& out_dir, std::ostream& err);

/// Full command line. Diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace critical::cli
