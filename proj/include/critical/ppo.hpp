#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "critical/rng.hpp"
#include "critical/scenario.hpp"
#include "critical/traffic_sim.hpp"

namespace critical::ppo {

/// Fully connected network: tanh hidden layers, linear output layer.
struct Mlp {
  std::vector<Eigen::MatrixXd> weights;  // layer l maps size[l] -> size[l+1]
  std::vector<Eigen::VectorXd> biases;

  int input_size() const;
  int output_size() const;
  std::vector<int> hidden_sizes() const;
  std::size_t parameter_count() const;

  /// Columns of `x` are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;

  bool operator==(const Mlp&) const = default;
};

/// Orthogonal initialization; hidden layers use gain sqrt(2), the output
/// layer `output_gain`. Biases start at zero.
Mlp make_mlp(int input, const std::vector<int>& hidden, int output, double output_gain, Rng& rng);

struct PolicyParams {
  Mlp policy;  // observation -> action logits
  Mlp value;   // observation -> scalar
  std::uint64_t init_seed = 0;

  int input_size() const { return policy.input_size(); }
  int action_count() const { return policy.output_size(); }
  bool operator==(const PolicyParams&) const = default;
};

PolicyParams init_params(int observation_size, int action_count, const std::vector<int>& hidden,
                         std::uint64_t seed);

/// Policy parameters first, then value parameters, layer by layer
/// (weights column-major, then biases).
Eigen::VectorXd flatten(const PolicyParams& params);
void unflatten(PolicyParams& params, const Eigen::VectorXd& flat);
bool all_finite(const PolicyParams& params);

struct Forward {
  std::vector<double> probabilities;
  double value = 0.0;
};

/// Throws std::invalid_argument when the observation length does not match.
Forward policy_forward(const PolicyParams& params, const std::vector<double>& observation);

/// Action with the highest probability (lowest index on ties).
int greedy_action(const PolicyParams& params, const std::vector<double>& observation);

/// min(r A, clip(r, 1 - eps, 1 + eps) A)
double clipped_objective(double ratio, double advantage, double epsilon);

struct Gae {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// dones[t] marks that the episode ended after step t, so no bootstrap flows
/// from t + 1. `last_value` bootstraps the step after the final one.
Gae compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                const std::vector<bool>& dones, double last_value, double discount,
                double gae_lambda);

struct PpoConfig {
  double clip_epsilon = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  double learning_rate = 3e-4;
  int steps_per_update = 4096;
  int minibatch_size = 64;
  int update_epochs = 10;
  double value_loss_coeff = 0.5;
  double entropy_coeff = 0.01;
  double max_grad_norm = 0.5;
  bool normalize_advantages = true;
  std::vector<int> hidden{64, 64};
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument on out-of-range fields.
void validate(const PpoConfig& config);

struct RolloutBatch {
  std::vector<std::vector<double>> observations;
  std::vector<int> actions;
  std::vector<double> log_probs;  // under the collection policy
  std::vector<double> rewards;
  std::vector<bool> dones;
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return actions.size(); }
  /// Throws std::invalid_argument when array lengths disagree.
  void check() const;
};

/// Zero mean, unit variance (population). A constant vector becomes zeros.
void normalize(std::vector<double>& values);

struct LossTerms {
  double policy_loss = 0.0;  // negated mean clipped objective
  double value_loss = 0.0;   // mean squared error
  double entropy = 0.0;      // mean policy entropy
  double loss = 0.0;         // policy + c_v value - c_e entropy
  double clip_fraction = 0.0;
};

struct LossGradient {
  LossTerms terms;
  Eigen::VectorXd gradient;  // layout of flatten()
};

/// Combined loss over the selected samples and its exact gradient.
LossGradient loss_and_gradient(const PolicyParams& params, const RolloutBatch& batch,
                               const std::vector<std::size_t>& indices, const PpoConfig& config);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

struct UpdateMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double loss = 0.0;
  /// Clip fraction of the very first minibatch, before any parameter change.
  double first_clip_fraction = 0.0;
  int minibatches = 0;
};

struct UpdateResult {
  PolicyParams params;
  UpdateMetrics metrics;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// update_epochs passes of shuffled minibatch Adam steps. Advantages are
/// normalized over the whole batch first when the config asks for it.
/// Metrics are minibatch averages. Throws NonFiniteError (leaving `adam`
/// untouched) when a loss or parameter stops being finite.
UpdateResult update(const PolicyParams& params, const RolloutBatch& batch, const PpoConfig& config,
                    AdamState& adam, Rng& rng);
UpdateResult update(const PolicyParams& params, const RolloutBatch& batch, const PpoConfig& config);

/// One reinforcement-learning environment instance.
class Environment {
 public:
  struct Step {
    std::vector<double> observation;
    double reward = 0.0;
    bool done = false;
    bool crashed = false;
  };

  virtual ~Environment() = default;
  virtual std::vector<double> reset(const ScenarioConfig& config, std::uint64_t seed) = 0;
  virtual Step step(int action) = 0;
  virtual int observation_size() const = 0;
  virtual int action_count() const = 0;
  /// Safety summary of the current episode so far.
  virtual RiskReport risk() const = 0;
};

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

/// The highway simulator as an environment.
class HighwayEnv : public Environment {
 public:
  explicit HighwayEnv(SimParams params = {});
  std::vector<double> reset(const ScenarioConfig& config, std::uint64_t seed) override;
  Step step(int action) override;
  int observation_size() const override;
  int action_count() const override { return kActionCount; }
  RiskReport risk() const override { return risk_; }
  const WorldState& world() const { return world_; }

 private:
  SimParams params_;
  WorldState world_;
  RiskReport risk_;
};

EnvFactory highway_factory(SimParams params = {});

struct EpisodeRecord {
  std::uint64_t episode = 0;
  std::string config_id;
  double reward = 0.0;
  int length = 0;
  bool crashed = false;
  int ttc_near_miss_count = 0;
  int r_threshold_count = 0;
  double min_ttc = kInfinity;
  double max_r = 0.0;

  bool operator==(const EpisodeRecord&) const = default;
};

struct UpdateRecord {
  int update_index = 0;
  std::uint64_t steps = 0;  // environment steps so far
  int episodes = 0;         // finished during this collection window
  double mean_reward = 0.0;        // NaN when no episode finished
  double mean_episode_len = 0.0;   // NaN when no episode finished
  int crash_count = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double loss = 0.0;

  bool operator==(const UpdateRecord&) const;
};

using LogEntry = std::variant<UpdateRecord, EpisodeRecord>;

struct TrainingLog {
  std::vector<LogEntry> entries;  // in the order they happened

  std::vector<UpdateRecord> updates() const;
  std::vector<EpisodeRecord> episodes() const;
  bool empty() const { return entries.empty(); }
};

std::string to_json_line(const LogEntry& entry);
std::string to_jsonl(const TrainingLog& log);

/// Picks the configuration index for a new episode.
using ConfigSchedule = std::function<std::size_t(std::uint64_t episode, std::size_t config_count)>;

/// Stateful PPO learner. Rollout and optimizer state persist across calls so
/// training can be interleaved with curriculum changes.
class Trainer {
 public:
  Trainer(EnvFactory factory, PpoConfig config);

  /// Exactly `steps` more environment steps. An unfinished episode carries
  /// over to the next call.
  void run_steps(const std::vector<ScenarioConfig>& configs, std::uint64_t steps,
                 const ConfigSchedule& schedule = {});

  /// Runs until `count` more episodes have finished and returns their records.
  std::vector<EpisodeRecord> run_episodes(const std::vector<ScenarioConfig>& configs,
                                          std::size_t count, const ConfigSchedule& schedule = {});

  const PolicyParams& params() const { return params_; }
  const TrainingLog& log() const { return log_; }
  const PpoConfig& config() const { return config_; }
  std::uint64_t total_steps() const { return steps_; }
  std::uint64_t total_episodes() const { return episodes_; }

 private:
  bool step_once(const std::vector<ScenarioConfig>& configs, const ConfigSchedule& schedule,
                 std::vector<EpisodeRecord>* finished);
  void start_episode(const std::vector<ScenarioConfig>& configs, const ConfigSchedule& schedule);
  void do_update();

  PpoConfig config_;
  std::unique_ptr<Environment> env_;
  PolicyParams params_;
  AdamState adam_;
  Rng action_rng_;
  Rng shuffle_rng_;
  TrainingLog log_;

  RolloutBatch buffer_;
  std::vector<double> obs_;
  bool in_episode_ = false;
  std::string episode_config_;
  double episode_reward_ = 0.0;
  int episode_length_ = 0;
  std::uint64_t steps_ = 0;
  std::uint64_t episodes_ = 0;
  int updates_ = 0;
  // Episodes finished since the last update.
  int window_episodes_ = 0;
  double window_reward_ = 0.0;
  double window_length_ = 0.0;
  int window_crashes_ = 0;
};

struct TrainResult {
  PolicyParams params;
  TrainingLog log;
};

/// Throws std::invalid_argument for an empty config list.
TrainResult train(const EnvFactory& factory, const std::vector<ScenarioConfig>& configs,
                  const PpoConfig& config, std::uint64_t total_steps,
                  const ConfigSchedule& schedule = {});

std::string serialize_policy(const PolicyParams& params);
PolicyParams parse_policy(const std::string& text);
void save_policy(const std::filesystem::path& path, const PolicyParams& params);
PolicyParams load_policy(const std::filesystem::path& path);

/// Greedy closed-loop policy for run_episode.
Policy greedy_policy(PolicyParams params, SimParams sim = {});

}  // namespace critical::ppo
