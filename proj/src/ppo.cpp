#include "critical/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace critical::ppo {

using nlohmann::ordered_json;

int Mlp::input_size() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
int Mlp::output_size() const { return weights.empty() ? 0 : static_cast<int>(weights.back().rows()); }

std::vector<int> Mlp::hidden_sizes() const {
  std::vector<int> out;
  for (std::size_t l = 0; l + 1 < weights.size(); ++l) out.push_back(static_cast<int>(weights[l].rows()));
  return out;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

namespace {

// activations[0] is the input, activations.back() the linear output.
std::vector<Eigen::MatrixXd> forward_all(const Mlp& net, const Eigen::MatrixXd& x) {
  std::vector<Eigen::MatrixXd> a;
  a.reserve(net.weights.size() + 1);
  a.push_back(x);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Eigen::MatrixXd z = net.weights[l] * a.back();
    z.colwise() += net.biases[l];
    if (l + 1 < net.weights.size()) z = z.array().tanh().matrix();
    a.push_back(std::move(z));
  }
  return a;
}

// Writes the parameter gradient into `grad` (layout of flatten for one net).
void backward(const Mlp& net, const std::vector<Eigen::MatrixXd>& a, Eigen::MatrixXd d,
              Eigen::Ref<Eigen::VectorXd> grad) {
  std::vector<Eigen::Index> offset(net.weights.size());
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    offset[l] = pos;
    pos += net.weights[l].size() + net.biases[l].size();
  }
  for (std::size_t l = net.weights.size(); l-- > 0;) {
    const Eigen::MatrixXd gw = d * a[l].transpose();
    const Eigen::Index nw = gw.size();
    grad.segment(offset[l], nw) = Eigen::Map<const Eigen::VectorXd>(gw.data(), nw);
    grad.segment(offset[l] + nw, net.biases[l].size()) = d.rowwise().sum();
    if (l > 0) {
      d = (net.weights[l].transpose() * d).cwiseProduct((1.0 - a[l].array().square()).matrix());
    }
  }
}

void append(const Mlp& net, Eigen::VectorXd& out, Eigen::Index& pos) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    out.segment(pos, net.weights[l].size()) =
        Eigen::Map<const Eigen::VectorXd>(net.weights[l].data(), net.weights[l].size());
    pos += net.weights[l].size();
    out.segment(pos, net.biases[l].size()) = net.biases[l];
    pos += net.biases[l].size();
  }
}

void extract(Mlp& net, const Eigen::VectorXd& in, Eigen::Index& pos) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    auto& w = net.weights[l];
    w = Eigen::Map<const Eigen::MatrixXd>(in.data() + pos, w.rows(), w.cols());
    pos += w.size();
    net.biases[l] = in.segment(pos, net.biases[l].size());
    pos += net.biases[l].size();
  }
}

Eigen::MatrixXd orthogonal(int rows, int cols, double gain, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols);
  const int small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd& r = qr.matrixQR();
  for (int j = 0; j < small; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  if (rows < cols) q.transposeInPlace();
  return gain * q;
}

Eigen::VectorXd to_column(const PolicyParams& params, const std::vector<double>& observation) {
  if (static_cast<int>(observation.size()) != params.input_size()) {
    throw std::invalid_argument("observation has " + std::to_string(observation.size()) +
                                " entries, network expects " + std::to_string(params.input_size()));
  }
  return Eigen::Map<const Eigen::VectorXd>(observation.data(),
                                           static_cast<Eigen::Index>(observation.size()));
}

// Numerically stable log-softmax of one column.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

}  // namespace

Mlp make_mlp(int input, const std::vector<int>& hidden, int output, double output_gain, Rng& rng) {
  if (input <= 0 || output <= 0) throw std::invalid_argument("network sizes must be positive");
  Mlp net;
  int prev = input;
  std::vector<int> sizes = hidden;
  sizes.push_back(output);
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    if (sizes[l] <= 0) throw std::invalid_argument("hidden sizes must be positive");
    const bool last = l + 1 == sizes.size();
    net.weights.push_back(orthogonal(sizes[l], prev, last ? output_gain : std::sqrt(2.0), rng));
    net.biases.push_back(Eigen::VectorXd::Zero(sizes[l]));
    prev = sizes[l];
  }
  return net;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const { return forward_all(*this, x).back(); }

PolicyParams init_params(int observation_size, int action_count, const std::vector<int>& hidden,
                         std::uint64_t seed) {
  Rng rng(seed);
  PolicyParams p;
  p.policy = make_mlp(observation_size, hidden, action_count, 0.01, rng);
  p.value = make_mlp(observation_size, hidden, 1, 1.0, rng);
  p.init_seed = seed;
  return p;
}

Eigen::VectorXd flatten(const PolicyParams& params) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(params.policy.parameter_count() +
                                                params.value.parameter_count()));
  Eigen::Index pos = 0;
  append(params.policy, out, pos);
  append(params.value, out, pos);
  return out;
}

void unflatten(PolicyParams& params, const Eigen::VectorXd& flat) {
  const auto n = static_cast<Eigen::Index>(params.policy.parameter_count() + params.value.parameter_count());
  if (flat.size() != n) throw std::invalid_argument("parameter vector has the wrong length");
  Eigen::Index pos = 0;
  extract(params.policy, flat, pos);
  extract(params.value, flat, pos);
}

bool all_finite(const PolicyParams& params) { return flatten(params).allFinite(); }

Forward policy_forward(const PolicyParams& params, const std::vector<double>& observation) {
  const Eigen::VectorXd x = to_column(params, observation);
  const Eigen::VectorXd logp = log_softmax(params.policy.forward(x).col(0));
  Forward f;
  f.probabilities.resize(static_cast<std::size_t>(logp.size()));
  const Eigen::VectorXd p = logp.array().exp();
  const double sum = p.sum();
  for (Eigen::Index k = 0; k < p.size(); ++k) f.probabilities[static_cast<std::size_t>(k)] = p(k) / sum;
  f.value = params.value.forward(x)(0, 0);
  return f;
}

int greedy_action(const PolicyParams& params, const std::vector<double>& observation) {
  const Eigen::VectorXd z = params.policy.forward(to_column(params, observation)).col(0);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < z.size(); ++k) {
    if (z(k) > z(best)) best = k;
  }
  return static_cast<int>(best);
}

double clipped_objective(double ratio, double advantage, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

Gae compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                const std::vector<bool>& dones, double last_value, double discount,
                double gae_lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) {
    throw std::invalid_argument("rewards, values and dones must have equal length");
  }
  Gae g;
  g.advantages.assign(n, 0.0);
  g.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_value = t + 1 < n ? values[t + 1] : last_value;
    const double keep = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + discount * next_value * keep - values[t];
    running = delta + discount * gae_lambda * keep * running;
    g.advantages[t] = running;
    g.returns[t] = running + values[t];
  }
  return g;
}

void validate(const PpoConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("ppo config: " + what); };
  if (!(c.clip_epsilon > 0.0 && c.clip_epsilon < 1.0)) fail("clip_epsilon must be in (0, 1)");
  if (!(c.discount > 0.0 && c.discount <= 1.0)) fail("discount must be in (0, 1]");
  if (!(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0)) fail("gae_lambda must be in [0, 1]");
  if (!(c.learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (c.steps_per_update <= 0) fail("steps_per_update must be positive");
  if (c.minibatch_size <= 0) fail("minibatch_size must be positive");
  if (c.update_epochs < 0) fail("update_epochs must be non-negative");
  if (!(c.value_loss_coeff >= 0.0) || !(c.entropy_coeff >= 0.0)) fail("loss coefficients must be non-negative");
  if (!(c.max_grad_norm >= 0.0)) fail("max_grad_norm must be non-negative (0 disables clipping)");
  for (int h : c.hidden) {
    if (h <= 0) fail("hidden sizes must be positive");
  }
}

void RolloutBatch::check() const {
  const std::size_t n = actions.size();
  if (observations.size() != n || log_probs.size() != n || rewards.size() != n || dones.size() != n ||
      values.size() != n || advantages.size() != n || returns.size() != n) {
    throw std::invalid_argument("rollout batch arrays differ in length");
  }
}

void normalize(std::vector<double>& values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : values) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
}

LossGradient loss_and_gradient(const PolicyParams& params, const RolloutBatch& batch,
                               const std::vector<std::size_t>& indices, const PpoConfig& c) {
  const auto b = static_cast<Eigen::Index>(indices.size());
  const int in = params.input_size();
  LossGradient out;
  out.gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.policy.parameter_count() +
                                                                 params.value.parameter_count()));
  if (b == 0) return out;

  Eigen::MatrixXd x(in, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& o = batch.observations[indices[static_cast<std::size_t>(i)]];
    if (static_cast<int>(o.size()) != in) throw std::invalid_argument("observation length mismatch");
    x.col(i) = Eigen::Map<const Eigen::VectorXd>(o.data(), in);
  }
  const auto pa = forward_all(params.policy, x);
  const auto va = forward_all(params.value, x);
  const Eigen::MatrixXd& z = pa.back();
  const Eigen::MatrixXd& v = va.back();

  const double inv_b = 1.0 / static_cast<double>(b);
  const double eps = c.clip_epsilon;
  Eigen::MatrixXd dz(z.rows(), b);
  Eigen::MatrixXd dv(1, b);
  double objective = 0.0;
  double sq_error = 0.0;
  double entropy = 0.0;
  int clipped = 0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const std::size_t s = indices[static_cast<std::size_t>(i)];
    const int a = batch.actions[s];
    if (a < 0 || a >= z.rows()) throw std::invalid_argument("action out of range");
    const Eigen::VectorXd logp = log_softmax(z.col(i));
    const Eigen::VectorXd p = logp.array().exp();
    const double h = -(p.array() * logp.array()).sum();
    const double ratio = std::exp(logp(a) - batch.log_probs[s]);
    const double adv = batch.advantages[s];
    const double clip_r = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    objective += std::min(ratio * adv, clip_r * adv);
    clipped += std::abs(ratio - 1.0) > eps;
    entropy += h;
    // Only the unclipped branch carries gradient.
    const double d_ratio = ratio * adv <= clip_r * adv ? adv : 0.0;
    Eigen::VectorXd g = -p;
    g(a) += 1.0;
    dz.col(i) = (-d_ratio * ratio) * g + c.entropy_coeff * p.cwiseProduct((logp.array() + h).matrix());
    const double err = v(0, i) - batch.returns[s];
    sq_error += err * err;
    dv(0, i) = 2.0 * c.value_loss_coeff * err;
  }
  dz *= inv_b;
  dv *= inv_b;

  LossTerms& t = out.terms;
  t.policy_loss = -objective * inv_b;
  t.value_loss = sq_error * inv_b;
  t.entropy = entropy * inv_b;
  t.loss = t.policy_loss + c.value_loss_coeff * t.value_loss - c.entropy_coeff * t.entropy;
  t.clip_fraction = clipped * inv_b;

  const auto np = static_cast<Eigen::Index>(params.policy.parameter_count());
  backward(params.policy, pa, dz, out.gradient.head(np));
  backward(params.value, va, dv, out.gradient.tail(out.gradient.size() - np));
  return out;
}

UpdateResult update(const PolicyParams& params, const RolloutBatch& input, const PpoConfig& c,
                    AdamState& adam, Rng& rng) {
  input.check();
  RolloutBatch batch = input;
  if (c.normalize_advantages) normalize(batch.advantages);

  UpdateResult res{params, {}};
  Eigen::VectorXd theta = flatten(params);
  AdamState st = adam;
  if (st.m.size() != theta.size()) {
    st.m = Eigen::VectorXd::Zero(theta.size());
    st.v = Eigen::VectorXd::Zero(theta.size());
    st.step = 0;
  }

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  UpdateMetrics& m = res.metrics;
  const auto mb = static_cast<std::size_t>(c.minibatch_size);
  for (int epoch = 0; epoch < c.update_epochs && !order.empty(); ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += mb) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(start + mb, order.size())));
      LossGradient lg = loss_and_gradient(res.params, batch, idx, c);
      if (!std::isfinite(lg.terms.loss) || !lg.gradient.allFinite()) {
        throw NonFiniteError("non-finite loss in minibatch " + std::to_string(m.minibatches) +
                             " (policy " + std::to_string(lg.terms.policy_loss) + ", value " +
                             std::to_string(lg.terms.value_loss) + ", entropy " +
                             std::to_string(lg.terms.entropy) + ")");
      }
      if (m.minibatches == 0) m.first_clip_fraction = lg.terms.clip_fraction;
      m.policy_loss += lg.terms.policy_loss;
      m.value_loss += lg.terms.value_loss;
      m.entropy += lg.terms.entropy;
      m.clip_fraction += lg.terms.clip_fraction;
      m.loss += lg.terms.loss;
      ++m.minibatches;

      Eigen::VectorXd& g = lg.gradient;
      const double norm = g.norm();
      if (c.max_grad_norm > 0.0 && norm > c.max_grad_norm) g *= c.max_grad_norm / norm;
      ++st.step;
      st.m = c.adam_beta1 * st.m + (1.0 - c.adam_beta1) * g;
      st.v = c.adam_beta2 * st.v + (1.0 - c.adam_beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(st.step));
      const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(st.step));
      theta.array() -= c.learning_rate * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + c.adam_epsilon);
      if (!theta.allFinite()) throw NonFiniteError("non-finite parameters after an optimizer step");
      unflatten(res.params, theta);
    }
  }
  if (m.minibatches > 0) {
    const double n = m.minibatches;
    m.policy_loss /= n;
    m.value_loss /= n;
    m.entropy /= n;
    m.clip_fraction /= n;
    m.loss /= n;
  }
  adam = std::move(st);
  return res;
}

UpdateResult update(const PolicyParams& params, const RolloutBatch& batch, const PpoConfig& config) {
  AdamState adam;
  Rng rng(derive_seed(config.seed, 2));
  return update(params, batch, config, adam, rng);
}

HighwayEnv::HighwayEnv(SimParams params) : params_(std::move(params)) {}

std::vector<double> HighwayEnv::reset(const ScenarioConfig& config, std::uint64_t seed) {
  world_ = spawn(config, seed, params_);
  risk_ = {};
  return observe(world_, params_);
}

Environment::Step HighwayEnv::step(int action) {
  if (action < 0 || action >= kActionCount) throw std::invalid_argument("action out of range");
  StepResult r = critical::step(world_, static_cast<Action>(action), params_);
  risk_ = accumulate(risk_, r.info, params_.risk.risk);
  if (r.crashed) risk_.crashed = true;
  world_ = std::move(r.world);
  return {observe(world_, params_), r.reward, r.done, r.crashed};
}

int HighwayEnv::observation_size() const {
  return static_cast<int>(critical::observation_size(params_));
}

EnvFactory highway_factory(SimParams params) {
  return [params]() -> std::unique_ptr<Environment> { return std::make_unique<HighwayEnv>(params); };
}

namespace {

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

// NaN and infinities become null.
ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

}  // namespace

bool UpdateRecord::operator==(const UpdateRecord& o) const {
  return update_index == o.update_index && steps == o.steps && episodes == o.episodes &&
         same(mean_reward, o.mean_reward) && same(mean_episode_len, o.mean_episode_len) &&
         crash_count == o.crash_count && same(policy_loss, o.policy_loss) &&
         same(value_loss, o.value_loss) && same(entropy, o.entropy) &&
         same(clip_fraction, o.clip_fraction) && same(loss, o.loss);
}

std::vector<UpdateRecord> TrainingLog::updates() const {
  std::vector<UpdateRecord> out;
  for (const auto& e : entries) {
    if (const auto* u = std::get_if<UpdateRecord>(&e)) out.push_back(*u);
  }
  return out;
}

std::vector<EpisodeRecord> TrainingLog::episodes() const {
  std::vector<EpisodeRecord> out;
  for (const auto& e : entries) {
    if (const auto* r = std::get_if<EpisodeRecord>(&e)) out.push_back(*r);
  }
  return out;
}

std::string to_json_line(const LogEntry& entry) {
  ordered_json j;
  if (const auto* u = std::get_if<UpdateRecord>(&entry)) {
    j["type"] = "update";
    j["update_index"] = u->update_index;
    j["steps"] = u->steps;
    j["episodes"] = u->episodes;
    j["mean_reward"] = number(u->mean_reward);
    j["mean_episode_len"] = number(u->mean_episode_len);
    j["crash_count"] = u->crash_count;
    j["policy_loss"] = number(u->policy_loss);
    j["value_loss"] = number(u->value_loss);
    j["entropy"] = number(u->entropy);
    j["clip_fraction"] = number(u->clip_fraction);
    j["loss"] = number(u->loss);
  } else {
    const auto& r = std::get<EpisodeRecord>(entry);
    j["type"] = "episode";
    j["episode"] = r.episode;
    j["config_id"] = r.config_id;
    j["reward"] = number(r.reward);
    j["length"] = r.length;
    j["crashed"] = r.crashed;
    j["ttc_near_miss_count"] = r.ttc_near_miss_count;
    j["r_threshold_count"] = r.r_threshold_count;
    j["min_ttc"] = number(r.min_ttc);
    j["max_r"] = number(r.max_r);
  }
  return j.dump();
}

std::string to_jsonl(const TrainingLog& log) {
  std::string out;
  for (const auto& e : log.entries) {
    out += to_json_line(e);
    out += '\n';
  }
  return out;
}

Trainer::Trainer(EnvFactory factory, PpoConfig config)
    : config_(std::move(config)),
      action_rng_(derive_seed(config_.seed, 1)),
      shuffle_rng_(derive_seed(config_.seed, 2)) {
  validate(config_);
  if (!factory) throw std::invalid_argument("environment factory is empty");
  env_ = factory();
  params_ = init_params(env_->observation_size(), env_->action_count(), config_.hidden,
                        derive_seed(config_.seed, 0));
}

void Trainer::start_episode(const std::vector<ScenarioConfig>& configs, const ConfigSchedule& schedule) {
  if (configs.empty()) throw std::invalid_argument("no training configurations");
  const std::size_t i = schedule ? schedule(episodes_, configs.size()) : episodes_ % configs.size();
  if (i >= configs.size()) throw std::out_of_range("schedule returned an invalid configuration index");
  const ScenarioConfig& cfg = configs[i];
  obs_ = env_->reset(cfg, derive_seed(derive_seed(cfg.seed, config_.seed), episodes_));
  episode_config_ = cfg.id;
  episode_reward_ = 0.0;
  episode_length_ = 0;
  in_episode_ = true;
}

bool Trainer::step_once(const std::vector<ScenarioConfig>& configs, const ConfigSchedule& schedule,
                        std::vector<EpisodeRecord>* finished) {
  if (!in_episode_) start_episode(configs, schedule);
  const Forward f = policy_forward(params_, obs_);
  const double u = uniform01(action_rng_);
  int action = static_cast<int>(f.probabilities.size()) - 1;
  double cum = 0.0;
  for (std::size_t k = 0; k < f.probabilities.size(); ++k) {
    cum += f.probabilities[k];
    if (u < cum) {
      action = static_cast<int>(k);
      break;
    }
  }
  const Environment::Step s = env_->step(action);
  buffer_.observations.push_back(std::move(obs_));
  buffer_.actions.push_back(action);
  buffer_.log_probs.push_back(std::log(f.probabilities[static_cast<std::size_t>(action)]));
  buffer_.values.push_back(f.value);
  buffer_.rewards.push_back(s.reward);
  buffer_.dones.push_back(s.done);
  obs_ = s.observation;
  ++steps_;
  episode_reward_ += s.reward;
  ++episode_length_;

  if (s.done) {
    const RiskReport risk = env_->risk();
    EpisodeRecord r;
    r.episode = episodes_;
    r.config_id = episode_config_;
    r.reward = episode_reward_;
    r.length = episode_length_;
    r.crashed = s.crashed || risk.crashed;
    r.ttc_near_miss_count = risk.ttc_near_miss_count;
    r.r_threshold_count = risk.r_threshold_count;
    r.min_ttc = risk.min_ttc;
    r.max_r = risk.max_r;
    log_.entries.emplace_back(r);
    if (finished) finished->push_back(r);
    ++episodes_;
    ++window_episodes_;
    window_reward_ += r.reward;
    window_length_ += r.length;
    window_crashes_ += r.crashed;
    in_episode_ = false;
  }
  if (static_cast<int>(buffer_.size()) >= config_.steps_per_update) do_update();
  return s.done;
}

void Trainer::do_update() {
  const double last_value = in_episode_ ? policy_forward(params_, obs_).value : 0.0;
  Gae g = compute_gae(buffer_.rewards, buffer_.values, buffer_.dones, last_value, config_.discount,
                      config_.gae_lambda);
  buffer_.advantages = std::move(g.advantages);
  buffer_.returns = std::move(g.returns);
  UpdateResult res = update(params_, buffer_, config_, adam_, shuffle_rng_);
  params_ = std::move(res.params);

  UpdateRecord u;
  u.update_index = updates_++;
  u.steps = steps_;
  u.episodes = window_episodes_;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  u.mean_reward = window_episodes_ > 0 ? window_reward_ / window_episodes_ : nan;
  u.mean_episode_len = window_episodes_ > 0 ? window_length_ / window_episodes_ : nan;
  u.crash_count = window_crashes_;
  u.policy_loss = res.metrics.policy_loss;
  u.value_loss = res.metrics.value_loss;
  u.entropy = res.metrics.entropy;
  u.clip_fraction = res.metrics.clip_fraction;
  u.loss = res.metrics.loss;
  log_.entries.emplace_back(u);

  buffer_ = {};
  window_episodes_ = 0;
  window_reward_ = 0.0;
  window_length_ = 0.0;
  window_crashes_ = 0;
}

void Trainer::run_steps(const std::vector<ScenarioConfig>& configs, std::uint64_t steps,
                        const ConfigSchedule& schedule) {
  if (steps > 0 && configs.empty()) throw std::invalid_argument("no training configurations");
  for (std::uint64_t i = 0; i < steps; ++i) step_once(configs, schedule, nullptr);
}

std::vector<EpisodeRecord> Trainer::run_episodes(const std::vector<ScenarioConfig>& configs,
                                                 std::size_t count, const ConfigSchedule& schedule) {
  if (count > 0 && configs.empty()) throw std::invalid_argument("no training configurations");
  std::vector<EpisodeRecord> finished;
  while (finished.size() < count) step_once(configs, schedule, &finished);
  return finished;
}

TrainResult train(const EnvFactory& factory, const std::vector<ScenarioConfig>& configs,
                  const PpoConfig& config, std::uint64_t total_steps, const ConfigSchedule& schedule) {
  if (configs.empty()) throw std::invalid_argument("no training configurations");
  Trainer t(factory, config);
  t.run_steps(configs, total_steps, schedule);
  return {t.params(), t.log()};
}

namespace {

ordered_json net_json(const Mlp& net) {
  ordered_json layers = ordered_json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& w = net.weights[l];
    ordered_json layer;
    layer["rows"] = w.rows();
    layer["cols"] = w.cols();
    std::vector<double> rows;
    rows.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) rows.push_back(w(i, j));
    }
    layer["weights"] = rows;
    layer["bias"] = std::vector<double>(net.biases[l].data(), net.biases[l].data() + net.biases[l].size());
    layers.push_back(std::move(layer));
  }
  return layers;
}

Mlp net_from_json(const ordered_json& layers) {
  Mlp net;
  Eigen::Index prev = -1;
  for (const auto& layer : layers) {
    const auto rows = layer.at("rows").get<Eigen::Index>();
    const auto cols = layer.at("cols").get<Eigen::Index>();
    const auto w = layer.at("weights").get<std::vector<double>>();
    const auto b = layer.at("bias").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 || static_cast<Eigen::Index>(w.size()) != rows * cols ||
        static_cast<Eigen::Index>(b.size()) != rows || (prev >= 0 && cols != prev)) {
      throw std::invalid_argument("policy file: inconsistent layer shapes");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = w[static_cast<std::size_t>(i * cols + j)];
    }
    net.weights.push_back(std::move(m));
    net.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), rows));
    prev = rows;
  }
  if (net.weights.empty()) throw std::invalid_argument("policy file: network has no layers");
  return net;
}

}  // namespace

std::string serialize_policy(const PolicyParams& params) {
  ordered_json j;
  j["init_seed"] = params.init_seed;
  j["input_size"] = params.input_size();
  j["action_count"] = params.action_count();
  j["policy"] = net_json(params.policy);
  j["value"] = net_json(params.value);
  return j.dump();
}

PolicyParams parse_policy(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw std::invalid_argument(std::string("policy file: ") + e.what());
  }
  PolicyParams p;
  try {
    p.init_seed = j.value("init_seed", std::uint64_t{0});
    p.policy = net_from_json(j.at("policy"));
    p.value = net_from_json(j.at("value"));
  } catch (const ordered_json::exception& e) {
    throw std::invalid_argument(std::string("policy file: ") + e.what());
  }
  if (p.policy.input_size() != p.value.input_size() || p.value.output_size() != 1) {
    throw std::invalid_argument("policy file: policy and value networks do not match");
  }
  if (!all_finite(p)) throw std::invalid_argument("policy file: non-finite parameter");
  return p;
}

void save_policy(const std::filesystem::path& path, const PolicyParams& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize_policy(params) << '\n';
}

PolicyParams load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_policy(ss.str());
}

Policy greedy_policy(PolicyParams params, SimParams sim) {
  return [params = std::move(params), sim = std::move(sim)](const WorldState& world) {
    return static_cast<Action>(greedy_action(params, observe(world, sim)));
  };
}

}  // namespace critical::ppo
