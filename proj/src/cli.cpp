#include "critical/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "critical/highd.hpp"
#include "critical/llm.hpp"
#include "critical/rng.hpp"

namespace critical::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fmt(double v, int digits = 6) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

template <class T>
void read_key(const json& j, const char* key, T& out, std::set<std::string>& used) {
  used.insert(key);
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw UsageError("");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw UsageError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw UsageError("");
      if (std::is_unsigned_v<T> && it->get<long long>() < 0 && !it->is_number_unsigned()) throw UsageError("");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw UsageError("");
    }
    out = it->get<T>();
  } catch (const std::exception&) {
    throw UsageError(std::string("manifest key '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, const std::set<std::string>& used, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (!used.count(k)) throw UsageError("unknown manifest key '" + where + k + "'");
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

}  // namespace

RunManifest manifest_from_json(const json& j, RunManifest m) {
  if (!j.is_object()) throw UsageError("manifest must be a JSON object");
  std::set<std::string> used;
  read_key(j, "arm", m.arm, used);
  read_key(j, "seed", m.seed, used);
  read_key(j, "train_db", m.train_db, used);
  read_key(j, "test_db", m.test_db, used);
  read_key(j, "epochs", m.epochs, used);
  read_key(j, "episodes_per_config", m.episodes_per_config, used);
  read_key(j, "budget", m.budget, used);
  read_key(j, "max_steps", m.max_steps, used);
  read_key(j, "test_runs", m.test_runs, used);
  read_key(j, "mock_llm", m.mock_llm, used);
  read_key(j, "mock_failure_rate", m.mock_failure_rate, used);
  read_key(j, "perturb_scale", m.perturb_scale, used);
  read_key(j, "verbatim_fraction", m.verbatim_fraction, used);
  read_key(j, "repeat_fraction", m.repeat_fraction, used);
  read_key(j, "history_limit", m.history_limit, used);
  read_key(j, "ttc_threshold", m.ttc_threshold, used);
  read_key(j, "r_threshold", m.r_threshold, used);
  read_key(j, "max_episode_steps", m.max_episode_steps, used);
  used.insert("weights");
  if (const auto w = j.find("weights"); w != j.end()) {
    if (!w->is_object()) throw UsageError("manifest key 'weights' must be an object");
    std::set<std::string> wu;
    read_key(*w, "ttc_near_miss", m.weights.ttc_near_miss, wu);
    read_key(*w, "r_threshold", m.weights.r_threshold, wu);
    read_key(*w, "crash", m.weights.crash, wu);
    reject_unknown(*w, wu, "weights.");
  }
  used.insert("ppo");
  if (const auto p = j.find("ppo"); p != j.end()) {
    if (!p->is_object()) throw UsageError("manifest key 'ppo' must be an object");
    std::set<std::string> pu;
    ppo::PpoConfig& c = m.ppo;
    read_key(*p, "clip_epsilon", c.clip_epsilon, pu);
    read_key(*p, "discount", c.discount, pu);
    read_key(*p, "gae_lambda", c.gae_lambda, pu);
    read_key(*p, "learning_rate", c.learning_rate, pu);
    read_key(*p, "steps_per_update", c.steps_per_update, pu);
    read_key(*p, "minibatch_size", c.minibatch_size, pu);
    read_key(*p, "update_epochs", c.update_epochs, pu);
    read_key(*p, "value_loss_coeff", c.value_loss_coeff, pu);
    read_key(*p, "entropy_coeff", c.entropy_coeff, pu);
    read_key(*p, "max_grad_norm", c.max_grad_norm, pu);
    read_key(*p, "normalize_advantages", c.normalize_advantages, pu);
    read_key(*p, "hidden", c.hidden, pu);
    read_key(*p, "adam_beta1", c.adam_beta1, pu);
    read_key(*p, "adam_beta2", c.adam_beta2, pu);
    read_key(*p, "adam_epsilon", c.adam_epsilon, pu);
    reject_unknown(*p, pu, "ppo.");
  }
  reject_unknown(j, used, "");
  return m;
}

ordered_json to_json(const RunManifest& m) {
  ordered_json j;
  j["arm"] = m.arm;
  j["seed"] = m.seed;
  j["train_db"] = m.train_db;
  j["test_db"] = m.test_db;
  j["epochs"] = m.epochs;
  j["episodes_per_config"] = m.episodes_per_config;
  j["budget"] = m.budget;
  j["max_steps"] = m.max_steps;
  j["test_runs"] = m.test_runs;
  j["mock_llm"] = m.mock_llm;
  j["mock_failure_rate"] = m.mock_failure_rate;
  j["perturb_scale"] = m.perturb_scale;
  j["verbatim_fraction"] = m.verbatim_fraction;
  j["repeat_fraction"] = m.repeat_fraction;
  j["history_limit"] = m.history_limit;
  j["weights"] = {{"ttc_near_miss", m.weights.ttc_near_miss},
                  {"r_threshold", m.weights.r_threshold},
                  {"crash", m.weights.crash}};
  j["ttc_threshold"] = m.ttc_threshold;
  j["r_threshold"] = m.r_threshold;
  j["max_episode_steps"] = m.max_episode_steps;
  const ppo::PpoConfig& c = m.ppo;
  j["ppo"] = {{"clip_epsilon", c.clip_epsilon},
              {"discount", c.discount},
              {"gae_lambda", c.gae_lambda},
              {"learning_rate", c.learning_rate},
              {"steps_per_update", c.steps_per_update},
              {"minibatch_size", c.minibatch_size},
              {"update_epochs", c.update_epochs},
              {"value_loss_coeff", c.value_loss_coeff},
              {"entropy_coeff", c.entropy_coeff},
              {"max_grad_norm", c.max_grad_norm},
              {"normalize_advantages", c.normalize_advantages},
              {"hidden", c.hidden},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_epsilon", c.adam_epsilon}};
  return j;
}

RunManifest load_manifest(const fs::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

void validate(const RunManifest& m) {
  if (m.arm != "baseline" && m.arm != "critical" && m.arm != "llm") {
    throw UsageError("arm must be baseline, critical or llm (got '" + m.arm + "')");
  }
  if (m.epochs < 1) throw UsageError("epochs must be at least 1");
  if (m.episodes_per_config < 1) throw UsageError("episodes_per_config must be at least 1");
  if (m.test_runs < 1) throw UsageError("test_runs must be at least 1");
  if (m.max_episode_steps < 1) throw UsageError("max_episode_steps must be at least 1");
  if (!(m.mock_failure_rate >= 0.0 && m.mock_failure_rate <= 1.0)) throw UsageError("mock_failure_rate must be in [0, 1]");
  if (!(m.ttc_threshold > 0.0) || !(m.r_threshold > 0.0)) throw UsageError("risk thresholds must be positive");
  if (!(m.repeat_fraction > 0.0 && m.repeat_fraction <= 1.0)) throw UsageError("repeat_fraction must be in (0, 1]");
  try {
    ppo::validate(m.ppo);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

SimParams sim_params(const RunManifest& m) {
  SimParams s;
  s.max_episode_steps = m.max_episode_steps;
  s.risk.risk.ttc_threshold = m.ttc_threshold;
  s.risk.risk.r_threshold = m.r_threshold;
  return s;
}

int cmd_ingest(const IngestArgs& args, std::ostream& err) {
  std::vector<fs::path> recordings = args.recordings;
  try {
    if (args.synthetic < 0) throw UsageError("--synthetic must be non-negative");
    if (recordings.empty() && args.synthetic == 0) throw UsageError("no recordings given (pass paths or --synthetic N)");
    if (args.synthetic > 0) {
      const fs::path dir = args.out_dir / "synthetic";
      fs::create_directories(dir);
      const int width = std::max<int>(2, static_cast<int>(std::to_string(args.synthetic).size()));
      for (int i = 0; i < args.synthetic; ++i) {
        std::string name = std::to_string(i + 1);
        name.insert(0, static_cast<std::size_t>(width) - name.size(), '0');
        const auto rec = highd::generate_synthetic(i + 1, derive_seed(args.seed, static_cast<std::uint64_t>(i)));
        highd::write_recording(dir / name, rec.recording);
        recordings.push_back(dir / name);
      }
      err << "generated " << args.synthetic << " synthetic recordings in " << dir.string() << "\n";
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  try {
    highd::IngestOptions opt;
    opt.seed = args.seed;
    const highd::IngestResult res = highd::ingest(recordings, opt);
    bool bad = false;
    for (const auto& f : res.files) {
      if (f.ok) {
        err << "ok      " << f.recording << " -> " << f.config_id << "\n";
      } else {
        bad = true;
        err << (args.skip_bad ? "skipped " : "FAILED  ") << f.recording << ": " << f.message << "\n";
      }
    }
    if (bad && !args.skip_bad) {
      err << "error: unreadable recordings (use --skip-bad to continue without them)\n";
      return kExitData;
    }
    if (res.configs.empty()) {
      err << "error: no configuration could be built\n";
      return kExitData;
    }
    const fs::path out = args.out_dir / "database.json";
    fs::create_directories(args.out_dir);
    save_database(out, res.configs);
    err << "wrote " << res.configs.size() << " configurations to " << out.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

TrainOutputs train_run(const RunManifest& m, const std::vector<ScenarioConfig>& train,
                       const std::vector<ScenarioConfig>& test, std::ostream* progress) {
  validate(m);
  if (train.empty()) throw std::runtime_error("training database is empty");
  const std::size_t budget = m.budget > 0 ? m.budget : train.size();
  const std::size_t per_epoch = std::max(budget, m.arm == "baseline" ? train.size() : budget);
  const long double worst = static_cast<long double>(m.epochs) * per_epoch * m.episodes_per_config * m.max_episode_steps;
  if (worst > static_cast<long double>(m.max_steps)) {
    throw UsageError("worst-case training length " + std::to_string(static_cast<unsigned long long>(worst)) +
                     " steps exceeds max_steps " + std::to_string(m.max_steps));
  }

  const SimParams sim = sim_params(m);
  ppo::PpoConfig pc = m.ppo;
  pc.seed = m.seed;
  ppo::Trainer trainer(ppo::highway_factory(sim), pc);

  loop::LoopOptions o;
  o.epochs = m.epochs;
  o.episodes_per_config = m.episodes_per_config;
  o.budget = budget;
  o.strategy = m.arm == "llm" ? loop::Strategy::llm : loop::Strategy::direct;
  o.adapt = m.arm != "baseline";
  o.seed = m.seed;
  o.weights = m.weights;
  o.repeat_fraction = m.repeat_fraction;
  o.perturb_scale = m.perturb_scale;
  o.verbatim_fraction = m.verbatim_fraction;
  o.history_limit = m.history_limit;
  o.test_configs = test;
  o.test_runs = m.test_runs;
  o.sim = sim;

  std::unique_ptr<llm::LlmClient> client;
  if (m.arm == "llm") {
    if (m.mock_llm) {
      client = std::make_unique<llm::LlmClient>(std::make_shared<llm::MockTransport>(m.mock_failure_rate));
    } else {
      const llm::ClientConfig cc = llm::config_from_env();
      if (cc.endpoint.empty()) throw UsageError("arm llm needs CRITICAL_LLM_ENDPOINT or --mock-llm");
      client = std::make_unique<llm::LlmClient>(cc);
    }
  }

  TrainOutputs out;
  ordered_json header;
  header["type"] = "run";
  header["arm"] = m.arm;
  header["seed"] = m.seed;
  header["manifest"] = to_json(m);
  std::vector<std::string> ids;
  for (const auto& c : train) ids.push_back(c.id);
  header["train_configs"] = ids;
  ids.clear();
  for (const auto& c : test) ids.push_back(c.id);
  header["test_configs"] = ids;
  out.experiment_log = header.dump() + "\n";

  const auto on_epoch = [&](const loop::EpochLog& e) {
    ordered_json line;
    line["type"] = "epoch";
    line.update(loop::to_json(e));
    out.experiment_log += line.dump() + "\n";
    if (progress) {
      *progress << m.arm << " epoch " << e.epoch << "/" << m.epochs << ": steps " << e.training.steps
                << ", mean reward " << fmt(e.training.mean_reward, 3) << ", crashes " << e.training.crashes;
      if (e.test) {
        *progress << ", test reward " << fmt(e.test->mean_reward, 3) << ", test crashes " << e.test->total_crashes
                  << ", test mean r " << fmt(e.test->mean_r_threshold_count, 3);
      }
      *progress << "\n";
    }
  };
  const loop::LoopResult res = loop::run_closed_loop(trainer, train, o, client.get(), on_epoch);
  out.training_log = ppo::to_jsonl(trainer.log());
  out.params = res.params;
  return out;
}

int cmd_train(const RunManifest& m, const fs::path& out_dir, std::ostream& err) {
  std::vector<ScenarioConfig> train, test;
  try {
    validate(m);
    if (m.train_db.empty()) throw UsageError("no training database (--db or train_db)");
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    train = load_database(m.train_db);
    if (!m.test_db.empty()) test = load_database(m.test_db);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  try {
    const TrainOutputs o = train_run(m, train, test, &err);
    fs::create_directories(out_dir);
    write_text(out_dir / "training_log.jsonl", o.training_log);
    write_text(out_dir / "experiment_log.jsonl", o.experiment_log);
    ppo::save_policy(out_dir / "policy.json", o.params);
    err << "wrote logs and policy to " << out_dir.string() << "\n";
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

std::string evaluation_table(const EvaluationSummary& s, const std::string& label) {
  std::ostringstream o;
  o << "model\tmean_reward\tmean_episode_length\tcrashes\tepisodes\n";
  o << label << "\t" << fmt(s.mean_reward, 3) << "\t" << fmt(s.mean_length, 3) << "\t" << s.total_crashes << "\t"
    << s.episodes.size() << "\n";
  return o.str();
}

std::string per_config_table(const EvaluationSummary& s) {
  std::ostringstream o;
  o << "config_id\truns\tmean_reward\tmean_episode_length\tcrashes\tmean_ttc_near_miss\tmean_r_threshold_count\n";
  for (const auto& c : s.per_config) {
    o << c.config_id << "\t" << c.runs << "\t" << fmt(c.mean_reward, 3) << "\t" << fmt(c.mean_length, 3) << "\t"
      << c.crashes << "\t" << fmt(c.mean_ttc_near_miss, 3) << "\t" << fmt(c.mean_r_threshold_count, 3) << "\n";
  }
  return o.str();
}

namespace {

ordered_json episode_json(const EvaluationEpisode& e) {
  ordered_json j;
  j["config_id"] = e.config_id;
  j["run"] = e.run;
  j["reward"] = std::isfinite(e.reward) ? ordered_json(e.reward) : ordered_json(nullptr);
  j["length"] = e.length;
  j["crashed"] = e.crashed;
  j["ttc_near_miss_count"] = e.ttc_near_miss_count;
  j["r_threshold_count"] = e.r_threshold_count;
  return j;
}

EvaluationEpisode episode_from_json(const json& j) {
  EvaluationEpisode e;
  e.config_id = j.value("config_id", std::string());
  e.run = j.value("run", 0);
  e.reward = j.contains("reward") && j["reward"].is_number() ? j["reward"].get<double>() : std::nan("");
  e.length = j.value("length", 0);
  e.crashed = j.value("crashed", false);
  e.ttc_near_miss_count = j.value("ttc_near_miss_count", 0);
  e.r_threshold_count = j.value("r_threshold_count", 0);
  return e;
}

// Rebuilds the summary from raw episodes; per-config rows in first-seen order.
EvaluationSummary summarize(std::vector<EvaluationEpisode> episodes) {
  EvaluationSummary s;
  std::map<std::string, std::size_t> slot;
  for (const auto& e : episodes) {
    auto [it, fresh] = slot.emplace(e.config_id, s.per_config.size());
    if (fresh) s.per_config.push_back({e.config_id});
    ConfigEvaluation& c = s.per_config[it->second];
    ++c.runs;
    c.mean_reward += e.reward;
    c.mean_length += e.length;
    c.crashes += e.crashed;
    c.mean_ttc_near_miss += e.ttc_near_miss_count;
    c.mean_r_threshold_count += e.r_threshold_count;
    s.mean_reward += e.reward;
    s.mean_length += e.length;
    s.total_crashes += e.crashed;
    s.mean_ttc_near_miss += e.ttc_near_miss_count;
    s.mean_r_threshold_count += e.r_threshold_count;
  }
  for (auto& c : s.per_config) {
    c.mean_reward /= c.runs;
    c.mean_length /= c.runs;
    c.mean_ttc_near_miss /= c.runs;
    c.mean_r_threshold_count /= c.runs;
  }
  if (!episodes.empty()) {
    const double n = static_cast<double>(episodes.size());
    s.mean_reward /= n;
    s.mean_length /= n;
    s.mean_ttc_near_miss /= n;
    s.mean_r_threshold_count /= n;
  }
  s.episodes = std::move(episodes);
  return s;
}

}  // namespace

int cmd_evaluate(const EvaluateArgs& args, const SimParams& sim, std::ostream& err) {
  if (args.runs < 1) {
    err << "usage error: runs must be at least 1\n";
    return kExitUsage;
  }
  try {
    const ppo::PolicyParams params = ppo::load_policy(args.policy);
    const std::vector<ScenarioConfig> configs = load_database(args.test_db);
    const EvaluationSummary s = evaluate_policy(params, configs, args.runs, sim);
    fs::create_directories(args.out_dir);
    write_text(args.out_dir / "evaluation.tsv", evaluation_table(s, args.label));
    write_text(args.out_dir / "evaluation_per_config.tsv", per_config_table(s));
    std::string lines;
    for (const auto& e : s.episodes) lines += episode_json(e).dump() + "\n";
    write_text(args.out_dir / "evaluation_episodes.jsonl", lines);
    err << "evaluated " << s.episodes.size() << " episodes: mean reward " << fmt(s.mean_reward, 3)
        << ", mean length " << fmt(s.mean_length, 3) << ", crashes " << s.total_crashes << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

namespace {

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(read_text(p));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw std::runtime_error(p.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

ArmLogs read_arm(const fs::path& dir) {
  ArmLogs a;
  a.dir = dir;
  a.arm = dir.filename().string();
  const auto experiment = read_jsonl(dir / "experiment_log.jsonl");
  std::vector<EvaluationEpisode> last_test;
  bool last_has_test = false;
  int last_training_episodes = 0;
  for (const auto& j : experiment) {
    const std::string type = j.value("type", std::string());
    if (type == "run") {
      a.arm = j.value("arm", a.arm);
    } else if (type == "epoch") {
      last_training_episodes = j["training"].value("episodes", 0);
      last_has_test = j.contains("test") && j["test"].is_object();
      last_test.clear();
      if (last_has_test) {
        for (const auto& e : j["test"]["episodes"]) last_test.push_back(episode_from_json(e));
        const EvaluationSummary s = summarize(last_test);
        a.epoch_mean_r.push_back(s.mean_r_threshold_count);
        a.epoch_mean_ttc.push_back(s.mean_ttc_near_miss);
      }
    }
  }
  std::vector<EvaluationEpisode> training_rows;
  if (fs::exists(dir / "training_log.jsonl")) {
    for (const auto& j : read_jsonl(dir / "training_log.jsonl")) {
      const std::string type = j.value("type", std::string());
      if (type == "update") {
        if (j.contains("loss") && j["loss"].is_number()) {
          a.losses.emplace_back(j.value("update_index", 0), j["loss"].get<double>());
        }
      } else if (type == "episode") {
        EvaluationEpisode e = episode_from_json(j);
        e.run = j.value("episode", 0);
        training_rows.push_back(std::move(e));
      }
    }
  }
  if (last_has_test) {
    a.final_episodes = std::move(last_test);
    a.final_test = summarize(a.final_episodes);
  } else {
    // No test set: fall back to the final epoch's training episodes.
    const std::size_t n = std::min<std::size_t>(training_rows.size(), static_cast<std::size_t>(last_training_episodes));
    a.final_episodes.assign(training_rows.end() - static_cast<std::ptrdiff_t>(n), training_rows.end());
  }
  return a;
}

std::string safe_name(const std::string& s) {
  std::string o;
  for (char c : s) o += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return o.empty() ? "arm" : o;
}

}  // namespace

std::vector<ArmLogs> read_logs(const fs::path& logs) {
  if (!fs::is_directory(logs)) throw std::runtime_error("log directory " + logs.string() + " does not exist");
  std::vector<ArmLogs> arms;
  if (fs::exists(logs / "experiment_log.jsonl")) {
    arms.push_back(read_arm(logs));
    return arms;
  }
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(logs)) {
    if (d.is_directory() && fs::exists(d.path() / "experiment_log.jsonl")) dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw std::runtime_error("no experiment_log.jsonl under " + logs.string());
  std::map<std::string, int> seen;
  for (const auto& d : dirs) arms.push_back(read_arm(d));
  for (const auto& a : arms) ++seen[a.arm];
  for (auto& a : arms) {
    if (seen[a.arm] > 1) a.arm += "_" + a.dir.filename().string();
  }
  return arms;
}

std::string loss_table(const ArmLogs& a) {
  std::string o = "update_index\tloss\n";
  for (const auto& [i, l] : a.losses) o += std::to_string(i) + "\t" + fmt(l, 6) + "\n";
  return o;
}

std::string histogram_table(const Histogram& h, const std::string& value_column) {
  std::string o = value_column + "\tepisodes\n";
  for (const auto& [v, n] : h) o += std::to_string(v) + "\t" + std::to_string(n) + "\n";
  return o;
}

std::string summary_table(const std::vector<ArmLogs>& arms) {
  std::ostringstream o;
  o << "arm\tmean_reward\tmean_episode_length\tcrashes\tepisodes\tmean_ttc_near_miss\tmean_r_threshold_count"
       "\tfirst_epoch_mean_r\tfinal_epoch_mean_r\n";
  for (const auto& a : arms) {
    const EvaluationSummary s = a.final_test ? *a.final_test : summarize(a.final_episodes);
    o << a.arm << "\t" << fmt(s.mean_reward, 3) << "\t" << fmt(s.mean_length, 3) << "\t" << s.total_crashes << "\t"
      << s.episodes.size() << "\t" << fmt(s.mean_ttc_near_miss, 3) << "\t" << fmt(s.mean_r_threshold_count, 3) << "\t"
      << (a.epoch_mean_r.empty() ? "nan" : fmt(a.epoch_mean_r.front(), 3)) << "\t"
      << (a.epoch_mean_r.empty() ? "nan" : fmt(a.epoch_mean_r.back(), 3)) << "\n";
  }
  return o.str();
}

namespace {

void svg_bars(std::ostringstream& o, const Histogram& h, double x0, double y0, double w, double ht,
              const std::string& title) {
  o << "<text x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(y0 - 6, 1) << "\" font-size=\"11\">" << title << "</text>\n";
  o << "<rect x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(y0, 1) << "\" width=\"" << fmt(w, 1) << "\" height=\""
    << fmt(ht, 1) << "\" fill=\"none\" stroke=\"#888\"/>\n";
  if (h.empty()) return;
  const int lo = h.begin()->first, hi = h.rbegin()->first;
  int peak = 0;
  for (const auto& [v, n] : h) peak = std::max(peak, n);
  const double bw = w / (hi - lo + 1);
  for (const auto& [v, n] : h) {
    const double bh = ht * n / peak;
    o << "<rect x=\"" << fmt(x0 + (v - lo) * bw + 1, 1) << "\" y=\"" << fmt(y0 + ht - bh, 1) << "\" width=\""
      << fmt(std::max(bw - 2, 1.0), 1) << "\" height=\"" << fmt(bh, 1) << "\" fill=\"#4a7ab5\"/>\n";
  }
  o << "<text x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(y0 + ht + 12, 1) << "\" font-size=\"9\">" << lo << "</text>\n";
  o << "<text x=\"" << fmt(x0 + w - 12, 1) << "\" y=\"" << fmt(y0 + ht + 12, 1) << "\" font-size=\"9\">" << hi
    << "</text>\n";
}

}  // namespace

std::string report_svg(const std::vector<ArmLogs>& arms) {
  const double col = 320, row = 200, pad = 30, w = col - 2 * pad, ht = row - 2 * pad;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(col * std::max<std::size_t>(arms.size(), 1), 0)
    << "\" height=\"" << fmt(row * 3, 0) << "\">\n";
  for (std::size_t k = 0; k < arms.size(); ++k) {
    const ArmLogs& a = arms[k];
    const double x0 = k * col + pad;
    o << "<text x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(pad - 6, 1) << "\" font-size=\"11\">" << a.arm
      << ": loss</text>\n";
    o << "<rect x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(pad, 1) << "\" width=\"" << fmt(w, 1) << "\" height=\""
      << fmt(ht, 1) << "\" fill=\"none\" stroke=\"#888\"/>\n";
    if (a.losses.size() >= 2) {
      double lo = a.losses[0].second, hi = lo;
      for (const auto& [i, l] : a.losses) lo = std::min(lo, l), hi = std::max(hi, l);
      const double span = hi > lo ? hi - lo : 1.0;
      o << "<polyline fill=\"none\" stroke=\"#c0392b\" points=\"";
      for (std::size_t i = 0; i < a.losses.size(); ++i) {
        const double x = x0 + w * static_cast<double>(i) / (a.losses.size() - 1);
        const double y = pad + ht * (1.0 - (a.losses[i].second - lo) / span);
        o << fmt(x, 1) << "," << fmt(y, 1) << " ";
      }
      o << "\"/>\n";
    }
    svg_bars(o, ttc_histogram(a.final_episodes), x0, row + pad, w, ht, a.arm + ": TTC near-miss counts");
    svg_bars(o, r_histogram(a.final_episodes), x0, 2 * row + pad, w, ht, a.arm + ": r threshold counts");
  }
  o << "</svg>\n";
  return o.str();
}

int cmd_report(const fs::path& logs, const fs::path& out_dir, std::ostream& err) {
  try {
    const auto arms = read_logs(logs);
    fs::create_directories(out_dir);
    for (const auto& a : arms) {
      const std::string n = safe_name(a.arm);
      write_text(out_dir / ("loss_" + n + ".tsv"), loss_table(a));
      write_text(out_dir / ("ttc_histogram_" + n + ".tsv"),
                 histogram_table(ttc_histogram(a.final_episodes), "ttc_near_miss_count"));
      write_text(out_dir / ("r_histogram_" + n + ".tsv"),
                 histogram_table(r_histogram(a.final_episodes), "r_threshold_count"));
    }
    write_text(out_dir / "summary.tsv", summary_table(arms));
    write_text(out_dir / "report.svg", report_svg(arms));
    err << "report for " << arms.size() << " arm(s) written to " << out_dir.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Critical scenario generation for highway driving policies"};
  app.require_subcommand(1);

  IngestArgs ingest_args;
  std::vector<std::string> recordings;
  std::string ingest_out = ".";
  auto* ingest = app.add_subcommand("ingest", "Build a scenario database from highD-style recordings");
  ingest->add_option("recordings", recordings, "Recording prefixes or *_tracks.csv paths");
  ingest->add_option("--out", ingest_out, "Output directory (database.json)");
  ingest->add_option("--synthetic", ingest_args.synthetic, "Generate and ingest N synthetic recordings");
  ingest->add_flag("--skip-bad", ingest_args.skip_bad, "Skip unreadable recordings");
  ingest->add_option("--seed", ingest_args.seed, "Seed");

  std::string config_path, out_dir = "run";
  RunManifest cli_m;
  int steps_per_update = 0;
  auto* train = app.add_subcommand("train", "Train one arm");
  train->add_option("--config", config_path, "Run manifest (JSON)");
  auto* o_db = train->add_option("--db", cli_m.train_db, "Training database");
  auto* o_test = train->add_option("--test-db", cli_m.test_db, "Test database evaluated after each epoch");
  auto* o_arm = train->add_option("--arm", cli_m.arm, "baseline, critical or llm");
  auto* o_seed = train->add_option("--seed", cli_m.seed, "Seed");
  train->add_option("--out", out_dir, "Output directory");
  auto* o_epochs = train->add_option("--epochs", cli_m.epochs, "Closed-loop epochs");
  auto* o_epc = train->add_option("--episodes-per-config", cli_m.episodes_per_config, "Episodes per config and epoch");
  auto* o_budget = train->add_option("--budget", cli_m.budget, "Configurations per epoch (0: database size)");
  auto* o_max = train->add_option("--max-steps", cli_m.max_steps, "Upper bound on training steps");
  auto* o_runs = train->add_option("--test-runs", cli_m.test_runs, "Runs per test config");
  auto* o_mock = train->add_flag("--mock-llm", cli_m.mock_llm, "Use the offline mock LLM");
  auto* o_fail = train->add_option("--mock-failure-rate", cli_m.mock_failure_rate, "Mock LLM failure rate");
  auto* o_spu = train->add_option("--steps-per-update", steps_per_update, "PPO rollout length");
  auto* o_ttc = train->add_option("--ttc-threshold", cli_m.ttc_threshold, "TTC near-miss threshold [s]");
  auto* o_r = train->add_option("--r-threshold", cli_m.r_threshold, "Unified risk index threshold");

  EvaluateArgs eval_args;
  std::string eval_policy, eval_db, eval_out = ".", eval_config;
  auto* evaluate = app.add_subcommand("evaluate", "Greedy evaluation of a trained policy");
  evaluate->add_option("--policy", eval_policy, "policy.json")->required();
  evaluate->add_option("--db", eval_db, "Test database")->required();
  evaluate->add_option("--runs", eval_args.runs, "Runs per configuration");
  evaluate->add_option("--out", eval_out, "Output directory");
  evaluate->add_option("--label", eval_args.label, "Model name in the table");
  evaluate->add_option("--config", eval_config, "Run manifest (simulator settings)");

  std::string logs_dir, report_out = "report";
  auto* report = app.add_subcommand("report", "Tables and figure from training logs");
  report->add_option("--logs", logs_dir, "Arm directory or directory of arm directories")->required();
  report->add_option("--out", report_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) err << sub->help();
    return kExitUsage;
  }

  if (ingest->parsed()) {
    for (const auto& r : recordings) ingest_args.recordings.emplace_back(r);
    ingest_args.out_dir = ingest_out;
    return cmd_ingest(ingest_args, err);
  }
  if (train->parsed()) {
    RunManifest m;
    try {
      if (!config_path.empty()) m = load_manifest(config_path);
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitData;
    }
    if (o_db->count()) m.train_db = cli_m.train_db;
    if (o_test->count()) m.test_db = cli_m.test_db;
    if (o_arm->count()) m.arm = cli_m.arm;
    if (o_seed->count()) m.seed = cli_m.seed;
    if (o_epochs->count()) m.epochs = cli_m.epochs;
    if (o_epc->count()) m.episodes_per_config = cli_m.episodes_per_config;
    if (o_budget->count()) m.budget = cli_m.budget;
    if (o_max->count()) m.max_steps = cli_m.max_steps;
    if (o_runs->count()) m.test_runs = cli_m.test_runs;
    if (o_mock->count()) m.mock_llm = true;
    if (o_fail->count()) m.mock_failure_rate = cli_m.mock_failure_rate;
    if (o_spu->count()) m.ppo.steps_per_update = steps_per_update;
    if (o_ttc->count()) m.ttc_threshold = cli_m.ttc_threshold;
    if (o_r->count()) m.r_threshold = cli_m.r_threshold;
    return cmd_train(m, out_dir, err);
  }
  if (evaluate->parsed()) {
    RunManifest m;
    try {
      if (!eval_config.empty()) m = load_manifest(eval_config);
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitData;
    }
    eval_args.policy = eval_policy;
    eval_args.test_db = eval_db;
    eval_args.out_dir = eval_out;
    return cmd_evaluate(eval_args, sim_params(m), err);
  }
  return cmd_report(logs_dir, report_out, err);
}

}  // namespace critical::cli
