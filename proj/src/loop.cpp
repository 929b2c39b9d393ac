#include "critical/loop.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include "critical/rng.hpp"

namespace critical::loop {

using nlohmann::ordered_json;

std::vector<CriticalityRecord> aggregate(const std::vector<ppo::EpisodeRecord>& rows,
                                         const std::vector<std::string>& known_ids,
                                         const CriticalityWeights& w) {
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < known_ids.size(); ++i) slot.emplace(known_ids[i], i);
  std::vector<CriticalityRecord> acc(known_ids.size());
  for (const auto& r : rows) {
    const auto it = slot.find(r.config_id);
    if (it == slot.end()) throw std::invalid_argument("episode row references unknown config '" + r.config_id + "'");
    CriticalityRecord& c = acc[it->second];
    ++c.episodes_seen;
    c.mean_ttc_near_miss += r.ttc_near_miss_count;
    c.mean_r_threshold_count += r.r_threshold_count;
    c.exceedance_fraction += (r.ttc_near_miss_count > 0 || r.r_threshold_count > 0) ? 1.0 : 0.0;
    c.crash_rate += r.crashed ? 1.0 : 0.0;
    c.mean_reward += r.reward;
    c.mean_length += r.length;
  }
  std::vector<CriticalityRecord> out;
  for (std::size_t i = 0; i < known_ids.size(); ++i) {
    CriticalityRecord c = acc[i];
    if (c.episodes_seen == 0) continue;
    const double n = c.episodes_seen;
    c.config_id = known_ids[i];
    c.mean_ttc_near_miss /= n;
    c.mean_r_threshold_count /= n;
    c.exceedance_fraction /= n;
    c.crash_rate /= n;
    c.mean_reward /= n;
    c.mean_length /= n;
    c.criticality_score =
        w.ttc_near_miss * c.mean_ttc_near_miss + w.r_threshold * c.mean_r_threshold_count + w.crash * c.crash_rate;
    out.push_back(std::move(c));
  }
  return out;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Thresholds adaptive_thresholds(const std::vector<CriticalityRecord>& records, double repeat_fraction,
                               double gamma_floor) {
  Thresholds t;
  t.repeat_fraction = repeat_fraction;
  if (records.empty()) return t;
  std::vector<double> gamma, seen;
  for (const auto& r : records) {
    gamma.push_back(r.criticality_score);
    seen.push_back(r.episodes_seen);
  }
  t.gamma_threshold = std::max(percentile(gamma, 0.75), gamma_floor);
  t.occurrence_threshold = std::max(percentile(seen, 0.5), 1.0);
  return t;
}

std::string_view to_string(Label l) {
  switch (l) {
    case Label::boundary: return "boundary";
    case Label::edge_case: return "edge_case";
    case Label::critical: return "critical";
    case Label::benign: break;
  }
  return "benign";
}

Classification classify(const CriticalityRecord& r, const Thresholds& t) {
  if (!(t.gamma_threshold > 0.0) || !(t.occurrence_threshold > 0.0) || !(t.repeat_fraction > 0.0)) {
    throw std::invalid_argument("classification thresholds must be positive");
  }
  Classification c;
  c.boundary = r.exceedance_fraction >= t.repeat_fraction;
  c.edge_case = r.criticality_score >= t.gamma_threshold && r.episodes_seen < t.occurrence_threshold;
  c.critical = c.boundary || c.edge_case;
  c.label = c.boundary ? Label::boundary : c.edge_case ? Label::edge_case : Label::benign;
  return c;
}

std::string_view to_string(Strategy s) { return s == Strategy::llm ? "llm" : "direct"; }

Strategy parse_strategy(std::string_view name) {
  if (name == "direct") return Strategy::direct;
  if (name == "llm") return Strategy::llm;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

llm::FailureType failure_of(const CriticalityRecord& r) {
  if (r.crash_rate > 0.0) return llm::FailureType::crash;
  if (r.exceedance_fraction > 0.0) return llm::FailureType::near_miss;
  return llm::FailureType::none;
}

llm::OutcomeSummary outcome_of(const CriticalityRecord& r) {
  return {r.episodes_seen, r.mean_reward, r.mean_length, r.crash_rate, r.mean_ttc_near_miss,
          r.mean_r_threshold_count};
}

SelectionResult next_epoch_configs(const std::vector<CriticalityRecord>& records,
                                   const std::vector<Classification>& classes,
                                   const std::vector<ScenarioConfig>& pool, const SelectionOptions& o,
                                   llm::LlmClient* client, const std::vector<llm::HistoryEntry>& history) {
  if (o.budget == 0) throw std::invalid_argument("selection budget must be at least 1");
  if (records.size() != classes.size()) throw std::invalid_argument("one classification per record is required");
  if (records.empty()) throw std::invalid_argument("no criticality records to select from");
  if (o.strategy == Strategy::llm && !client) throw std::invalid_argument("llm strategy needs an LLM client");

  std::map<std::string, const ScenarioConfig*> by_id;
  for (const auto& c : pool) by_id[c.id] = &c;
  for (const auto& r : records) {
    if (!by_id.count(r.config_id)) throw std::invalid_argument("record for unknown config '" + r.config_id + "'");
  }

  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].criticality_score != records[b].criticality_score) {
      return records[a].criticality_score > records[b].criticality_score;
    }
    return records[a].config_id < records[b].config_id;
  });
  SelectionResult res;
  std::vector<const ScenarioConfig*> parents;
  for (std::size_t i : order) {
    if (classes[i].critical) parents.push_back(by_id.at(records[i].config_id));
  }
  if (parents.empty()) {
    res.fallback_to_top_gamma = true;
    for (std::size_t i : order) parents.push_back(by_id.at(records[i].config_id));
  }
  for (const auto* p : parents) res.parents.push_back(p->id);

  const auto want_verbatim =
      static_cast<std::size_t>(std::ceil(static_cast<double>(o.budget) * std::clamp(o.verbatim_fraction, 0.0, 1.0)));
  const std::size_t n_verbatim = std::min({std::max<std::size_t>(want_verbatim, 1), parents.size(), o.budget});
  for (std::size_t i = 0; i < n_verbatim; ++i) res.configs.push_back(*parents[i]);
  res.verbatim = static_cast<int>(n_verbatim);

  std::set<std::string> taken;
  for (const auto& c : pool) taken.insert(c.id);
  auto fresh_id = [&](std::size_t k) {
    std::string id = o.id_prefix + "-" + std::to_string(k);
    while (taken.count(id)) id += "'";
    taken.insert(id);
    return id;
  };
  auto duplicate = [&](const ScenarioConfig& c) {
    return std::any_of(res.configs.begin(), res.configs.end(),
                       [&](const ScenarioConfig& x) { return same_content(x, c); });
  };
  auto admissible = [&](const ScenarioConfig& c) { return !o.admissible || o.admissible(c); };
  auto perturbed = [&](const ScenarioConfig& parent, std::size_t k) {
    std::optional<ScenarioConfig> fallback;
    for (std::uint64_t attempt = 0; attempt < 20; ++attempt) {
      ScenarioConfig child =
          perturb_config(parent, o.perturb_scale, derive_seed(o.seed, attempt * o.budget + k), o.ranges);
      if (!admissible(child)) continue;
      if (!duplicate(child)) return child;
      if (!fallback) fallback = child;
    }
    if (fallback) return *fallback;
    res.notes.push_back("offspring " + std::to_string(k) + ": no admissible perturbation of " + parent.id +
                        ", parent copied");
    return parent;
  };

  const std::size_t n_offspring = o.budget - n_verbatim;
  for (std::size_t k = 0; k < n_offspring; ++k) {
    const ScenarioConfig& parent = *parents[k % parents.size()];
    std::optional<ScenarioConfig> child;
    if (o.strategy == Strategy::llm) {
      llm::PromptContext ctx;
      ctx.history = history;
      ctx.ranges = o.ranges;
      ctx.history_limit = o.history_limit;
      ctx.base = parent;
      ++res.llm_requests;
      const llm::LlmSuggestion s = client->request_suggestion(llm::build_prompt(ctx), parent);
      std::string reason;
      if (s.validity != llm::Validity::valid) {
        reason = std::string(llm::to_string(s.validity)) + (s.offending_key.empty() ? "" : " (" + s.offending_key + ")");
      } else if (duplicate(*s.config)) {
        reason = "duplicate suggestion";
      } else if (!admissible(*s.config)) {
        reason = "suggestion cannot be spawned";
      }
      if (reason.empty()) {
        child = *s.config;
        ++res.llm_accepted;
      } else {
        ++res.llm_fallbacks;
        res.notes.push_back("offspring " + std::to_string(k) + " of " + parent.id + ": " + reason +
                            ", perturbation used");
      }
    }
    if (!child) {
      child = perturbed(parent, k);
      ++res.perturbed;
    }
    child->id = fresh_id(k);
    validate(*child, o.ranges);
    res.configs.push_back(std::move(*child));
  }
  if (o.strategy == Strategy::llm && res.llm_requests > 0 && res.llm_accepted == 0) {
    res.notes.push_back("all " + std::to_string(res.llm_requests) +
                        " LLM requests failed; epoch is fully perturbation-backed");
  }
  return res;
}

bool spawnable(const ScenarioConfig& config, const SimParams& sim) {
  for (int lane = 0; lane < config.lane_count; ++lane) {
    SimParams p = sim;
    p.ego_lane = lane;
    try {
      spawn(config, config.seed, p);
    } catch (const SpawnError&) {
      return false;
    }
  }
  return true;
}

LoopResult run_closed_loop(ppo::Trainer& trainer, const std::vector<ScenarioConfig>& initial,
                           const LoopOptions& o, llm::LlmClient* client,
                           const std::function<void(const EpochLog&)>& on_epoch) {
  if (initial.empty()) throw std::invalid_argument("closed loop needs at least one configuration");
  if (o.episodes_per_config == 0) throw std::invalid_argument("episodes_per_config must be positive");
  if (o.adapt && o.strategy == Strategy::llm && !client) throw std::invalid_argument("llm strategy needs an LLM client");
  std::vector<ScenarioConfig> pool;
  std::vector<std::string> pool_ids;
  std::set<std::string> seen;
  for (const auto& c : initial) {
    validate(c, o.ranges);
    if (!seen.insert(c.id).second) throw std::invalid_argument("duplicate config id '" + c.id + "'");
    pool.push_back(c);
    pool_ids.push_back(c.id);
  }
  const std::size_t budget = o.budget > 0 ? o.budget : initial.size();

  LoopResult result;
  std::vector<ScenarioConfig> configs = initial;
  std::vector<ppo::EpisodeRecord> history_rows;
  std::vector<llm::HistoryEntry> llm_history;
  for (int epoch = 1; epoch <= o.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    for (const auto& c : configs) log.config_ids.push_back(c.id);

    const std::uint64_t start = trainer.total_episodes();
    const std::size_t log_start = trainer.log().entries.size();
    const auto rows = trainer.run_episodes(
        configs, o.episodes_per_config * configs.size(),
        [start](std::uint64_t ep, std::size_t n) { return static_cast<std::size_t>((ep - start) % n); });

    TrainingSummary& t = log.training;
    t.steps = trainer.total_steps();
    t.episodes = static_cast<int>(rows.size());
    for (const auto& r : rows) {
      t.mean_reward += r.reward;
      t.mean_length += r.length;
      t.crashes += r.crashed;
      t.mean_ttc_near_miss += r.ttc_near_miss_count;
      t.mean_r_threshold_count += r.r_threshold_count;
    }
    if (!rows.empty()) {
      const double n = static_cast<double>(rows.size());
      t.mean_reward /= n;
      t.mean_length /= n;
      t.mean_ttc_near_miss /= n;
      t.mean_r_threshold_count /= n;
    }
    const auto& entries = trainer.log().entries;
    for (std::size_t i = log_start; i < entries.size(); ++i) {
      if (const auto* u = std::get_if<ppo::UpdateRecord>(&entries[i])) {
        ++t.updates;
        t.mean_loss += u->loss;
      }
    }
    t.mean_loss = t.updates > 0 ? t.mean_loss / t.updates : std::numeric_limits<double>::quiet_NaN();

    history_rows.insert(history_rows.end(), rows.begin(), rows.end());
    log.records = aggregate(history_rows, pool_ids, o.weights);
    log.thresholds = adaptive_thresholds(log.records, o.repeat_fraction);
    for (const auto& r : log.records) log.classes.push_back(classify(r, log.thresholds));

    if (o.adapt) {
      // History for the prompt: this epoch's configs, least critical first.
      std::vector<const CriticalityRecord*> current;
      const std::set<std::string> trained(log.config_ids.begin(), log.config_ids.end());
      for (const auto& r : log.records) {
        if (trained.count(r.config_id)) current.push_back(&r);
      }
      std::stable_sort(current.begin(), current.end(), [](const auto* a, const auto* b) {
        return a->criticality_score < b->criticality_score;
      });
      for (const auto* r : current) {
        const auto it = std::find_if(pool.begin(), pool.end(), [&](const ScenarioConfig& c) { return c.id == r->config_id; });
        llm_history.push_back({*it, outcome_of(*r), failure_of(*r)});
      }
      if (llm_history.size() > o.history_limit) {
        llm_history.erase(llm_history.begin(), llm_history.end() - static_cast<std::ptrdiff_t>(o.history_limit));
      }

      SelectionOptions so;
      so.budget = budget;
      so.strategy = o.strategy;
      so.seed = derive_seed(o.seed, static_cast<std::uint64_t>(epoch));
      so.perturb_scale = o.perturb_scale;
      so.verbatim_fraction = o.verbatim_fraction;
      so.id_prefix = "gen" + std::to_string(epoch);
      so.ranges = o.ranges;
      so.history_limit = o.history_limit;
      so.admissible = [&o](const ScenarioConfig& c) { return spawnable(c, o.sim); };
      log.selection = next_epoch_configs(log.records, log.classes, pool, so, client, llm_history);
      configs = log.selection->configs;
      for (const auto& c : configs) {
        if (seen.insert(c.id).second) {
          pool.push_back(c);
          pool_ids.push_back(c.id);
        }
      }
    }

    if (!o.test_configs.empty()) log.test = evaluate_policy(trainer.params(), o.test_configs, o.test_runs, o.sim);
    if (on_epoch) on_epoch(log);
    result.epochs.push_back(std::move(log));
  }
  result.params = trainer.params();
  result.final_configs = configs;
  return result;
}

namespace {

ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json histogram_json(const Histogram& h) {
  ordered_json a = ordered_json::array();
  for (const auto& [value, freq] : h) a.push_back({value, freq});
  return a;
}

}  // namespace

ordered_json to_json(const CriticalityRecord& r) {
  ordered_json j;
  j["config_id"] = r.config_id;
  j["episodes_seen"] = r.episodes_seen;
  j["mean_ttc_near_miss"] = number(r.mean_ttc_near_miss);
  j["mean_r_threshold_count"] = number(r.mean_r_threshold_count);
  j["exceedance_fraction"] = number(r.exceedance_fraction);
  j["crash_rate"] = number(r.crash_rate);
  j["criticality_score"] = number(r.criticality_score);
  j["mean_reward"] = number(r.mean_reward);
  j["mean_length"] = number(r.mean_length);
  return j;
}

ordered_json to_json(const EpochLog& e) {
  ordered_json j;
  j["epoch"] = e.epoch;
  j["configs"] = e.config_ids;
  const TrainingSummary& t = e.training;
  j["training"] = {{"steps", t.steps},
                   {"episodes", t.episodes},
                   {"mean_reward", number(t.mean_reward)},
                   {"mean_length", number(t.mean_length)},
                   {"crashes", t.crashes},
                   {"mean_ttc_near_miss", number(t.mean_ttc_near_miss)},
                   {"mean_r_threshold_count", number(t.mean_r_threshold_count)},
                   {"updates", t.updates},
                   {"mean_loss", number(t.mean_loss)}};
  j["thresholds"] = {{"gamma_threshold", number(e.thresholds.gamma_threshold)},
                     {"occurrence_threshold", number(e.thresholds.occurrence_threshold)},
                     {"repeat_fraction", number(e.thresholds.repeat_fraction)}};
  ordered_json recs = ordered_json::array();
  for (std::size_t i = 0; i < e.records.size(); ++i) {
    ordered_json r = to_json(e.records[i]);
    const Classification& c = e.classes[i];
    r["label"] = std::string(to_string(c.label));
    r["boundary"] = c.boundary;
    r["edge_case"] = c.edge_case;
    r["critical"] = c.critical;
    recs.push_back(std::move(r));
  }
  j["records"] = std::move(recs);
  if (e.selection) {
    const SelectionResult& s = *e.selection;
    ordered_json sj;
    sj["parents"] = s.parents;
    sj["fallback_to_top_gamma"] = s.fallback_to_top_gamma;
    sj["verbatim"] = s.verbatim;
    sj["perturbed"] = s.perturbed;
    sj["llm_requests"] = s.llm_requests;
    sj["llm_accepted"] = s.llm_accepted;
    sj["llm_fallbacks"] = s.llm_fallbacks;
    sj["notes"] = s.notes;
    ordered_json cfgs = ordered_json::array();
    for (const auto& c : s.configs) cfgs.push_back(critical::to_json(c));
    sj["configs"] = std::move(cfgs);
    j["selection"] = std::move(sj);
  } else {
    j["selection"] = nullptr;
  }
  if (e.test) {
    const EvaluationSummary& s = *e.test;
    ordered_json tj;
    tj["episodes_count"] = s.episodes.size();
    tj["mean_reward"] = number(s.mean_reward);
    tj["mean_length"] = number(s.mean_length);
    tj["total_crashes"] = s.total_crashes;
    tj["mean_ttc_near_miss"] = number(s.mean_ttc_near_miss);
    tj["mean_r_threshold_count"] = number(s.mean_r_threshold_count);
    tj["ttc_histogram"] = histogram_json(ttc_histogram(s.episodes));
    tj["r_histogram"] = histogram_json(r_histogram(s.episodes));
    ordered_json eps = ordered_json::array();
    for (const auto& ep : s.episodes) {
      eps.push_back({{"config_id", ep.config_id},
                     {"run", ep.run},
                     {"reward", number(ep.reward)},
                     {"length", ep.length},
                     {"crashed", ep.crashed},
                     {"ttc_near_miss_count", ep.ttc_near_miss_count},
                     {"r_threshold_count", ep.r_threshold_count}});
    }
    tj["episodes"] = std::move(eps);
    j["test"] = std::move(tj);
  } else {
    j["test"] = nullptr;
  }
  return j;
}

}  // namespace critical::loop
