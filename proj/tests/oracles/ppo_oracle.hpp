#pragma once

// Independent reference computations for the PPO trainer. Nothing here calls
// the trainer's loss or GAE code: advantages come from the explicit discounted
// sum of TD errors, and the loss is rebuilt from policy_forward outputs.

#include <algorithm>
#include <cmath>
#include <vector>

#include "critical/ppo.hpp"

namespace oracle {

// A_t = sum_l (gamma lambda)^l delta_{t+l}, truncated at the first done.
inline std::vector<double> gae_sum(const std::vector<double>& r, const std::vector<double>& v,
                                   const std::vector<bool>& done, double last_value, double gamma,
                                   double lambda) {
  const std::size_t n = r.size();
  std::vector<long double> delta(n);
  for (std::size_t t = 0; t < n; ++t) {
    const long double next = done[t] ? 0.0L : (t + 1 < n ? v[t + 1] : last_value);
    delta[t] = r[t] + static_cast<long double>(gamma) * next - v[t];
  }
  std::vector<double> adv(n);
  for (std::size_t t = 0; t < n; ++t) {
    long double sum = 0.0L;
    long double w = 1.0L;
    for (std::size_t k = t; k < n; ++k) {
      sum += w * delta[k];
      if (done[k]) break;
      w *= static_cast<long double>(gamma) * lambda;
    }
    adv[t] = static_cast<double>(sum);
  }
  return adv;
}

struct Branches {
  std::vector<int> code;  // per sample: 0 unclipped active, 1 clipped flat
  bool operator==(const Branches&) const = default;
};

// Combined PPO loss from per-sample probabilities; also reports which side
// of each min/clip kink the sample sits on.
inline long double loss(const critical::ppo::PolicyParams& p, const critical::ppo::RolloutBatch& b,
                        const critical::ppo::PpoConfig& c, Branches* branches = nullptr) {
  long double obj = 0.0L, mse = 0.0L, ent = 0.0L;
  const std::size_t n = b.size();
  if (branches) branches->code.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = critical::ppo::policy_forward(p, b.observations[i]);
    long double h = 0.0L;
    for (double q : f.probabilities) h -= static_cast<long double>(q) * std::log(static_cast<long double>(q));
    const long double ratio =
        std::exp(std::log(static_cast<long double>(f.probabilities[b.actions[i]])) - b.log_probs[i]);
    const long double a = b.advantages[i];
    const long double lo = 1.0L - c.clip_epsilon, hi = 1.0L + c.clip_epsilon;
    const long double unclipped = ratio * a;
    const long double clipped = std::clamp(ratio, lo, hi) * a;
    obj += std::min(unclipped, clipped);
    if (branches) {
      // Flat iff the clipped term is strictly smaller, which needs ratio outside.
      const bool flat = clipped < unclipped;
      const int side = ratio < lo ? -1 : ratio > hi ? 1 : 0;
      branches->code[i] = (flat ? 10 : 0) + side;
    }
    const long double e = f.value - b.returns[i];
    mse += e * e;
    ent += h;
  }
  const long double inv = 1.0L / n;
  return -obj * inv + c.value_loss_coeff * mse * inv - c.entropy_coeff * ent * inv;
}

struct GradCheck {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates whose stencil crosses a kink
};

// Central differences of oracle::loss against an analytic gradient. Relative
// error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradient(const critical::ppo::PolicyParams& p, const critical::ppo::RolloutBatch& b,
                                const critical::ppo::PpoConfig& c, const Eigen::VectorXd& analytic,
                                double h = 1e-6, double floor = 1e-6) {
  GradCheck out;
  const Eigen::VectorXd theta = critical::ppo::flatten(p);
  Branches base;
  loss(p, b, c, &base);
  critical::ppo::PolicyParams q = p;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd t = theta;
    t(k) = theta(k) + h;
    critical::ppo::unflatten(q, t);
    Branches bp;
    const long double fp = loss(q, b, c, &bp);
    t(k) = theta(k) - h;
    critical::ppo::unflatten(q, t);
    Branches bm;
    const long double fm = loss(q, b, c, &bm);
    if (!(bp == base) || !(bm == base)) {
      ++out.skipped;
      continue;
    }
    const double numeric = static_cast<double>((fp - fm) / (2.0L * h));
    const double a = analytic(k);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, rel);
    ++out.checked;
  }
  return out;
}

}  // namespace oracle
