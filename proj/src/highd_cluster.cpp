#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "critical/highd.hpp"
#include "critical/rng.hpp"

namespace critical::highd {

FeatureTable extract_features(const std::vector<VehicleTrack>& tracks) {
  FeatureTable out;
  for (const auto& t : tracks) {
    if (t.rows.size() < 2) {
      ++out.skipped;
      continue;
    }
    DriverFeatures f;
    f.vehicle_id = t.id;
    f.kind = t.kind;
    const double n = static_cast<double>(t.rows.size());
    double sum = 0.0;
    double sum_acc = 0.0;
    for (const auto& r : t.rows) {
      sum += std::abs(r.x_velocity);
      sum_acc += std::abs(r.x_acceleration);
      f.max_abs_accel = std::max(f.max_abs_accel, std::abs(r.x_acceleration));
      if (r.thw > 0.0) f.min_thw = std::min(f.min_thw, r.thw);
    }
    f.mean_speed = sum / n;
    f.mean_abs_accel = sum_acc / n;
    double var = 0.0;
    for (const auto& r : t.rows) {
      const double d = std::abs(r.x_velocity) - f.mean_speed;
      var += d * d;
    }
    f.speed_std = std::sqrt(var / n);
    for (std::size_t i = 1; i < t.rows.size(); ++i) {
      f.lane_change_count += t.rows[i].lane_id != t.rows[i - 1].lane_id;
    }
    out.rows.push_back(f);
  }
  return out;
}

Eigen::MatrixXd numeric_features(const std::vector<DriverFeatures>& rows) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kNumericFeatures);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    x.row(static_cast<Eigen::Index>(i)) << f.mean_speed, f.speed_std, f.mean_abs_accel,
        f.max_abs_accel, std::min(f.min_thw, kThwCap), static_cast<double>(f.lane_change_count);
  }
  return x;
}

std::vector<std::vector<int>> categorical_features(const std::vector<DriverFeatures>& rows) {
  std::vector<std::vector<int>> c;
  c.reserve(rows.size());
  for (const auto& f : rows) c.push_back({static_cast<int>(f.kind)});
  return c;
}

Standardization fit_standardization(const Eigen::MatrixXd& x) {
  Standardization s;
  s.mean = x.colwise().mean();
  s.scale = Eigen::RowVectorXd::Ones(x.cols());
  if (x.rows() == 0) return s;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - s.mean(j)).square().mean();
    if (var > 1e-24) s.scale(j) = std::sqrt(var);
  }
  return s;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x, const Standardization& s) {
  return (x.rowwise() - s.mean).array().rowwise() / s.scale.array();
}

double default_gamma(const Eigen::MatrixXd& z) {
  if (z.rows() == 0 || z.cols() == 0) return 0.0;
  const Eigen::RowVectorXd mean = z.colwise().mean();
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) total += (z.col(j).array() - mean(j)).square().mean();
  return 0.5 * total / static_cast<double>(z.cols());
}

double kprototypes_distance(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                            const std::vector<int>& cats,
                            const Eigen::Ref<const Eigen::RowVectorXd>& centroid,
                            const std::vector<int>& mode, double gamma) {
  double d = (x - centroid).squaredNorm();
  if (gamma != 0.0) {
    int mismatches = 0;
    for (std::size_t a = 0; a < cats.size(); ++a) mismatches += cats[a] != mode[a];
    d += gamma * mismatches;
  }
  return d;
}

std::vector<int> seed_rows(const Eigen::MatrixXd& x, const std::vector<std::vector<int>>& cats,
                           int k, double gamma, std::uint64_t rng_seed) {
  const int n = static_cast<int>(x.rows());
  if (k <= 0 || n < k) throw std::invalid_argument("seed_rows: need at least k rows");
  Rng rng(rng_seed);
  std::vector<int> chosen{uniform_int(rng, 0, n - 1)};
  std::vector<double> d2(static_cast<std::size_t>(n), kInfinity);
  while (static_cast<int>(chosen.size()) < k) {
    const int last = chosen.back();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = kprototypes_distance(x.row(i), cats[static_cast<std::size_t>(i)], x.row(last),
                                            cats[static_cast<std::size_t>(last)], gamma);
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], d);
      total += d2[static_cast<std::size_t>(i)];
    }
    int pick = -1;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      for (int i = 0; i < n; ++i) {
        u -= d2[static_cast<std::size_t>(i)];
        if (u < 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (int i = n - 1; i >= 0; --i) {
          if (d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // Every row coincides with a chosen prototype.
      for (int i = 0; i < n && pick < 0; ++i) {
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
      }
    }
    chosen.push_back(pick);
  }
  return chosen;
}

KPrototypesResult kprototypes(const Eigen::MatrixXd& x, const std::vector<std::vector<int>>& cats,
                              int k, double gamma, const std::vector<int>& initial_rows,
                              int max_iterations) {
  const Eigen::Index n = x.rows();
  if (k <= 0 || n < k) throw std::invalid_argument("kprototypes: fewer rows than clusters");
  if (static_cast<int>(initial_rows.size()) != k) {
    throw std::invalid_argument("kprototypes: need one initial row per cluster");
  }
  if (static_cast<Eigen::Index>(cats.size()) != n) {
    throw std::invalid_argument("kprototypes: categorical rows do not match numeric rows");
  }
  const std::size_t n_cat = cats.empty() ? 0 : cats.front().size();

  KPrototypesResult res;
  res.centroids.resize(k, x.cols());
  res.modes.resize(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    res.centroids.row(c) = x.row(initial_rows[static_cast<std::size_t>(c)]);
    res.modes[static_cast<std::size_t>(c)] = cats[static_cast<std::size_t>(initial_rows[static_cast<std::size_t>(c)])];
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<double> point_cost(static_cast<std::size_t>(n), 0.0);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    double cost = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      int best = 0;
      double best_d = kInfinity;
      for (int c = 0; c < k; ++c) {
        const double d = kprototypes_distance(x.row(i), cats[ui], res.centroids.row(c),
                                              res.modes[static_cast<std::size_t>(c)], gamma);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      changed = changed || labels[ui] != best;
      labels[ui] = best;
      point_cost[ui] = best_d;
      cost += best_d;
    }
    res.cost_history.push_back(cost);
    res.iterations = iter + 1;
    if (!changed) {
      res.converged = true;
      break;
    }

    // Prototype update: means for numeric attributes, modes for categorical.
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
    std::vector<std::vector<std::map<int, int>>> freq(
        static_cast<std::size_t>(k), std::vector<std::map<int, int>>(n_cat));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
      ++counts[c];
      sums.row(static_cast<Eigen::Index>(c)) += x.row(i);
      for (std::size_t a = 0; a < n_cat; ++a) ++freq[c][a][cats[static_cast<std::size_t>(i)][a]];
    }
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    for (int c = 0; c < k; ++c) {
      const auto uc = static_cast<std::size_t>(c);
      if (counts[uc] > 0) {
        res.centroids.row(c) = sums.row(c) / counts[uc];
        for (std::size_t a = 0; a < n_cat; ++a) {
          int best_value = 0;
          int best_count = -1;
          for (const auto& [value, count] : freq[uc][a]) {
            if (count > best_count) {
              best_count = count;
              best_value = value;
            }
          }
          res.modes[uc][a] = best_value;
        }
        continue;
      }
      // Empty cluster: move it onto the point that is currently worst served.
      Eigen::Index far = -1;
      double far_cost = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (!taken[ui] && point_cost[ui] > far_cost) {
          far_cost = point_cost[ui];
          far = i;
        }
      }
      if (far >= 0) {
        taken[static_cast<std::size_t>(far)] = true;
        point_cost[static_cast<std::size_t>(far)] = 0.0;
        res.centroids.row(c) = x.row(far);
        res.modes[uc] = cats[static_cast<std::size_t>(far)];
      }
    }
  }
  res.assignment = std::move(labels);
  return res;
}

ClusterModel fit_kprototypes(const std::vector<DriverFeatures>& rows, int k,
                             std::optional<double> gamma_mix, std::uint64_t rng_seed,
                             int n_init) {
  if (k <= 0 || static_cast<int>(rows.size()) < k) {
    throw std::invalid_argument("fit_kprototypes: " + std::to_string(rows.size()) +
                                " rows for " + std::to_string(k) + " clusters");
  }
  ClusterModel m;
  m.k = k;
  const Eigen::MatrixXd raw = numeric_features(rows);
  m.standardization = fit_standardization(raw);
  const Eigen::MatrixXd z = standardize(raw, m.standardization);
  const auto cats = categorical_features(rows);
  m.gamma_mix = gamma_mix ? *gamma_mix : default_gamma(z);
  if (m.gamma_mix < 0.0) throw std::invalid_argument("fit_kprototypes: gamma_mix must be >= 0");

  KPrototypesResult r;
  for (int run = 0; run < std::max(n_init, 1); ++run) {
    const auto seeds = seed_rows(z, cats, k, m.gamma_mix, derive_seed(rng_seed, static_cast<std::uint64_t>(run)));
    KPrototypesResult candidate = kprototypes(z, cats, k, m.gamma_mix, seeds);
    if (run == 0 || candidate.cost_history.back() < r.cost_history.back()) r = std::move(candidate);
  }
  m.numeric_centroids = r.centroids;
  m.categorical_modes = r.modes;
  m.assignment = r.assignment;
  m.cost_history = r.cost_history;
  m.iterations = r.iterations;

  // Name clusters by mean speed: fastest aggressive, slowest defensive.
  std::vector<double> speed(static_cast<std::size_t>(k), 0.0);
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto c = static_cast<std::size_t>(m.assignment[i]);
    speed[c] += rows[i].mean_speed;
    ++count[c];
  }
  std::vector<int> used;
  for (int c = 0; c < k; ++c) {
    if (count[static_cast<std::size_t>(c)] > 0) {
      speed[static_cast<std::size_t>(c)] /= count[static_cast<std::size_t>(c)];
      used.push_back(c);
    }
  }
  std::stable_sort(used.begin(), used.end(), [&](int a, int b) {
    return speed[static_cast<std::size_t>(a)] > speed[static_cast<std::size_t>(b)];
  });
  m.cluster_names.assign(static_cast<std::size_t>(k), Behavior::regular);
  if (used.size() > 1) {
    m.cluster_names[static_cast<std::size_t>(used.front())] = Behavior::aggressive;
    m.cluster_names[static_cast<std::size_t>(used.back())] = Behavior::defensive;
  }
  m.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Behavior b = m.cluster_names[static_cast<std::size_t>(m.assignment[i])];
    m.labels.push_back(b);
    m.labels_by_id[rows[i].vehicle_id] = b;
  }
  return m;
}

}  // namespace critical::highd
