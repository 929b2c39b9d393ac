#pragma once

// Independent clustering references: adjusted Rand index from the pair
// counting definition and a plain Lloyd k-means on row vectors.

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

namespace oracle {

inline double choose2(double n) { return n * (n - 1) / 2; }

inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> rows;
  std::map<int, double> cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1;
    rows[a[i]] += 1;
    cols[b[i]] += 1;
  }
  double index = 0;
  for (const auto& [k, n] : table) index += choose2(n);
  double sa = 0;
  double sb = 0;
  for (const auto& [k, n] : rows) sa += choose2(n);
  for (const auto& [k, n] : cols) sb += choose2(n);
  const double expected = sa * sb / choose2(static_cast<double>(a.size()));
  const double max_index = (sa + sb) / 2;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

using Points = std::vector<std::vector<double>>;

// Lloyd iterations from explicit initial centers until labels stop changing.
inline std::vector<int> kmeans(const Points& x, Points centers, int max_iter = 100) {
  std::vector<int> labels(x.size(), -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      int best = 0;
      double best_d = 0;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        double d = 0;
        for (std::size_t j = 0; j < x[i].size(); ++j) d += (x[i][j] - centers[c][j]) * (x[i][j] - centers[c][j]);
        if (c == 0 || d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      if (labels[i] != best) changed = true;
      labels[i] = best;
    }
    if (!changed) break;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      std::vector<double> sum(x.front().size(), 0.0);
      int n = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (labels[i] != static_cast<int>(c)) continue;
        for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += x[i][j];
        ++n;
      }
      if (n == 0) continue;
      for (std::size_t j = 0; j < sum.size(); ++j) centers[c][j] = sum[j] / n;
    }
  }
  return labels;
}

}  // namespace oracle
