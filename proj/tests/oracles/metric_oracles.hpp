#pragma once

#include <algorithm>
#include <functional>
#include <utility>
#include <vector>

#include "sdml/evalkit.hpp"

namespace sdml::oracles {

// Independent oracles: a threshold sweep over every midpoint between
// consecutive distinct scores, and a direct count over all pos/neg pairs.

inline double eer_midpoint_sweep(const std::vector<LabeledScore>& s) {
  std::vector<double> v;
  for (const auto& x : s) v.push_back(x.score);
  std::sort(v.begin(), v.end(), std::greater<>());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> thresholds = {v.front() + 1.0};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) thresholds.push_back(0.5 * (v[i] + v[i + 1]));
  thresholds.push_back(v.back() - 1.0);
  double np = 0, nn = 0;
  for (const auto& x : s) (x.positive ? np : nn) += 1;
  std::vector<std::pair<double, double>> pts;  // (far, frr), accept score > t
  for (double t : thresholds) {
    double fa = 0, fr = 0;
    for (const auto& x : s) {
      if (!x.positive && x.score > t) fa += 1;
      if (x.positive && x.score < t) fr += 1;
    }
    pts.emplace_back(fa / nn, fr / np);
  }
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double d1 = pts[k].second - pts[k].first, d2 = pts[k + 1].second - pts[k + 1].first;
    if (d1 == 0) return pts[k].first;
    if (d2 <= 0) return pts[k].first + d1 / (d1 - d2) * (pts[k + 1].first - pts[k].first);
  }
  return 1.0;
}

inline double auc_pair_count(const std::vector<LabeledScore>& s) {
  double wins = 0, pairs = 0;
  for (const auto& p : s)
    if (p.positive)
      for (const auto& n : s)
        if (!n.positive) {
          pairs += 1;
          wins += p.score > n.score ? 1.0 : p.score == n.score ? 0.5 : 0.0;
        }
  return wins / pairs;
}

}  // namespace sdml::oracles
