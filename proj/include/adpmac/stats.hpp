#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "adpmac/core.hpp"

namespace adpmac {

/// Outcome of one seeded simulation run.
struct RunMetrics {
  std::string config_label;
  std::uint64_t seed = 0;
  double total_energy_mJ = 0.0;
  double mean_delay_s = 0.0;
  std::int64_t delivered = 0;
  std::int64_t dropped = 0;
  std::int64_t collisions = 0;
  std::int64_t retransmissions = 0;
};

/// Mean and 95% Student-t half-width over repeated runs.
struct CellSummary {
  std::size_t n_runs = 0;
  double mean = 0.0;
  double ci_half_width = 0.0;
};

/// Two-sided Student-t quantile t(p, df).
inline double student_t_quantile(double p, double df) {
  boost::math::students_t dist(df);
  return boost::math::quantile(dist, p);
}

inline CellSummary summarize(std::span<const double> values, double confidence = 0.95) {
  if (values.size() < 2) throw InsufficientData("summarize needs at least two values");
  const auto m = detail::moments(values);
  const double n = static_cast<double>(values.size());
  const double t = student_t_quantile(0.5 + confidence / 2.0, n - 1.0);
  return {values.size(), m.mean_s, t * m.std_s / std::sqrt(n)};
}

/// Ranks with ties averaged (1-based).
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Spearman rank correlation: Pearson correlation of tie-averaged ranks.
/// Constant y gives 0.
inline double spearman(std::span<const std::pair<double, double>> points) {
  std::vector<double> xs, ys;
  for (auto [x, y] : points) {
    xs.push_back(x);
    ys.push_back(y);
  }
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

enum class Trend { Increasing, Decreasing, Flat };

inline std::string_view to_string(Trend t) {
  switch (t) {
    case Trend::Increasing: return "increasing";
    case Trend::Decreasing: return "decreasing";
    case Trend::Flat: return "flat";
  }
  return "?";
}

struct TrendThresholds {
  double increasing = 0.8;
  double decreasing = -0.8;
};

inline Trend trend_direction(std::span<const std::pair<double, double>> points,
                             TrendThresholds th = {}) {
  std::vector<double> xs;
  for (auto [x, _] : points) xs.push_back(x);
  std::sort(xs.begin(), xs.end());
  const auto distinct = std::unique(xs.begin(), xs.end()) - xs.begin();
  if (distinct < 3) throw ParameterError("trend needs at least three distinct x values");
  const double rho = spearman(points);
  if (rho >= th.increasing) return Trend::Increasing;
  if (rho <= th.decreasing) return Trend::Decreasing;
  return Trend::Flat;
}

}  // namespace adpmac
