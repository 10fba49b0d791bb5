#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "adpmac/stats.hpp"

using namespace adpmac;

namespace {

using Points = std::vector<std::pair<double, double>>;

// Textbook formula for untied data: 1 - 6 sum d^2 / (n (n^2 - 1)).
double spearman_no_ties(const Points& pts) {
  const std::size_t n = pts.size();
  auto rank = [&](bool second) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      return second ? pts[a].second < pts[b].second : pts[a].first < pts[b].first;
    });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[idx[i]] = static_cast<double>(i + 1);
    return r;
  };
  const auto rx = rank(false), ry = rank(true);
  double d2 = 0;
  for (std::size_t i = 0; i < n; ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double nn = static_cast<double>(n);
  return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
}

}  // namespace

TEST(Summarize, Examples) {
  std::vector<double> a{10, 12, 11, 13};
  auto s = summarize(a);
  EXPECT_EQ(s.n_runs, 4u);
  EXPECT_DOUBLE_EQ(s.mean, 11.5);
  EXPECT_NEAR(s.ci_half_width, 2.054, 1e-3);

  std::vector<double> b{7, 7, 7, 7};
  s = summarize(b);
  EXPECT_EQ(s.mean, 7.0);
  EXPECT_EQ(s.ci_half_width, 0.0);

  std::vector<double> c{1, 5};
  s = summarize(c);
  EXPECT_EQ(s.mean, 3.0);
  EXPECT_NEAR(s.ci_half_width, 12.706 * std::sqrt(8.0) / std::sqrt(2.0), 1e-2);
}

TEST(Summarize, TQuantiles) {
  EXPECT_NEAR(student_t_quantile(0.975, 3), 3.182, 1e-3);
  EXPECT_NEAR(student_t_quantile(0.975, 1), 12.706, 1e-3);
}

TEST(Summarize, TooFew) {
  std::vector<double> one{1.0};
  EXPECT_THROW(summarize(one), InsufficientData);
}

TEST(Summarize, PermutationInvariantAndScales) {
  std::vector<double> v{3.1, 9.4, 2.2, 7.7, 5.0, 1.3};
  const auto base = summarize(v);
  std::sort(v.begin(), v.end());
  do {
    const auto s = summarize(v);
    EXPECT_NEAR(s.mean, base.mean, 1e-12);
    EXPECT_NEAR(s.ci_half_width, base.ci_half_width, 1e-12);
  } while (std::next_permutation(v.begin(), v.end()));
  for (double c : {0.01, 3.0, 1e4}) {
    std::vector<double> w;
    for (double x : v) w.push_back(c * x);
    EXPECT_NEAR(summarize(w).ci_half_width, c * base.ci_half_width, 1e-9 * c);
  }
}

TEST(Trend, Examples) {
  Points dec{{1, 10}, {2, 8}, {3, 6}, {4, 4}};
  Points inc{{1, 1}, {2, 2}, {3, 3}};
  Points flat{{1, 5}, {2, 5.1}, {3, 4.9}, {4, 5}};
  EXPECT_EQ(trend_direction(dec), Trend::Decreasing);
  EXPECT_EQ(trend_direction(inc), Trend::Increasing);
  EXPECT_EQ(trend_direction(flat), Trend::Flat);
  // Ranks y = (2.5, 4, 1, 2.5): rho = -1.5 / sqrt(5 * 4.5).
  EXPECT_NEAR(spearman(flat), -1.5 / std::sqrt(22.5), 1e-12);
}

TEST(Trend, RequiresThreeDistinctX) {
  Points same{{1, 1}, {1, 2}, {1, 3}};
  EXPECT_THROW(trend_direction(same), ParameterError);
  Points two{{1, 1}, {2, 2}, {2, 3}};
  EXPECT_THROW(trend_direction(two), ParameterError);
}

TEST(Trend, ThresholdsConfigurable) {
  Points p{{1, 1}, {2, 3}, {3, 2}, {4, 4}};  // rho = 0.8
  EXPECT_EQ(trend_direction(p), Trend::Increasing);
  EXPECT_EQ(trend_direction(p, {0.9, -0.9}), Trend::Flat);
}

TEST(Spearman, MatchesClosedFormWithoutTies) {
  RandomStream rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Points p;
    for (int i = 0; i < 10; ++i) p.emplace_back(i + 1, rng.uniform_open());
    EXPECT_NEAR(spearman(p), spearman_no_ties(p), 1e-12);
  }
}

TEST(Spearman, InvariantUnderMonotoneTransform) {
  RandomStream rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    Points p, q;
    for (int i = 0; i < 10; ++i) {
      const double y = rng.uniform_open() * 10;
      p.emplace_back(i, y);
      q.emplace_back(i, std::exp(y) + 3.0);
    }
    EXPECT_EQ(trend_direction(p), trend_direction(q));
    EXPECT_NEAR(spearman(p), spearman(q), 1e-12);
  }
}

TEST(Spearman, TiesAveraged) {
  std::vector<double> v{3, 1, 3, 2};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{3.5, 1, 3.5, 2}));
}
