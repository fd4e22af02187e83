#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"

#include "salient/rng.hpp"
#include "salient/stats.hpp"

using namespace salient;
using namespace salient::stats;

TEST_CASE("summary") {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  const auto s = summarize(v);
  CHECK(s.count == 8);
  CHECK(s.mean == 5.0);
  CHECK(s.std == doctest::Approx(std::sqrt(32.0 / 7.0)).epsilon(1e-15));
  CHECK(summarize(std::vector<double>{}).count == 0);
  CHECK(summarize(std::vector<double>{3.0}).std == 0.0);
}

TEST_CASE("summary does not depend on input order") {
  Rng rng(4);
  std::vector<double> v(1000);
  for (auto& x : v) x = rng.normal() * std::pow(10.0, rng.uniform() * 8);
  const auto a = summarize(v);
  std::reverse(v.begin(), v.end());
  const auto b = summarize(v);
  CHECK(a.mean == b.mean);
  CHECK(a.std == b.std);
}

TEST_CASE("welch against reference values") {
  // scipy.stats.ttest_ind(a, b, equal_var=False)
  const std::vector<double> a{27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4};
  const std::vector<double> b{27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4};
  const auto r = welch_test(a, b);
  CHECK(r.t == doctest::Approx(-2.455356398286006).epsilon(1e-12));
  CHECK(r.df == doctest::Approx(24.98852929023142).epsilon(1e-12));
  CHECK(r.p_two_sided == doctest::Approx(0.021378001462866985).epsilon(1e-9));
  CHECK(r.p_greater == doctest::Approx(1.0 - r.p_two_sided / 2).epsilon(1e-12));
  const auto flip = welch_test(b, a);
  CHECK(flip.t == doctest::Approx(-r.t));
  CHECK(flip.p_greater == doctest::Approx(r.p_two_sided / 2));
}

TEST_CASE("welch p from an independent t-distribution integral") {
  Rng rng(9);
  std::vector<double> a(40), b(25);
  for (auto& x : a) x = 0.4 + 0.2 * rng.normal();
  for (auto& x : b) x = 0.3 + 0.3 * rng.normal();
  const auto r = welch_test(a, b);
  // P(T > t) by Simpson integration of the Student-t density.
  const double nu = r.df;
  const auto pdf = [nu](double x) {
    return std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) / std::sqrt(nu * M_PI) *
           std::pow(1 + x * x / nu, -(nu + 1) / 2);
  };
  const double hi = 200.0;
  const int steps = 200000;
  const double h = (hi - r.t) / steps;
  double sum = pdf(r.t) + pdf(hi);
  for (int i = 1; i < steps; ++i) sum += (i % 2 ? 4 : 2) * pdf(r.t + i * h);
  CHECK(r.p_greater == doctest::Approx(sum * h / 3).epsilon(1e-6));
}

TEST_CASE("welch degenerate variance") {
  const std::vector<double> a{1, 1, 1}, b{0, 0, 0};
  const auto r = welch_test(a, b);
  CHECK(std::isinf(r.t));
  CHECK(r.p_greater == 0.0);
  CHECK(welch_test(b, a).p_greater == 1.0);
  const auto same = welch_test(a, a);
  CHECK(same.t == 0.0);
}

TEST_CASE("ranks and spearman") {
  const std::vector<double> x{10, 20, 20, 30};
  CHECK(average_ranks(x) == std::vector<double>{1, 2.5, 2.5, 4});
  const std::vector<double> idx{0, 1, 2, 3, 4};
  const std::vector<double> falling{0.7, 0.5, 0.4, 0.2, 0.1};
  CHECK(spearman(idx, falling) == doctest::Approx(-1.0));
  const std::vector<double> flat{1, 1, 1, 1, 1};
  CHECK(spearman(idx, flat) == 0.0);
  // Pearson on ranks, computed directly.
  const std::vector<double> y{3, 1, 4, 1, 5};
  const auto ry = average_ranks(y);
  const auto rx = average_ranks(idx);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / 5, my = std::accumulate(ry.begin(), ry.end(), 0.0) / 5;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 5; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  CHECK(spearman(idx, y) == doctest::Approx(sxy / std::sqrt(sxx * syy)));
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(percentile({4, 1, 3, 2}, 0.75) == doctest::Approx(3.25));
  CHECK(percentile({7}, 0.3) == 7.0);
}
