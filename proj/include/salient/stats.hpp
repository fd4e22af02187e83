#pragma once
// Two-sample and rank statistics used by the saliency analyses.

#include <span>
#include <vector>

namespace salient::stats {

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  int count = 0;
};

// Order-independent: values are sorted before accumulation.
Summary summarize(std::span<const double> values);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p_greater = 1.0;    // H1: mean(a) > mean(b)
  double p_two_sided = 1.0;
};

// Welch's unequal-variance t-test. Zero pooled variance gives t = +-inf
// (p = 0 or 1) when the means differ and t = 0 otherwise.
WelchResult welch_test(std::span<const double> a, std::span<const double> b);

// Ranks with ties sharing their average rank, 1-based.
std::vector<double> average_ranks(std::span<const double> x);

// Spearman rank correlation; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

double percentile(std::vector<double> v, double q);

}  // namespace salient::stats
