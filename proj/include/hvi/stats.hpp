#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace hvi::stats {

/// Pairwise (cascade) summation; the split points depend only on the length.
double pairwise_sum(const double* x, std::size_t n);
double pairwise_sum(const std::vector<double>& x);
double mean(const std::vector<double>& x);
/// Sample standard deviation (n - 1 denominator).
double sample_std(const std::vector<double>& x);
double standard_error(const std::vector<double>& x);

/// Empirical percentile with linear interpolation between order statistics, p in [0, 100].
double percentile(std::vector<double> x, double p);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};
/// Empirical 90% interval: the 5th and 95th percentiles.
Interval ci90(const std::vector<double>& x);

/// Nonparametric bootstrap standard error of stat() over resamples of the indices 0..n-1.
template <class Stat>
double bootstrap_se(std::size_t n, int resamples, std::uint64_t seed, Stat&& stat);

}  // namespace hvi::stats

#include "hvi/rng.hpp"

namespace hvi::stats {

template <class Stat>
double bootstrap_se(std::size_t n, int resamples, std::uint64_t seed, Stat&& stat) {
  RngStream rng(seed, 0xb007);
  std::vector<double> values;
  std::vector<std::size_t> idx(n);
  for (int b = 0; b < resamples; ++b) {
    for (auto& i : idx) i = static_cast<std::size_t>(rng.next_u64() % n);
    values.push_back(stat(idx));
  }
  return sample_std(values);
}

}  // namespace hvi::stats
