#include "hvi/stats.hpp"

#include <algorithm>
#include <cmath>

#include "hvi/error.hpp"

namespace hvi::stats {

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

double pairwise_sum(const std::vector<double>& x) { return pairwise_sum(x.data(), x.size()); }

double mean(const std::vector<double>& x) {
  if (x.empty()) throw DomainError("mean of an empty sample", 0.0);
  return pairwise_sum(x) / static_cast<double>(x.size());
}

double sample_std(const std::vector<double>& x) {
  if (x.size() < 2) throw DomainError("standard deviation needs two values", static_cast<double>(x.size()));
  const double m = mean(x);
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - m) * (x[i] - m);
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(x.size() - 1));
}

double standard_error(const std::vector<double>& x) {
  return sample_std(x) / std::sqrt(static_cast<double>(x.size()));
}

double percentile(std::vector<double> x, double p) {
  if (x.empty()) throw DomainError("percentile of an empty sample", p);
  if (!(p >= 0.0 && p <= 100.0)) throw DomainError("percentile outside [0, 100]", p);
  std::sort(x.begin(), x.end());
  const double pos = p / 100.0 * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return x[lo] + frac * (x[hi] - x[lo]);
}

Interval ci90(const std::vector<double>& x) { return {percentile(x, 5.0), percentile(x, 95.0)}; }

}  // namespace hvi::stats
