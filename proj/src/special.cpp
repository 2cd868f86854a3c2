#include "hvi/special.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "hvi/error.hpp"

namespace hvi::special {

namespace {

constexpr double kLanczosG = 7.0;
constexpr std::array<double, 9> kLanczos = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 100000;

void require_positive(const char* what, double x) {
  if (!(x > 0.0)) throw DomainError(std::string(what) + " requires a positive argument", x);
}

double gamma_series(double a, double x) {
  // P(a, x) = e^{-x} x^a / Γ(a + 1) * Σ x^n / ((a+1)...(a+n))
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int n = 0; n < kMaxIter; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * kEps) break;
  }
  return sum * std::exp(-x + a * std::log(x) - lgamma(a));
}

double gamma_continued_fraction(double a, double x) {
  // Modified Lentz evaluation of Q(a, x).
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::exp(-x + a * std::log(x) - lgamma(a)) * h;
}

}  // namespace

double lgamma(double x) {
  require_positive("lgamma", x);
  if (x < 0.5) {
    // Reflection: Γ(x) Γ(1 - x) = π / sin(πx)
    return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - lgamma(1.0 - x);
  }
  x -= 1.0;
  double a = kLanczos[0];
  const double t = x + kLanczosG + 0.5;
  for (std::size_t i = 1; i < kLanczos.size(); ++i) a += kLanczos[i] / (x + static_cast<double>(i));
  return 0.5 * std::log(2.0 * std::numbers::pi) + (x + 0.5) * std::log(t) - t + std::log(a);
}

double digamma(double x) {
  require_positive("digamma", x);
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number tail: -Σ B_{2n} / (2n x^{2n})
  const double tail =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))));
  return result + std::log(x) - 0.5 * inv - tail;
}

double trigamma(double x) {
  require_positive("trigamma", x);
  double result = 0.0;
  while (x < 6.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double tail =
      inv * inv2 *
      (1.0 / 6 -
       inv2 * (1.0 / 30 -
               inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66 - inv2 * (691.0 / 2730 - inv2 * 7.0 / 6))))));
  return result + inv + 0.5 * inv2 + tail;
}

double gamma_p(double a, double x) {
  require_positive("gamma_p shape", a);
  if (x < 0.0) throw DomainError("gamma_p requires x >= 0", x);
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_series(a, x);
  return 1.0 - gamma_continued_fraction(a, x);
}

double gamma_q(double a, double x) {
  require_positive("gamma_q shape", a);
  if (x < 0.0) throw DomainError("gamma_q requires x >= 0", x);
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_series(a, x);
  return gamma_continued_fraction(a, x);
}

double log_gamma_density(double a, double x) {
  require_positive("gamma density support", x);
  return (a - 1.0) * std::log(x) - x - lgamma(a);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace hvi::special
