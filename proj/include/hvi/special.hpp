#pragma once

// Scalar special functions used by the densities and by the tape.

namespace hvi::special {

/// log Γ(x) for x > 0 (Lanczos, g = 7, nine coefficients).
double lgamma(double x);

/// ψ(x) = d/dx log Γ(x) for x > 0. Recurrence up to x >= 6, then the asymptotic series.
double digamma(double x);

/// ψ'(x) for x > 0.
double trigamma(double x);

/// Regularized lower incomplete gamma P(a, x). Series for x < a + 1, continued fraction otherwise.
double gamma_p(double a, double x);

/// Upper complement Q(a, x) = 1 - P(a, x), computed without cancellation where possible.
double gamma_q(double a, double x);

/// log of the Gamma(concentration a, rate 1) density at x > 0.
double log_gamma_density(double a, double x);

/// Numerically stable log(1 + exp(x)).
double softplus(double x);

/// Numerically stable 1 / (1 + exp(-x)).
double sigmoid(double x);

}  // namespace hvi::special
