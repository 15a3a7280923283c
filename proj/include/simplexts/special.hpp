#pragma once

namespace simplexts {

/// log Gamma(x) for x > 0, Lanczos approximation (g = 7, 9 terms).
/// Relative error below 1e-12 on [1e-3, 1e6].
double lgamma(double x);

/// Digamma psi(x) for x > 0: upward recurrence to x >= 6, then the
/// asymptotic Bernoulli series.
double digamma(double x);

}  // namespace simplexts
