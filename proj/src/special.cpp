#include "simplexts/special.hpp"

#include <cmath>
#include <stdexcept>

namespace simplexts {

namespace {

// Lanczos coefficients for g = 7, n = 9 (Godfrey's set).
constexpr double kLanczosG = 7.0;
constexpr double kLanczos[9] = {
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
};

constexpr double kHalfLogTwoPi = 0.91893853320467274178;  // log(sqrt(2*pi))

double lgamma_lanczos(double x) {
  // Valid for x >= 0.5; callers shift smaller arguments.
  const double z = x - 1.0;
  double series = kLanczos[0];
  for (int i = 1; i < 9; ++i) series += kLanczos[i] / (z + i);
  const double t = z + kLanczosG + 0.5;
  return (z + 0.5) * std::log(t) - t + kHalfLogTwoPi + std::log(series);
}

}  // namespace

double lgamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("lgamma requires x > 0");
  if (x < 0.5) return lgamma_lanczos(x + 1.0) - std::log(x);
  return lgamma_lanczos(x);
}

double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma requires x > 0");
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  // psi(x) ~ log x - 1/(2x) - sum B_{2k}/(2k x^{2k}), truncated at x^{-20};
  // with x >= 6 the truncation error is below 1e-14.
  const double inv = 1.0 / x;
  const double u = inv * inv;
  const double series =
      u * (1.0 / 12.0 -
           u * (1.0 / 120.0 -
                u * (1.0 / 252.0 -
                     u * (1.0 / 240.0 -
                          u * (1.0 / 132.0 -
                               u * (691.0 / 32760.0 -
                                    u * (1.0 / 12.0 -
                                         u * (3617.0 / 8160.0 -
                                              u * (43867.0 / 14364.0 -
                                                   u * (174611.0 / 6600.0))))))))));
  return result + std::log(x) - 0.5 * inv - series;
}

}  // namespace simplexts
