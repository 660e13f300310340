#include "rerand/special.hpp"

#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "rerand/error.hpp"

namespace rerand {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxIter = 100000;

// log of x^a e^{-x} / Gamma(a)
double log_prefactor(double a, double x) { return a * std::log(x) - x - std::lgamma(a); }

// P(a, x) by the power series, valid for x < a + 1.
double p_series(double a, double x) {
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int i = 0; i < kMaxIter; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * kEps * 0.5) break;
  }
  return sum * std::exp(log_prefactor(a, x));
}

// Q(a, x) by the modified Lentz continued fraction, valid for x >= a + 1.
double q_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < kMaxIter; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps * 0.5) break;
  }
  return std::exp(log_prefactor(a, x)) * h;
}

void check_args(double a, double x) {
  if (!(a > 0.0)) throw DomainError("incomplete gamma needs a > 0");
  if (!(x >= 0.0)) throw DomainError("incomplete gamma needs x >= 0");
}

}  // namespace

double gamma_p(double a, double x) {
  check_args(a, x);
  if (x == 0.0) return 0.0;
  if (std::isinf(x)) return 1.0;
  if (x < a + 1.0) return p_series(a, x);
  return 1.0 - q_continued_fraction(a, x);
}

double gamma_q(double a, double x) {
  check_args(a, x);
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - p_series(a, x);
  return q_continued_fraction(a, x);
}

double chi2_cdf(double dof, double x) {
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

double chi2_quantile(double dof, double p) {
  if (!(dof > 0.0)) throw DomainError("chi-squared quantile needs dof > 0");
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("chi-squared quantile needs p in [0, 1)");
  if (p == 0.0) return 0.0;

  const double a = 0.5 * dof;
  const bool upper = p > 0.5;
  const double q = 1.0 - p;

  // Starting point on the gamma scale y = x / 2.
  double y = 0.0;
  const double log_small = (std::log(p) + std::lgamma(a + 1.0)) / a;
  const double z = normal_quantile(p);
  const double wh = 1.0 - 2.0 / (9.0 * dof) + z * std::sqrt(2.0 / (9.0 * dof));
  const double y_wh = 0.5 * dof * wh * wh * wh;
  const double y_small = std::exp(log_small);
  if (wh <= 0.0 || (y_small < 0.5 * a && p < 0.05)) {
    y = y_small;
  } else {
    y = y_wh;
  }
  if (y == 0.0) return 0.0;  // below the smallest representable quantile

  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200; ++iter) {
    const double f = upper ? q - gamma_q(a, y) : gamma_p(a, y) - p;
    if (f < 0.0) {
      lo = y;
    } else if (f > 0.0) {
      hi = y;
    } else {
      break;
    }
    const double log_density = (a - 1.0) * std::log(y) - y - std::lgamma(a);
    const double fprime = std::exp(log_density);
    double step = f / fprime;
    const double curvature = (a - 1.0) / y - 1.0;  // f'' / f'
    const double halley = 1.0 - 0.5 * step * curvature;
    if (halley > 0.5 && halley < 2.0) step /= halley;
    double next = y - step;
    if (!(next > lo && next < hi) || !std::isfinite(next)) {
      next = std::isinf(hi) ? 2.0 * std::max(y, lo) + 1.0 : 0.5 * (lo + hi);
    }
    const double change = std::fabs(next - y);
    y = next;
    if (change <= 4.0 * kEps * y) break;
  }
  return 2.0 * y;
}

double normal_cdf(double x) {
  return boost::math::cdf(boost::math::normal_distribution<double>(), x);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile needs p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

}  // namespace rerand
