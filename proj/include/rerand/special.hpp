#pragma once

namespace rerand {

/// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);
/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), computed
/// without cancellation.
double gamma_q(double a, double x);

/// Chi-squared CDF with `dof` degrees of freedom.
double chi2_cdf(double dof, double x);

/// Chi-squared quantile F_K^{-1}(p) for p in [0, 1). Inverts the regularized
/// incomplete gamma function with safeguarded Halley steps. Throws
/// DomainError for p outside [0, 1) or dof <= 0.
double chi2_quantile(double dof, double p);

double normal_cdf(double x);
/// Standard normal quantile for p in (0, 1).
double normal_quantile(double p);

}  // namespace rerand
