#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rerand {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct PotentialOutcomes {
  Vector y1;
  Vector y0;
};

/// The fixed set of experimental units that all randomness is conditional on.
///
/// Holds an n-by-K covariate matrix (rows are units), unit labels, and in
/// simulation mode both potential outcomes. Construction validates the
/// invariants; instances are immutable afterwards.
class FinitePopulation {
 public:
  FinitePopulation(Matrix covariates, std::vector<std::string> unit_ids,
                   std::vector<std::string> covariate_names = {},
                   std::optional<PotentialOutcomes> outcomes = std::nullopt);

  // Convenience: unit ids "1".."n", covariate names "x1".."xK".
  static FinitePopulation from_matrix(Matrix covariates,
                                      std::optional<PotentialOutcomes> outcomes = std::nullopt);

  std::size_t n() const { return static_cast<std::size_t>(covariates_.rows()); }
  std::size_t k() const { return static_cast<std::size_t>(covariates_.cols()); }

  const Matrix& covariates() const { return covariates_; }
  const std::vector<std::string>& unit_ids() const { return unit_ids_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  bool has_outcomes() const { return outcomes_.has_value(); }
  const Vector& y1() const;
  const Vector& y0() const;
  const std::optional<PotentialOutcomes>& outcomes() const { return outcomes_; }

  /// Population restricted to the first `k_used` covariate columns.
  FinitePopulation first_columns(std::size_t k_used) const;

  FinitePopulation with_covariates(Matrix covariates) const;
  FinitePopulation with_outcomes(Vector y1, Vector y0) const;

 private:
  Matrix covariates_;
  std::vector<std::string> unit_ids_;
  std::vector<std::string> covariate_names_;
  std::optional<PotentialOutcomes> outcomes_;
};

struct MomentOptions {
  // Adds eps * I to S2x with eps = ridge_scale * trace(S2x) / K. Off by
  // default; exploratory use only, and flagged in MomentSummary::ridge.
  bool ridge = false;
  double ridge_scale = 1e-8;
};

/// Covariate moments for a population with a fixed treated-arm size.
struct MomentSummary {
  std::size_t n = 0;
  std::size_t n1 = 0;
  Vector xbar;
  Matrix S2x;   // divisor n - 1 (ridge added when enabled)
  Matrix Vxx;   // n / (n1 n0) * S2x
  Matrix chol;  // lower triangular, chol * chol^T = S2x
  double cond_estimate = 0.0;
  double ridge = 0.0;  // eps actually added to the diagonal, 0 when off

  std::size_t n0() const { return n - n1; }
  std::size_t k() const { return static_cast<std::size_t>(xbar.size()); }

  /// S2x^{-1} v through the stored factor.
  Vector solve(const Vector& v) const;
  /// chol^{-1} v, so that |whiten(v)|^2 = v^T S2x^{-1} v.
  Vector whiten(const Vector& v) const;
  /// Quadratic form v^T S2x^{-1} v.
  double quad_form(const Vector& v) const;
};

inline constexpr double kMaxCondition = 1e12;

/// Mean, finite-population covariance, V_xx and a Cholesky factor.
/// Throws SingularCovariates on a failed factorization or when the condition
/// estimate of the covariate correlation matrix exceeds kMaxCondition, and
/// InvalidArm unless 2 <= n1 <= n - 2.
MomentSummary compute_moments(const FinitePopulation& pop, std::size_t n1,
                              const MomentOptions& options = {});

/// Rows w_i = chol^{-1} (x_i - xbar): zero mean, identity covariance.
Matrix standardize(const FinitePopulation& pop, const MomentSummary& moments);

struct TrimSpec {
  double lo_q = 0.025;
  double hi_q = 0.975;

  void validate() const;
};

/// Type-7 empirical quantile (linear interpolation between order
/// statistics, h = (n - 1) q) of an unsorted sample.
double empirical_quantile(std::vector<double> values, double q);

/// Winsorizes each covariate column at its lo_q / hi_q empirical quantiles.
/// Outcomes and unit ids are carried over unchanged.
FinitePopulation trim(const FinitePopulation& pop, const TrimSpec& spec);

}  // namespace rerand
