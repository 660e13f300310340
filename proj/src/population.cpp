#include "rerand/population.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "rerand/error.hpp"

namespace rerand {

namespace {

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

FinitePopulation::FinitePopulation(Matrix covariates,
                                   std::vector<std::string> unit_ids,
                                   std::vector<std::string> covariate_names,
                                   std::optional<PotentialOutcomes> outcomes)
    : covariates_(std::move(covariates)),
      unit_ids_(std::move(unit_ids)),
      covariate_names_(std::move(covariate_names)),
      outcomes_(std::move(outcomes)) {
  const auto n = covariates_.rows();
  const auto k = covariates_.cols();
  if (n < 4) {
    throw DomainError("population needs at least 4 units, got " + std::to_string(n));
  }
  if (k < 1) throw DomainError("population needs at least one covariate");
  if (!all_finite(covariates_)) throw DomainError("covariates contain non-finite values");
  if (static_cast<Eigen::Index>(unit_ids_.size()) != n) {
    throw DomainError("unit_ids has " + std::to_string(unit_ids_.size()) +
                      " entries for " + std::to_string(n) + " units");
  }
  if (covariate_names_.empty()) {
    for (Eigen::Index j = 0; j < k; ++j) covariate_names_.push_back("x" + std::to_string(j + 1));
  }
  if (static_cast<Eigen::Index>(covariate_names_.size()) != k) {
    throw DomainError("covariate_names has wrong length");
  }
  if (outcomes_) {
    if (outcomes_->y1.size() != n || outcomes_->y0.size() != n) {
      throw DomainError("potential outcome vectors must have length n");
    }
    if (!outcomes_->y1.allFinite() || !outcomes_->y0.allFinite()) {
      throw DomainError("potential outcomes contain non-finite values");
    }
  }
}

FinitePopulation FinitePopulation::from_matrix(Matrix covariates,
                                               std::optional<PotentialOutcomes> outcomes) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(covariates.rows()));
  for (Eigen::Index i = 0; i < covariates.rows(); ++i) ids.push_back(std::to_string(i + 1));
  return FinitePopulation(std::move(covariates), std::move(ids), {}, std::move(outcomes));
}

const Vector& FinitePopulation::y1() const {
  if (!outcomes_) throw DomainError("population has no potential outcomes");
  return outcomes_->y1;
}

const Vector& FinitePopulation::y0() const {
  if (!outcomes_) throw DomainError("population has no potential outcomes");
  return outcomes_->y0;
}

FinitePopulation FinitePopulation::first_columns(std::size_t k_used) const {
  if (k_used < 1 || k_used > k()) {
    throw DomainError("K_used=" + std::to_string(k_used) + " outside 1.." + std::to_string(k()));
  }
  const auto cols = static_cast<Eigen::Index>(k_used);
  std::vector<std::string> names(covariate_names_.begin(),
                                 covariate_names_.begin() + static_cast<std::ptrdiff_t>(k_used));
  return FinitePopulation(covariates_.leftCols(cols), unit_ids_, std::move(names), outcomes_);
}

FinitePopulation FinitePopulation::with_covariates(Matrix covariates) const {
  std::vector<std::string> names = covariate_names_;
  if (static_cast<std::size_t>(covariates.cols()) != names.size()) names.clear();
  return FinitePopulation(std::move(covariates), unit_ids_, std::move(names), outcomes_);
}

FinitePopulation FinitePopulation::with_outcomes(Vector y1, Vector y0) const {
  return FinitePopulation(covariates_, unit_ids_, covariate_names_,
                          PotentialOutcomes{std::move(y1), std::move(y0)});
}

Vector MomentSummary::solve(const Vector& v) const {
  const auto lower = chol.triangularView<Eigen::Lower>();
  Vector y = lower.solve(v);
  return lower.transpose().solve(y);
}

Vector MomentSummary::whiten(const Vector& v) const {
  return chol.triangularView<Eigen::Lower>().solve(v);
}

double MomentSummary::quad_form(const Vector& v) const { return whiten(v).squaredNorm(); }

MomentSummary compute_moments(const FinitePopulation& pop, std::size_t n1,
                              const MomentOptions& options) {
  const std::size_t n = pop.n();
  if (n1 < 2 || n1 + 2 > n) {
    throw InvalidArm("n1=" + std::to_string(n1) + " must lie in 2.." + std::to_string(n - 2));
  }
  const Matrix& x = pop.covariates();
  const auto k = x.cols();

  MomentSummary m;
  m.n = n;
  m.n1 = n1;
  m.xbar = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - m.xbar.transpose();
  m.S2x = (centered.transpose() * centered) / static_cast<double>(n - 1);
  m.S2x = 0.5 * (m.S2x + m.S2x.transpose());

  if (options.ridge) {
    m.ridge = options.ridge_scale * m.S2x.trace() / static_cast<double>(k);
    m.S2x.diagonal().array() += m.ridge;
  }

  const Vector var = m.S2x.diagonal();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (!(var(j) > 0.0)) {
      throw SingularCovariates("covariate '" + pop.covariate_names()[static_cast<std::size_t>(j)] +
                               "' has zero variance");
    }
  }

  // Conditioning is judged on the correlation scale so that unit choices
  // do not trip the threshold.
  const Vector inv_sd = var.array().rsqrt();
  const Matrix corr = inv_sd.asDiagonal() * m.S2x * inv_sd.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(corr, Eigen::EigenvaluesOnly);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  m.cond_estimate = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (!(m.cond_estimate <= kMaxCondition)) {
    throw SingularCovariates("covariates are collinear (condition estimate " +
                             std::to_string(m.cond_estimate) + ")");
  }

  Eigen::LLT<Matrix> llt(m.S2x);
  if (llt.info() != Eigen::Success) {
    throw SingularCovariates("Cholesky factorization of the covariate covariance failed");
  }
  m.chol = llt.matrixL();

  const double n0 = static_cast<double>(n - n1);
  m.Vxx = (static_cast<double>(n) / (static_cast<double>(n1) * n0)) * m.S2x;
  return m;
}

Matrix standardize(const FinitePopulation& pop, const MomentSummary& moments) {
  if (moments.n != pop.n() || moments.k() != pop.k()) {
    throw DomainError("moments were not computed from this population");
  }
  const Matrix centered = pop.covariates().rowwise() - moments.xbar.transpose();
  // Solve chol * W^T = centered^T.
  Matrix wt = moments.chol.triangularView<Eigen::Lower>().solve(centered.transpose());
  return wt.transpose();
}

void TrimSpec::validate() const {
  if (!(lo_q > 0.0 && lo_q < hi_q && hi_q < 1.0)) {
    throw DomainError("trim quantiles must satisfy 0 < lo_q < hi_q < 1");
  }
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  const double h = static_cast<double>(values.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double x_lo = values[lo];
  if (frac == 0.0 || lo + 1 >= values.size()) return x_lo;
  const double x_hi =
      *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return x_lo + frac * (x_hi - x_lo);
}

FinitePopulation trim(const FinitePopulation& pop, const TrimSpec& spec) {
  spec.validate();
  Matrix x = pop.covariates();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    std::vector<double> col(x.col(j).data(), x.col(j).data() + x.rows());
    const double lo = empirical_quantile(col, spec.lo_q);
    const double hi = empirical_quantile(std::move(col), spec.hi_q);
    x.col(j) = x.col(j).cwiseMax(lo).cwiseMin(hi);
  }
  return pop.with_covariates(std::move(x));
}

}  // namespace rerand
