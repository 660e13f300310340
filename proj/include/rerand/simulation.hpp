#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rerand/asymptotic.hpp"
#include "rerand/inference.hpp"
#include "rerand/population.hpp"
#include "rerand/stats.hpp"

namespace rerand {

enum class DesignKind { kBestChoice, kCre };
std::string_view to_string(DesignKind design);

struct SimConfig {
  FinitePopulation population;  // must carry y1 and y0
  std::size_t n1 = 0;
  std::size_t K_used = 1;
  std::size_t T = 1;
  std::size_t reps = 1000;
  double alpha = 0.05;
  std::vector<CiMethod> methods{CiMethod::kConstrained, CiMethod::kNeyman};
  std::vector<HcVariant> hc_variants{HcVariant::kHC0};
  std::uint64_t master_seed = 1;
  McConfig mc{};
  // Also replay each replicate under complete randomization and record
  // Neyman's interval there, the usual comparator for the design.
  bool baseline_cre = true;
  unsigned threads = 1;
  bool keep_estimates = false;

  void validate() const;
};

/// Exact finite-population quantities for the first K_used covariates.
struct TruthSummary {
  std::size_t n = 0;
  std::size_t n1 = 0;
  std::size_t K = 0;
  double tau = 0.0;
  double S2_1 = 0.0;
  double S2_0 = 0.0;
  double S2_tau = 0.0;
  double Vtt = 0.0;
  double R2 = 0.0;
  double S2_tau_res = 0.0;  // S2_tau - S_{tau,x} S2x^{-1} S_{x,tau}
  double gamma_n = 0.0;
  double delta_bound = 0.0;  // 174 gamma_n + 7 gamma_n^{1/3}
};

struct CellReport {
  DesignKind design = DesignKind::kBestChoice;
  CiMethod method = CiMethod::kNeyman;
  std::optional<HcVariant> hc;
  double bias = 0.0;
  double bias_se = 0.0;
  double rmse = 0.0;
  double rmse_se = 0.0;
  double coverage = 0.0;
  double coverage_se = 0.0;
  double mean_length = 0.0;
  double length_se = 0.0;
  // 1 - mean_length / (mean Neyman length under CRE), when that cell exists.
  std::optional<double> length_reduction;

  std::string label() const;
};

struct EstimatorReport {
  DesignKind design = DesignKind::kBestChoice;
  SampleSummary error;  // summary of tau_hat - tau
  double rmse = 0.0;
};

struct SimulationReport {
  std::size_t n = 0;
  std::size_t n1 = 0;
  std::size_t K = 0;
  std::size_t T = 0;
  std::size_t reps = 0;
  std::size_t reps_completed = 0;
  double alpha = 0.05;
  std::uint64_t master_seed = 0;
  std::size_t mc_draws = 0;
  TruthSummary truth;
  std::vector<CellReport> cells;
  std::vector<EstimatorReport> estimators;
  std::vector<double> tau_hat_best_choice;  // when keep_estimates
  std::vector<double> tau_hat_cre;

  const CellReport* find(DesignKind design, CiMethod method,
                         std::optional<HcVariant> hc = std::nullopt) const;
  const EstimatorReport* estimator(DesignKind design) const;
};

/// Constant-effect imputation: tau_hat from the observed data, then
/// y1 = y_obs (treated) or y_obs + tau_hat (control), y0 = y1 - tau_hat.
FinitePopulation impute_constant_effect(const ObservedData& data,
                                        std::vector<std::string> unit_ids = {});

/// gamma_n standardizes u_i = (y1_i / r1 + y0_i / r0, x_i) with the inverse
/// symmetric square root of their covariance. Throws SingularCovariates when
/// that covariance is singular.
double berry_esseen_gamma(const FinitePopulation& pop, std::size_t n1, std::size_t K_used);

/// V_tt, R2, S2_{tau\x}, gamma_n and its Berry-Esseen bound from both
/// potential outcomes. When the outcome combination is an exact linear
/// function of the covariates (R2 = 1) gamma_n and delta_bound are +inf.
TruthSummary compute_truth(const FinitePopulation& pop, std::size_t n1, std::size_t K_used);

/// Repeated-sampling evaluation of the design and the requested intervals.
/// Replicate r draws from Stream(master_seed).child(r); aggregation walks
/// replicates in index order, so the report is bit-identical for any thread
/// count.
SimulationReport run_replications(const SimConfig& cfg);

struct WorstCaseResult {
  double worst_bias = 0.0;
  double worst_rmse = 0.0;
  std::size_t reps = 0;
  std::size_t T = 0;
};

/// Worst case of |bias| and RMSE of the difference in means over unit-norm
/// centered outcome vectors (constant effects), on the scale where complete
/// randomization has worst-case RMSE 1. tau_hat - tau = w(Z)^T y with
/// w_i = Z_i / n1 - (1 - Z_i) / n0, so the worst MSE is the top eigenvalue
/// of E[w w^T] and the worst bias is |E[w]|, both estimated by Monte Carlo.
/// Requires reps >= 10000.
WorstCaseResult worst_case_mse(const FinitePopulation& covariates, std::size_t n1,
                               std::size_t T, std::size_t reps, Stream& rng,
                               unsigned threads = 1);

/// 1 / (1 - r)^2 - 1: sample-size increase equivalent to shrinking an
/// interval's length by the fraction r. Throws DomainError unless r in [0, 1).
double percent_effective_sample_size(double length_reduction);

namespace synth {

Matrix gaussian_covariates(std::size_t n, std::size_t K, Stream& rng);
Matrix student_t_covariates(std::size_t n, std::size_t K, double dof, Stream& rng);

/// y0 = x beta + noise_sd * e, y1 = y0 + tau (constant effect).
FinitePopulation linear_outcome_population(const Matrix& covariates, const Vector& beta,
                                           double noise_sd, double tau, Stream& rng);

/// Both potential outcomes set to the normal score Phi^{-1}((r_i - 1/2) / n)
/// of unit i's propensity rank r_i (mid-ranks for ties): outcomes monotone in
/// the design's selection bias, with a standard-normal profile.
FinitePopulation propensity_outcome_population(const FinitePopulation& covariates,
                                               const std::vector<double>& propensity);

}  // namespace synth

}  // namespace rerand
