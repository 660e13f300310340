#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "rerand/asymptotic.hpp"
#include "rerand/design.hpp"
#include "rerand/population.hpp"

namespace rerand {

/// Observed experiment: realized assignment, outcomes and covariates.
struct ObservedData {
  Assignment z;
  Vector y_obs;
  Matrix covariates;

  void validate() const;
};

/// Reveals Y_i = Z_i Y_i(1) + (1 - Z_i) Y_i(0) from a population with both
/// potential outcomes.
ObservedData observe(const FinitePopulation& pop, const Assignment& z);

enum class HcVariant { kHC0 = 0, kHC1 = 1, kHC2 = 2, kHC3 = 3 };
enum class CiMethod { kConstrained, kWald, kNeyman };

std::string_view to_string(HcVariant hc);
std::string_view to_string(CiMethod method);
HcVariant parse_hc(std::string_view text);
CiMethod parse_method(std::string_view text);

struct VarianceComponents {
  double s2_1 = 0.0;        // treated-arm sample variance
  double s2_0 = 0.0;        // control-arm sample variance
  double s2_1_proj = 0.0;   // s_{1,x} S2x^{-1} s_{x,1}
  double s2_0_proj = 0.0;   // s_{0,x} S2x^{-1} s_{x,0}
  double s2_tau_proj = 0.0; // (s_{1,x} - s_{0,x}) S2x^{-1} (...)^T
  double s2_1_res = 0.0;    // residual variance, floored and HC-rescaled
  double s2_0_res = 0.0;
  double hc_factor_1 = 1.0; // multiplier applied to the floored residual variance
  double hc_factor_0 = 1.0;
};

struct VarianceEstimate {
  double Vtt_hat = 0.0;
  double R2_hat = 0.0;
  double R2_raw = 0.0;  // before clipping to [0, 1]
  HcVariant hc = HcVariant::kHC0;
  VarianceComponents components;
};

struct McMeta {
  std::uint64_t seed = 0;
  std::size_t draws = 0;
  bool antithetic = true;
  double multiplier = 0.0;  // quantile used for the half-width
};

struct InferenceResult {
  double tau_hat = 0.0;
  double Vtt_hat = 0.0;
  double R2_hat = 0.0;
  std::optional<VarianceEstimate> variance;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  CiMethod method = CiMethod::kNeyman;
  double alpha = 0.05;
  std::optional<McMeta> mc_meta;

  double half_width() const { return 0.5 * (ci_hi - ci_lo); }
  double length() const { return ci_hi - ci_lo; }
};

double diff_in_means(const ObservedData& data);

/// Sample-analogue estimators of V_tt and R2.
///
/// Within arm z: s2_z, s_{z,x} (arm sample covariance), s2_{z|x} against the
/// full-population S2x, and s2_{z\x} = s2_z - s2_{z|x} floored at zero. HC
/// variants multiply s2_{z\x} by sum(c_i e_i^2) / sum(e_i^2), with e_i the
/// residuals and h_ii the leverages of the arm regression of y on (1, x):
/// HC1 c_i = n_z / (n_z - K - 1), HC2 c_i = 1 / (1 - h_ii), HC3
/// c_i = 1 / (1 - h_ii)^2. When the arm residuals vanish the residual
/// variance is exactly zero. V_tt_hat is floored at 1e-12 (s2_1 + s2_0);
/// R2_hat is clipped to [0, 1].
///
/// Throws ArmTooSmall unless both arms have at least K + 2 units.
VarianceEstimate estimate_variance(const ObservedData& data, const MomentSummary& moments,
                                   HcVariant hc);

/// All four HC variants from one pass, indexed by HcVariant.
std::array<VarianceEstimate, 4> estimate_variance_all(const ObservedData& data,
                                                      const MomentSummary& moments);

/// tau_hat +/- sqrt(V_tt_hat) nu_{1-alpha/2,K,T}(R2_hat).
InferenceResult ci_constrained(double tau_hat, const VarianceEstimate& variance, std::size_t K,
                               std::size_t T, double alpha, const McConfig& mc);
/// Same, reading the quantile from a prebuilt sample (must match K and T).
InferenceResult ci_constrained(double tau_hat, const VarianceEstimate& variance, double alpha,
                               const ConstrainedGaussianSample& sample);

/// tau_hat +/- sqrt(V_tt_hat (1 - R2_hat)) z_{1-alpha/2}.
InferenceResult ci_wald(double tau_hat, const VarianceEstimate& variance, double alpha);

/// Neyman's interval tau_hat +/- z_{1-alpha/2} sqrt(s2_1/n1 + s2_0/n0).
InferenceResult ci_neyman(const ObservedData& data, double alpha);

}  // namespace rerand
