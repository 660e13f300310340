#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rerand/rng.hpp"

namespace rerand {

/// Parameters of the limiting distribution sqrt(1-R2) e0 + sqrt(R2) L_{K,T}.
struct AsymParams {
  std::size_t K = 1;
  std::size_t T = 1;
  double R2 = 0.0;
  std::optional<double> Vtt;  // quantiles are on the V_tt-standardized scale

  void validate() const;
};

struct McConfig {
  std::size_t draws = 200000;
  std::uint64_t seed = 0x5EED5EEDULL;
  bool antithetic = true;
  unsigned threads = 1;

  void validate() const;  // draws >= 10000
};

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t draws = 0;
};

struct QuantileEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// F_K^{-1}(1 - (1-u)^{1/T}): the min of T iid chi2_K variables as a
/// deterministic transform of one uniform.
double chi2_KT_from_uniform(std::size_t K, std::size_t T, double u);

double sample_chi2_KT(std::size_t K, std::size_t T, Stream& rng);

/// L_{K,T} = chi_{K,T} * S * sqrt(beta_K), beta_K ~ Beta(1/2, (K-1)/2),
/// beta_1 = 1.
double sample_LKT(std::size_t K, std::size_t T, Stream& rng);

/// v_{K,T} = Var(L_{K,T}) = E[chi2_{K,T}] / K by Monte Carlo. T = 1 is
/// exactly 1 (chi2_K has mean K) and is returned without sampling.
McEstimate variance_vKT(std::size_t K, std::size_t T, const McConfig& mc);

/// A fixed Monte Carlo sample of (e0, L_{K,T}) pairs from which quantiles of
/// the mixture sqrt(1-R2) e0 + sqrt(R2) L can be read for any R2.
///
/// Draws are generated in blocks, block b from Stream(mc.seed).child(b), so
/// the sample is identical for every thread count. With antithetic pairing
/// each pair (e0, L) is followed by (-e0, -L), which makes the sample exactly
/// symmetric about zero.
class ConstrainedGaussianSample {
 public:
  ConstrainedGaussianSample(std::size_t K, std::size_t T, const McConfig& mc);

  std::size_t K() const { return K_; }
  std::size_t T() const { return T_; }
  std::size_t size() const { return eps_.size(); }
  const McConfig& config() const { return mc_; }
  const std::vector<double>& eps() const { return eps_; }
  const std::vector<double>& lkt() const { return lkt_; }

  /// Type-7 alpha-quantile of the mixture at R2 (clipped to [0, 1]).
  double quantile(double alpha, double R2) const;
  /// Same, with an order-statistic standard error.
  QuantileEstimate quantile_with_error(double alpha, double R2) const;

 private:
  std::size_t K_;
  std::size_t T_;
  McConfig mc_;
  std::vector<double> eps_;
  std::vector<double> lkt_;
};

/// nu_{alpha,K,T}(R2): alpha-quantile of sqrt(1-R2) e0 + sqrt(R2) L_{K,T}.
double quantile_nu(double alpha, const AsymParams& params, const McConfig& mc);
QuantileEstimate quantile_nu_estimate(double alpha, const AsymParams& params,
                                      const McConfig& mc);

/// (1 - v_{K,T}) R2: asymptotic percent reduction in variance versus CRE.
McEstimate percent_variance_reduction(double R2, std::size_t K, std::size_t T,
                                      const McConfig& mc);

/// 1 - nu_{1-alpha/2,K,T}(R2) / z_{1-alpha/2}: asymptotic percent reduction in
/// the length of the symmetric 1-alpha quantile range.
QuantileEstimate percent_qr_reduction(double alpha, double R2, std::size_t K, std::size_t T,
                                      const McConfig& mc);

struct RegimeDiagnostic {
  std::size_t K = 0;
  std::size_t T = 0;
  double ratio = 0.0;  // log(T) / K
  McEstimate v;
  std::string label;  // near-optimal | intermediate | negligible-gain
};

inline constexpr double kNearOptimalV = 0.1;
inline constexpr double kNegligibleGainV = 0.9;

/// Design-guidance record: log(T)/K, v_{K,T} (an upper bound on the gap to
/// the ideal 1 - R2 precision) and an advisory label from v.
RegimeDiagnostic regime_classify(std::size_t K, std::size_t T, const McConfig& mc);

}  // namespace rerand
