#include "rerand/inference.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "rerand/error.hpp"
#include "rerand/special.hpp"

namespace rerand {

void ObservedData::validate() const {
  const auto n = static_cast<Eigen::Index>(z.n());
  if (y_obs.size() != n) throw DomainError("outcome vector length does not match assignment");
  if (covariates.rows() != n) throw DomainError("covariate rows do not match assignment");
  if (!y_obs.allFinite()) throw DomainError("observed outcomes contain non-finite values");
}

ObservedData observe(const FinitePopulation& pop, const Assignment& z) {
  if (z.n() != pop.n()) throw DomainError("assignment length does not match population");
  const Vector& y1 = pop.y1();
  const Vector& y0 = pop.y0();
  Vector y(static_cast<Eigen::Index>(z.n()));
  for (std::size_t i = 0; i < z.n(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    y(ii) = z.treated(i) ? y1(ii) : y0(ii);
  }
  return {z, std::move(y), pop.covariates()};
}

std::string_view to_string(HcVariant hc) {
  switch (hc) {
    case HcVariant::kHC0: return "hc0";
    case HcVariant::kHC1: return "hc1";
    case HcVariant::kHC2: return "hc2";
    case HcVariant::kHC3: return "hc3";
  }
  return "hc0";
}

std::string_view to_string(CiMethod method) {
  switch (method) {
    case CiMethod::kConstrained: return "constrained";
    case CiMethod::kWald: return "wald";
    case CiMethod::kNeyman: return "neyman";
  }
  return "neyman";
}

HcVariant parse_hc(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "hc0") return HcVariant::kHC0;
  if (lower == "hc1") return HcVariant::kHC1;
  if (lower == "hc2") return HcVariant::kHC2;
  if (lower == "hc3") return HcVariant::kHC3;
  throw DomainError("unknown HC variant '" + std::string(text) + "'");
}

CiMethod parse_method(std::string_view text) {
  if (text == "constrained") return CiMethod::kConstrained;
  if (text == "wald") return CiMethod::kWald;
  if (text == "neyman") return CiMethod::kNeyman;
  throw DomainError("unknown CI method '" + std::string(text) + "'");
}

namespace {

struct ArmStats {
  std::size_t size = 0;
  double mean = 0.0;
  double s2 = 0.0;
  Vector s_x;         // sample covariance of y with x
  double proj = 0.0;  // s_x^T S2x^{-1} s_x
  double floored = 0.0;
  std::array<double, 4> factor{1.0, 1.0, 1.0, 1.0};  // indexed by HcVariant
};

std::vector<Eigen::Index> arm_units(const Assignment& z, bool treated) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < z.n(); ++i) {
    if (z.treated(i) == treated) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return idx;
}

double arm_variance(const Vector& y, const std::vector<Eigen::Index>& idx, double& mean) {
  mean = 0.0;
  for (auto i : idx) mean += y(i);
  mean /= static_cast<double>(idx.size());
  double ss = 0.0;
  for (auto i : idx) ss += (y(i) - mean) * (y(i) - mean);
  return ss / static_cast<double>(idx.size() - 1);
}

ArmStats arm_stats(const ObservedData& data, const MomentSummary& moments,
                   const std::vector<Eigen::Index>& idx) {
  const auto k = data.covariates.cols();
  const auto m = static_cast<Eigen::Index>(idx.size());
  ArmStats a;
  a.size = idx.size();

  Vector y(m);
  Matrix x(m, k);
  for (Eigen::Index r = 0; r < m; ++r) {
    y(r) = data.y_obs(idx[static_cast<std::size_t>(r)]);
    x.row(r) = data.covariates.row(idx[static_cast<std::size_t>(r)]);
  }
  a.mean = y.mean();
  const Vector yc = y.array() - a.mean;
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const double denom = static_cast<double>(m - 1);
  a.s2 = yc.squaredNorm() / denom;
  a.s_x = xc.transpose() * yc / denom;
  a.proj = moments.quad_form(a.s_x);
  a.floored = std::max(0.0, a.s2 - a.proj);

  // Arm regression of y on (1, x); centering absorbs the intercept.
  Eigen::ColPivHouseholderQR<Matrix> qr(xc);
  const Vector beta = qr.solve(yc);
  const Vector resid = yc - xc * beta;
  const double sse = resid.squaredNorm();

  constexpr double kVanish = 1e-24;
  if (sse <= kVanish * std::max(yc.squaredNorm(), std::numeric_limits<double>::min())) {
    a.factor.fill(0.0);
    return a;
  }
  const Eigen::Index rank = qr.rank();
  const Matrix q = qr.householderQ() * Matrix::Identity(m, rank);
  const double hc1 = static_cast<double>(m) / static_cast<double>(m - k - 1);
  double w2 = 0.0;
  double w3 = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    const double h = 1.0 / static_cast<double>(m) + q.row(r).squaredNorm();
    // Units with leverage one are fitted exactly and carry no residual.
    if (1.0 - h <= 1e-10) continue;
    const double e2 = resid(r) * resid(r);
    w2 += e2 / (1.0 - h);
    w3 += e2 / ((1.0 - h) * (1.0 - h));
  }
  a.factor = {1.0, hc1, w2 / sse, w3 / sse};
  return a;
}

double z_crit(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  return normal_quantile(1.0 - 0.5 * alpha);
}

}  // namespace

double diff_in_means(const ObservedData& data) {
  data.validate();
  if (data.z.n1() == 0 || data.z.n0() == 0) throw ArmTooSmall("both arms must be non-empty");
  double sum1 = 0.0;
  double sum0 = 0.0;
  for (std::size_t i = 0; i < data.z.n(); ++i) {
    const double y = data.y_obs(static_cast<Eigen::Index>(i));
    if (data.z.treated(i)) {
      sum1 += y;
    } else {
      sum0 += y;
    }
  }
  return sum1 / static_cast<double>(data.z.n1()) - sum0 / static_cast<double>(data.z.n0());
}

std::array<VarianceEstimate, 4> estimate_variance_all(const ObservedData& data,
                                                      const MomentSummary& moments) {
  data.validate();
  const std::size_t k = static_cast<std::size_t>(data.covariates.cols());
  if (moments.k() != k || moments.n != data.z.n()) {
    throw DomainError("moments do not match the observed covariates");
  }
  const std::size_t n1 = data.z.n1();
  const std::size_t n0 = data.z.n0();
  if (n1 < k + 2 || n0 < k + 2) {
    throw ArmTooSmall("each arm needs at least K + 2 = " + std::to_string(k + 2) +
                      " units (n1=" + std::to_string(n1) + ", n0=" + std::to_string(n0) + ")");
  }
  const ArmStats t = arm_stats(data, moments, arm_units(data.z, true));
  const ArmStats c = arm_stats(data, moments, arm_units(data.z, false));

  const double dn1 = static_cast<double>(n1);
  const double dn0 = static_cast<double>(n0);
  const double dn = static_cast<double>(n1 + n0);
  const double s2_tau_proj = moments.quad_form(t.s_x - c.s_x);
  const double floor = 1e-12 * (t.s2 + c.s2);
  const double vtt = std::max(t.s2 / dn1 + c.s2 / dn0 - s2_tau_proj / dn, floor);

  std::array<VarianceEstimate, 4> out;
  for (std::size_t v = 0; v < out.size(); ++v) {
    VarianceEstimate& est = out[v];
    est.hc = static_cast<HcVariant>(v);
    auto& comp = est.components;
    comp.s2_1 = t.s2;
    comp.s2_0 = c.s2;
    comp.s2_1_proj = t.proj;
    comp.s2_0_proj = c.proj;
    comp.s2_tau_proj = s2_tau_proj;
    comp.hc_factor_1 = t.factor[v];
    comp.hc_factor_0 = c.factor[v];
    comp.s2_1_res = t.floored * t.factor[v];
    comp.s2_0_res = c.floored * c.factor[v];
    est.Vtt_hat = vtt;
    if (vtt > 0.0) est.R2_raw = 1.0 - (comp.s2_1_res / dn1 + comp.s2_0_res / dn0) / vtt;
    est.R2_hat = std::clamp(est.R2_raw, 0.0, 1.0);
  }
  return out;
}

VarianceEstimate estimate_variance(const ObservedData& data, const MomentSummary& moments,
                                   HcVariant hc) {
  return estimate_variance_all(data, moments)[static_cast<std::size_t>(hc)];
}

InferenceResult ci_constrained(double tau_hat, const VarianceEstimate& variance, double alpha,
                               const ConstrainedGaussianSample& sample) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  const double nu = sample.quantile(1.0 - 0.5 * alpha, variance.R2_hat);
  const double half = std::sqrt(variance.Vtt_hat) * nu;
  InferenceResult r;
  r.tau_hat = tau_hat;
  r.Vtt_hat = variance.Vtt_hat;
  r.R2_hat = variance.R2_hat;
  r.variance = variance;
  r.ci_lo = tau_hat - half;
  r.ci_hi = tau_hat + half;
  r.method = CiMethod::kConstrained;
  r.alpha = alpha;
  r.mc_meta = McMeta{sample.config().seed, sample.size(), sample.config().antithetic, nu};
  return r;
}

InferenceResult ci_constrained(double tau_hat, const VarianceEstimate& variance, std::size_t K,
                               std::size_t T, double alpha, const McConfig& mc) {
  const ConstrainedGaussianSample sample(K, T, mc);
  return ci_constrained(tau_hat, variance, alpha, sample);
}

InferenceResult ci_wald(double tau_hat, const VarianceEstimate& variance, double alpha) {
  const double z = z_crit(alpha);
  const double half = std::sqrt(variance.Vtt_hat * (1.0 - variance.R2_hat)) * z;
  InferenceResult r;
  r.tau_hat = tau_hat;
  r.Vtt_hat = variance.Vtt_hat;
  r.R2_hat = variance.R2_hat;
  r.variance = variance;
  r.ci_lo = tau_hat - half;
  r.ci_hi = tau_hat + half;
  r.method = CiMethod::kWald;
  r.alpha = alpha;
  return r;
}

InferenceResult ci_neyman(const ObservedData& data, double alpha) {
  data.validate();
  const double z = z_crit(alpha);
  const std::size_t n1 = data.z.n1();
  const std::size_t n0 = data.z.n0();
  if (n1 < 2 || n0 < 2) throw ArmTooSmall("Neyman interval needs at least 2 units per arm");
  double m1 = 0.0;
  double m0 = 0.0;
  const double s2_1 = arm_variance(data.y_obs, arm_units(data.z, true), m1);
  const double s2_0 = arm_variance(data.y_obs, arm_units(data.z, false), m0);
  const double v = s2_1 / static_cast<double>(n1) + s2_0 / static_cast<double>(n0);
  const double tau_hat = m1 - m0;
  const double half = z * std::sqrt(v);
  InferenceResult r;
  r.tau_hat = tau_hat;
  r.Vtt_hat = v;
  r.R2_hat = 0.0;
  r.ci_lo = tau_hat - half;
  r.ci_hi = tau_hat + half;
  r.method = CiMethod::kNeyman;
  r.alpha = alpha;
  return r;
}

}  // namespace rerand
