#include "rerand/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <utility>

#include "rerand/design.hpp"
#include "rerand/error.hpp"
#include "rerand/parallel.hpp"
#include "rerand/special.hpp"

namespace rerand {

std::string_view to_string(DesignKind design) {
  return design == DesignKind::kBestChoice ? "best_choice" : "cre";
}

std::string CellReport::label() const {
  std::string s(to_string(design));
  s += "/";
  s += to_string(method);
  if (hc) {
    s += "/";
    s += to_string(*hc);
  }
  return s;
}

void SimConfig::validate() const {
  if (!population.has_outcomes()) {
    throw ConfigError("config.population: both potential outcomes (y1, y0) are required");
  }
  if (reps < 100) throw ConfigError("config.reps: must be at least 100");
  if (K_used < 1 || K_used > population.k()) {
    throw ConfigError("config.K_used: " + std::to_string(K_used) + " outside 1.." +
                      std::to_string(population.k()));
  }
  if (n1 < 2 || n1 + 2 > population.n()) {
    throw ConfigError("config.n1: " + std::to_string(n1) + " outside 2.." +
                      std::to_string(population.n() - 2));
  }
  if (T < 1) throw ConfigError("config.T: must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("config.alpha: must lie in (0, 1)");
  if (methods.empty() && !baseline_cre) throw ConfigError("config.methods: nothing to run");
  const bool needs_hc = std::any_of(methods.begin(), methods.end(),
                                    [](CiMethod m) { return m != CiMethod::kNeyman; });
  if (needs_hc && hc_variants.empty()) throw ConfigError("config.hc: at least one variant");
  if (mc.draws < 10000) throw ConfigError("config.mc_draws: must be at least 10000");
}

const CellReport* SimulationReport::find(DesignKind design, CiMethod method,
                                         std::optional<HcVariant> hc) const {
  for (const auto& c : cells) {
    if (c.design == design && c.method == method && c.hc == hc) return &c;
  }
  return nullptr;
}

const EstimatorReport* SimulationReport::estimator(DesignKind design) const {
  for (const auto& e : estimators) {
    if (e.design == design) return &e;
  }
  return nullptr;
}

FinitePopulation impute_constant_effect(const ObservedData& data,
                                        std::vector<std::string> unit_ids) {
  const double tau_hat = diff_in_means(data);
  const auto n = static_cast<Eigen::Index>(data.z.n());
  Vector y1(n);
  Vector y0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool treated = data.z.treated(static_cast<std::size_t>(i));
    y1(i) = treated ? data.y_obs(i) : data.y_obs(i) + tau_hat;
    y0(i) = treated ? data.y_obs(i) - tau_hat : data.y_obs(i);
  }
  if (unit_ids.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) unit_ids.push_back(std::to_string(i + 1));
  }
  return FinitePopulation(data.covariates, std::move(unit_ids), {},
                          PotentialOutcomes{std::move(y1), std::move(y0)});
}

namespace {

double fp_variance(const Vector& v) {
  const double mean = v.mean();
  return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

Vector fp_covariance(const Matrix& x, const Vector& v) {
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const Vector vc = v.array() - v.mean();
  return xc.transpose() * vc / static_cast<double>(v.size() - 1);
}

// gamma_n on u_i = (y1_i / r1 + y0_i / r0, x_i); nullopt when S2_u is singular.
std::optional<double> gamma_or_singular(const FinitePopulation& pop, std::size_t n1,
                                        std::size_t K_used) {
  const Matrix x = pop.first_columns(K_used).covariates();
  const double n = static_cast<double>(pop.n());
  const double r1 = static_cast<double>(n1) / n;
  const double r0 = 1.0 - r1;
  const auto k = static_cast<Eigen::Index>(K_used);
  Matrix u(x.rows(), k + 1);
  u.col(0) = pop.y1() / r1 + pop.y0() / r0;
  u.rightCols(k) = x;
  const Matrix uc = u.rowwise() - u.colwise().mean();
  const Matrix s2u = uc.transpose() * uc / (n - 1.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(s2u);
  const Vector lambda = eig.eigenvalues();
  if (!(lambda.minCoeff() > 1e-12 * lambda.maxCoeff())) return std::nullopt;
  const Matrix inv_sqrt =
      eig.eigenvectors() * lambda.array().rsqrt().matrix().asDiagonal() *
      eig.eigenvectors().transpose();
  const Matrix std_u = uc * inv_sqrt;  // inv_sqrt is symmetric
  double cube_sum = 0.0;
  for (Eigen::Index i = 0; i < std_u.rows(); ++i) {
    const double norm = std_u.row(i).norm();
    cube_sum += norm * norm * norm;
  }
  return std::pow(static_cast<double>(K_used + 1), 0.25) / std::sqrt(n * r1 * r0) *
         (cube_sum / n);
}

}  // namespace

double berry_esseen_gamma(const FinitePopulation& pop, std::size_t n1, std::size_t K_used) {
  if (!pop.has_outcomes()) throw DomainError("gamma_n needs both potential outcomes");
  if (K_used < 1 || K_used > pop.k()) throw DomainError("K_used outside 1..K");
  check_arm_sizes(pop.n(), n1);
  const auto g = gamma_or_singular(pop, n1, K_used);
  if (!g) throw SingularCovariates("covariance of (outcome combination, covariates) is singular");
  return *g;
}

TruthSummary compute_truth(const FinitePopulation& pop, std::size_t n1, std::size_t K_used) {
  const FinitePopulation sub = pop.first_columns(K_used);
  const MomentSummary moments = compute_moments(sub, n1);
  const Matrix& x = sub.covariates();
  const Vector& y1 = pop.y1();
  const Vector& y0 = pop.y0();
  const Vector tau_i = y1 - y0;

  TruthSummary t;
  t.n = pop.n();
  t.n1 = n1;
  t.K = K_used;
  const double n = static_cast<double>(t.n);
  const double dn1 = static_cast<double>(n1);
  const double dn0 = n - dn1;
  t.tau = tau_i.mean();
  t.S2_1 = fp_variance(y1);
  t.S2_0 = fp_variance(y0);
  t.S2_tau = fp_variance(tau_i);
  t.Vtt = t.S2_1 / dn1 + t.S2_0 / dn0 - t.S2_tau / n;
  if (!(t.Vtt > 0.0)) throw DomainError("V_tt is zero: outcomes carry no variation");

  const Vector s1x = fp_covariance(x, y1);
  const Vector s0x = fp_covariance(x, y0);
  const Vector vtx = s1x / dn1 + s0x / dn0;
  // V_tx V_xx^{-1} V_xt with V_xx = n / (n1 n0) S2x.
  t.R2 = std::clamp((dn1 * dn0 / n) * moments.quad_form(vtx) / t.Vtt, 0.0, 1.0);
  t.S2_tau_res = t.S2_tau - moments.quad_form(s1x - s0x);

  if (const auto g = gamma_or_singular(pop, n1, K_used)) {
    t.gamma_n = *g;
    t.delta_bound = 174.0 * t.gamma_n + 7.0 * std::cbrt(t.gamma_n);
  } else {
    // Outcome combination collinear with the covariates: the bound is vacuous.
    t.gamma_n = std::numeric_limits<double>::infinity();
    t.delta_bound = t.gamma_n;
  }
  return t;
}

namespace {

struct CellSpec {
  DesignKind design;
  CiMethod method;
  std::optional<HcVariant> hc;
};

struct CellAccumulator {
  CompensatedSum covered;
  CompensatedSum length;
  CompensatedSum length_sq;
};

}  // namespace

SimulationReport run_replications(const SimConfig& cfg) {
  cfg.validate();
  const FinitePopulation pop = cfg.population.first_columns(cfg.K_used);
  const std::size_t n = pop.n();
  const MomentSummary moments = compute_moments(pop, cfg.n1);
  const BalanceScorer scorer(pop, moments);

  SimulationReport report;
  report.n = n;
  report.n1 = cfg.n1;
  report.K = cfg.K_used;
  report.T = cfg.T;
  report.reps = cfg.reps;
  report.alpha = cfg.alpha;
  report.master_seed = cfg.master_seed;
  report.mc_draws = cfg.mc.draws;
  report.truth = compute_truth(cfg.population, cfg.n1, cfg.K_used);

  std::vector<CellSpec> specs;
  std::set<HcVariant> hc_set(cfg.hc_variants.begin(), cfg.hc_variants.end());
  for (CiMethod m : cfg.methods) {
    if (m == CiMethod::kNeyman) {
      specs.push_back({DesignKind::kBestChoice, m, std::nullopt});
    } else {
      for (HcVariant hc : hc_set) specs.push_back({DesignKind::kBestChoice, m, hc});
    }
  }
  if (cfg.baseline_cre) specs.push_back({DesignKind::kCre, CiMethod::kNeyman, std::nullopt});
  const bool needs_sample = std::find(cfg.methods.begin(), cfg.methods.end(),
                                      CiMethod::kConstrained) != cfg.methods.end();
  std::optional<ConstrainedGaussianSample> sample;
  if (needs_sample) sample.emplace(cfg.K_used, cfg.T, cfg.mc);

  const std::size_t cells = specs.size();
  std::vector<double> tau_bc(cfg.reps, 0.0);
  std::vector<double> tau_cre(cfg.baseline_cre ? cfg.reps : 0, 0.0);
  std::vector<double> lengths(cfg.reps * cells, 0.0);
  std::vector<std::uint8_t> covered(cfg.reps * cells, 0);
  const double tau = report.truth.tau;
  const Stream root(cfg.master_seed);

  parallel_for(cfg.reps, cfg.threads, [&](std::size_t begin, std::size_t end) {
    CreSampler sampler(n, cfg.n1);
    for (std::size_t r = begin; r < end; ++r) {
      const Stream rep = root.child(r);
      Stream design_stream = rep.child(0);
      const Assignment z = best_choice_assignment(scorer, sampler, cfg.T, design_stream);
      const ObservedData data = observe(pop, z);
      const double tau_hat = diff_in_means(data);
      tau_bc[r] = tau_hat;

      std::optional<std::array<VarianceEstimate, 4>> variances;
      std::optional<ObservedData> cre_data;
      for (std::size_t c = 0; c < cells; ++c) {
        const CellSpec& spec = specs[c];
        InferenceResult ci;
        if (spec.design == DesignKind::kCre) {
          if (!cre_data) {
            Stream cre_stream = rep.child(1);
            cre_data = observe(pop, sampler.to_assignment(sampler.draw_arm(cre_stream)));
            tau_cre[r] = diff_in_means(*cre_data);
          }
          ci = ci_neyman(*cre_data, cfg.alpha);
        } else if (spec.method == CiMethod::kNeyman) {
          ci = ci_neyman(data, cfg.alpha);
        } else {
          if (!variances) variances = estimate_variance_all(data, moments);
          const VarianceEstimate& v = (*variances)[static_cast<std::size_t>(*spec.hc)];
          ci = spec.method == CiMethod::kConstrained
                   ? ci_constrained(tau_hat, v, cfg.alpha, *sample)
                   : ci_wald(tau_hat, v, cfg.alpha);
        }
        lengths[r * cells + c] = ci.length();
        covered[r * cells + c] = (ci.ci_lo <= tau && tau <= ci.ci_hi) ? 1 : 0;
      }
    }
  });

  // Order-independent aggregation: a single pass in replicate order.
  auto error_report = [&](DesignKind design, const std::vector<double>& taus) {
    std::vector<double> err(taus.size());
    for (std::size_t r = 0; r < taus.size(); ++r) err[r] = taus[r] - tau;
    EstimatorReport e;
    e.design = design;
    e.error = summarize_sample(err);
    CompensatedSum sq;
    std::vector<double> sq_err(err.size());
    for (std::size_t r = 0; r < err.size(); ++r) {
      sq_err[r] = err[r] * err[r];
      sq.add(sq_err[r]);
    }
    const SampleSummary sq_summary = summarize_sample(sq_err);
    e.rmse = std::sqrt(sq.value() / static_cast<double>(err.size()));
    return std::pair{e, sq_summary};
  };
  const auto [bc_est, bc_sq] = error_report(DesignKind::kBestChoice, tau_bc);
  report.estimators.push_back(bc_est);
  SampleSummary cre_sq;
  if (cfg.baseline_cre) {
    auto [cre_est, sq] = error_report(DesignKind::kCre, tau_cre);
    report.estimators.push_back(cre_est);
    cre_sq = sq;
  }

  const double reps = static_cast<double>(cfg.reps);
  for (std::size_t c = 0; c < cells; ++c) {
    CellAccumulator acc;
    for (std::size_t r = 0; r < cfg.reps; ++r) {
      const double len = lengths[r * cells + c];
      acc.covered.add(covered[r * cells + c]);
      acc.length.add(len);
      acc.length_sq.add(len * len);
    }
    CellReport cell;
    cell.design = specs[c].design;
    cell.method = specs[c].method;
    cell.hc = specs[c].hc;
    const EstimatorReport& est =
        cell.design == DesignKind::kBestChoice ? report.estimators[0] : report.estimators[1];
    const SampleSummary& sq = cell.design == DesignKind::kBestChoice ? bc_sq : cre_sq;
    cell.bias = est.error.mean;
    cell.bias_se = est.error.mean_se;
    cell.rmse = est.rmse;
    cell.rmse_se = est.rmse > 0.0 ? sq.mean_se / (2.0 * est.rmse) : 0.0;
    cell.coverage = acc.covered.value() / reps;
    cell.coverage_se = std::sqrt(cell.coverage * (1.0 - cell.coverage) / reps);
    cell.mean_length = acc.length.value() / reps;
    const double var_len =
        std::max(0.0, acc.length_sq.value() / reps - cell.mean_length * cell.mean_length);
    cell.length_se = std::sqrt(var_len / reps);
    report.cells.push_back(cell);
  }
  if (const CellReport* base = report.find(DesignKind::kCre, CiMethod::kNeyman);
      base != nullptr && base->mean_length > 0.0) {
    const double base_len = base->mean_length;
    for (auto& cell : report.cells) {
      if (cell.design == DesignKind::kBestChoice) {
        cell.length_reduction = 1.0 - cell.mean_length / base_len;
      }
    }
  }
  report.reps_completed = cfg.reps;
  if (cfg.keep_estimates) {
    report.tau_hat_best_choice = std::move(tau_bc);
    report.tau_hat_cre = std::move(tau_cre);
  }
  return report;
}

WorstCaseResult worst_case_mse(const FinitePopulation& covariates, std::size_t n1,
                               std::size_t T, std::size_t reps, Stream& rng,
                               unsigned threads) {
  if (reps < 10000) throw DomainError("worst-case estimation needs reps >= 10000");
  if (T < 1) throw DomainError("T must be at least 1");
  const std::size_t n = covariates.n();
  const MomentSummary moments = compute_moments(covariates, n1);
  const BalanceScorer scorer(covariates, moments);
  const double w1 = 1.0 / static_cast<double>(n1);
  const double w0 = -1.0 / static_cast<double>(n - n1);

  constexpr std::size_t kBatch = 512;
  const auto nn = static_cast<Eigen::Index>(n);
  Matrix second = Matrix::Zero(nn, nn);
  Vector first = Vector::Zero(nn);
  Matrix batch(static_cast<Eigen::Index>(kBatch), nn);
  for (std::size_t start = 0; start < reps; start += kBatch) {
    const std::size_t count = std::min(kBatch, reps - start);
    parallel_for(count, threads, [&](std::size_t begin, std::size_t end) {
      CreSampler sampler(n, n1);
      for (std::size_t b = begin; b < end; ++b) {
        Stream rep = rng.child(start + b);
        const Assignment z = best_choice_assignment(scorer, sampler, T, rep);
        for (std::size_t i = 0; i < n; ++i) {
          batch(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) =
              z.treated(i) ? w1 : w0;
        }
      }
    });
    const auto rows = static_cast<Eigen::Index>(count);
    second.selfadjointView<Eigen::Lower>().rankUpdate(batch.topRows(rows).transpose());
    first += batch.topRows(rows).colwise().sum().transpose();
  }
  const double dreps = static_cast<double>(reps);
  second /= dreps;
  first /= dreps;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(second.selfadjointView<Eigen::Lower>(),
                                            Eigen::EigenvaluesOnly);
  const double lambda_max = std::max(0.0, eig.eigenvalues().maxCoeff());
  // Complete randomization: Var(w^T y) = n / (n1 n0 (n - 1)) for unit-norm
  // centered y, whatever its direction.
  const double cre = static_cast<double>(n) /
                     (static_cast<double>(n1) * static_cast<double>(n - n1) *
                      static_cast<double>(n - 1));
  WorstCaseResult out;
  out.reps = reps;
  out.T = T;
  out.worst_rmse = std::sqrt(lambda_max / cre);
  out.worst_bias = first.norm() / std::sqrt(cre);
  return out;
}

double percent_effective_sample_size(double length_reduction) {
  if (!(length_reduction >= 0.0 && length_reduction < 1.0)) {
    throw DomainError("length reduction must lie in [0, 1)");
  }
  const double keep = 1.0 - length_reduction;
  return 1.0 / (keep * keep) - 1.0;
}

namespace synth {

Matrix gaussian_covariates(std::size_t n, std::size_t K, Stream& rng) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  }
  return x;
}

Matrix student_t_covariates(std::size_t n, std::size_t K, double dof, Stream& rng) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(K));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.student_t(dof);
  }
  return x;
}

FinitePopulation linear_outcome_population(const Matrix& covariates, const Vector& beta,
                                           double noise_sd, double tau, Stream& rng) {
  if (beta.size() != covariates.cols()) throw DomainError("beta length must equal K");
  Vector y0 = covariates * beta;
  for (Eigen::Index i = 0; i < y0.size(); ++i) y0(i) += noise_sd * rng.normal();
  Vector y1 = y0.array() + tau;
  return FinitePopulation::from_matrix(covariates,
                                       PotentialOutcomes{std::move(y1), std::move(y0)});
}

FinitePopulation propensity_outcome_population(const FinitePopulation& covariates,
                                               const std::vector<double>& propensity) {
  const std::size_t n = propensity.size();
  if (n != covariates.n()) throw DomainError("one propensity per unit is required");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return propensity[a] < propensity[b]; });
  Vector y(static_cast<Eigen::Index>(n));
  const double dn = static_cast<double>(n);
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    while (hi < n && propensity[order[hi]] == propensity[order[lo]]) ++hi;
    // Tied propensities share their mid-rank (1-based ranks lo+1..hi).
    const double mid_rank = 0.5 * static_cast<double>(lo + 1 + hi);
    const double score = normal_quantile((mid_rank - 0.5) / dn);
    for (std::size_t i = lo; i < hi; ++i) y(static_cast<Eigen::Index>(order[i])) = score;
    lo = hi;
  }
  return covariates.with_outcomes(y, y);
}

}  // namespace synth

}  // namespace rerand
