// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when all pass).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support/datasets.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"
#include "rerand/asymptotic.hpp"
#include "rerand/design.hpp"
#include "rerand/inference.hpp"
#include "rerand/population.hpp"
#include "rerand/simulation.hpp"

using namespace rerand;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

McConfig mc_budget(std::size_t draws, std::uint64_t seed) {
  McConfig mc;
  mc.draws = draws;
  mc.seed = seed;
  return mc;
}

// 1. v_{K,T} against reference values and an independent quadrature.
void vkt_table(Outcome& o) {
  struct Cell {
    std::size_t K, T;
    double target, tol;
  };
  for (const Cell c : {Cell{1, 10, 0.025, 0.005}, Cell{5, 100, 0.10, 0.02},
                       Cell{10, 3000, 0.10, 0.02}}) {
    const McEstimate v = variance_vKT(c.K, c.T, mc_budget(200000, 100 + c.K));
    const double quad = oracle::v_kt_quadrature(c.K, c.T);
    o.detail << " v(" << c.K << "," << c.T << ")=" << fmt(v.value) << " (quad " << fmt(quad)
             << ")";
    o.require(std::fabs(v.value - c.target) <= c.tol, "reference value");
    o.require(std::fabs(v.value - quad) <= 4.0 * v.std_error + 1e-12, "quadrature agreement");
  }
  for (std::size_t K : {1, 5, 20}) {
    o.require(variance_vKT(K, 1, mc_budget(200000, 1)).value == 1.0, "v(K,1) = 1");
  }
  o.detail << " v(K,1)=1 for K=1,5,20";
}

// 2. Product representation vs the definitional minimum-norm Gaussian draw.
void representation_ks(Outcome& o) {
  constexpr std::size_t draws = 100000;
  const double crit = oracle::ks_critical(0.001, draws, draws);
  std::uint64_t seed = 500;
  for (const auto [K, T] : std::vector<std::pair<std::size_t, std::size_t>>{
           {1, 10}, {2, 5}, {5, 100}, {10, 50}}) {
    oracle::MinNormSampler def(K, T, ++seed);
    Stream rng(++seed);
    oracle::Vec a(draws);
    oracle::Vec b(draws);
    for (std::size_t i = 0; i < draws; ++i) {
      a[i] = def.draw().first;
      b[i] = sample_LKT(K, T, rng);
    }
    const double d = oracle::ks_statistic(a, b);
    o.detail << " D(" << K << "," << T << ")=" << fmt(d, 3);
    o.require(d < crit, "KS rejects at (" + std::to_string(K) + "," + std::to_string(T) + ")");
  }
  o.detail << " crit=" << fmt(crit, 3);
}

// 3. All 20 assignments of six units with covariate 1..6.
void exact_enumeration(Outcome& o) {
  const FinitePopulation pop = FinitePopulation::from_matrix(fixture::one_to_six());
  const MomentSummary m = compute_moments(pop, 3);
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
  oracle::for_each_subset(6, 3, [&](const std::vector<std::size_t>& treated) {
    std::vector<std::uint8_t> z(6, 0);
    for (auto i : treated) z[i] = 1;
    const double d = covariate_diff_in_means(Assignment(z), pop.covariates())(0);
    sum += d;
    sum_sq += d * d;
    ++count;
  });
  const double mean = sum / static_cast<double>(count);
  const double var = sum_sq / static_cast<double>(count) - mean * mean;
  const double m456 = mahalanobis(Assignment({0, 0, 0, 1, 1, 1}), pop, m);
  o.detail << " assignments=" << count << " mean=" << fmt(mean, 3) << " var=" << fmt(var, 12)
           << " Vxx=" << fmt(m.Vxx(0, 0), 12) << " M{4,5,6}=" << fmt(m456, 15);
  o.require(count == 20, "20 assignments");
  o.require(std::fabs(mean) <= 1e-14, "zero mean");
  o.require(std::fabs(var - m.Vxx(0, 0)) <= 1e-12, "covariance equals Vxx");
  o.require(std::fabs(m456 - 27.0 / 7.0) <= 1e-12, "M = 27/7");
}

// 4. Invariance of balance, variance estimates and intervals under affine maps.
void affine_invariance(Outcome& o) {
  double worst = 0.0;
  std::size_t checks = 0;
  auto track = [&](double a, double b) {
    worst = std::max(worst, std::fabs(a - b) / std::max(1.0, std::fabs(b)));
    ++checks;
  };
  for (std::size_t K : {1, 3, 8}) {
    const std::size_t n = 60;
    const std::size_t n1 = 24;
    const Matrix x = fixture::random_matrix(static_cast<Eigen::Index>(n),
                                            static_cast<Eigen::Index>(K), 40 + K);
    const Vector y = x.rowwise().sum() +
                     fixture::random_matrix(static_cast<Eigen::Index>(n), 1, 50 + K).col(0);
    Stream rng(K);
    const Assignment z = draw_cre(n, n1, rng);
    const ObservedData base{z, y, x};
    const FinitePopulation pop = FinitePopulation::from_matrix(x);
    const MomentSummary m0 = compute_moments(pop, n1);
    const double M0 = mahalanobis(z, pop, m0);
    const auto v0 = estimate_variance_all(base, m0);
    const double tau = diff_in_means(base);
    const McConfig mc = mc_budget(20000, 9);
    for (int map = 0; map < 10; ++map) {
      const Matrix a = fixture::random_invertible(static_cast<Eigen::Index>(K),
                                                  1000 * K + static_cast<std::uint64_t>(map));
      const Vector shift =
          fixture::random_matrix(static_cast<Eigen::Index>(K), 1, 77 + map).col(0) * 5.0;
      const Matrix xt = (x * a.transpose()).rowwise() + shift.transpose();
      const FinitePopulation popt = FinitePopulation::from_matrix(xt);
      const MomentSummary m1 = compute_moments(popt, n1);
      track(mahalanobis(z, popt, m1), M0);
      track(BalanceScorer(popt, m1).score(z), BalanceScorer(pop, m0).score(z));
      const ObservedData moved{z, y, xt};
      const auto v1 = estimate_variance_all(moved, m1);
      for (std::size_t h = 0; h < 4; ++h) {
        track(v1[h].Vtt_hat, v0[h].Vtt_hat);
        track(v1[h].R2_hat, v0[h].R2_hat);
        const InferenceResult c0 = ci_constrained(tau, v0[h], K, 100, 0.05, mc);
        const InferenceResult c1 = ci_constrained(tau, v1[h], K, 100, 0.05, mc);
        track(c1.ci_lo, c0.ci_lo);
        track(c1.ci_hi, c0.ci_hi);
        const InferenceResult w0 = ci_wald(tau, v0[h], 0.05);
        const InferenceResult w1 = ci_wald(tau, v1[h], 0.05);
        track(w1.ci_lo, w0.ci_lo);
        track(w1.ci_hi, w0.ci_hi);
      }
      const InferenceResult n0 = ci_neyman(base, 0.05);
      const InferenceResult n1r = ci_neyman(moved, 0.05);
      track(n1r.ci_lo, n0.ci_lo);
      track(n1r.ci_hi, n0.ci_hi);
    }
  }
  o.detail << " comparisons=" << checks << " worst relative change=" << fmt(worst, 3);
  o.require(worst <= 1e-8, "all quantities within 1e-8");
}

FinitePopulation linear_population(std::size_t n, std::size_t K, double noise, std::uint64_t seed) {
  Stream rng(seed);
  const Matrix x = synth::gaussian_covariates(n, K, rng);
  return synth::linear_outcome_population(x, Vector::Ones(static_cast<Eigen::Index>(K)), noise,
                                          1.0, rng);
}

// 5. Coverage and length at n=200, K=5, T=100.
void coverage_desk_scale(Outcome& o) {
  const std::size_t K = 5;
  // R2 about one half: Var(x beta) = K = noise variance.
  SimConfig cfg{.population = linear_population(200, K, std::sqrt(5.0), 2024)};
  cfg.n1 = 100;
  cfg.K_used = K;
  cfg.T = 100;
  cfg.reps = 10000;
  cfg.methods = {CiMethod::kConstrained};
  cfg.hc_variants = {HcVariant::kHC0};
  cfg.master_seed = 5;
  cfg.threads = 0;
  const SimulationReport r = run_replications(cfg);
  const CellReport* ours = r.find(DesignKind::kBestChoice, CiMethod::kConstrained, HcVariant::kHC0);
  const CellReport* ney = r.find(DesignKind::kCre, CiMethod::kNeyman);
  o.detail << " R2=" << fmt(r.truth.R2, 3) << " constrained(best-choice) coverage="
           << fmt(ours->coverage) << " length=" << fmt(ours->mean_length)
           << "; Neyman(CRE) coverage=" << fmt(ney->coverage)
           << " length=" << fmt(ney->mean_length)
           << " reduction=" << fmt(ours->length_reduction.value_or(0.0), 3);
  o.require(ours->coverage >= 0.93 && ours->coverage <= 0.97, "constrained coverage");
  o.require(ney->coverage >= 0.93 && ney->coverage <= 0.97, "Neyman coverage");
  o.require(ours->mean_length <= ney->mean_length, "constrained no longer than Neyman");
}

// 6. Var(tau_hat) / V_tt = 1 - (1 - v_{K,T}) R2.
void variance_reduction_law(Outcome& o) {
  const std::size_t K = 2;
  SimConfig cfg{.population = linear_population(1000, K, std::sqrt(2.0), 77)};
  cfg.n1 = 500;
  cfg.K_used = K;
  cfg.T = 100;
  cfg.reps = 20000;
  cfg.methods = {CiMethod::kNeyman};
  cfg.baseline_cre = false;
  cfg.master_seed = 6;
  cfg.threads = 0;
  const SimulationReport r = run_replications(cfg);
  const EstimatorReport* e = r.estimator(DesignKind::kBestChoice);
  const McEstimate v = variance_vKT(K, 100, mc_budget(200000, 61));
  const double ratio = e->error.variance / r.truth.Vtt;
  const double ratio_se = e->error.variance_se / r.truth.Vtt;
  const double theory = 1.0 - (1.0 - v.value) * r.truth.R2;
  const double sigma = std::hypot(ratio_se, r.truth.R2 * v.std_error);
  o.detail << " R2=" << fmt(r.truth.R2, 3) << " v=" << fmt(v.value) << " empirical="
           << fmt(ratio) << " theory=" << fmt(theory) << " sigma=" << fmt(sigma, 2);
  o.require(std::fabs(ratio - theory) <= 3.0 * sigma, "within 3 sigma");
}

// 7. Worst-case bias and RMSE: CRE baseline, growth in T, effect of trimming.
void worst_case(Outcome& o) {
  constexpr std::size_t reps = 100000;
  const std::size_t n = 100;
  const std::size_t n1 = 15;
  Stream cov_rng(11);
  const FinitePopulation raw =
      FinitePopulation::from_matrix(synth::student_t_covariates(n, 10, 2.0, cov_rng));
  const FinitePopulation trimmed = trim(raw, TrimSpec{});
  Stream base_rng(1);
  const WorstCaseResult cre = worst_case_mse(raw, n1, 1, reps, base_rng, 0);
  o.detail << " CRE bias=" << fmt(cre.worst_bias, 3) << " rmse=" << fmt(cre.worst_rmse, 3);
  o.require(std::fabs(cre.worst_bias) <= 0.05, "CRE bias near 0");
  o.require(std::fabs(cre.worst_rmse - 1.0) <= 0.1, "CRE rmse near 1");
  double previous = 0.0;
  for (std::size_t T : {10, 100, 1000}) {
    Stream a(T);
    Stream b(T);
    const WorstCaseResult w = worst_case_mse(raw, n1, T, reps, a, 0);
    const WorstCaseResult t = worst_case_mse(trimmed, n1, T, reps, b, 0);
    o.detail << "; T=" << T << " rmse raw=" << fmt(w.worst_rmse, 3)
             << " trimmed=" << fmt(t.worst_rmse, 3);
    o.require(w.worst_rmse >= previous, "rmse nondecreasing in T");
    o.require(t.worst_rmse <= w.worst_rmse, "trimming lowers rmse at T=" + std::to_string(T));
    previous = w.worst_rmse;
  }
}

// 8. Effective sample size from a length reduction.
void effective_sample_size(Outcome& o) {
  const double a = percent_effective_sample_size(0.073);
  const double b = percent_effective_sample_size(0.241);
  o.detail << " 0.073->" << fmt(a, 5) << " 0.241->" << fmt(b, 5);
  o.require(std::fabs(a - 0.163) <= 0.001, "0.073");
  o.require(std::fabs(b - 0.737) <= 0.002, "0.241");
}

// 9. Variance components against the explicit-sum oracle.
void oracle_equivalence(Outcome& o) {
  const fixture::SweepResult s = fixture::variance_oracle_sweep(100, 9);
  o.detail << " datasets=100 comparisons=" << s.comparisons
           << " worst relative error=" << fmt(s.worst, 3);
  o.require(s.comparisons == 3600, "all components compared");
  o.require(s.worst <= 1e-10, "agreement to 1e-10");
}

// 10. Synthetic analogue of the propensity-outcome study: heavy-tailed
// covariates, outcomes ranked by average propensity under the designs studied.
void qualitative_trends(Outcome& o) {
  const std::size_t n = 400;
  const std::size_t n1 = 50;
  const std::size_t k_max = 30;
  Stream cov_rng(77);
  const FinitePopulation raw =
      FinitePopulation::from_matrix(synth::student_t_covariates(n, k_max, 2.0, cov_rng));
  const FinitePopulation trimmed = trim(raw, TrimSpec{});
  struct Design {
    std::size_t K, T;
  };
  const Design small{5, 10};
  const Design large{k_max, 1000};
  std::vector<double> propensity(n, 0.0);
  std::uint64_t seed = 5;
  for (const Design d : {small, large}) {
    Stream rng(seed++);
    const PropensityEstimate p =
        estimate_propensities(raw.first_columns(d.K), n1, d.T, 10000, rng, 0);
    for (std::size_t i = 0; i < n; ++i) propensity[i] += 0.5 * p.propensity[i];
  }
  const FinitePopulation outcomes = synth::propensity_outcome_population(raw, propensity);

  auto simulate = [&](const FinitePopulation& cov, const Design d) {
    SimConfig cfg{.population = cov.with_outcomes(outcomes.y1(), outcomes.y0())};
    cfg.n1 = n1;
    cfg.K_used = d.K;
    cfg.T = d.T;
    cfg.reps = 2000;
    cfg.methods = {CiMethod::kConstrained};
    cfg.hc_variants = {HcVariant::kHC0, HcVariant::kHC1, HcVariant::kHC2, HcVariant::kHC3};
    cfg.baseline_cre = false;
    cfg.master_seed = 10;
    cfg.threads = 0;
    return run_replications(cfg);
  };
  const SimulationReport a = simulate(raw, small);
  const SimulationReport b = simulate(raw, large);
  const SimulationReport c = simulate(trimmed, large);
  auto bias_of = [](const SimulationReport& r) {
    return r.estimator(DesignKind::kBestChoice)->error.mean;
  };
  o.detail << " bias (5,10)=" << fmt(bias_of(a), 3) << " (30,1000)=" << fmt(bias_of(b), 3)
           << " trimmed=" << fmt(bias_of(c), 3) << "; coverage";
  for (HcVariant hc : {HcVariant::kHC0, HcVariant::kHC1, HcVariant::kHC2, HcVariant::kHC3}) {
    const CellReport* ca = a.find(DesignKind::kBestChoice, CiMethod::kConstrained, hc);
    const CellReport* cb = b.find(DesignKind::kBestChoice, CiMethod::kConstrained, hc);
    const CellReport* cc = c.find(DesignKind::kBestChoice, CiMethod::kConstrained, hc);
    o.detail << " " << to_string(hc) << " " << fmt(ca->coverage, 3) << "/" << fmt(cb->coverage, 3)
             << "/" << fmt(cc->coverage, 3);
    const double drop_se = std::hypot(ca->coverage_se, cb->coverage_se);
    const double gain_se = std::hypot(cb->coverage_se, cc->coverage_se);
    o.require(cb->coverage < ca->coverage - 3.0 * drop_se,
              std::string("degradation under ") + std::string(to_string(hc)));
    o.require(cc->coverage > cb->coverage + 3.0 * gain_se,
              std::string("restoration under ") + std::string(to_string(hc)));
  }
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "v_KT table", vkt_table},
      {2, "representation equivalence (KS)", representation_ks},
      {3, "exact enumeration n=6", exact_enumeration},
      {4, "affine invariance", affine_invariance},
      {5, "coverage at desk scale", coverage_desk_scale},
      {6, "variance-reduction law", variance_reduction_law},
      {7, "worst-case diagnostics", worst_case},
      {8, "effective sample size", effective_sample_size},
      {9, "variance oracle equivalence", oracle_equivalence},
      {10, "qualitative trends on synthetic populations", qualitative_trends},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failed;
    std::printf("%s %2d %s (%.1fs):%s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed;
}
