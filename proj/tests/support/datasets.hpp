#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "rerand/inference.hpp"
#include "rerand/population.hpp"

namespace fixture {

/// Observed data of a random completely randomized experiment, in both library
/// and oracle form. Covariate scales vary per entry and outcomes are linear in
/// the covariates plus heteroskedastic noise.
struct Dataset {
  rerand::ObservedData data;
  oracle::Mat rows;
  oracle::Vec y;
  std::vector<int> z;
};

inline Dataset random_dataset(std::size_t n, std::size_t k, std::size_t n1, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.5, 3.0);
  Dataset d;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), eng);
  d.z.assign(n, 0);
  for (std::size_t i = 0; i < n1; ++i) d.z[order[i]] = 1;
  rerand::Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  rerand::Vector y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    d.rows.emplace_back();
    double signal = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = g(eng) * u(eng);
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      d.rows.back().push_back(v);
      signal += (0.5 + j) * v;
    }
    const double yi = signal + (d.z[i] ? 1.0 : 0.0) + u(eng) * g(eng);
    y(static_cast<Eigen::Index>(i)) = yi;
    d.y.push_back(yi);
  }
  std::vector<std::uint8_t> z8(d.z.begin(), d.z.end());
  d.data = rerand::ObservedData{rerand::Assignment(z8), y, x};
  return d;
}

struct SweepResult {
  std::size_t comparisons = 0;
  double worst = 0.0;  // largest |lib - oracle| / max(1, |oracle|)
};

/// Compares every variance component against the explicit-sum oracle for
/// `datasets` random experiments with n <= 12 and K in 1..3, all HC variants.
inline SweepResult variance_oracle_sweep(int datasets, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  SweepResult out;
  auto track = [&](double lib, double ref) {
    out.worst = std::max(out.worst, std::fabs(lib - ref) / std::max(1.0, std::fabs(ref)));
    ++out.comparisons;
  };
  for (int rep = 0; rep < datasets; ++rep) {
    const std::size_t k = 1 + static_cast<std::size_t>(rep % 3);
    const std::size_t n = 2 * (k + 2) + static_cast<std::size_t>(eng() % (13 - 2 * (k + 2)));
    const std::size_t n1 = (k + 2) + static_cast<std::size_t>(eng() % (n - 2 * (k + 2) + 1));
    const Dataset d = random_dataset(n, k, n1, seed + 1000 + static_cast<std::uint64_t>(rep));
    const rerand::MomentSummary m =
        rerand::compute_moments(rerand::FinitePopulation::from_matrix(d.data.covariates), n1);
    const auto all = rerand::estimate_variance_all(d.data, m);
    for (int hc = 0; hc < 4; ++hc) {
      const oracle::VarianceOracle o = oracle::variance_oracle(d.rows, d.y, d.z, hc);
      const auto& v = all[static_cast<std::size_t>(hc)];
      const auto& c = v.components;
      track(c.s2_1, o.s2_1);
      track(c.s2_0, o.s2_0);
      track(c.s2_1_proj, o.s2_1_proj);
      track(c.s2_0_proj, o.s2_0_proj);
      track(c.s2_tau_proj, o.s2_tau_proj);
      track(c.s2_1_res, o.s2_1_res);
      track(c.s2_0_res, o.s2_0_res);
      track(v.Vtt_hat, o.Vtt);
      track(v.R2_hat, o.R2);
    }
  }
  return out;
}

}  // namespace fixture
