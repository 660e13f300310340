#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rerand/population.hpp"
#include "rerand/rng.hpp"

namespace rerand {

/// Binary treatment vector with exactly n1 ones.
class Assignment {
 public:
  Assignment() = default;
  explicit Assignment(std::vector<std::uint8_t> z);

  std::size_t n() const { return z_.size(); }
  std::size_t n1() const { return n1_; }
  std::size_t n0() const { return z_.size() - n1_; }
  bool treated(std::size_t i) const { return z_[i] != 0; }
  const std::vector<std::uint8_t>& z() const { return z_; }

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::vector<std::uint8_t> z_;
  std::size_t n1_ = 0;
};

/// Throws InvalidArm unless 2 <= n1 <= n - 2.
void check_arm_sizes(std::size_t n, std::size_t n1);

/// Uniform draw over all C(n, n1) assignments by partial Fisher-Yates
/// selection of the smaller arm.
Assignment draw_cre(std::size_t n, std::size_t n1, Stream& rng);

/// Covariate difference in means, treated minus control.
Vector covariate_diff_in_means(const Assignment& a, const Matrix& covariates);

/// Mahalanobis imbalance (n1 n0 / n) d^T S2x^{-1} d computed through the
/// stored Cholesky factor.
double mahalanobis(const Assignment& a, const FinitePopulation& pop,
                   const MomentSummary& moments);

/// Scores candidate assignments from pre-whitened covariate rows.
///
/// With w_i = chol^{-1}(x_i - xbar) and s the sum of w_i over the drawn arm,
/// M = n / (n1 n0) * |s|^2. Summing over the smaller arm gives the same value
/// because the w_i sum to zero.
class BalanceScorer {
 public:
  BalanceScorer(const FinitePopulation& pop, const MomentSummary& moments);

  std::size_t n() const { return n_; }
  std::size_t n1() const { return n1_; }
  std::size_t k() const { return k_; }

  double score(std::span<const std::uint32_t> arm_units) const;
  double score(const Assignment& a) const;

 private:
  std::size_t n_;
  std::size_t n1_;
  std::size_t k_;
  double factor_;
  std::vector<double> rows_;  // row-major n x k
};

/// Reusable CRE sampler that draws into index buffers without allocating.
class CreSampler {
 public:
  CreSampler(std::size_t n, std::size_t n1);

  /// Draws the units of the smaller arm (treated if n1 <= n0) into the
  /// returned span, valid until the next call.
  std::span<const std::uint32_t> draw_arm(Stream& rng);
  bool arm_is_treated() const { return arm_is_treated_; }
  Assignment to_assignment(std::span<const std::uint32_t> arm) const;

 private:
  std::size_t n_;
  std::size_t n1_;
  std::size_t m_;
  bool arm_is_treated_;
  std::vector<std::uint32_t> perm_;
  std::vector<std::uint32_t> swaps_;
};

struct SeedInfo {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;
};

struct MSummary {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  // Empty when the full vector was not retained.
  std::vector<double> quantile_levels;
  std::vector<double> quantiles;
};

struct BestChoiceResult {
  Assignment chosen;
  double m_min = 0.0;
  std::vector<double> m_all;  // empty when retention is off
  std::size_t chosen_index = 0;  // 0-based candidate index
  std::size_t tie_count = 0;
  std::size_t tries = 0;
  MSummary m_summary;
  SeedInfo seed_info;
};

struct BestChoiceOptions {
  bool retain_m_all = true;
  unsigned threads = 1;  // 0 = hardware concurrency
};

/// Best-choice rerandomization: draws T complete randomizations, scores each
/// by Mahalanobis imbalance, returns the minimizer.
///
/// Candidate t is drawn from `rng.child(t)`. Exact ties (bitwise-equal M) are
/// broken uniformly at random with a draw from `rng` itself, so the result is
/// a pure function of (rng identity, inputs) regardless of thread count.
BestChoiceResult best_choice(const FinitePopulation& pop, std::size_t n1, std::size_t tries,
                             Stream& rng, const BestChoiceOptions& options = {});

/// Same selection with a precomputed scorer; used inside simulation loops.
BestChoiceResult best_choice(const BalanceScorer& scorer, std::size_t tries, Stream& rng,
                             const BestChoiceOptions& options = {});

/// Lightweight selection for hot loops: returns the chosen arm only.
Assignment best_choice_assignment(const BalanceScorer& scorer, CreSampler& sampler,
                                  std::size_t tries, Stream& rng);

struct PropensityEstimate {
  std::vector<double> propensity;
  std::vector<double> std_error;
  std::size_t reps = 0;
};

/// Monte Carlo treatment probabilities under best-choice rerandomization.
/// Replicate r uses `rng.child(r)` as its design stream. Requires reps >= 1000.
PropensityEstimate estimate_propensities(const FinitePopulation& pop, std::size_t n1,
                                         std::size_t tries, std::size_t reps, Stream& rng,
                                         unsigned threads = 1);

}  // namespace rerand
