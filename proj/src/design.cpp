#include "rerand/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "rerand/error.hpp"
#include "rerand/parallel.hpp"

namespace rerand {

Assignment::Assignment(std::vector<std::uint8_t> z) : z_(std::move(z)) {
  for (auto v : z_) {
    if (v > 1) throw DomainError("assignment entries must be 0 or 1");
    n1_ += v;
  }
}

void check_arm_sizes(std::size_t n, std::size_t n1) {
  if (n1 < 2 || n1 + 2 > n) {
    throw InvalidArm("n1=" + std::to_string(n1) + " must lie in 2.." +
                     (n >= 2 ? std::to_string(n - 2) : std::string("(none)")) + " for n=" +
                     std::to_string(n));
  }
}

CreSampler::CreSampler(std::size_t n, std::size_t n1)
    : n_(n), n1_(n1), m_(std::min(n1, n - n1)), arm_is_treated_(n1 <= n - n1), perm_(n) {
  check_arm_sizes(n, n1);
  std::iota(perm_.begin(), perm_.end(), 0U);
  swaps_.reserve(m_);
}

std::span<const std::uint32_t> CreSampler::draw_arm(Stream& rng) {
  // Undo the previous draw so every draw starts from the identity order.
  for (std::size_t i = swaps_.size(); i-- > 0;) std::swap(perm_[i], perm_[swaps_[i]]);
  swaps_.clear();
  for (std::size_t i = 0; i < m_; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n_ - i));
    std::swap(perm_[i], perm_[j]);
    swaps_.push_back(static_cast<std::uint32_t>(j));
  }
  return {perm_.data(), m_};
}

Assignment CreSampler::to_assignment(std::span<const std::uint32_t> arm) const {
  std::vector<std::uint8_t> z(n_, arm_is_treated_ ? 0 : 1);
  for (auto i : arm) z[i] = arm_is_treated_ ? 1 : 0;
  return Assignment(std::move(z));
}

Assignment draw_cre(std::size_t n, std::size_t n1, Stream& rng) {
  CreSampler sampler(n, n1);
  return sampler.to_assignment(sampler.draw_arm(rng));
}

Vector covariate_diff_in_means(const Assignment& a, const Matrix& covariates) {
  if (a.n() != static_cast<std::size_t>(covariates.rows())) {
    throw DomainError("assignment length does not match covariate rows");
  }
  Vector sum1 = Vector::Zero(covariates.cols());
  Vector sum0 = Vector::Zero(covariates.cols());
  for (std::size_t i = 0; i < a.n(); ++i) {
    if (a.treated(i)) {
      sum1 += covariates.row(static_cast<Eigen::Index>(i)).transpose();
    } else {
      sum0 += covariates.row(static_cast<Eigen::Index>(i)).transpose();
    }
  }
  return sum1 / static_cast<double>(a.n1()) - sum0 / static_cast<double>(a.n0());
}

double mahalanobis(const Assignment& a, const FinitePopulation& pop,
                   const MomentSummary& moments) {
  if (a.n() != pop.n() || moments.n != pop.n()) {
    throw DomainError("assignment, population and moments disagree on n");
  }
  if (a.n1() != moments.n1) {
    throw InvalidArm("assignment has n1=" + std::to_string(a.n1()) +
                     " but moments were computed for n1=" + std::to_string(moments.n1));
  }
  const Vector d = covariate_diff_in_means(a, pop.covariates());
  const double scale = static_cast<double>(a.n1()) * static_cast<double>(a.n0()) /
                       static_cast<double>(a.n());
  return scale * moments.quad_form(d);
}

BalanceScorer::BalanceScorer(const FinitePopulation& pop, const MomentSummary& moments)
    : n_(pop.n()), n1_(moments.n1), k_(pop.k()) {
  if (moments.n != n_ || moments.k() != k_) {
    throw DomainError("moments were not computed from this population");
  }
  factor_ = static_cast<double>(n_) /
            (static_cast<double>(n1_) * static_cast<double>(n_ - n1_));
  const Matrix w = standardize(pop, moments);
  rows_.resize(n_ * k_);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < k_; ++j) {
      rows_[i * k_ + j] = w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
}

double BalanceScorer::score(std::span<const std::uint32_t> arm_units) const {
  constexpr std::size_t kSmall = 16;
  auto accumulate = [&](double* acc) {
    for (auto unit : arm_units) {
      const double* row = rows_.data() + static_cast<std::size_t>(unit) * k_;
      for (std::size_t j = 0; j < k_; ++j) acc[j] += row[j];
    }
    double ss = 0.0;
    for (std::size_t j = 0; j < k_; ++j) ss += acc[j] * acc[j];
    return factor_ * ss;
  };
  if (k_ <= kSmall) {
    double acc[kSmall] = {};
    return accumulate(acc);
  }
  thread_local std::vector<double> acc;
  acc.assign(k_, 0.0);
  return accumulate(acc.data());
}

double BalanceScorer::score(const Assignment& a) const {
  if (a.n() != n_ || a.n1() != n1_) throw InvalidArm("assignment does not match scorer arms");
  const bool use_treated = n1_ <= n_ - n1_;
  std::vector<std::uint32_t> units;
  for (std::size_t i = 0; i < n_; ++i) {
    if (a.treated(i) == use_treated) units.push_back(static_cast<std::uint32_t>(i));
  }
  return score(units);
}

namespace {

MSummary summarize(const std::vector<double>& m_all) {
  MSummary s;
  if (m_all.empty()) return s;
  s.min = *std::min_element(m_all.begin(), m_all.end());
  s.max = *std::max_element(m_all.begin(), m_all.end());
  double sum = 0.0;
  for (double v : m_all) sum += v;
  s.mean = sum / static_cast<double>(m_all.size());
  s.quantile_levels = {0.05, 0.25, 0.5, 0.75, 0.95};
  for (double q : s.quantile_levels) s.quantiles.push_back(empirical_quantile(m_all, q));
  return s;
}

}  // namespace

BestChoiceResult best_choice(const BalanceScorer& scorer, std::size_t tries, Stream& rng,
                             const BestChoiceOptions& options) {
  if (tries < 1) throw DomainError("T must be at least 1");
  const std::size_t n = scorer.n();
  const std::size_t n1 = scorer.n1();

  std::vector<double> m_all(tries);
  parallel_for(tries, options.threads, [&](std::size_t begin, std::size_t end) {
    CreSampler sampler(n, n1);
    for (std::size_t t = begin; t < end; ++t) {
      Stream candidate = rng.child(t);
      m_all[t] = scorer.score(sampler.draw_arm(candidate));
    }
  });

  BestChoiceResult result;
  result.tries = tries;
  result.m_min = *std::min_element(m_all.begin(), m_all.end());
  std::vector<std::size_t> ties;
  for (std::size_t t = 0; t < tries; ++t) {
    if (m_all[t] == result.m_min) ties.push_back(t);
  }
  result.tie_count = ties.size();
  result.chosen_index = ties.size() == 1 ? ties.front() : ties[rng.below(ties.size())];

  CreSampler sampler(n, n1);
  Stream chosen_stream = rng.child(result.chosen_index);
  result.chosen = sampler.to_assignment(sampler.draw_arm(chosen_stream));
  result.seed_info = {rng.seed(), rng.id()};

  if (options.retain_m_all) {
    result.m_summary = summarize(m_all);
    result.m_all = std::move(m_all);
  } else {
    double sum = 0.0;
    for (double v : m_all) sum += v;
    result.m_summary.min = result.m_min;
    result.m_summary.max = *std::max_element(m_all.begin(), m_all.end());
    result.m_summary.mean = sum / static_cast<double>(tries);
  }
  return result;
}

BestChoiceResult best_choice(const FinitePopulation& pop, std::size_t n1, std::size_t tries,
                             Stream& rng, const BestChoiceOptions& options) {
  check_arm_sizes(pop.n(), n1);
  const MomentSummary moments = compute_moments(pop, n1);
  const BalanceScorer scorer(pop, moments);
  return best_choice(scorer, tries, rng, options);
}

Assignment best_choice_assignment(const BalanceScorer& scorer, CreSampler& sampler,
                                  std::size_t tries, Stream& rng) {
  if (tries < 1) throw DomainError("T must be at least 1");
  double best = std::numeric_limits<double>::infinity();
  std::size_t first_tie = 0;
  std::size_t tie_count = 0;
  thread_local std::vector<std::size_t> ties;
  ties.clear();
  for (std::size_t t = 0; t < tries; ++t) {
    Stream candidate = rng.child(t);
    const double m = scorer.score(sampler.draw_arm(candidate));
    if (m < best) {
      best = m;
      first_tie = t;
      tie_count = 1;
      ties.clear();
    } else if (m == best) {
      if (tie_count == 1) ties.push_back(first_tie);
      ties.push_back(t);
      ++tie_count;
    }
  }
  const std::size_t chosen = tie_count == 1 ? first_tie : ties[rng.below(ties.size())];
  Stream chosen_stream = rng.child(chosen);
  return sampler.to_assignment(sampler.draw_arm(chosen_stream));
}

PropensityEstimate estimate_propensities(const FinitePopulation& pop, std::size_t n1,
                                         std::size_t tries, std::size_t reps, Stream& rng,
                                         unsigned threads) {
  if (reps < 1000) throw DomainError("propensity estimation needs reps >= 1000");
  check_arm_sizes(pop.n(), n1);
  const MomentSummary moments = compute_moments(pop, n1);
  const BalanceScorer scorer(pop, moments);
  const std::size_t n = pop.n();

  const unsigned workers = resolve_threads(threads);
  std::vector<std::vector<std::uint64_t>> partial(workers, std::vector<std::uint64_t>(n, 0));
  const std::size_t block = (reps + workers - 1) / workers;
  parallel_for(reps, workers, [&](std::size_t begin, std::size_t end) {
    auto& counts = partial[begin / std::max<std::size_t>(block, 1)];
    CreSampler sampler(n, n1);
    for (std::size_t r = begin; r < end; ++r) {
      Stream rep_stream = rng.child(r);
      const Assignment z = best_choice_assignment(scorer, sampler, tries, rep_stream);
      for (std::size_t i = 0; i < n; ++i) counts[i] += z.treated(i) ? 1U : 0U;
    }
  });

  PropensityEstimate out;
  out.reps = reps;
  out.propensity.assign(n, 0.0);
  out.std_error.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t total = 0;
    for (const auto& counts : partial) total += counts[i];
    const double p = static_cast<double>(total) / static_cast<double>(reps);
    out.propensity[i] = p;
    out.std_error[i] = std::sqrt(p * (1.0 - p) / static_cast<double>(reps));
  }
  return out;
}

}  // namespace rerand
