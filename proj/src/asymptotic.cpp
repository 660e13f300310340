#include "rerand/asymptotic.hpp"

#include <algorithm>
#include <cmath>

#include "rerand/error.hpp"
#include "rerand/parallel.hpp"
#include "rerand/special.hpp"

namespace rerand {

namespace {

constexpr std::size_t kBlock = 4096;
constexpr std::uint64_t kVktTag = 0x766B74;     // "vkt"
constexpr std::uint64_t kSampleTag = 0x4C6B74;  // "Lkt"

void check_kt(std::size_t K, std::size_t T) {
  if (K < 1) throw DomainError("K must be at least 1");
  if (T < 1) throw DomainError("T must be at least 1");
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
}

void check_r2(double R2) {
  if (!(R2 >= 0.0 && R2 <= 1.0)) throw DomainError("R2 must lie in [0, 1]");
}

std::size_t block_count(std::size_t draws) { return (draws + kBlock - 1) / kBlock; }

// Type-7 quantile at level q of the values in `buf`, which is reordered.
double select_quantile(std::vector<double>& buf, double q) {
  const double h = static_cast<double>(buf.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.end());
  const double x_lo = buf[lo];
  if (frac == 0.0 || lo + 1 >= buf.size()) return x_lo;
  const double x_hi =
      *std::min_element(buf.begin() + static_cast<std::ptrdiff_t>(lo) + 1, buf.end());
  return x_lo + frac * (x_hi - x_lo);
}

}  // namespace

void AsymParams::validate() const {
  check_kt(K, T);
  check_r2(R2);
  if (Vtt && !(*Vtt > 0.0)) throw DomainError("V_tt must be positive");
}

void McConfig::validate() const {
  if (draws < 10000) throw DomainError("Monte Carlo budget must be at least 10000 draws");
}

double chi2_KT_from_uniform(std::size_t K, std::size_t T, double u) {
  check_kt(K, T);
  if (!(u >= 0.0 && u < 1.0)) throw DomainError("uniform input must lie in [0, 1)");
  // Beta(1, T) by inversion: 1 - (1 - u)^{1/T}, evaluated without cancellation.
  const double b = -std::expm1(std::log1p(-u) / static_cast<double>(T));
  if (b >= 1.0) return chi2_quantile(static_cast<double>(K), std::nextafter(1.0, 0.0));
  return chi2_quantile(static_cast<double>(K), b);
}

double sample_chi2_KT(std::size_t K, std::size_t T, Stream& rng) {
  return chi2_KT_from_uniform(K, T, rng.uniform());
}

double sample_LKT(std::size_t K, std::size_t T, Stream& rng) {
  const double chi = std::sqrt(sample_chi2_KT(K, T, rng));
  const double sign = rng.sign();
  double beta = 1.0;
  if (K > 1) {
    const double g1 = rng.gamma(0.5);
    const double g2 = rng.gamma(0.5 * static_cast<double>(K - 1));
    beta = g1 / (g1 + g2);
  }
  return chi * sign * std::sqrt(beta);
}

McEstimate variance_vKT(std::size_t K, std::size_t T, const McConfig& mc) {
  check_kt(K, T);
  mc.validate();
  if (T == 1) return {1.0, 0.0, 0};

  const std::size_t blocks = block_count(mc.draws);
  std::vector<double> block_sum(blocks, 0.0);
  std::vector<double> block_sumsq(blocks, 0.0);
  std::vector<std::size_t> block_units(blocks, 0);
  const Stream root(mc.seed, kVktTag);
  parallel_for(blocks, mc.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      Stream rng = root.child(b);
      const std::size_t count = std::min(kBlock, mc.draws - b * kBlock);
      double sum = 0.0;
      double sumsq = 0.0;
      std::size_t units = 0;
      if (mc.antithetic) {
        for (std::size_t i = 0; i < count; i += 2) {
          const double u = rng.uniform_open();
          const double v = 0.5 * (chi2_KT_from_uniform(K, T, u) +
                                  chi2_KT_from_uniform(K, T, 1.0 - u));
          sum += v;
          sumsq += v * v;
          ++units;
        }
      } else {
        for (std::size_t i = 0; i < count; ++i) {
          const double v = sample_chi2_KT(K, T, rng);
          sum += v;
          sumsq += v * v;
          ++units;
        }
      }
      block_sum[b] = sum;
      block_sumsq[b] = sumsq;
      block_units[b] = units;
    }
  });

  double sum = 0.0;
  double sumsq = 0.0;
  std::size_t units = 0;
  for (std::size_t b = 0; b < blocks; ++b) {
    sum += block_sum[b];
    sumsq += block_sumsq[b];
    units += block_units[b];
  }
  const double mean = sum / static_cast<double>(units);
  const double var =
      std::max(0.0, (sumsq - static_cast<double>(units) * mean * mean) /
                        static_cast<double>(units - 1));
  const double k = static_cast<double>(K);
  return {mean / k, std::sqrt(var / static_cast<double>(units)) / k, mc.draws};
}

ConstrainedGaussianSample::ConstrainedGaussianSample(std::size_t K, std::size_t T,
                                                     const McConfig& mc)
    : K_(K), T_(T), mc_(mc) {
  check_kt(K, T);
  mc.validate();
  const std::size_t draws = mc.antithetic ? mc.draws + (mc.draws % 2) : mc.draws;
  eps_.resize(draws);
  lkt_.resize(draws);
  const std::size_t blocks = block_count(draws);
  const Stream root(mc.seed, kSampleTag);
  parallel_for(blocks, mc.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      Stream rng = root.child(b);
      const std::size_t first = b * kBlock;
      const std::size_t last = std::min(draws, first + kBlock);
      if (mc_.antithetic) {
        for (std::size_t i = first; i < last; i += 2) {
          const double e = rng.normal();
          const double l = sample_LKT(K_, T_, rng);
          eps_[i] = e;
          lkt_[i] = l;
          eps_[i + 1] = -e;
          lkt_[i + 1] = -l;
        }
      } else {
        for (std::size_t i = first; i < last; ++i) {
          eps_[i] = rng.normal();
          lkt_[i] = sample_LKT(K_, T_, rng);
        }
      }
    }
  });
}

double ConstrainedGaussianSample::quantile(double alpha, double R2) const {
  check_alpha(alpha);
  R2 = std::clamp(R2, 0.0, 1.0);
  const double a = std::sqrt(1.0 - R2);
  const double b = std::sqrt(R2);
  thread_local std::vector<double> buf;
  buf.resize(eps_.size());
  for (std::size_t i = 0; i < eps_.size(); ++i) buf[i] = a * eps_[i] + b * lkt_[i];
  return select_quantile(buf, alpha);
}

QuantileEstimate ConstrainedGaussianSample::quantile_with_error(double alpha, double R2) const {
  const double value = quantile(alpha, R2);
  // Order statistics one binomial standard deviation either side of the
  // target rank bracket the sampling spread of the quantile.
  const double n = static_cast<double>(eps_.size());
  const double spread = std::sqrt(alpha * (1.0 - alpha) / n);
  const double lo_level = std::max(0.0, alpha - spread);
  const double hi_level = std::min(1.0, alpha + spread);
  thread_local std::vector<double> buf;
  const double a = std::sqrt(1.0 - std::clamp(R2, 0.0, 1.0));
  const double b = std::sqrt(std::clamp(R2, 0.0, 1.0));
  buf.resize(eps_.size());
  for (std::size_t i = 0; i < eps_.size(); ++i) buf[i] = a * eps_[i] + b * lkt_[i];
  const double lo = select_quantile(buf, lo_level);
  const double hi = select_quantile(buf, hi_level);
  return {value, 0.5 * (hi - lo)};
}

double quantile_nu(double alpha, const AsymParams& params, const McConfig& mc) {
  return quantile_nu_estimate(alpha, params, mc).value;
}

QuantileEstimate quantile_nu_estimate(double alpha, const AsymParams& params,
                                      const McConfig& mc) {
  check_alpha(alpha);
  params.validate();
  const ConstrainedGaussianSample sample(params.K, params.T, mc);
  return sample.quantile_with_error(alpha, params.R2);
}

McEstimate percent_variance_reduction(double R2, std::size_t K, std::size_t T,
                                      const McConfig& mc) {
  check_r2(R2);
  const McEstimate v = variance_vKT(K, T, mc);
  return {(1.0 - v.value) * R2, v.std_error * R2, v.draws};
}

QuantileEstimate percent_qr_reduction(double alpha, double R2, std::size_t K, std::size_t T,
                                      const McConfig& mc) {
  check_alpha(alpha);
  check_r2(R2);
  const double z = normal_quantile(1.0 - 0.5 * alpha);
  const QuantileEstimate nu = quantile_nu_estimate(1.0 - 0.5 * alpha, {K, T, R2, {}}, mc);
  return {1.0 - nu.value / z, nu.std_error / z};
}

RegimeDiagnostic regime_classify(std::size_t K, std::size_t T, const McConfig& mc) {
  check_kt(K, T);
  RegimeDiagnostic d;
  d.K = K;
  d.T = T;
  d.ratio = std::log(static_cast<double>(T)) / static_cast<double>(K);
  d.v = variance_vKT(K, T, mc);
  if (d.v.value < kNearOptimalV) {
    d.label = "near-optimal";
  } else if (d.v.value > kNegligibleGainV) {
    d.label = "negligible-gain";
  } else {
    d.label = "intermediate";
  }
  return d;
}

}  // namespace rerand
