#pragma once

// Independent reference implementations used by the tests. Nothing here calls
// into the library: plain loops, textbook elimination, std:: random engines.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using Vec = std::vector<double>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

/// Gauss-Jordan inverse with partial pivoting.
template <class T>
std::vector<std::vector<T>> inverse(std::vector<std::vector<T>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<T>> inv(n, std::vector<T>(n, T(0)));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = T(1);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    }
    if (a[piv][col] == T(0)) throw std::runtime_error("singular matrix");
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const T d = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= d;
      inv[col][j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const T f = a[r][col];
      if (f == T(0)) continue;
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

inline double quad(const Vec& u, const Mat& m, const Vec& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) s += u[i] * m[i][j] * v[j];
  }
  return s;
}

inline double mean(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double cov(const Vec& a, const Vec& b) {
  const double ma = mean(a);
  const double mb = mean(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

/// Column j of a row-major data set.
inline Vec column(const Mat& rows, std::size_t j) {
  Vec c;
  for (const auto& r : rows) c.push_back(r[j]);
  return c;
}

inline Mat covariance(const Mat& rows) {
  const std::size_t k = rows.front().size();
  Mat s = zeros(k, k);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) s[a][b] = cov(column(rows, a), column(rows, b));
  }
  return s;
}

struct ArmOracle {
  double s2 = 0.0;
  Vec s_x;
  double proj = 0.0;
  double res = 0.0;  // floored, HC-rescaled
};

struct VarianceOracle {
  double s2_1 = 0.0;
  double s2_0 = 0.0;
  double s2_1_proj = 0.0;
  double s2_0_proj = 0.0;
  double s2_tau_proj = 0.0;
  double s2_1_res = 0.0;
  double s2_0_res = 0.0;
  double Vtt = 0.0;
  double R2 = 0.0;
};

/// Explicit-sum variance estimator. `hc` is 0..3. Residual rescaling: HC1
/// multiplies by m / (m - K - 1); HC2 and HC3 replace the residual sum of
/// squares by sum e^2 / (1 - h) or sum e^2 / (1 - h)^2, with leverages from the
/// arm regression on (1, x). A vanishing residual sum gives zero.
inline ArmOracle arm_oracle(const Mat& x_all, const Vec& y_all, const std::vector<int>& z,
                            int arm, const Mat& s2x_inv, int hc) {
  Mat x;
  Vec y;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] == arm) {
      x.push_back(x_all[i]);
      y.push_back(y_all[i]);
    }
  }
  const std::size_t m = y.size();
  const std::size_t k = x.front().size();
  ArmOracle a;
  a.s2 = cov(y, y);
  for (std::size_t j = 0; j < k; ++j) a.s_x.push_back(cov(column(x, j), y));
  a.proj = quad(a.s_x, s2x_inv, a.s_x);
  double floored = std::max(0.0, a.s2 - a.proj);

  // Design matrix with intercept, normal equations. Extended precision keeps
  // leverages near one accurate enough for the HC3 weights.
  using Real = long double;
  using RMat = std::vector<std::vector<Real>>;
  RMat d;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<Real> row{1.0L};
    row.insert(row.end(), x[i].begin(), x[i].end());
    d.push_back(row);
  }
  const std::size_t p = k + 1;
  RMat dtd(p, std::vector<Real>(p, 0.0L));
  std::vector<Real> dty(p, 0.0L);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a1 = 0; a1 < p; ++a1) {
      dty[a1] += d[i][a1] * y[i];
      for (std::size_t b1 = 0; b1 < p; ++b1) dtd[a1][b1] += d[i][a1] * d[i][b1];
    }
  }
  const RMat dtd_inv = inverse(dtd);
  std::vector<Real> beta(p, 0.0L);
  for (std::size_t a1 = 0; a1 < p; ++a1) {
    for (std::size_t b1 = 0; b1 < p; ++b1) beta[a1] += dtd_inv[a1][b1] * dty[b1];
  }
  const Real ybar = mean(y);
  Real sst = 0.0L;
  Real sse = 0.0L;
  Real w2 = 0.0L;
  Real w3 = 0.0L;
  for (std::size_t i = 0; i < m; ++i) {
    Real fit = 0.0L;
    Real h = 0.0L;
    for (std::size_t a1 = 0; a1 < p; ++a1) {
      fit += d[i][a1] * beta[a1];
      for (std::size_t b1 = 0; b1 < p; ++b1) h += d[i][a1] * dtd_inv[a1][b1] * d[i][b1];
    }
    const Real e = y[i] - fit;
    sse += e * e;
    sst += (y[i] - ybar) * (y[i] - ybar);
    if (1.0L - h > 1e-10L) {
      w2 += e * e / (1.0L - h);
      w3 += e * e / ((1.0L - h) * (1.0L - h));
    }
  }
  double factor = 1.0;
  if (sse <= 1e-24 * sst) {
    factor = 0.0;
  } else if (hc == 1) {
    factor = static_cast<double>(m) / static_cast<double>(m - k - 1);
  } else if (hc == 2) {
    factor = static_cast<double>(w2 / sse);
  } else if (hc == 3) {
    factor = static_cast<double>(w3 / sse);
  }
  a.res = floored * factor;
  return a;
}

inline VarianceOracle variance_oracle(const Mat& x, const Vec& y, const std::vector<int>& z,
                                      int hc) {
  const Mat s2x_inv = inverse(covariance(x));
  const ArmOracle t = arm_oracle(x, y, z, 1, s2x_inv, hc);
  const ArmOracle c = arm_oracle(x, y, z, 0, s2x_inv, hc);
  double n1 = 0.0;
  for (int zi : z) n1 += zi;
  const double n = static_cast<double>(z.size());
  const double n0 = n - n1;
  Vec diff;
  for (std::size_t j = 0; j < t.s_x.size(); ++j) diff.push_back(t.s_x[j] - c.s_x[j]);
  VarianceOracle o;
  o.s2_1 = t.s2;
  o.s2_0 = c.s2;
  o.s2_1_proj = t.proj;
  o.s2_0_proj = c.proj;
  o.s2_tau_proj = quad(diff, s2x_inv, diff);
  o.s2_1_res = t.res;
  o.s2_0_res = c.res;
  o.Vtt = std::max(t.s2 / n1 + c.s2 / n0 - o.s2_tau_proj / n, 1e-12 * (t.s2 + c.s2));
  o.R2 = std::clamp(1.0 - (t.res / n1 + c.res / n0) / o.Vtt, 0.0, 1.0);
  return o;
}

/// All n-choose-k index subsets in lexicographic order.
inline void for_each_subset(std::size_t n, std::size_t k,
                            const std::function<void(const std::vector<std::size_t>&)>& fn) {
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    fn(idx);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + i - 1) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(Vec a, Vec b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

/// Asymptotic critical value of the two-sample KS statistic at level alpha.
inline double ks_critical(double alpha, std::size_t na, std::size_t nb) {
  const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
  return c * std::sqrt(static_cast<double>(na + nb) / static_cast<double>(na * nb));
}

/// One-sample KS statistic against a continuous CDF.
template <class Cdf>
double ks_one_sample(Vec a, Cdf cdf) {
  std::sort(a.begin(), a.end());
  const double n = static_cast<double>(a.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double f = cdf(a[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

/// Definitional sampler: T independent standard K-normal vectors, the first
/// coordinate of the one with the smallest norm.
class MinNormSampler {
 public:
  MinNormSampler(std::size_t K, std::size_t T, std::uint64_t seed)
      : K_(K), T_(T), engine_(seed) {}

  /// Returns (first coordinate, squared norm) of the winner.
  std::pair<double, double> draw() {
    double best = INFINITY;
    double first = 0.0;
    for (std::size_t t = 0; t < T_; ++t) {
      double norm2 = 0.0;
      double x0 = 0.0;
      for (std::size_t k = 0; k < K_; ++k) {
        const double g = normal_(engine_);
        if (k == 0) x0 = g;
        norm2 += g * g;
      }
      if (norm2 < best) {
        best = norm2;
        first = x0;
      }
    }
    return {first, best};
  }

 private:
  std::size_t K_;
  std::size_t T_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// v_{K,T} = E[min of T chi2_K] / K = (1/K) int_0^inf Q(K/2, x/2)^T dx.
inline double v_kt_quadrature(std::size_t K, std::size_t T) {
  const double a = 0.5 * static_cast<double>(K);
  auto integrand = [&](double x) {
    return std::pow(boost::math::gamma_q(a, 0.5 * x), static_cast<double>(T));
  };
  // Split at a few chi2 quantiles so the adaptive rule sees the mass.
  const double hi = 2.0 * boost::math::gamma_q_inv(a, 1e-17);
  std::vector<double> cuts{0.0};
  for (double p : {1e-6, 1e-4, 1e-2, 0.1, 0.5}) {
    cuts.push_back(2.0 * boost::math::gamma_p_inv(a, p / static_cast<double>(T)));
  }
  cuts.push_back(2.0 * boost::math::gamma_p_inv(a, 0.5));
  cuts.push_back(hi);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    if (cuts[i + 1] <= cuts[i]) continue;
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, cuts[i],
                                                                          cuts[i + 1], 8, 1e-9);
  }
  return total / static_cast<double>(K);
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size(), b.front().size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < b.front().size(); ++j) c[i][j] += a[i][k] * b[k][j];
    }
  }
  return c;
}

/// Inverse principal square root of a symmetric positive definite matrix by
/// the Denman-Beavers iteration.
inline Mat inverse_sqrt(const Mat& a) {
  const std::size_t k = a.size();
  Mat y = a;
  Mat z = zeros(k, k);
  for (std::size_t i = 0; i < k; ++i) z[i][i] = 1.0;
  for (int it = 0; it < 100; ++it) {
    const Mat yi = inverse(y);
    const Mat zi = inverse(z);
    double change = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double ny = 0.5 * (y[i][j] + zi[i][j]);
        change = std::max(change, std::fabs(ny - y[i][j]));
        y[i][j] = ny;
        z[i][j] = 0.5 * (z[i][j] + yi[i][j]);
      }
    }
    if (change < 1e-15) break;
  }
  return z;
}

struct TruthOracle {
  double tau = 0.0;
  double Vtt = 0.0;
  double R2 = 0.0;
  double S2_tau = 0.0;
  double S2_tau_res = 0.0;
  double gamma_n = 0.0;
};

/// Finite-population truth from explicit sums over units.
inline TruthOracle truth_oracle(const Mat& x, const Vec& y1, const Vec& y0, std::size_t n1_units) {
  const std::size_t n_units = y1.size();
  const std::size_t k = x.front().size();
  const double n = static_cast<double>(n_units);
  const double n1 = static_cast<double>(n1_units);
  const double n0 = n - n1;
  Vec tau_i(n_units);
  for (std::size_t i = 0; i < n_units; ++i) tau_i[i] = y1[i] - y0[i];
  const Mat s2x_inv = inverse(covariance(x));
  Vec s1x, s0x, stx, vtx;
  for (std::size_t j = 0; j < k; ++j) {
    const Vec xj = column(x, j);
    s1x.push_back(cov(xj, y1));
    s0x.push_back(cov(xj, y0));
    stx.push_back(s1x.back() - s0x.back());
    vtx.push_back(s1x.back() / n1 + s0x.back() / n0);
  }
  TruthOracle o;
  o.tau = mean(tau_i);
  o.S2_tau = cov(tau_i, tau_i);
  o.Vtt = cov(y1, y1) / n1 + cov(y0, y0) / n0 - o.S2_tau / n;
  // V_xx^{-1} = (n1 n0 / n) S2x^{-1}.
  o.R2 = (n1 * n0 / n) * quad(vtx, s2x_inv, vtx) / o.Vtt;
  o.S2_tau_res = o.S2_tau - quad(stx, s2x_inv, stx);

  const double r1 = n1 / n;
  const double r0 = n0 / n;
  Mat u;
  for (std::size_t i = 0; i < n_units; ++i) {
    Vec row{y1[i] / r1 + y0[i] / r0};
    row.insert(row.end(), x[i].begin(), x[i].end());
    u.push_back(row);
  }
  const Mat root_inv = inverse_sqrt(covariance(u));
  Vec ubar(k + 1, 0.0);
  for (std::size_t j = 0; j <= k; ++j) ubar[j] = mean(column(u, j));
  double cubes = 0.0;
  for (std::size_t i = 0; i < n_units; ++i) {
    double ss = 0.0;
    for (std::size_t a = 0; a <= k; ++a) {
      double s = 0.0;
      for (std::size_t b = 0; b <= k; ++b) s += root_inv[a][b] * (u[i][b] - ubar[b]);
      ss += s * s;
    }
    cubes += ss * std::sqrt(ss);
  }
  o.gamma_n = std::pow(static_cast<double>(k + 1), 0.25) / std::sqrt(n * r1 * r0) * cubes / n;
  return o;
}

}  // namespace oracle
