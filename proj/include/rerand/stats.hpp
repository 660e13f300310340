#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace rerand {

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Mean, variance, skewness and standard errors of a sample, accumulated
/// from central moments in two passes for accuracy.
struct SampleSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double mean_se = 0.0;
  double variance = 0.0;     // divisor count - 1
  double variance_se = 0.0;  // sqrt((m4 - m2^2) / count)
  double skewness = 0.0;
  double skewness_se = 0.0;  // sqrt(6 / count)
};

inline SampleSummary summarize_sample(std::span<const double> xs) {
  SampleSummary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  CompensatedSum total;
  for (double x : xs) total.add(x);
  const double n = static_cast<double>(xs.size());
  s.mean = total.value() / n;
  CompensatedSum m2;
  CompensatedSum m3;
  CompensatedSum m4;
  for (double x : xs) {
    const double d = x - s.mean;
    m2.add(d * d);
    m3.add(d * d * d);
    m4.add(d * d * d * d);
  }
  const double c2 = m2.value() / n;
  const double c3 = m3.value() / n;
  const double c4 = m4.value() / n;
  if (xs.size() > 1) {
    s.variance = m2.value() / (n - 1.0);
    s.mean_se = std::sqrt(s.variance / n);
    s.variance_se = std::sqrt(std::fmax(c4 - c2 * c2, 0.0) / n);
  }
  s.skewness = c2 > 0.0 ? c3 / std::pow(c2, 1.5) : 0.0;
  s.skewness_se = std::sqrt(6.0 / n);
  return s;
}

}  // namespace rerand
