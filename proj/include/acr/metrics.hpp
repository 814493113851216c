#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "acr/csv.hpp"

namespace acr {

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

/// Inverse standard normal CDF by bisection; plenty of precision for
/// interval z-scores and far from any tail pathology.
inline double normal_quantile(double p) {
  if (p <= 0.0 || p >= 1.0)
    throw std::invalid_argument("normal_quantile: p must be in (0,1)");
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

inline double rmse(const std::vector<double>& actual,
                   const std::vector<double>& estimated) {
  if (actual.size() != estimated.size() || actual.empty())
    throw std::invalid_argument("rmse: vectors must be equal-length and non-empty");
  double acc = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    double d = actual[i] - estimated[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(actual.size()));
}

/// CRPS of a Gaussian predictive distribution against one observation, in
/// closed form: sigma * [z(2*Phi(z) - 1) + 2*phi(z) - 1/sqrt(pi)]. A
/// non-positive sigma degenerates to a point mass, whose CRPS is |a* - mu|.
inline double crps_gaussian(double mean, double stddev, double observation) {
  if (stddev <= 0.0) return std::abs(observation - mean);
  double z = (observation - mean) / stddev;
  return stddev * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) -
                   1.0 / std::sqrt(std::numbers::pi));
}

/// Direct quadrature of the CRPS integral for an arbitrary predictive CDF.
/// The integrand jumps at the observation, so the integral is split there and
/// each side handled with the trapezoid rule at the requested step. This is
/// the oracle for crps_gaussian and the path for MC-empirical CDFs.
inline double crps_numeric(const std::function<double(double)>& cdf,
                           double observation, double lower, double upper,
                           double step) {
  if (!(lower < upper)) throw std::invalid_argument("crps_numeric: bad bounds");
  if (!(step > 0.0)) throw std::invalid_argument("crps_numeric: bad step");

  auto integrate = [&](double a, double b, double heaviside) {
    if (b <= a) return 0.0;
    auto n = static_cast<std::size_t>(std::ceil((b - a) / step));
    n = std::max<std::size_t>(n, 1);
    double h = (b - a) / static_cast<double>(n);
    double prev_f = cdf(a);
    double prev_g = (prev_f - heaviside) * (prev_f - heaviside);
    double acc = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      double x = a + h * static_cast<double>(i);
      double f = cdf(x);
      if (f < prev_f - 1e-9)
        throw std::invalid_argument("crps_numeric: CDF is not non-decreasing");
      double g = (f - heaviside) * (f - heaviside);
      acc += 0.5 * (prev_g + g) * h;
      prev_f = f;
      prev_g = g;
    }
    return acc;
  };

  if (observation <= lower) return integrate(lower, upper, 1.0);
  if (observation >= upper) return integrate(lower, upper, 0.0);
  return integrate(lower, observation, 0.0) + integrate(observation, upper, 1.0);
}

/// Fraction of actual values inside the central predictive interval at the
/// nominal level, mu +/- z * sigma.
inline double interval_coverage(const std::vector<double>& means,
                                const std::vector<double>& stddevs,
                                const std::vector<double>& actuals,
                                double level) {
  if (means.size() != stddevs.size() || means.size() != actuals.size())
    throw std::invalid_argument("interval_coverage: length mismatch");
  if (means.empty()) return 0.0;
  double z = normal_quantile(0.5 + level / 2.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < means.size(); ++i)
    if (std::abs(actuals[i] - means[i]) <= z * stddevs[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(means.size());
}

/// One evaluation scenario's scores.
struct EvalReport {
  std::string lane;
  std::string period;
  double matching_rate = 0.0;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  double crps = 0.0;
  double coverage90 = 0.0;
  int n = 0;
};

/// One aggregated sweep row, shaped like the paper-style results tables.
struct SweepRow {
  std::string model;
  double matching_rate = 0.0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  double crps_mean = 0.0;
  double crps_std = 0.0;
  double coverage = 0.0;
  int n = 0;
};

inline void write_sweep_csv(const std::string& path,
                            const std::vector<SweepRow>& rows) {
  auto out = open_output(path);
  out << "model,matching_rate,rmse_mean,rmse_std,crps_mean,crps_std,coverage,n\n";
  for (const auto& r : rows) {
    out << r.model << ',' << format_general(r.matching_rate) << ','
        << format_general(r.rmse_mean) << ',' << format_general(r.rmse_std) << ','
        << format_general(r.crps_mean) << ',' << format_general(r.crps_std) << ','
        << format_general(r.coverage) << ',' << r.n << '\n';
  }
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty vector");
  std::sort(v.begin(), v.end());
  std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace acr
