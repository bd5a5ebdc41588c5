#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

namespace hspde {

/// Monte Carlo estimate of an expectation: sample mean and its standard error.
struct MCEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t num_paths = 0;

  static MCEstimate from_samples(std::span<const double> samples) {
    MCEstimate e;
    e.num_paths = samples.size();
    if (samples.empty()) return e;
    double sum = 0.0;
    for (double s : samples) sum += s;
    e.mean = sum / static_cast<double>(samples.size());
    if (samples.size() > 1) {
      double ss = 0.0;
      for (double s : samples) ss += (s - e.mean) * (s - e.mean);
      const double var = ss / static_cast<double>(samples.size() - 1);
      e.std_error = std::sqrt(var / static_cast<double>(samples.size()));
    }
    return e;
  }
};

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope needs >= 2 matched points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const auto n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw std::invalid_argument("loglog_slope needs positive data");
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// value <= bound up to a relative/absolute slack (bound comparisons are grid-error dominated).
inline bool within_bound(double value, double bound, double rel = 1e-6, double abs = 1e-9) {
  return value <= bound + std::max(abs, rel * std::abs(bound));
}

}  // namespace hspde
