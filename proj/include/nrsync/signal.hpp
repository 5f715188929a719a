#pragma once

// Small time-series helpers used by the attractor classifier and the
// spectral comb detector.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

namespace nrsync::signal {

/// In-place phase unwrapping (jumps larger than pi are folded).
inline void unwrap(std::vector<double>& phase) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double offset = 0.0;
  for (std::size_t k = 1; k < phase.size(); ++k) {
    const double raw_prev = phase[k - 1] - offset;
    const double d = phase[k] - raw_prev;
    offset += -two_pi * std::round(d / two_pi);
    phase[k] += offset;
  }
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rms_residual = 0.0;
};

inline LineFit linear_fit(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss += r * r;
  }
  f.rms_residual = std::sqrt(ss / n);
  return f;
}

/// Circular mean of angles, in (-pi, pi].
inline double circular_mean(std::span<const double> angles) {
  double c = 0.0, s = 0.0;
  for (double a : angles) c += std::cos(a), s += std::sin(a);
  return std::atan2(s, c);
}

/// Period of `x` from the first autocorrelation maximum after the first
/// zero crossing, or 0 if that maximum is below `threshold` (normalized).
/// Long series are decimated to at most ~2000 samples.
inline double autocorrelation_period(std::span<const double> x, double dt, double threshold = 0.5) {
  std::size_t stride = std::max<std::size_t>(1, x.size() / 2000);
  std::vector<double> v;
  for (std::size_t i = 0; i < x.size(); i += stride) v.push_back(x[i]);
  const double step = dt * static_cast<double>(stride);
  const std::size_t n = v.size();
  if (n < 8) return 0.0;
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= n;
  for (double& a : v) a -= mean;
  double c0 = 0.0;
  for (double a : v) c0 += a * a;
  if (c0 <= 0.0) return 0.0;
  const std::size_t max_lag = n / 2;
  std::vector<double> r(max_lag + 1);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) acc += v[i] * v[i + lag];
    // Unbiased normalization so that a periodic signal peaks near 1.
    r[lag] = acc / c0 * static_cast<double>(n) / static_cast<double>(n - lag);
  }
  std::size_t k = 1;
  while (k <= max_lag && r[k] > 0.0) ++k;
  if (k > max_lag) return 0.0;
  std::size_t best = 0;
  double best_val = -1.0;
  for (; k < max_lag; ++k) {
    if (r[k] > r[k - 1] && r[k] >= r[k + 1] && r[k] > best_val) {
      best = k;
      best_val = r[k];
      break;
    }
  }
  if (best == 0 || best_val < threshold) return 0.0;
  // Parabolic refinement of the peak.
  const double y0 = r[best - 1], y1 = r[best], y2 = r[best + 1];
  const double denom = y0 - 2.0 * y1 + y2;
  const double shift = denom != 0.0 ? 0.5 * (y0 - y2) / denom : 0.0;
  return (static_cast<double>(best) + shift) * step;
}

/// Indices of strict local maxima of `y` whose value is at least `floor`.
inline std::vector<std::size_t> local_maxima(std::span<const double> y, double floor) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 1; i + 1 < y.size(); ++i)
    if (y[i] >= floor && y[i] > y[i - 1] && y[i] >= y[i + 1]) idx.push_back(i);
  return idx;
}

}  // namespace nrsync::signal
