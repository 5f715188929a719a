#pragma once

// Adaptive Dormand-Prince 5(4) integrator with the classic fourth-order
// continuous extension (Hairer, Norsett & Wanner, "Solving ODEs I").
// The state type is any fixed- or dynamic-size Eigen column vector of doubles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace nrsync::ode {

struct Tolerances {
  double rtol = 1e-9;
  double atol = 1e-12;
  double h_init = 0.0;  // 0 selects an automatic first step
  double h_max = 0.0;   // 0 means unbounded
  std::size_t max_steps = 50'000'000;
};

/// Step size fell below the floating-point resolution of t.
class StiffnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Stats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

template <class Vec>
class DormandPrince5 {
 public:
  using Rhs = std::function<void(double, const Vec&, Vec&)>;

  DormandPrince5(Rhs f, Tolerances tol = {}) : f_(std::move(f)), tol_(tol) {}

  const Stats& stats() const { return stats_; }

  /// Integrates from (t0, y) to t1 and calls observe(t, y) at every time in
  /// `t_out` (must be sorted and inside [t0, t1]) using dense output.
  /// Returns the state at t1.
  template <class Observer>
  Vec solve(Vec y, double t0, double t1, std::span<const double> t_out, Observer&& observe) {
    if (!(t1 > t0)) throw std::invalid_argument("integration end time must exceed start time");
    std::size_t next_out = 0;
    while (next_out < t_out.size() && t_out[next_out] < t0) ++next_out;
    while (next_out < t_out.size() && t_out[next_out] == t0) observe(t0, y), ++next_out;

    const double span = t1 - t0;
    double h_max = tol_.h_max > 0.0 ? tol_.h_max : span;
    double t = t0;
    Vec k1(y.size()), k2(y.size()), k3(y.size()), k4(y.size()), k5(y.size()), k6(y.size()),
        k7(y.size()), ytmp(y.size()), ynew(y.size()), err(y.size());
    f_(t, y, k1);
    ++stats_.rhs_evals;
    double h = tol_.h_init > 0.0 ? tol_.h_init : initial_step(t, y, k1, h_max);
    double fac_old = 1e-4;
    bool last_rejected = false;

    std::size_t steps = 0;
    while (t < t1) {
      if (++steps > tol_.max_steps) throw StiffnessError("step budget exhausted at t = " + std::to_string(t));
      const bool last = t + h >= t1;
      if (last) h = t1 - t;
      if (h < 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
        throw StiffnessError("step size underflow at t = " + std::to_string(t));

      ytmp = y + h * (a21 * k1);
      f_(t + c2 * h, ytmp, k2);
      ytmp = y + h * (a31 * k1 + a32 * k2);
      f_(t + c3 * h, ytmp, k3);
      ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
      f_(t + c4 * h, ytmp, k4);
      ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
      f_(t + c5 * h, ytmp, k5);
      ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      f_(t + h, ytmp, k6);
      ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
      f_(t + h, ynew, k7);
      stats_.rhs_evals += 6;

      err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double e2sum = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double sk = tol_.atol + tol_.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
        const double r = err[i] / sk;
        e2sum += r * r;
      }
      const double e = std::sqrt(e2sum / static_cast<double>(y.size()));
      if (!std::isfinite(e)) {
        h *= 0.1;
        last_rejected = true;
        ++stats_.rejected;
        continue;
      }

      // Lund-stabilised step control as in DOPRI5.
      const double fac11 = std::pow(e, expo1);
      double fac = fac11 / std::pow(fac_old, beta);
      fac = std::clamp(fac / safe, 1.0 / fac_max, 1.0 / fac_min);
      double h_new = h / fac;

      if (e <= 1.0) {
        fac_old = std::max(e, 1e-4);
        ++stats_.accepted;
        const double t_new = last ? t1 : t + h;
        if (next_out < t_out.size() && t_out[next_out] <= t_new) {
          // Dense output coefficients.
          const Vec ydiff = ynew - y;
          const Vec bspl = h * k1 - ydiff;
          const Vec r4 = ydiff - h * k7 - bspl;
          const Vec r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
          while (next_out < t_out.size() && t_out[next_out] <= t_new) {
            const double th = (t_out[next_out] - t) / h;
            const double th1 = 1.0 - th;
            Vec yo = y + th * (ydiff + th1 * (bspl + th * (r4 + th1 * r5)));
            observe(t_out[next_out], std::as_const(yo));
            ++next_out;
          }
        }
        y = ynew;
        k1 = k7;
        t = t_new;
        h_new = std::min(h_new, h_max);
        if (last_rejected) h_new = std::min(h_new, h);
        last_rejected = false;
        h = h_new;
      } else {
        h = h / std::min(1.0 / fac_min, fac11 / safe);
        last_rejected = true;
        ++stats_.rejected;
      }
    }
    return y;
  }

  Vec solve(Vec y, double t0, double t1) {
    return solve(std::move(y), t0, t1, std::span<const double>{}, [](double, const Vec&) {});
  }

 private:
  double initial_step(double t, const Vec& y, const Vec& f0, double h_max) {
    auto scaled_norm = [&](const Vec& v) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double sk = tol_.atol + tol_.rtol * std::abs(y[i]);
        s += (v[i] / sk) * (v[i] / sk);
      }
      return std::sqrt(s / static_cast<double>(y.size()));
    };
    const double dnf = scaled_norm(f0);
    const double dny = scaled_norm(y);
    double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
    h = std::min(h, h_max);
    Vec y1 = y + h * f0;
    Vec f1(y.size());
    f_(t + h, y1, f1);
    ++stats_.rhs_evals;
    const double der2 = scaled_norm(f1 - f0) / h;
    const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
    const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 0.2);
    return std::min({100.0 * h, h1, h_max});
  }

  Rhs f_;
  Tolerances tol_;
  Stats stats_;

  static constexpr double safe = 0.9, fac_min = 0.2, fac_max = 10.0, beta = 0.04;
  static constexpr double expo1 = 0.2 - beta * 0.75;

  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                          a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                          d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                          d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
};

/// Uniform sample grid [t0, t1] with `count` points, both ends inclusive.
inline std::vector<double> uniform_grid(double t0, double t1, std::size_t count) {
  std::vector<double> g(count);
  if (count == 1) {
    g[0] = t0;
    return g;
  }
  for (std::size_t i = 0; i < count; ++i)
    g[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(count - 1);
  return g;
}

}  // namespace nrsync::ode
