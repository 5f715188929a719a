#pragma once

// Second-order cumulant equations for finite N: single-spin inversions and
// distinct-spin pair moments, third-order cumulants set to zero.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "core.hpp"
#include "json.hpp"
#include "ode.hpp"
#include "signal.hpp"

namespace nrsync::cumulant {

struct CumulantState2 {
  double s_z_A = 1.0, s_z_B = 1.0;
  double pp_AA = 0.0, pp_BB = 0.0;  // <sigma+_a sigma-_a'>, distinct spins
  cplx pp_AB{0.0, 0.0};             // <sigma+_A sigma-_B>
  double zz_AA = 1.0, zz_BB = 1.0;  // <sigma^z_a sigma^z_a'>, distinct spins
  double zz_AB = 1.0;

  /// Labels A and B exchanged (pp_AB becomes <sigma+_B sigma-_A>).
  CumulantState2 swapped() const {
    return {s_z_B, s_z_A, pp_BB, pp_AA, std::conj(pp_AB), zz_BB, zz_AA, zz_AB};
  }
  CumulantState2 conjugated() const {
    CumulantState2 s = *this;
    s.pp_AB = std::conj(pp_AB);
    return s;
  }
  /// Largest violation of the moment bounds (<= 0 when all hold).
  double range_excess() const {
    double e = -1.0;
    e = std::max({e, std::abs(s_z_A) - 1.0, std::abs(s_z_B) - 1.0, std::abs(zz_AA) - 1.0, std::abs(zz_BB) - 1.0,
                  std::abs(zz_AB) - 1.0, -pp_AA, -pp_BB, pp_AA - 0.25, pp_BB - 0.25, std::abs(pp_AB) - 0.25});
    return e;
  }
};

using StateVec = Eigen::Matrix<double, 9, 1>;

inline StateVec to_vec(const CumulantState2& s) {
  StateVec v;
  v << s.s_z_A, s.s_z_B, s.pp_AA, s.pp_BB, s.pp_AB.real(), s.pp_AB.imag(), s.zz_AA, s.zz_BB, s.zz_AB;
  return v;
}

inline CumulantState2 from_vec(const StateVec& v) {
  return {v[0], v[1], v[2], v[3], cplx{v[4], v[5]}, v[6], v[7], v[8]};
}

/// Uncorrelated inverted state with a small cross-species seed.
inline CumulantState2 default_ic(double seed = 1e-3) {
  CumulantState2 s;
  s.pp_AB = seed;
  return s;
}

inline nlohmann::json to_json(const CumulantState2& s) {
  return {{"s_z_A", s.s_z_A},       {"s_z_B", s.s_z_B},       {"pp_AA", s.pp_AA},
          {"pp_BB", s.pp_BB},       {"pp_AB_re", s.pp_AB.real()}, {"pp_AB_im", s.pp_AB.imag()},
          {"zz_AA", s.zz_AA},       {"zz_BB", s.zz_BB},       {"zz_AB", s.zz_AB}};
}

/// Time derivative of the second-order moments. Couplings enter through the
/// directional rates, so complex V- is handled without special cases.
inline CumulantState2 c2_rhs(const CumulantState2& s, const CouplingParams& p) {
  if (p.N.is_thermodynamic()) throw std::invalid_argument("c2_rhs requires finite N");
  const double N = static_cast<double>(p.N.value());
  if (N < 2) throw std::invalid_argument("c2_rhs requires N >= 2");
  const auto [vab, vba] = directional_from_symmetric(p);
  const double k = p.kappa, V = p.V, a = V / N;
  const double zA = s.s_z_A, zB = s.s_z_B;
  const cplx pp = s.pp_AB;
  const double re_ba = (vba * std::conj(pp)).real();  // Re(V_BA conj pp)
  const double re_ab = (vab * pp).real();             // Re(V_AB pp)
  const double f = (N - 1.0) / N;

  CumulantState2 d;
  d.s_z_A = -a * (zA + 1.0) + k * (1.0 - zA) - 2.0 * V * f * s.pp_AA - 2.0 * re_ba;
  d.s_z_B = -a * (zB + 1.0) + k * (1.0 - zB) - 2.0 * V * f * s.pp_BB - 2.0 * re_ab;

  d.pp_AA = -(k + a) * s.pp_AA + 0.5 * a * (s.zz_AA + zA) + V * zA * (N - 2.0) / N * s.pp_AA + zA * re_ba;
  d.pp_BB = -(k + a) * s.pp_BB + 0.5 * a * (s.zz_BB + zB) + V * zB * (N - 2.0) / N * s.pp_BB + zB * re_ab;

  d.pp_AB = -(k + a - cplx{0.0, p.delta}) * pp + 0.5 * V * f * (zA + zB) * pp +
            std::conj(vab) * (zB + s.zz_AB) / (4.0 * N) + vba * (zA + s.zz_AB) / (4.0 * N) +
            0.5 * f * (std::conj(vab) * zB * s.pp_AA + vba * zA * s.pp_BB);

  d.zz_AA = 2.0 * zA * (k - a) - 2.0 * s.zz_AA * (k + a) - 4.0 * zA * re_ba +
            a * (4.0 * s.pp_AA - 4.0 * (N - 2.0) * zA * s.pp_AA);
  d.zz_BB = 2.0 * zB * (k - a) - 2.0 * s.zz_BB * (k + a) - 4.0 * zB * re_ab +
            a * (4.0 * s.pp_BB - 4.0 * (N - 2.0) * zB * s.pp_BB);

  d.zz_AB = k * (zA + zB - 2.0 * s.zz_AB) - 2.0 * f * (zA * re_ab + zB * re_ba) -
            2.0 * f * V * (zB * s.pp_AA + zA * s.pp_BB) - a * (zA + zB + 2.0 * s.zz_AB) +
            4.0 * p.V_plus * pp.real() / N;
  return d;
}

struct Trajectory {
  std::vector<double> t;
  std::vector<CumulantState2> states;
  CumulantState2 final_state;
};

namespace detail {

inline ode::DormandPrince5<StateVec>::Rhs make_rhs(const CouplingParams& p) {
  return [p](double, const StateVec& y, StateVec& dy) { dy = to_vec(c2_rhs(from_vec(y), p)); };
}

}  // namespace detail

inline Trajectory c2_integrate(const CumulantState2& ic, const CouplingParams& p, double t_end,
                               std::span<const double> sample_times, const ode::Tolerances& tol = {}) {
  ode::DormandPrince5<StateVec> solver(detail::make_rhs(p), tol);
  Trajectory tr;
  const StateVec y = solver.solve(to_vec(ic), 0.0, t_end, sample_times, [&](double t, const StateVec& v) {
    tr.t.push_back(t);
    tr.states.push_back(from_vec(v));
  });
  tr.final_state = from_vec(y);
  return tr;
}

class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double res) : std::runtime_error(what), residual(res) {}
  double residual;
};

struct SteadyOptions {
  double residual_tol = 1e-10;  // max-norm of the time derivative
  double t_budget = 1e7;        // in units of 1/kappa
  double chunk = 200.0;         // integration interval between checks
  double sample_dt = 0.05;
  /// Relative peak-to-peak variation of s_z_A over a chunk above which a
  /// non-decaying oscillation is assumed.
  double oscillation_floor = 1e-6;
  int min_chunks_before_averaging = 3;
  ode::Tolerances tol{.rtol = 1e-10, .atol = 1e-13};
};

struct SteadyResult {
  CumulantState2 state;
  CumulantState2 final_state;  // instantaneous state at t_final
  bool converged = false;
  bool averaged = false;  // state is a one-period time average of an oscillation
  double period = 0.0;
  double residual = 0.0;
  double t_final = 0.0;
};

inline double max_norm(const CumulantState2& d) { return to_vec(d).cwiseAbs().maxCoeff(); }

/// Long-time integration until the derivative vanishes, or until a persistent
/// oscillation is detected, in which case the one-period average is returned.
inline SteadyResult c2_steady(const CouplingParams& p, const CumulantState2& ic = default_ic(),
                              const SteadyOptions& opt = {}) {
  p.validate();
  if (p.N.is_thermodynamic() || p.N.value() < 2) throw std::invalid_argument("c2_steady requires finite N >= 2");
  const double chunk = opt.chunk / p.kappa;
  const double budget = opt.t_budget / p.kappa;
  ode::DormandPrince5<StateVec> solver(detail::make_rhs(p), opt.tol);
  StateVec y = to_vec(ic);
  SteadyResult res;
  double t = 0.0;
  int chunks = 0;
  const std::size_t nsamp = static_cast<std::size_t>(std::llround(chunk / opt.sample_dt)) + 1;
  const std::vector<double> grid = ode::uniform_grid(0.0, chunk, nsamp);
  while (t < budget) {
    std::vector<StateVec> samples;
    samples.reserve(nsamp);
    y = solver.solve(y, 0.0, chunk, grid, [&](double, const StateVec& v) { samples.push_back(v); });
    t += chunk;
    ++chunks;
    res.residual = max_norm(c2_rhs(from_vec(y), p));
    if (res.residual < opt.residual_tol) {
      res.state = res.final_state = from_vec(y);
      res.converged = true;
      res.t_final = t;
      return res;
    }
    if (chunks < opt.min_chunks_before_averaging) continue;
    std::vector<double> sz(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) sz[i] = samples[i][0];
    const auto [lo, hi] = std::minmax_element(sz.begin(), sz.end());
    if (*hi - *lo < opt.oscillation_floor * std::max(1.0, std::abs(*hi))) continue;
    const double period = signal::autocorrelation_period(sz, opt.sample_dt, 0.9);
    if (period <= 0.0 || period > 0.5 * chunk) continue;
    // Trapezoidal average over the last period of the chunk.
    const std::size_t steps = static_cast<std::size_t>(std::llround(period / opt.sample_dt));
    const std::size_t first = samples.size() - 1 - steps;
    StateVec acc = StateVec::Zero();
    for (std::size_t i = first; i < samples.size() - 1; ++i) acc += 0.5 * (samples[i] + samples[i + 1]);
    res.state = from_vec(acc / static_cast<double>(steps));
    res.final_state = from_vec(y);
    res.averaged = true;
    res.period = period;
    res.t_final = t;
    return res;
  }
  throw NonConvergenceError("cumulant steady state not reached within t = " + std::to_string(budget) +
                                " (residual " + std::to_string(res.residual) + ")",
                            res.residual);
}

}  // namespace nrsync::cumulant
