#pragma once

// Thermodynamic-limit mean-field dynamics of the two spin species: the
// equations of motion, attractor classification, phase diagrams, hysteresis
// ramps and the linear stability of the unsynchronized fixed point.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "core.hpp"
#include "ode.hpp"
#include "signal.hpp"

namespace nrsync::meanfield {

struct MeanFieldState {
  cplx s_plus_A{0.0, 0.0};
  cplx s_plus_B{0.0, 0.0};
  double s_z_A = 1.0;
  double s_z_B = 1.0;

  /// Physical Bloch-ball condition 4|s+|^2 + s_z^2 <= 1 for both species.
  double bloch_excess() const {
    const double a = 4.0 * std::norm(s_plus_A) + s_z_A * s_z_A - 1.0;
    const double b = 4.0 * std::norm(s_plus_B) + s_z_B * s_z_B - 1.0;
    return std::max(a, b);
  }
  bool is_physical(double tol = 1e-12) const {
    return std::abs(s_plus_A) <= 0.5 + tol && std::abs(s_plus_B) <= 0.5 + tol && bloch_excess() <= tol;
  }

  MeanFieldState rotated(double theta) const {
    const cplx u = std::polar(1.0, theta);
    return {u * s_plus_A, u * s_plus_B, s_z_A, s_z_B};
  }
  MeanFieldState conjugated() const { return {std::conj(s_plus_A), std::conj(s_plus_B), s_z_A, s_z_B}; }
  MeanFieldState swapped() const { return {s_plus_B, s_plus_A, s_z_B, s_z_A}; }
};

using StateVec = Eigen::Matrix<double, 6, 1>;

inline StateVec to_vec(const MeanFieldState& s) {
  StateVec v;
  v << s.s_plus_A.real(), s.s_plus_A.imag(), s.s_plus_B.real(), s.s_plus_B.imag(), s.s_z_A, s.s_z_B;
  return v;
}

inline MeanFieldState from_vec(const StateVec& v) {
  return {cplx{v[0], v[1]}, cplx{v[2], v[3]}, v[4], v[5]};
}

/// Generalized mean-field equations (complex V-). Reduces to the real-V-
/// form when Im V- = 0.
inline MeanFieldState mf_rhs(const MeanFieldState& s, const CouplingParams& p) {
  if (!p.N.is_thermodynamic())
    throw std::invalid_argument("mf_rhs requires thermodynamic-limit parameters (N = inf)");
  const auto [vab, vba] = directional_from_symmetric(p);
  const cplx i{0.0, 1.0};
  MeanFieldState d;
  d.s_plus_A = 0.5 * ((-p.kappa + i * p.delta) * s.s_plus_A + p.V * s.s_plus_A * s.s_z_A +
                      vba * s.s_plus_B * s.s_z_A);
  d.s_plus_B = 0.5 * ((-p.kappa - i * p.delta) * s.s_plus_B + p.V * s.s_plus_B * s.s_z_B +
                      vab * s.s_plus_A * s.s_z_B);
  // s-_A s+_B = conj(s+_A) s+_B
  const cplx am_bp = std::conj(s.s_plus_A) * s.s_plus_B;
  d.s_z_A = p.kappa * (1.0 - s.s_z_A) - 2.0 * p.V * std::norm(s.s_plus_A) - 2.0 * (vba * am_bp).real();
  d.s_z_B = p.kappa * (1.0 - s.s_z_B) - 2.0 * p.V * std::norm(s.s_plus_B) - 2.0 * (vab * std::conj(am_bp)).real();
  return d;
}

struct Trajectory {
  std::vector<double> t;
  std::vector<MeanFieldState> states;
  double max_bloch_excess = -1.0;
  /// Set when 4|s+|^2 + s_z^2 exceeded 1 + 1e-6 at any sample.
  bool bloch_warning = false;
  MeanFieldState final_state;
};

/// Integrates from `ic` to t_end and records the state at each time in
/// `sample_times` (sorted, within [0, t_end]).
inline Trajectory integrate(const MeanFieldState& ic, const CouplingParams& p, double t_end,
                            std::span<const double> sample_times, const ode::Tolerances& tol = {}) {
  if (!(t_end > 0.0)) throw std::invalid_argument("t_end must be positive");
  if (!p.N.is_thermodynamic())
    throw std::invalid_argument("mean-field integration requires thermodynamic-limit parameters");
  const auto [vab, vba] = directional_from_symmetric(p);
  const double k = p.kappa, dl = p.delta, V = p.V;
  // Real-arithmetic right-hand side; identical to mf_rhs.
  auto rhs = [=](double, const StateVec& y, StateVec& dy) {
    const double ar = y[0], ai = y[1], br = y[2], bi = y[3], za = y[4], zb = y[5];
    // (-k + i dl) a
    dy[0] = 0.5 * (-k * ar - dl * ai + V * ar * za + (vba.real() * br - vba.imag() * bi) * za);
    dy[1] = 0.5 * (-k * ai + dl * ar + V * ai * za + (vba.real() * bi + vba.imag() * br) * za);
    dy[2] = 0.5 * (-k * br + dl * bi + V * br * zb + (vab.real() * ar - vab.imag() * ai) * zb);
    dy[3] = 0.5 * (-k * bi - dl * br + V * bi * zb + (vab.real() * ai + vab.imag() * ar) * zb);
    // conj(a) b
    const double cr = ar * br + ai * bi, ci = ar * bi - ai * br;
    dy[4] = k * (1.0 - za) - 2.0 * V * (ar * ar + ai * ai) - 2.0 * (vba.real() * cr - vba.imag() * ci);
    dy[5] = k * (1.0 - zb) - 2.0 * V * (br * br + bi * bi) - 2.0 * (vab.real() * cr + vab.imag() * ci);
  };
  Trajectory traj;
  traj.t.reserve(sample_times.size());
  traj.states.reserve(sample_times.size());
  ode::DormandPrince5<StateVec> solver(rhs, tol);
  const StateVec yend = solver.solve(to_vec(ic), 0.0, t_end, sample_times, [&](double t, const StateVec& y) {
    const MeanFieldState s = from_vec(y);
    traj.t.push_back(t);
    traj.states.push_back(s);
    traj.max_bloch_excess = std::max(traj.max_bloch_excess, s.bloch_excess());
  });
  traj.final_state = from_vec(yend);
  traj.bloch_warning = traj.max_bloch_excess > 1e-6;
  return traj;
}

// ---------------------------------------------------------------------------
// Inhomogeneous phase picture.

struct SpinPhase {
  double amplitude;
  double phase;
  double s_z;
};

/// Phase velocity of every spin for per-spin states of both species
/// (equal sizes N). Returns velocities for A then B.
inline std::pair<std::vector<double>, std::vector<double>> kuramoto_phase_velocity(
    std::span<const SpinPhase> A, std::span<const SpinPhase> B, const CouplingParams& p) {
  if (A.size() != B.size() || A.empty()) throw std::invalid_argument("both species need the same, nonzero size");
  for (const auto* group : {&A, &B})
    for (const auto& s : *group)
      if (!(s.amplitude > 0.0)) throw std::invalid_argument("zero amplitude: phase undefined");
  const auto [vab, vba] = directional_from_symmetric(p);
  const double n = static_cast<double>(A.size());
  // Coupling of source species b onto target a; V_aa = V.
  auto velocities = [&](std::span<const SpinPhase> target, std::span<const SpinPhase> other, cplx v_cross,
                        double detuning) {
    std::vector<double> out(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
      const auto& a = target[i];
      double sum = 0.0;
      for (const auto& b : target) sum += p.V * (b.amplitude / a.amplitude) * std::sin(b.phase - a.phase);
      // Im(V e^{i x}) == V sin x for real V.
      for (const auto& b : other)
        sum += (b.amplitude / a.amplitude) * (v_cross * std::polar(1.0, b.phase - a.phase)).imag();
      out[i] = detuning / 2.0 + a.s_z / (2.0 * n) * sum;
    }
    return out;
  };
  return {velocities(A, B, vba, p.delta), velocities(B, A, vab, -p.delta)};
}

// ---------------------------------------------------------------------------
// Attractor classification.

enum class Attractor {
  Incoherent,
  Synchronized,
  PiSynchronized,
  TravelingWave,
  ModulatedTravelingWave,
  Desynchronized,
  Unclassifiable,
  Unphysical,
  IntegrationFailure,
};

inline std::string_view to_string(Attractor a) {
  switch (a) {
    case Attractor::Incoherent: return "Incoherent";
    case Attractor::Synchronized: return "Synchronized";
    case Attractor::PiSynchronized: return "PiSynchronized";
    case Attractor::TravelingWave: return "TravelingWave";
    case Attractor::ModulatedTravelingWave: return "ModulatedTravelingWave";
    case Attractor::Desynchronized: return "Desynchronized";
    case Attractor::Unclassifiable: return "Unclassifiable";
    case Attractor::Unphysical: return "Unphysical";
    case Attractor::IntegrationFailure: return "IntegrationFailure";
  }
  return "?";
}

struct ClassifyOptions {
  double transient = 500.0;
  double window = 500.0;
  double sample_dt = 0.05;
  double eps_coh = 1e-3;
  double eps_mod = 1e-3;
  double theta_sync = 0.1;
  double freq_tol = 1e-3;
  /// Autocorrelation peak height required to call |s+_A(t)| periodic.
  double periodicity_threshold = 0.5;
  ode::Tolerances ode{};

  nlohmann::json to_json() const {
    return {{"transient", transient},   {"window", window},         {"sample_dt", sample_dt},
            {"eps_coh", eps_coh},       {"eps_mod", eps_mod},       {"theta_sync", theta_sync},
            {"freq_tol", freq_tol},     {"periodicity_threshold", periodicity_threshold},
            {"rtol", ode.rtol},         {"atol", ode.atol}};
  }
};

struct AttractorReport {
  Attractor label = Attractor::Unclassifiable;
  double frequency_A = 0.0;
  double frequency_B = 0.0;
  double phase_difference = 0.0;  // circular mean of phi_A - phi_B in (-pi, pi]
  double modulation_depth = 0.0;  // peak-to-peak |s+_A| in the window
  int chirality = 0;              // sign of the common frequency, TW only
  double modulation_period = 0.0; // 0 if |s+_A| is not periodic
  double mean_s_z_A = 0.0;
  double mean_s_z_B = 0.0;
  double max_amplitude_A = 0.0;
  double max_amplitude_B = 0.0;
  bool bloch_warning = false;
  std::string note;
  MeanFieldState final_state;
};

/// Labels sampled window data. Precedence:
/// Incoherent > Desynchronized > Modulated > TW > pi-sync > sync.
inline AttractorReport analyze_window(std::span<const double> t, std::span<const MeanFieldState> s,
                                      const ClassifyOptions& opt) {
  AttractorReport r;
  const std::size_t n = s.size();
  if (n < 4 || t.size() != n) throw std::invalid_argument("analysis window needs at least four samples");

  std::vector<double> ampA(n), phA(n), phB(n), dphi(n);
  double szA = 0.0, szB = 0.0, ampB_max = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ampA[k] = std::abs(s[k].s_plus_A);
    ampB_max = std::max(ampB_max, std::abs(s[k].s_plus_B));
    phA[k] = std::arg(s[k].s_plus_A);
    phB[k] = std::arg(s[k].s_plus_B);
    dphi[k] = std::arg(s[k].s_plus_A * std::conj(s[k].s_plus_B));
    szA += s[k].s_z_A;
    szB += s[k].s_z_B;
  }
  r.mean_s_z_A = szA / n;
  r.mean_s_z_B = szB / n;
  r.max_amplitude_A = *std::max_element(ampA.begin(), ampA.end());
  r.max_amplitude_B = ampB_max;
  r.modulation_depth = r.max_amplitude_A - *std::min_element(ampA.begin(), ampA.end());

  const bool cohA = r.max_amplitude_A >= opt.eps_coh, cohB = r.max_amplitude_B >= opt.eps_coh;
  if (!cohA && !cohB) {
    r.label = Attractor::Incoherent;
    return r;
  }
  if (cohA != cohB) {
    r.label = Attractor::Unclassifiable;
    r.note = "only one species is coherent";
    return r;
  }

  signal::unwrap(phA);
  signal::unwrap(phB);
  signal::unwrap(dphi);
  r.frequency_A = signal::linear_fit(t, phA).slope;
  r.frequency_B = signal::linear_fit(t, phB).slope;
  r.phase_difference = signal::circular_mean(dphi);

  const auto [dmin, dmax] = std::minmax_element(dphi.begin(), dphi.end());
  const bool locked = (*dmax - *dmin) < 2.0 * std::numbers::pi;
  if (!locked && std::abs(r.frequency_A - r.frequency_B) > opt.freq_tol) {
    r.label = Attractor::Desynchronized;
    return r;
  }

  const double common = 0.5 * (r.frequency_A + r.frequency_B);
  if (r.modulation_depth >= opt.eps_mod) {
    const double dt = (t.back() - t.front()) / static_cast<double>(n - 1);
    r.modulation_period = signal::autocorrelation_period(ampA, dt, opt.periodicity_threshold);
    if (r.modulation_period > 0.0) {
      r.label = Attractor::ModulatedTravelingWave;
      r.chirality = std::abs(common) >= opt.freq_tol ? (common > 0 ? 1 : -1) : 0;
      return r;
    }
  }
  if (std::abs(common) >= opt.freq_tol) {
    if (r.modulation_depth < opt.eps_mod) {
      r.label = Attractor::TravelingWave;
      r.chirality = common > 0 ? 1 : -1;
      return r;
    }
    r.label = Attractor::Unclassifiable;
    r.note = "oscillating with aperiodic amplitude";
    return r;
  }
  const double to_pi = std::numbers::pi - std::abs(r.phase_difference);
  if (to_pi < opt.theta_sync) {
    r.label = Attractor::PiSynchronized;
  } else if (std::abs(r.phase_difference) < opt.theta_sync) {
    r.label = Attractor::Synchronized;
  } else {
    r.label = Attractor::Unclassifiable;
    r.note = "static with intermediate phase difference";
  }
  return r;
}

/// Integrates through the transient, samples the analysis window and labels it.
inline AttractorReport classify(const CouplingParams& params, const MeanFieldState& ic,
                                const ClassifyOptions& opt = {}) {
  params.validate();
  CouplingParams p = params.with_N(SpinCount::thermodynamic());
  const double t_end = opt.transient + opt.window;
  const auto count = static_cast<std::size_t>(std::llround(opt.window / opt.sample_dt)) + 1;
  const auto grid = ode::uniform_grid(opt.transient, t_end, count);
  AttractorReport r;
  Trajectory traj;
  try {
    traj = integrate(ic, p, t_end, grid, opt.ode);
  } catch (const ode::StiffnessError& e) {
    r.label = Attractor::IntegrationFailure;
    r.note = e.what();
    return r;
  }
  r = analyze_window(traj.t, traj.states, opt);
  r.final_state = traj.final_state;
  r.bloch_warning = traj.bloch_warning;
  return r;
}

/// Generic ic used for scans; breaks the 0/pi phase-difference symmetry.
inline MeanFieldState default_ic() { return {cplx{0.25, 0.0}, std::polar(0.25, 0.7), 0.5, 0.5}; }

/// Partner ic related by the mean-field PT map (complex conjugation).
inline MeanFieldState pt_partner(const MeanFieldState& ic) { return ic.conjugated(); }

// ---------------------------------------------------------------------------
// Linear stability of the unsynchronized fixed point s+ = 0, s_z = 1.

struct StabilityResult {
  std::array<cplx, 2> eigenvalues;
  bool unstable = false;
};

inline StabilityResult unsync_linear_stability(const CouplingParams& p) {
  const auto [vab, vba] = directional_from_symmetric(p);
  // Eigenvalues of 1/2 [[V-k+i d, V_BA], [V_AB, V-k-i d]].
  const cplx mean = 0.5 * (p.V - p.kappa);
  const cplx root = 0.5 * std::sqrt(vab * vba - p.delta * p.delta);
  StabilityResult r;
  r.eigenvalues = {mean + root, mean - root};
  r.unstable = r.eigenvalues[0].real() > 0.0 || r.eigenvalues[1].real() > 0.0;
  return r;
}

}  // namespace nrsync::meanfield
