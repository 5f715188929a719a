#pragma once

// Two-time correlations <sigma+_a(t+tau) sigma-_b(t)> from the regression
// theorem, their spectral densities, exceptional points of the 2x2
// regression matrix and the output-field moments of the waveguide setup.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "cumulant2.hpp"
#include "exact.hpp"
#include "meanfield.hpp"
#include "ode.hpp"
#include "parallel.hpp"
#include "scan.hpp"
#include "signal.hpp"

namespace nrsync::spectra {

using Mat2 = Eigen::Matrix2cd;
using Vec2 = Eigen::Vector2cd;

struct RegressionMatrix {
  Mat2 M;
  double s_z_A = 0.0, s_z_B = 0.0;
  CouplingParams params;

  /// (X_A - X_B)^2 + 4 s_z_A s_z_B V_AB V_BA, i.e. 4 (tr^2 - 4 det) of M.
  cplx discriminant() const {
    const cplx d = M(0, 0) - M(1, 1);
    return 4.0 * (d * d + 4.0 * M(0, 1) * M(1, 0));
  }
  std::pair<cplx, cplx> eigenvalues() const {
    const cplx half_tr = 0.5 * (M(0, 0) + M(1, 1));
    const cplx d = M(0, 0) - M(1, 1);
    const cplx root = 0.5 * std::sqrt(d * d + 4.0 * M(0, 1) * M(1, 0));
    return {half_tr + root, half_tr - root};
  }
  /// Condition number of the eigenvector matrix (infinite at an exceptional point).
  double eigenvector_condition() const {
    Eigen::ComplexEigenSolver<Mat2> es(M);
    Eigen::JacobiSVD<Mat2> svd(es.eigenvectors());
    const auto sv = svd.singularValues();
    return sv[1] > 0.0 ? sv[0] / sv[1] : std::numeric_limits<double>::infinity();
  }
};

/// Row a holds the couplings that drive sigma+_a: A is driven by B through
/// V_BA and B by A through V_AB, as in the mean-field equations.
inline RegressionMatrix regression_matrix(const CouplingParams& p, double s_z_A, double s_z_B) {
  if (std::abs(s_z_A) > 1.0 + 1e-9 || std::abs(s_z_B) > 1.0 + 1e-9)
    throw std::invalid_argument("populations must lie in [-1, 1]");
  const auto [vab, vba] = directional_from_symmetric(p);
  auto X = [&](double sz, double d) {
    const cplx id{0.0, d};
    if (p.N.is_thermodynamic()) return sz * p.V + id - p.kappa;
    const double N = static_cast<double>(p.N.value());
    return (sz * (N - 1.0) - 1.0) * p.V / N + id - p.kappa;
  };
  RegressionMatrix r;
  r.s_z_A = s_z_A;
  r.s_z_B = s_z_B;
  r.params = p;
  r.M << X(s_z_A, p.delta), s_z_A * vba, s_z_B * vab, X(s_z_B, -p.delta);
  r.M *= 0.5;
  return r;
}

enum class Source { A, B };

/// c(tau) = (<sigma+_A(tau) sigma-_b>, <sigma+_B(tau) sigma-_b>) and dc/dtau.
struct CorrelationVector {
  Source source = Source::A;
  std::vector<double> tau;
  std::vector<Vec2> c;
  std::vector<Vec2> dc;
};

/// Equal-time starting vector from distinct-spin pair moments.
inline Vec2 initial_correlations(const cumulant::CumulantState2& s, Source b) {
  // <sigma+_B sigma-_A> = conj(pp_AB)
  if (b == Source::A) return Vec2(cplx{s.pp_AA, 0.0}, std::conj(s.pp_AB));
  return Vec2(s.pp_AB, cplx{s.pp_BB, 0.0});
}

inline Vec2 initial_correlations(const exact::CorrelatorSet& s, Source b) {
  if (!s.pp_AA) throw std::invalid_argument("distinct-spin correlations need N >= 2");
  if (b == Source::A) return Vec2(cplx{*s.pp_AA, 0.0}, std::conj(s.pp_AB));
  return Vec2(s.pp_AB, cplx{*s.pp_BB, 0.0});
}

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvolveOptions {
  double tau_max = 2000.0;  // units of 1/kappa
  double dtau = 0.02;
  ode::Tolerances tol{.rtol = 1e-10, .atol = 1e-14};
};

namespace detail {

using Vec4 = Eigen::Matrix<double, 4, 1>;
inline Vec4 pack(const Vec2& c) { return Vec4(c[0].real(), c[0].imag(), c[1].real(), c[1].imag()); }
inline Vec2 unpack(const Eigen::Ref<const Eigen::VectorXd>& y, int off = 0) {
  return Vec2(cplx{y[off], y[off + 1]}, cplx{y[off + 2], y[off + 3]});
}

}  // namespace detail

/// Constant regression matrix.
inline CorrelationVector evolve_correlations(const Vec2& c0, const RegressionMatrix& m, Source b,
                                             const EvolveOptions& opt = {}) {
  Eigen::ComplexEigenSolver<Mat2> es(m.M, false);
  const double growth = std::max(es.eigenvalues()[0].real(), es.eigenvalues()[1].real());
  if (growth > 0.0 && growth * opt.tau_max > 50.0)
    throw DivergenceError("regression matrix has an eigenvalue with positive real part " + std::to_string(growth));
  const Mat2 M = m.M;
  auto rhs = [M](double, const detail::Vec4& y, detail::Vec4& dy) { dy = detail::pack(M * detail::unpack(y)); };
  ode::DormandPrince5<detail::Vec4> solver(rhs, opt.tol);
  const std::size_t n = static_cast<std::size_t>(std::llround(opt.tau_max / opt.dtau)) + 1;
  const auto grid = ode::uniform_grid(0.0, opt.tau_max, n);
  CorrelationVector cv;
  cv.source = b;
  cv.tau.reserve(n);
  cv.c.reserve(n);
  solver.solve(detail::pack(c0), 0.0, opt.tau_max, grid, [&](double t, const detail::Vec4& y) {
    cv.tau.push_back(t);
    cv.c.push_back(detail::unpack(y));
    cv.dc.push_back(M * cv.c.back());
  });
  return cv;
}

/// Regression with populations co-evolved by the cumulant equations from
/// `start` (a point on the cumulant trajectory at time t). c(0) is built from
/// the same moments unless `c0` is given.
inline CorrelationVector evolve_correlations_coevolved(const cumulant::CumulantState2& start, const CouplingParams& p,
                                                       Source b, const EvolveOptions& opt = {},
                                                       std::optional<Vec2> c0 = std::nullopt) {
  using Vec13 = Eigen::Matrix<double, 13, 1>;
  auto rhs = [p](double, const Vec13& y, Vec13& dy) {
    const cumulant::StateVec sv = y.head<9>();
    const auto s = cumulant::from_vec(sv);
    dy.head<9>() = cumulant::to_vec(cumulant::c2_rhs(s, p));
    const Mat2 M = regression_matrix(p, std::clamp(s.s_z_A, -1.0, 1.0), std::clamp(s.s_z_B, -1.0, 1.0)).M;
    dy.tail<4>() = detail::pack(M * detail::unpack(y.tail<4>()));
  };
  Vec13 y0;
  y0.head<9>() = cumulant::to_vec(start);
  y0.tail<4>() = detail::pack(c0 ? *c0 : initial_correlations(start, b));
  ode::DormandPrince5<Vec13> solver(rhs, opt.tol);
  const std::size_t n = static_cast<std::size_t>(std::llround(opt.tau_max / opt.dtau)) + 1;
  const auto grid = ode::uniform_grid(0.0, opt.tau_max, n);
  CorrelationVector cv;
  cv.source = b;
  solver.solve(y0, 0.0, opt.tau_max, grid, [&](double t, const Vec13& y) {
    Vec13 dy;
    rhs(t, y, dy);
    cv.tau.push_back(t);
    cv.c.push_back(detail::unpack(y.tail<4>()));
    cv.dc.push_back(detail::unpack(dy.tail<4>()));
    if (!cv.c.back().allFinite()) throw DivergenceError("two-time correlations diverged at tau = " + std::to_string(t));
  });
  return cv;
}

// ---------------------------------------------------------------------------

struct Spectrum {
  std::vector<double> omega;
  std::vector<cplx> P_A;  // P_{A b}
  std::vector<cplx> P_B;  // P_{B b}
  Source source = Source::A;
  std::string method;        // "resolvent" or "quadrature"
  bool windowed = false;
  double window_rate = 0.0;  // exp(-rate * tau) applied to c before the transform
  double tail_ratio = 0.0;   // |c(tau_max)| / max |c|
};

inline std::vector<double> omega_grid(double lo, double hi, std::size_t count) {
  return ode::uniform_grid(lo, hi, count);
}

/// Constant-M closed form P(omega) = -(M + i omega)^-1 c(0).
inline Spectrum spectral_density(const RegressionMatrix& m, const Vec2& c0, std::span<const double> omega,
                                 Source b = Source::A) {
  Spectrum s;
  s.source = b;
  s.method = "resolvent";
  for (double w : omega) {
    const Mat2 A = m.M + cplx{0.0, w} * Mat2::Identity();
    const Vec2 P = -A.partialPivLu().solve(c0);
    s.omega.push_back(w);
    s.P_A.push_back(P[0]);
    s.P_B.push_back(P[1]);
  }
  return s;
}

class UndecayedTailError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QuadratureOptions {
  double tail_tol = 1e-6;      // relative size of c(tau_max) counted as decayed
  bool allow_window = false;   // apply an exponential window instead of failing
};

namespace detail {

/// m_n = int_0^1 u^n e^{i theta u} du for n = 0..3.
inline std::array<cplx, 4> oscillatory_moments(double theta) {
  std::array<cplx, 4> m{};
  const cplx it{0.0, theta};
  if (std::abs(theta) < 1.0) {
    for (int n = 0; n < 4; ++n) {
      cplx term = 1.0, acc = 0.0;
      for (int k = 0; k < 40; ++k) {
        acc += term / static_cast<double>(n + k + 1);
        term *= it / static_cast<double>(k + 1);
      }
      m[n] = acc;
    }
  } else {
    const cplx e = std::exp(it);
    m[0] = (e - 1.0) / it;
    for (int n = 1; n < 4; ++n) m[n] = (e - static_cast<double>(n) * m[n - 1]) / it;
  }
  return m;
}

}  // namespace detail

/// Fourier transform of sampled c(tau) on [0, tau_max], exact for the cubic
/// Hermite interpolant built from c and dc on each interval.
inline Spectrum spectral_density(const CorrelationVector& cv, std::span<const double> omega,
                                 const QuadratureOptions& opt = {}) {
  const std::size_t n = cv.c.size();
  if (n < 2) throw std::invalid_argument("need at least two correlation samples");
  const double h = cv.tau[1] - cv.tau[0];
  double peak = 0.0;
  for (const auto& c : cv.c) peak = std::max(peak, c.norm());
  Spectrum s;
  s.source = cv.source;
  s.method = "quadrature";
  s.tail_ratio = peak > 0.0 ? cv.c.back().norm() / peak : 0.0;
  std::vector<Vec2> c = cv.c, dc = cv.dc;
  if (s.tail_ratio > opt.tail_tol) {
    if (!opt.allow_window)
      throw UndecayedTailError("two-time correlations have not decayed at tau_max (tail ratio " +
                               std::to_string(s.tail_ratio) + ")");
    s.windowed = true;
    s.window_rate = std::log(s.tail_ratio / opt.tail_tol) / cv.tau.back();
    for (std::size_t k = 0; k < n; ++k) {
      const double f = std::exp(-s.window_rate * cv.tau[k]);
      dc[k] = (dc[k] - s.window_rate * c[k]) * f;
      c[k] *= f;
    }
  }
  for (double w : omega) {
    const auto mo = detail::oscillatory_moments(w * h);
    // Hermite basis weights: H00 = 2u^3-3u^2+1, H10 = u^3-2u^2+u, H01 = -2u^3+3u^2, H11 = u^3-u^2
    const cplx w00 = 2.0 * mo[3] - 3.0 * mo[2] + mo[0];
    const cplx w10 = mo[3] - 2.0 * mo[2] + mo[1];
    const cplx w01 = -2.0 * mo[3] + 3.0 * mo[2];
    const cplx w11 = mo[3] - mo[2];
    const cplx step = std::polar(1.0, w * h);
    cplx phase = std::polar(1.0, w * cv.tau[0]);
    Vec2 acc = Vec2::Zero();
    for (std::size_t k = 0; k + 1 < n; ++k) {
      acc += phase * (w00 * c[k] + h * w10 * dc[k] + w01 * c[k + 1] + h * w11 * dc[k + 1]);
      phase *= step;
      if ((k & 1023) == 1023) phase = std::polar(1.0, w * cv.tau[k + 1]);
    }
    acc *= h;
    s.omega.push_back(w);
    s.P_A.push_back(acc[0]);
    s.P_B.push_back(acc[1]);
  }
  return s;
}

/// Largest | |P(w)| - |P(-w)| | relative to max |P| for a grid symmetric about 0.
inline double mirror_asymmetry(const std::vector<cplx>& P) {
  double peak = 0.0, worst = 0.0;
  for (const auto& v : P) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0, j = P.size() - 1; i < j; ++i, --j)
    worst = std::max(worst, std::abs(std::abs(P[i]) - std::abs(P[j])));
  return peak > 0.0 ? worst / peak : 0.0;
}

// ---------------------------------------------------------------------------

struct CombReport {
  bool comb = false;
  std::vector<double> peak_omegas;  // all local maxima above the floor
  double spacing = 0.0;
  std::size_t sidebands = 0;        // equally spaced peaks besides the central one
};

/// Looks for >= min_sidebands peaks of |P| above floor * max |P| that lie on
/// an equally spaced ladder (tolerance `rel_tol` of the spacing).
inline CombReport detect_comb(const Spectrum& s, double floor = 1e-3, std::size_t min_sidebands = 3,
                              double rel_tol = 0.1) {
  std::vector<double> mag(s.P_A.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < mag.size(); ++i) peak = std::max(peak, mag[i] = std::abs(s.P_A[i]));
  CombReport r;
  const auto idx = signal::local_maxima(mag, floor * peak);
  if (idx.empty()) return r;
  for (auto i : idx) r.peak_omegas.push_back(s.omega[i]);
  // Main peak and its nearest neighbour set the ladder spacing.
  std::size_t main = idx[0];
  for (auto i : idx)
    if (mag[i] > mag[main]) main = i;
  const double w0 = s.omega[main];
  double spacing = std::numeric_limits<double>::infinity();
  for (double w : r.peak_omegas)
    if (w != w0) spacing = std::min(spacing, std::abs(w - w0));
  if (!std::isfinite(spacing)) return r;
  std::size_t on_ladder = 0;
  for (double w : r.peak_omegas) {
    if (w == w0) continue;
    const double k = std::round((w - w0) / spacing);
    if (k != 0.0 && std::abs(w - w0 - k * spacing) <= rel_tol * spacing) ++on_ladder;
  }
  r.spacing = spacing;
  r.sidebands = on_ladder;
  r.comb = on_ladder >= min_sidebands;
  return r;
}

// ---------------------------------------------------------------------------

using PopulationSource = std::function<std::pair<double, double>(const CouplingParams&)>;

/// Populations from the mean-field attractor reached from the default ic.
inline PopulationSource meanfield_populations(const meanfield::ClassifyOptions& opt = {}) {
  return [opt](const CouplingParams& p) {
    CouplingParams q = p;
    q.N = SpinCount::thermodynamic();
    const auto rep = meanfield::classify(q, meanfield::default_ic(), opt);
    return std::pair{rep.mean_s_z_A, rep.mean_s_z_B};
  };
}

/// Populations from the cumulant steady state (one-period average if oscillating).
inline PopulationSource cumulant_populations(const cumulant::SteadyOptions& opt = {}) {
  return [opt](const CouplingParams& p) {
    const auto r = cumulant::c2_steady(p, cumulant::default_ic(), opt);
    return std::pair{r.state.s_z_A, r.state.s_z_B};
  };
}

struct ScanPoint {
  double value = 0.0;
  cplx lambda1, lambda2;
  cplx discriminant;
  double condition = 0.0;
  double s_z_A = 0.0, s_z_B = 0.0;
};

struct ExceptionalPoint {
  double value = 0.0;
  cplx lambda1, lambda2;
  cplx discriminant;
  bool diabolic = false;  // degenerate but diagonalizable (not exceptional)
};

struct EpScan {
  std::vector<ScanPoint> points;
  std::vector<ExceptionalPoint> eps;
};

inline bool is_diabolic(const RegressionMatrix& m, double tol = 1e-10) {
  const cplx half_tr = 0.5 * (m.M(0, 0) + m.M(1, 1));
  return (m.M - half_tr * Mat2::Identity()).cwiseAbs().maxCoeff() <= tol;
}

/// Scans one parameter, records eigenvalues of M, and refines every sign
/// change of Re(discriminant) by bisection until |discriminant| < disc_tol.
inline EpScan exceptional_point_scan(const CouplingParams& base, Param swept, const GridSpec& grid,
                                     const PopulationSource& populations, double disc_tol = 1e-8,
                                     std::size_t workers = 0) {
  auto eval = [&](double x) {
    CouplingParams p = base;
    set_param(p, swept, x);
    const auto [a, b] = populations(p);
    return regression_matrix(p, a, b);
  };
  EpScan out;
  out.points = parallel_map<ScanPoint>(
      grid.count,
      [&](std::size_t i) {
        const double x = grid.at(i);
        const auto m = eval(x);
        const auto [l1, l2] = m.eigenvalues();
        return ScanPoint{x, l1, l2, m.discriminant(), m.eigenvector_condition(), m.s_z_A, m.s_z_B};
      },
      workers);
  for (std::size_t i = 0; i + 1 < out.points.size(); ++i) {
    const auto& a = out.points[i];
    const auto& b = out.points[i + 1];
    const double fa = a.discriminant.real(), fb = b.discriminant.real();
    const bool zero_here = std::abs(a.discriminant) < disc_tol;
    if (!zero_here && !(fa * fb < 0.0)) continue;
    double lo = a.value, hi = b.value, flo = fa;
    RegressionMatrix m = eval(lo);
    if (!zero_here) {
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        m = eval(mid);
        const double fm = m.discriminant().real();
        if (std::abs(m.discriminant()) < disc_tol || hi - lo < 1e-15 * std::max(1.0, std::abs(mid))) break;
        if ((fm < 0.0) == (flo < 0.0))
          lo = mid, flo = fm;
        else
          hi = mid;
      }
    }
    if (std::abs(m.discriminant()) >= disc_tol) continue;  // real part crosses while the imaginary part does not
    ExceptionalPoint ep;
    ep.value = zero_here ? a.value : 0.5 * (lo + hi);
    const auto [l1, l2] = m.eigenvalues();
    ep.lambda1 = l1;
    ep.lambda2 = l2;
    ep.discriminant = m.discriminant();
    ep.diabolic = is_diabolic(m);
    if (!out.eps.empty() && std::abs(out.eps.back().value - ep.value) < 1e-12) continue;
    out.eps.push_back(ep);
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Distinct-spin moments needed by the output fields.
struct SpinMoments {
  double N = 1.0;
  double s_z_A = -1.0, s_z_B = -1.0;
  double pp_AA = 0.0, pp_BB = 0.0;
  cplx pp_AB;

  static SpinMoments from(const exact::CorrelatorSet& c) {
    return {static_cast<double>(c.N), c.s_z_A, c.s_z_B, c.pp_AA.value_or(0.0), c.pp_BB.value_or(0.0), c.pp_AB};
  }
  static SpinMoments from(const cumulant::CumulantState2& s, double N) {
    return {N, s.s_z_A, s.s_z_B, s.pp_AA, s.pp_BB, s.pp_AB};
  }
  /// <S+_a S-_a> reconstructed from the normalized moments.
  double collective_AA() const { return N * (1.0 + s_z_A) / 2.0 + N * (N - 1.0) * pp_AA; }
  double collective_BB() const { return N * (1.0 + s_z_B) / 2.0 + N * (N - 1.0) * pp_BB; }
  cplx collective_AB() const { return N * N * pp_AB; }  // <S+_A S-_B>
};

struct OutputFields {
  double intensity_1 = 0.0;  // <a1_out^dag a1_out>
  double intensity_2 = 0.0;
  cplx cross;                // <a1_out^dag a2_out>
};

/// Output-field moments for vacuum inputs:
/// a1_out = g1 (S-_A + p1 S-_B), a2_out = g2 (S-_B + p2 S-_A).
inline OutputFields output_field_correlations(const SpinMoments& m, const CascadedWaveguideParams& w) {
  w.validate();
  const double aa = m.collective_AA(), bb = m.collective_BB();
  const cplx ab = m.collective_AB(), ba = std::conj(ab);
  OutputFields o;
  o.intensity_1 = w.g1 * w.g1 * (aa + bb + 2.0 * w.p1 * ab.real());
  o.intensity_2 = w.g2 * w.g2 * (bb + aa + 2.0 * w.p2 * ab.real());
  o.cross = w.g1 * w.g2 * (ab + static_cast<double>(w.p2) * aa + static_cast<double>(w.p1) * bb +
                           static_cast<double>(w.p1 * w.p2) * ba);
  return o;
}

}  // namespace nrsync::spectra
