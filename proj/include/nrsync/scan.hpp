#pragma once

// Parameter axes and mean-field sweeps: phase diagrams, adiabatic
// hysteresis ramps and the incoherent/coherent boundary scan.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"
#include "meanfield.hpp"
#include "parallel.hpp"

namespace nrsync {

enum class Param { kappa, delta, V, V_plus, V_minus_re, V_minus_im };

inline std::string_view to_string(Param p) {
  switch (p) {
    case Param::kappa: return "kappa";
    case Param::delta: return "delta";
    case Param::V: return "V";
    case Param::V_plus: return "V_plus";
    case Param::V_minus_re: return "V_minus_re";
    case Param::V_minus_im: return "V_minus_im";
  }
  return "?";
}

inline Param param_from_string(std::string_view s) {
  if (s == "kappa") return Param::kappa;
  if (s == "delta") return Param::delta;
  if (s == "V") return Param::V;
  if (s == "V_plus" || s == "vplus") return Param::V_plus;
  if (s == "V_minus_re" || s == "V_minus" || s == "vminus") return Param::V_minus_re;
  if (s == "V_minus_im" || s == "vminus_im") return Param::V_minus_im;
  throw ConfigError("unknown parameter name '" + std::string(s) + "'");
}

inline void set_param(CouplingParams& p, Param which, double value) {
  switch (which) {
    case Param::kappa: p.kappa = value; break;
    case Param::delta: p.delta = value; break;
    case Param::V: p.V = value; break;
    case Param::V_plus: p.V_plus = value; break;
    case Param::V_minus_re: p.V_minus.real(value); break;
    case Param::V_minus_im: p.V_minus.imag(value); break;
  }
}

inline double get_param(const CouplingParams& p, Param which) {
  switch (which) {
    case Param::kappa: return p.kappa;
    case Param::delta: return p.delta;
    case Param::V: return p.V;
    case Param::V_plus: return p.V_plus;
    case Param::V_minus_re: return p.V_minus.real();
    case Param::V_minus_im: return p.V_minus.imag();
  }
  return 0.0;
}

/// Inclusive grid lo:hi:count.
struct GridSpec {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 1;

  double at(std::size_t i) const {
    if (count == 1) return lo;
    return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  double step() const { return count > 1 ? (hi - lo) / static_cast<double>(count - 1) : 0.0; }
  std::vector<double> values() const {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = at(i);
    return v;
  }
};

/// Parses "lo:hi:count" (inclusive on both ends) or a single number.
inline GridSpec parse_grid(std::string_view text) {
  auto to_double = [&](std::string_view part) {
    try {
      std::size_t used = 0;
      const std::string s(part);
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad grid value '" + std::string(part) + "' in '" + std::string(text) + "'");
    }
  };
  const auto c1 = text.find(':');
  if (c1 == std::string_view::npos) {
    const double v = to_double(text);
    return {v, v, 1};
  }
  const auto c2 = text.find(':', c1 + 1);
  if (c2 == std::string_view::npos) throw ConfigError("grid spec must be lo:hi:count, got '" + std::string(text) + "'");
  GridSpec g;
  g.lo = to_double(text.substr(0, c1));
  g.hi = to_double(text.substr(c1 + 1, c2 - c1 - 1));
  const double n = to_double(text.substr(c2 + 1));
  if (n < 1 || n != std::floor(n)) throw ConfigError("grid count must be a positive integer in '" + std::string(text) + "'");
  g.count = static_cast<std::size_t>(n);
  if (g.count > 1 && !(g.hi > g.lo)) throw ConfigError("grid requires hi > lo in '" + std::string(text) + "'");
  return g;
}

struct Axis {
  Param param;
  GridSpec grid;
};

}  // namespace nrsync

namespace nrsync::meanfield {

struct PhasePoint {
  double x = 0.0;
  double y = 0.0;
  AttractorReport report;
  std::optional<AttractorReport> partner;
  /// Both PT-related ics converge to travelling waves of opposite chirality.
  bool both_chiralities = false;
};

struct PhaseDiagram {
  Axis x, y;
  std::vector<PhasePoint> points;  // index iy * nx + ix

  const PhasePoint& at(std::size_t ix, std::size_t iy) const { return points.at(iy * x.grid.count + ix); }
};

/// Classifies a single grid point; unphysical parameters are labelled, not integrated.
inline PhasePoint classify_point(const CouplingParams& p, const MeanFieldState& ic, bool with_partner,
                                 const ClassifyOptions& opt) {
  PhasePoint pt;
  if (!p.is_physical()) {
    pt.report.label = Attractor::Unphysical;
    pt.report.note = "|V_plus| > V";
    return pt;
  }
  pt.report = classify(p, ic, opt);
  if (with_partner) {
    pt.partner = classify(p, pt_partner(ic), opt);
    auto is_tw = [](const AttractorReport& r) {
      return r.label == Attractor::TravelingWave || r.label == Attractor::ModulatedTravelingWave;
    };
    pt.both_chiralities = is_tw(pt.report) && is_tw(*pt.partner) && pt.report.chirality != 0 &&
                          pt.report.chirality == -pt.partner->chirality;
  }
  return pt;
}

inline PhaseDiagram phase_diagram(const CouplingParams& base, const Axis& x, const Axis& y,
                                  const MeanFieldState& ic, bool with_partner, const ClassifyOptions& opt = {},
                                  std::size_t workers = 0) {
  PhaseDiagram d{x, y, {}};
  const std::size_t nx = x.grid.count, ny = y.grid.count;
  d.points = parallel_map<PhasePoint>(
      nx * ny,
      [&](std::size_t k) {
        const std::size_t ix = k % nx, iy = k / nx;
        CouplingParams p = base;
        p.N = SpinCount::thermodynamic();
        set_param(p, x.param, x.grid.at(ix));
        set_param(p, y.param, y.grid.at(iy));
        PhasePoint pt = classify_point(p, ic, with_partner, opt);
        pt.x = x.grid.at(ix);
        pt.y = y.grid.at(iy);
        return pt;
      },
      workers);
  return d;
}

// ---------------------------------------------------------------------------

struct HysteresisStep {
  int direction = +1;  // +1 increasing, -1 decreasing
  double value = 0.0;
  AttractorReport report;
};

struct HysteresisOptions {
  Param swept = Param::delta;
  GridSpec path;
  /// Integration per step; the transient here is the dwell before sampling.
  ClassifyOptions dwell{.transient = 300.0, .window = 300.0};
};

/// Up-then-down ramp; every step starts from the previous step's final state.
inline std::vector<HysteresisStep> hysteresis_sweep(const CouplingParams& base, const MeanFieldState& ic,
                                                    const HysteresisOptions& opt) {
  if (opt.swept != Param::delta && opt.swept != Param::V_minus_im)
    throw ConfigError("hysteresis sweeps support delta or V_minus_im only");
  std::vector<HysteresisStep> out;
  MeanFieldState state = ic;
  const std::size_t n = opt.path.count;
  auto step = [&](int dir, std::size_t i) {
    CouplingParams p = base;
    p.N = SpinCount::thermodynamic();
    const double v = opt.path.at(i);
    set_param(p, opt.swept, v);
    HysteresisStep s{dir, v, classify(p, state, opt.dwell)};
    if (s.report.label != Attractor::IntegrationFailure) state = s.report.final_state;
    out.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < n; ++i) step(+1, i);
  for (std::size_t i = n; i-- > 0;) step(-1, i);
  return out;
}

// ---------------------------------------------------------------------------

struct BoundaryPoint {
  double V_minus = 0.0;
  double V_critical = 0.0;  // numerically located incoherent -> coherent threshold
  double V_formula = 0.0;   // min(1, (1 + V-^2)/2), kappa = 1 units
  double V_linear = 0.0;    // threshold from the unsync Jacobian
};

/// Threshold in V from the linearization at the unsynchronized state, with
/// V_plus tied to V by `vplus_ratio` (V_plus = ratio * V).
inline double linear_threshold(CouplingParams p, double vplus_ratio, double v_hi = 10.0) {
  auto unstable = [&](double V) {
    p.V = V;
    p.V_plus = vplus_ratio * V;
    return unsync_linear_stability(p).unstable;
  };
  double lo = 0.0, hi = v_hi;
  if (unstable(lo)) return 0.0;
  if (!unstable(hi)) return std::numeric_limits<double>::infinity();
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (unstable(mid) ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Locates the incoherent -> coherent boundary in V for each V- by bisection
/// on the classifier, with s+ seeded at `seed` from s_z = 1.
inline std::vector<BoundaryPoint> stability_boundary(const CouplingParams& base, const GridSpec& v_minus,
                                                     double vplus_ratio, double seed, double v_tol,
                                                     const ClassifyOptions& opt = {}, std::size_t workers = 0) {
  const MeanFieldState ic{cplx{seed, 0.0}, std::polar(seed, 0.7), 1.0, 1.0};
  return parallel_map<BoundaryPoint>(
      v_minus.count,
      [&](std::size_t i) {
        CouplingParams p = base;
        p.N = SpinCount::thermodynamic();
        p.V_minus = cplx{v_minus.at(i), p.V_minus.imag()};
        auto coherent = [&](double V) {
          p.V = V;
          p.V_plus = vplus_ratio * V;
          return classify(p, ic, opt).label != Attractor::Incoherent;
        };
        double lo = 0.0, hi = 3.0 * p.kappa;
        while (!coherent(hi) && hi < 100.0 * p.kappa) lo = hi, hi *= 2.0;
        while (hi - lo > v_tol) {
          const double mid = 0.5 * (lo + hi);
          (coherent(mid) ? hi : lo) = mid;
        }
        BoundaryPoint b;
        b.V_minus = v_minus.at(i);
        b.V_critical = 0.5 * (lo + hi);
        const double vm = b.V_minus / p.kappa;
        b.V_formula = p.kappa * std::min(1.0, 0.5 * (1.0 + vm * vm));
        b.V_linear = linear_threshold(p, vplus_ratio);
        return b;
      },
      workers);
}

}  // namespace nrsync::meanfield
