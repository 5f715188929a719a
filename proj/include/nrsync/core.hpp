#pragma once

// Model parameters for two incoherently pumped spin species with
// intraspecies, reciprocal and nonreciprocal interspecies couplings.
// All rates are stored in units of the pump rate kappa unless the caller
// chooses otherwise; kappa is kept as an explicit field.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace nrsync {

using cplx = std::complex<double>;

/// Raised when the dissipative couplings violate |V+| <= V (or V < 0, kappa <= 0).
class PhysicalityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed configuration documents.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Spins per species. An empty value is the thermodynamic-limit marker.
class SpinCount {
 public:
  constexpr SpinCount() = default;
  static constexpr SpinCount thermodynamic() { return SpinCount{}; }
  static SpinCount finite(std::int64_t n) {
    if (n < 1) throw std::invalid_argument("spin count must be >= 1, got " + std::to_string(n));
    SpinCount s;
    s.n_ = n;
    return s;
  }

  bool is_thermodynamic() const { return !n_.has_value(); }
  std::int64_t value() const {
    if (!n_) throw std::logic_error("spin count is the thermodynamic-limit marker");
    return *n_;
  }
  /// 1/N, zero in the thermodynamic limit.
  double inverse() const { return n_ ? 1.0 / static_cast<double>(*n_) : 0.0; }

  friend bool operator==(const SpinCount&, const SpinCount&) = default;

 private:
  std::optional<std::int64_t> n_;
};

struct CouplingParams {
  double kappa = 1.0;
  double delta = 0.0;
  double V = 0.0;
  double V_plus = 0.0;
  cplx V_minus{0.0, 0.0};
  SpinCount N = SpinCount::thermodynamic();

  /// Throws PhysicalityError if the invariants are violated.
  void validate() const {
    if (!(kappa > 0.0)) throw PhysicalityError("kappa must be positive");
    if (!(V >= 0.0)) throw PhysicalityError("V must be non-negative");
    // A relative slack of a few ulps keeps boundary cases such as V+ = V
    // computed through the waveguide maps on the physical side.
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, V);
    if (std::abs(V_plus) > V + slack) {
      std::ostringstream os;
      os << "|V_plus| = " << std::abs(V_plus) << " exceeds V = " << V
         << " (master equation would not be of Lindblad form)";
      throw PhysicalityError(os.str());
    }
  }

  bool is_physical() const noexcept {
    try {
      validate();
      return true;
    } catch (const PhysicalityError&) {
      return false;
    }
  }

  /// True when the Liouvillian is invariant under the species swap combined
  /// with sign reversal of the coherent interspecies Hamiltonian.
  bool pt_symmetric(double tol = 0.0) const {
    return std::abs(delta) <= tol && std::abs(V_minus.imag()) <= tol;
  }

  CouplingParams with_N(SpinCount n) const {
    CouplingParams p = *this;
    p.N = n;
    return p;
  }
};

/// Strength with which each species influences the other.
struct DirectionalCouplings {
  cplx V_AB;  // A acting on B
  cplx V_BA;  // B acting on A
};

inline DirectionalCouplings directional_from_symmetric(const CouplingParams& p) {
  return {p.V_plus + p.V_minus, p.V_plus - std::conj(p.V_minus)};
}

/// Inverse of directional_from_symmetric. V_plus is real only when
/// Re V_AB + Re V_BA carries all of it, i.e. Im V_AB == Im V_BA.
struct SymmetricCouplings {
  cplx V_plus;
  cplx V_minus;
};

inline SymmetricCouplings symmetric_from_directional(const DirectionalCouplings& d) {
  // V_AB = V+ + V-, V_BA = V+ - conj(V-), V+ real.
  // Re: V+ = (Re V_AB + Re V_BA)/2, Re V- = (Re V_AB - Re V_BA)/2
  // Im: Im V- = Im V_AB = Im V_BA.
  const double vp = 0.5 * (d.V_AB.real() + d.V_BA.real());
  const double vm_re = 0.5 * (d.V_AB.real() - d.V_BA.real());
  const double vm_im = 0.5 * (d.V_AB.imag() + d.V_BA.imag());
  const double vp_im = 0.5 * (d.V_AB.imag() - d.V_BA.imag());
  return {cplx{vp, vp_im}, cplx{vm_re, vm_im}};
}

/// The three coupling strengths produced by a waveguide geometry.
struct CouplingFragment {
  double V = 0.0;
  double V_plus = 0.0;
  cplx V_minus{0.0, 0.0};

  CouplingParams apply_to(CouplingParams p) const {
    p.V = V;
    p.V_plus = V_plus;
    p.V_minus = V_minus;
    return p;
  }
};

/// Two counter-propagating chiral waveguides with sign-flipping phase
/// shifters and lossy links between the ensembles.
struct CascadedWaveguideParams {
  double g1 = 0.0;
  double g2 = 0.0;
  int p1 = 1;
  int p2 = 1;
  double eta1 = 1.0;
  double eta2 = 1.0;

  void validate() const {
    if (g1 < 0.0 || g2 < 0.0) throw std::invalid_argument("waveguide couplings must be >= 0");
    if ((p1 != 1 && p1 != -1) || (p2 != 1 && p2 != -1))
      throw std::invalid_argument("phase-shift signs must be +1 or -1");
    if (eta1 < 0.0 || eta1 > 1.0 || eta2 < 0.0 || eta2 > 1.0)
      throw std::invalid_argument("transmission coefficients must lie in [0, 1]");
  }

  /// Transmission from a loss amplitude l in [0, 1].
  static double transmission_from_loss(double l) { return std::sqrt(1.0 - l * l); }
};

inline CouplingFragment couplings_from_cascaded(const CascadedWaveguideParams& w, double N) {
  w.validate();
  const double a = w.p1 * w.g1 * w.g1 * w.eta1;
  const double b = w.p2 * w.g2 * w.g2 * w.eta2;
  CouplingFragment f;
  f.V = (w.g1 * w.g1 + w.g2 * w.g2) * N;
  f.V_plus = (a + b) * N;
  f.V_minus = cplx{(a - b) * N, 0.0};
  return f;
}

/// Bidirectional mode a+ for the dissipative couplings plus a lossless
/// unidirectional mode a- carrying the complex coherent coupling.
struct BraidedWaveguideParams {
  double g_plus = 0.0;
  double g_minus = 0.0;
  double beta = 0.0;
  int sign_plus = 1;
  double eta_plus = 1.0;

  void validate() const {
    if (g_plus < 0.0 || g_minus < 0.0) throw std::invalid_argument("waveguide couplings must be >= 0");
    if (sign_plus != 1 && sign_plus != -1) throw std::invalid_argument("sign_plus must be +1 or -1");
    if (eta_plus < 0.0 || eta_plus > 1.0) throw std::invalid_argument("eta_plus must lie in [0, 1]");
  }
};

inline CouplingFragment couplings_from_braided(const BraidedWaveguideParams& w, double N) {
  w.validate();
  CouplingFragment f;
  f.V = 2.0 * w.g_plus * w.g_plus * N;
  f.V_plus = w.sign_plus * 2.0 * w.g_plus * w.g_plus * w.eta_plus * N;
  f.V_minus = std::polar(2.0 * w.g_minus * w.g_minus * N, w.beta);
  return f;
}

/// Rates of the collective jumps S-_A + S-_B (up_up) and S-_A - S-_B (up_down).
struct JumpDecomposition {
  double V_up_up = 0.0;
  double V_up_down = 0.0;
};

inline JumpDecomposition jump_decomposition(const CouplingParams& p) {
  if (std::abs(p.V_plus) > p.V) {
    std::ostringstream os;
    os << "jump decomposition requires |V_plus| <= V (V_plus=" << p.V_plus << ", V=" << p.V << ")";
    throw PhysicalityError(os.str());
  }
  return {0.5 * (p.V + p.V_plus), 0.5 * (p.V - p.V_plus)};
}

// ---------------------------------------------------------------------------
// Flat key-value serialization shared by every CLI subcommand:
// kappa, delta, V, V_plus, V_minus_re, V_minus_im, N ("inf" or null for the
// thermodynamic limit).

inline nlohmann::json to_json(const CouplingParams& p) {
  nlohmann::json j;
  j["kappa"] = p.kappa;
  j["delta"] = p.delta;
  j["V"] = p.V;
  j["V_plus"] = p.V_plus;
  j["V_minus_re"] = p.V_minus.real();
  j["V_minus_im"] = p.V_minus.imag();
  if (p.N.is_thermodynamic())
    j["N"] = "inf";
  else
    j["N"] = p.N.value();
  return j;
}

inline CouplingParams params_from_json(const nlohmann::json& j, bool validate = true) {
  if (!j.is_object()) throw ConfigError("params: expected a JSON object");
  CouplingParams p;
  auto num = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string("params.") + key + ": expected a number");
    return v.get<double>();
  };
  p.kappa = num("kappa", 1.0);
  p.delta = num("delta", 0.0);
  p.V = num("V", 0.0);
  p.V_plus = num("V_plus", 0.0);
  p.V_minus = cplx{num("V_minus_re", 0.0), num("V_minus_im", 0.0)};
  if (j.contains("N")) {
    const auto& n = j.at("N");
    if (n.is_null() || (n.is_string() && n.get<std::string>() == "inf")) {
      p.N = SpinCount::thermodynamic();
    } else if (n.is_number_integer() && n.get<std::int64_t>() >= 1) {
      p.N = SpinCount::finite(n.get<std::int64_t>());
    } else {
      throw ConfigError("params.N: expected a positive integer or \"inf\"");
    }
  }
  if (validate) p.validate();
  return p;
}

}  // namespace nrsync
