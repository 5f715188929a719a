// nrsync command-line front end. Every subcommand writes a CSV table plus a
// JSON sidecar (<out>.json) with the resolved configuration.
//
// Exit codes: 0 ok, 1 per-point failures, 2 configuration error.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nrsync/core.hpp"
#include "nrsync/cumulant2.hpp"
#include "nrsync/exact.hpp"
#include "nrsync/io.hpp"
#include "nrsync/meanfield.hpp"
#include "nrsync/scan.hpp"
#include "nrsync/spectra.hpp"

namespace {

using namespace nrsync;
using nlohmann::json;

constexpr int exit_ok = 0;
constexpr int exit_point_failures = 1;
constexpr int exit_config = 2;

// Parameter flags in axis priority order: the first gridded flag is x.
constexpr std::array<std::pair<Param, const char*>, 6> param_flags{{
    {Param::V_minus_re, "--vminus"},
    {Param::V_minus_im, "--vminus-im"},
    {Param::delta, "--delta"},
    {Param::V_plus, "--vplus"},
    {Param::V, "--V"},
    {Param::kappa, "--kappa"},
}};

struct Common {
  std::string config_path;
  std::map<Param, std::string> param_text;
  std::string N_text;
  std::string out;
  std::size_t workers = 0;
  std::uint64_t seed = 0;
  bool keep_going = false;
  std::optional<double> rtol, atol;
  std::optional<double> transient, window;
};

struct Resolved {
  CouplingParams base;
  std::vector<Axis> axes;
  json config;
};

std::string csv_path(const Common& c, const std::string& sub) { return c.out.empty() ? sub + ".csv" : c.out; }

SpinCount parse_N(const std::string& text) {
  if (text == "inf") return SpinCount::thermodynamic();
  try {
    std::size_t used = 0;
    const long long n = std::stoll(text, &used);
    if (used != text.size() || n < 1) throw std::invalid_argument("bad");
    return SpinCount::finite(n);
  } catch (const std::exception&) {
    throw ConfigError("N: expected a positive integer or 'inf', got '" + text + "'");
  }
}

CascadedWaveguideParams cascaded_from_json(const json& j) {
  CascadedWaveguideParams w;
  auto num = [&](const char* key, double fb) {
    if (!j.contains(key)) return fb;
    if (!j.at(key).is_number()) throw ConfigError(std::string("waveguide.") + key + ": expected a number");
    return j.at(key).get<double>();
  };
  w.g1 = num("g1", 0.0);
  w.g2 = num("g2", 0.0);
  w.p1 = static_cast<int>(num("p1", 1));
  w.p2 = static_cast<int>(num("p2", 1));
  w.eta1 = num("eta1", 1.0);
  w.eta2 = num("eta2", 1.0);
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("waveguide: ") + e.what());
  }
  return w;
}

/// Config file < flags. Config layout: {"params": {...}, "waveguide": {...}}.
Resolved resolve(const Common& c) {
  Resolved r;
  json file = json::object();
  if (!c.config_path.empty()) {
    std::ifstream f(c.config_path);
    if (!f) throw ConfigError("config: cannot open '" + c.config_path + "'");
    try {
      file = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (!file.is_object()) throw ConfigError("config: expected a JSON object");
  }
  if (file.contains("params")) r.base = params_from_json(file.at("params"), false);
  if (!c.N_text.empty()) r.base.N = parse_N(c.N_text);
  if (file.contains("waveguide")) {
    const json& w = file.at("waveguide");
    if (!w.is_object()) throw ConfigError("waveguide: expected an object");
    const std::string kind = w.value("kind", "cascaded");
    if (r.base.N.is_thermodynamic()) throw ConfigError("waveguide: deriving couplings needs a finite N");
    const double N = static_cast<double>(r.base.N.value());
    if (kind == "cascaded") {
      r.base = couplings_from_cascaded(cascaded_from_json(w), N).apply_to(r.base);
    } else if (kind == "braided") {
      BraidedWaveguideParams b;
      b.g_plus = w.value("g_plus", 0.0);
      b.g_minus = w.value("g_minus", 0.0);
      b.beta = w.value("beta", 0.0);
      b.sign_plus = w.value("sign_plus", 1);
      b.eta_plus = w.value("eta_plus", 1.0);
      try {
        r.base = couplings_from_braided(b, N).apply_to(r.base);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("waveguide: ") + e.what());
      }
    } else {
      throw ConfigError("waveguide.kind: expected 'cascaded' or 'braided', got '" + kind + "'");
    }
    r.config["waveguide"] = w;
  }
  for (const auto& [param, flag] : param_flags) {
    auto it = c.param_text.find(param);
    if (it == c.param_text.end() || it->second.empty()) continue;
    GridSpec g;
    try {
      g = parse_grid(it->second);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(flag) + ": " + e.what());
    }
    if (g.count == 1)
      set_param(r.base, param, g.lo);
    else
      r.axes.push_back({param, g});
  }
  if (!(r.base.kappa > 0.0)) throw ConfigError("params.kappa: must be positive");
  if (r.base.V < 0.0 && r.axes.empty()) throw ConfigError("params.V: must be non-negative");
  r.config["params"] = to_json(r.base);
  json axes = json::array();
  for (const auto& a : r.axes)
    axes.push_back({{"param", to_string(a.param)}, {"lo", a.grid.lo}, {"hi", a.grid.hi}, {"count", a.grid.count}});
  r.config["axes"] = axes;
  r.config["workers"] = c.workers;
  r.config["seed"] = c.seed;
  r.config["keep_going"] = c.keep_going;
  return r;
}

void require_physical(const CouplingParams& p) {
  try {
    p.validate();
  } catch (const PhysicalityError& e) {
    throw ConfigError(std::string("params: ") + e.what());
  }
}

void require_axes(const Resolved& r, std::size_t lo, std::size_t hi, const std::string& what) {
  if (r.axes.size() < lo || r.axes.size() > hi)
    throw ConfigError(what + ": expected " + (lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi)) +
                      " gridded parameter(s) lo:hi:count, got " + std::to_string(r.axes.size()));
}

meanfield::ClassifyOptions classify_options(const Common& c) {
  meanfield::ClassifyOptions o;
  if (c.transient) o.transient = *c.transient;
  if (c.window) o.window = *c.window;
  if (c.rtol) o.ode.rtol = *c.rtol;
  if (c.atol) o.ode.atol = *c.atol;
  return o;
}

cumulant::SteadyOptions steady_options(const Common& c) {
  cumulant::SteadyOptions o;
  if (c.rtol) o.tol.rtol = *c.rtol;
  if (c.atol) o.tol.atol = *c.atol;
  return o;
}

int finish(const Common& c, std::size_t failures, const std::string& sub) {
  if (failures == 0) return exit_ok;
  std::cerr << sub << ": " << failures << " point(s) failed" << (c.keep_going ? " (--keep-going)" : "") << '\n';
  return c.keep_going ? exit_ok : exit_point_failures;
}

json report_json(const meanfield::AttractorReport& r) {
  return {{"label", to_string(r.label)},
          {"frequency_A", r.frequency_A},
          {"frequency_B", r.frequency_B},
          {"phase_difference", r.phase_difference},
          {"modulation_depth", r.modulation_depth},
          {"modulation_period", r.modulation_period},
          {"chirality", r.chirality},
          {"mean_s_z_A", r.mean_s_z_A},
          {"mean_s_z_B", r.mean_s_z_B},
          {"bloch_warning", r.bloch_warning},
          {"note", r.note}};
}

bool failed(const meanfield::AttractorReport& r) {
  return r.label == meanfield::Attractor::IntegrationFailure;
}

// ---------------------------------------------------------------------------

struct TrajectoryArgs {
  std::string solver = "meanfield";
  double t_end = 1000.0;
  double dt = 0.1;
  std::vector<double> ic;
  bool ic_random = false;
  bool conjugate_ic = false;
};

int run_trajectory(const Common& c, const TrajectoryArgs& a) {
  Resolved r = resolve(c);
  require_axes(r, 0, 0, "trajectory");
  if (!(a.t_end > 0.0) || !(a.dt > 0.0) || a.dt > a.t_end) throw ConfigError("trajectory: need 0 < dt <= t_end");
  const auto count = static_cast<std::size_t>(std::llround(a.t_end / a.dt)) + 1;
  const auto grid = ode::uniform_grid(0.0, a.t_end, count);
  ode::Tolerances tol;
  if (c.rtol) tol.rtol = *c.rtol;
  if (c.atol) tol.atol = *c.atol;
  r.config["t_end"] = a.t_end;
  r.config["dt"] = a.dt;
  r.config["solver"] = a.solver;
  const std::string path = csv_path(c, "trajectory");

  if (a.solver == "meanfield") {
    CouplingParams p = r.base.with_N(SpinCount::thermodynamic());
    require_physical(p);
    meanfield::MeanFieldState ic = meanfield::default_ic();
    if (a.ic_random) {
      std::mt19937_64 rng(c.seed);
      std::uniform_real_distribution<double> amp(0.05, 0.45), ph(-std::numbers::pi, std::numbers::pi), z(0.0, 0.8);
      ic.s_plus_A = std::polar(amp(rng), ph(rng));
      ic.s_plus_B = std::polar(amp(rng), ph(rng));
      ic.s_z_A = z(rng);
      ic.s_z_B = z(rng);
    } else if (!a.ic.empty()) {
      if (a.ic.size() != 6) throw ConfigError("--ic: expected 6 values re_A,im_A,re_B,im_B,s_z_A,s_z_B");
      ic = {cplx{a.ic[0], a.ic[1]}, cplx{a.ic[2], a.ic[3]}, a.ic[4], a.ic[5]};
    }
    if (a.conjugate_ic) ic = meanfield::pt_partner(ic);
    if (!ic.is_physical(1e-9)) throw ConfigError("--ic: state lies outside the Bloch ball");
    r.config["ic"] = {ic.s_plus_A.real(), ic.s_plus_A.imag(), ic.s_plus_B.real(), ic.s_plus_B.imag(), ic.s_z_A,
                      ic.s_z_B};
    meanfield::Trajectory tr;
    try {
      tr = meanfield::integrate(ic, p, a.t_end, grid, tol);
    } catch (const ode::StiffnessError& e) {
      std::cerr << "trajectory: " << e.what() << '\n';
      return exit_point_failures;
    }
    io::CsvTable t({"t", "s_plus_A_re", "s_plus_A_im", "s_plus_B_re", "s_plus_B_im", "s_z_A", "s_z_B", "phase_A",
                    "phase_B"});
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
      const auto& s = tr.states[i];
      t.add({tr.t[i], s.s_plus_A.real(), s.s_plus_A.imag(), s.s_plus_B.real(), s.s_plus_B.imag(), s.s_z_A, s.s_z_B,
             std::arg(s.s_plus_A), std::arg(s.s_plus_B)});
    }
    t.write(path);
    const auto opt = classify_options(c);
    const auto rep = meanfield::classify(p, ic, opt);
    io::write_sidecar(path, "trajectory", r.config, {{"rtol", tol.rtol}, {"atol", tol.atol}, {"classify", opt.to_json()}},
                      {{"classification", report_json(rep)}, {"bloch_warning", tr.bloch_warning}});
    return failed(rep) ? finish(c, 1, "trajectory") : exit_ok;
  }
  if (a.solver == "cumulant2") {
    require_physical(r.base);
    if (r.base.N.is_thermodynamic() || r.base.N.value() < 2) throw ConfigError("--N: cumulant2 needs a finite N >= 2");
    auto ic = cumulant::default_ic();
    if (a.conjugate_ic) ic = ic.conjugated();
    const auto tr = cumulant::c2_integrate(ic, r.base, a.t_end, grid, tol);
    io::CsvTable t({"t", "s_z_A", "s_z_B", "pp_AA", "pp_BB", "pp_AB_re", "pp_AB_im", "zz_AA", "zz_BB", "zz_AB"});
    for (std::size_t i = 0; i < tr.t.size(); ++i) {
      const auto& s = tr.states[i];
      t.add({tr.t[i], s.s_z_A, s.s_z_B, s.pp_AA, s.pp_BB, s.pp_AB.real(), s.pp_AB.imag(), s.zz_AA, s.zz_BB, s.zz_AB});
    }
    t.write(path);
    io::write_sidecar(path, "trajectory", r.config, {{"rtol", tol.rtol}, {"atol", tol.atol}},
                      {{"final_state", cumulant::to_json(tr.final_state)}});
    return exit_ok;
  }
  throw ConfigError("--solver: expected 'meanfield' or 'cumulant2', got '" + a.solver + "'");
}

// ---------------------------------------------------------------------------

int run_phase_diagram(const Common& c, bool partner) {
  Resolved r = resolve(c);
  require_axes(r, 2, 2, "phase-diagram");
  const auto opt = classify_options(c);
  r.config["partner"] = partner;
  const auto d =
      meanfield::phase_diagram(r.base, r.axes[0], r.axes[1], meanfield::default_ic(), partner, opt, c.workers);
  const std::string xs(to_string(r.axes[0].param)), ys(to_string(r.axes[1].param));
  io::CsvTable t({"ix", "iy", xs, ys, "label", "frequency_A", "frequency_B", "phase_difference", "modulation_depth",
                  "chirality", "partner_label", "partner_chirality", "both_chiralities", "note"});
  std::size_t failures = 0;
  std::map<std::string, std::size_t> counts;
  const std::size_t nx = r.axes[0].grid.count;
  for (std::size_t k = 0; k < d.points.size(); ++k) {
    const auto& pt = d.points[k];
    const auto& rep = pt.report;
    failures += failed(rep) || (pt.partner && failed(*pt.partner));
    ++counts[std::string(to_string(rep.label))];
    t.add({k % nx, k / nx, pt.x, pt.y, std::string(to_string(rep.label)), rep.frequency_A, rep.frequency_B,
           rep.phase_difference, rep.modulation_depth, rep.chirality,
           pt.partner ? std::string(to_string(pt.partner->label)) : std::string(),
           pt.partner ? pt.partner->chirality : 0, pt.both_chiralities, rep.note});
  }
  const std::string path = csv_path(c, "phase-diagram");
  t.write(path);
  io::write_sidecar(path, "phase-diagram", r.config, opt.to_json(), {{"label_counts", counts}, {"failures", failures}});
  return finish(c, failures, "phase-diagram");
}

// ---------------------------------------------------------------------------

int run_hysteresis(const Common& c, double dwell_transient, double dwell_window) {
  Resolved r = resolve(c);
  require_axes(r, 1, 1, "hysteresis");
  require_physical(r.base);
  meanfield::HysteresisOptions opt;
  opt.swept = r.axes[0].param;
  opt.path = r.axes[0].grid;
  opt.dwell = classify_options(c);
  opt.dwell.transient = dwell_transient;
  opt.dwell.window = dwell_window;
  r.config["dwell_transient"] = dwell_transient;
  r.config["dwell_window"] = dwell_window;
  const auto steps = meanfield::hysteresis_sweep(r.base, meanfield::default_ic(), opt);
  io::CsvTable t({"step", "direction", std::string(to_string(opt.swept)), "label", "frequency_A", "frequency_B",
                  "phase_difference", "modulation_depth", "chirality"});
  std::size_t failures = 0;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    failures += s.report.label == meanfield::Attractor::IntegrationFailure;
    t.add({i, s.direction > 0 ? "up" : "down", s.value, std::string(to_string(s.report.label)), s.report.frequency_A,
           s.report.frequency_B, s.report.phase_difference, s.report.modulation_depth, s.report.chirality});
  }
  const std::string path = csv_path(c, "hysteresis");
  t.write(path);
  io::write_sidecar(path, "hysteresis", r.config, opt.dwell.to_json(), {{"failures", failures}});
  return finish(c, failures, "hysteresis");
}

// ---------------------------------------------------------------------------

struct CorrelatorRow {
  std::string solver;
  long long N = 0;
  std::optional<exact::CorrelatorSet> exact;
  std::optional<cumulant::SteadyResult> c2;
  double residual = 0.0;
  std::string error;
};

std::vector<long long> parse_n_list(const std::string& text) {
  std::vector<long long> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long n = std::stoll(item, &used);
      if (used != item.size() || n < 1) throw std::invalid_argument("bad");
      out.push_back(n);
    } catch (const std::exception&) {
      throw ConfigError("--n-list: bad entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--n-list: empty");
  return out;
}

int run_correlators_vs_n(const Common& c, const std::string& n_list, int exact_max) {
  Resolved r = resolve(c);
  require_axes(r, 0, 0, "correlators-vs-n");
  require_physical(r.base);
  const auto ns = parse_n_list(n_list);
  r.config["n_list"] = ns;
  r.config["exact_max"] = exact_max;
  struct Job {
    bool exact;
    long long N;
  };
  std::vector<Job> jobs;
  for (long long n : ns)
    if (n >= 2) jobs.push_back({false, n});
  for (long long n : ns)
    if (n <= exact_max) jobs.push_back({true, n});
  const auto sopt = steady_options(c);
  const auto rows = parallel_map<CorrelatorRow>(
      jobs.size(),
      [&](std::size_t i) {
        CorrelatorRow row;
        row.N = jobs[i].N;
        row.solver = jobs[i].exact ? "exact" : "cumulant2";
        const CouplingParams p = r.base.with_N(SpinCount::finite(row.N));
        try {
          if (jobs[i].exact) {
            const auto rho = exact::steady_state(exact::build_liouvillian_pi(p, static_cast<int>(row.N)));
            row.exact = exact::correlators(rho);
            row.residual = rho.residual;
          } else {
            row.c2 = cumulant::c2_steady(p, cumulant::default_ic(), sopt);
            row.residual = row.c2->residual;
          }
        } catch (const std::exception& e) {
          row.error = e.what();
        }
        return row;
      },
      c.workers);
  io::CsvTable t({"solver", "N", "s_z_A", "s_z_B", "pp_AA", "pp_BB", "pp_AB_re", "pp_AB_im", "zz_AB", "quad_re",
                  "quad_im", "averaged", "residual", "error"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::size_t failures = 0;
  for (const auto& row : rows) {
    if (!row.error.empty()) {
      ++failures;
      t.add({row.solver, row.N, nan, nan, nan, nan, nan, nan, nan, nan, nan, false, nan, row.error});
    } else if (row.exact) {
      const auto& e = *row.exact;
      const cplx q = e.quad.value_or(cplx{nan, nan});
      t.add({row.solver, row.N, e.s_z_A, e.s_z_B, e.pp_AA.value_or(nan), e.pp_BB.value_or(nan), e.pp_AB.real(),
             e.pp_AB.imag(), e.zz_AB, q.real(), q.imag(), false, row.residual, ""});
    } else {
      const auto& s = row.c2->state;
      t.add({row.solver, row.N, s.s_z_A, s.s_z_B, s.pp_AA, s.pp_BB, s.pp_AB.real(), s.pp_AB.imag(), s.zz_AB, nan, nan,
             row.c2->averaged, row.residual, ""});
    }
  }
  const std::string path = csv_path(c, "correlators-vs-n");
  t.write(path);
  io::write_sidecar(path, "correlators-vs-n", r.config,
                    {{"c2_residual_tol", sopt.residual_tol}, {"rtol", sopt.tol.rtol}, {"atol", sopt.tol.atol}},
                    {{"failures", failures}});
  return finish(c, failures, "correlators-vs-n");
}

// ---------------------------------------------------------------------------

int run_exact_grid(const Common& c, const std::string& export_stem) {
  Resolved r = resolve(c);
  require_axes(r, 0, 2, "exact-grid");
  if (r.base.N.is_thermodynamic()) throw ConfigError("--N: exact-grid needs a finite N");
  const int N = static_cast<int>(r.base.N.value());
  if (!export_stem.empty() && !r.axes.empty()) throw ConfigError("--export-rho: only valid for a single point");
  const Axis none{Param::kappa, GridSpec{r.base.kappa, r.base.kappa, 1}};
  const Axis ax = r.axes.size() > 0 ? r.axes[0] : none;
  const Axis ay = r.axes.size() > 1 ? r.axes[1] : none;
  const std::size_t nx = ax.grid.count, ny = ay.grid.count;
  struct Cell {
    double x = 0.0, y = 0.0;
    std::optional<exact::CorrelatorSet> c;
    double residual = 0.0, gap = 0.0, min_eig = 0.0;
    std::string error;
  };
  // Exact solves are memory-bound; default to one worker unless asked.
  const std::size_t workers = c.workers == 0 ? 1 : c.workers;
  const auto cells = parallel_map<Cell>(
      nx * ny,
      [&](std::size_t k) {
        Cell cell;
        CouplingParams p = r.base;
        cell.x = ax.grid.at(k % nx);
        cell.y = ay.grid.at(k / nx);
        set_param(p, ax.param, cell.x);
        set_param(p, ay.param, cell.y);
        if (!p.is_physical()) {
          cell.error = "Unphysical";
          return cell;
        }
        try {
          const auto rho = exact::steady_state(exact::build_liouvillian_pi(p, N));
          cell.c = exact::correlators(rho);
          cell.residual = rho.residual;
          cell.gap = rho.gap;
          cell.min_eig = rho.min_eigenvalue;
          if (!export_stem.empty()) exact::export_density_matrix(rho, export_stem);
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
        return cell;
      },
      workers);
  const std::string xs = r.axes.size() > 0 ? std::string(to_string(ax.param)) : "x";
  const std::string ys = r.axes.size() > 1 ? std::string(to_string(ay.param)) : "y";
  io::CsvTable t({xs, ys, "s_z_A", "s_z_B", "pp_AA", "pp_BB", "pp_AB_re", "pp_AB_im", "quad_re", "quad_im", "zz_AB",
                  "residual", "gap", "min_eigenvalue", "error"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::size_t failures = 0;
  for (const auto& cell : cells) {
    if (!cell.c) {
      failures += cell.error != "Unphysical";
      t.add({cell.x, cell.y, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, nan, cell.error});
      continue;
    }
    const auto& e = *cell.c;
    const cplx q = e.quad.value_or(cplx{nan, nan});
    t.add({cell.x, cell.y, e.s_z_A, e.s_z_B, e.pp_AA.value_or(nan), e.pp_BB.value_or(nan), e.pp_AB.real(),
           e.pp_AB.imag(), q.real(), q.imag(), e.zz_AB, cell.residual, cell.gap, cell.min_eig, ""});
  }
  const std::string path = csv_path(c, "exact-grid");
  t.write(path);
  const exact::SteadyStateOptions so;
  io::write_sidecar(path, "exact-grid", r.config, {{"degeneracy_tol", so.degeneracy_tol}},
                    {{"failures", failures}, {"basis", "dicke"}, {"sector", "balanced"}});
  return finish(c, failures, "exact-grid");
}

// ---------------------------------------------------------------------------

struct SpectrumArgs {
  std::string omega = "-4:4:2561";
  std::string source = "A";
  std::string method = "auto";
  double tau_max = 2000.0;
  double dtau = 0.02;
  bool allow_window = false;
};

int run_spectrum(const Common& c, const SpectrumArgs& a) {
  Resolved r = resolve(c);
  require_axes(r, 0, 0, "spectrum");
  require_physical(r.base);
  if (r.base.N.is_thermodynamic() || r.base.N.value() < 2) throw ConfigError("--N: spectrum needs a finite N >= 2");
  const GridSpec og = parse_grid(a.omega);
  if (a.source != "A" && a.source != "B") throw ConfigError("--source: expected A or B");
  if (a.method != "auto" && a.method != "resolvent" && a.method != "quadrature" && a.method != "coevolved")
    throw ConfigError("--method: expected auto, resolvent, quadrature or coevolved");
  if (!(a.tau_max > 0.0) || !(a.dtau > 0.0)) throw ConfigError("--tau-max/--dtau must be positive");
  const spectra::Source src = a.source == "A" ? spectra::Source::A : spectra::Source::B;
  const auto omega = og.values();
  r.config["omega"] = a.omega;
  r.config["source"] = a.source;
  r.config["method"] = a.method;
  r.config["tau_max"] = a.tau_max;
  r.config["dtau"] = a.dtau;
  r.config["allow_window"] = a.allow_window;

  const auto sopt = steady_options(c);
  cumulant::SteadyResult st;
  try {
    st = cumulant::c2_steady(r.base, cumulant::default_ic(), sopt);
  } catch (const cumulant::NonConvergenceError& e) {
    std::cerr << "spectrum: " << e.what() << '\n';
    return exit_point_failures;
  }
  std::string method = a.method;
  if (method == "auto") method = st.averaged ? "coevolved" : "resolvent";
  spectra::EvolveOptions eo;
  eo.tau_max = a.tau_max / r.base.kappa;
  eo.dtau = a.dtau / r.base.kappa;
  spectra::Spectrum s;
  try {
    if (method == "resolvent" || method == "quadrature") {
      const auto m = spectra::regression_matrix(r.base, st.state.s_z_A, st.state.s_z_B);
      const auto c0 = spectra::initial_correlations(st.state, src);
      if (method == "resolvent")
        s = spectra::spectral_density(m, c0, omega, src);
      else
        s = spectra::spectral_density(spectra::evolve_correlations(c0, m, src, eo), omega,
                                      {.allow_window = a.allow_window});
    } else {
      s = spectra::spectral_density(spectra::evolve_correlations_coevolved(st.final_state, r.base, src, eo), omega,
                                    {.allow_window = a.allow_window});
    }
  } catch (const std::exception& e) {
    std::cerr << "spectrum: " << e.what() << '\n';
    return exit_point_failures;
  }
  const std::string pa = std::string("P_A") + a.source, pb = std::string("P_B") + a.source;
  io::CsvTable t({"omega", pa + "_re", pa + "_im", pa + "_abs_norm", pb + "_re", pb + "_im"});
  double peak = 0.0;
  for (const auto& v : s.P_A) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < s.omega.size(); ++i)
    t.add({s.omega[i], s.P_A[i].real(), s.P_A[i].imag(), peak > 0.0 ? std::abs(s.P_A[i]) / peak : 0.0,
           s.P_B[i].real(), s.P_B[i].imag()});
  const std::string path = csv_path(c, "spectrum");
  t.write(path);
  const auto comb = spectra::detect_comb(s);
  json results{{"method", method},
               {"windowed", s.windowed},
               {"window_rate", s.window_rate},
               {"tail_ratio", s.tail_ratio},
               {"steady_state", cumulant::to_json(st.state)},
               {"steady_averaged", st.averaged},
               {"steady_period", st.period},
               {"comb", {{"present", comb.comb}, {"spacing", comb.spacing}, {"sidebands", comb.sidebands},
                         {"peaks", comb.peak_omegas}}}};
  if (og.count > 1 && std::abs(og.lo + og.hi) < 1e-12) results["mirror_asymmetry"] = spectra::mirror_asymmetry(s.P_A);
  io::write_sidecar(path, "spectrum", r.config,
                    {{"c2_residual_tol", sopt.residual_tol}, {"rtol", eo.tol.rtol}, {"atol", eo.tol.atol}}, results);
  return exit_ok;
}

// ---------------------------------------------------------------------------

int run_ep_scan(const Common& c, const std::string& populations, double disc_tol) {
  Resolved r = resolve(c);
  require_axes(r, 1, 1, "ep-scan");
  spectra::PopulationSource pop;
  if (populations == "meanfield") {
    pop = spectra::meanfield_populations(classify_options(c));
  } else if (populations == "cumulant2") {
    if (r.base.N.is_thermodynamic() || r.base.N.value() < 2) throw ConfigError("--N: cumulant2 populations need N >= 2");
    pop = spectra::cumulant_populations(steady_options(c));
  } else {
    throw ConfigError("--populations: expected meanfield or cumulant2");
  }
  r.config["populations"] = populations;
  r.config["disc_tol"] = disc_tol;
  spectra::EpScan scan;
  try {
    scan = spectra::exceptional_point_scan(r.base, r.axes[0].param, r.axes[0].grid, pop, disc_tol, c.workers);
  } catch (const std::exception& e) {
    std::cerr << "ep-scan: " << e.what() << '\n';
    return exit_point_failures;
  }
  io::CsvTable t({std::string(to_string(r.axes[0].param)), "lambda1_re", "lambda1_im", "lambda2_re", "lambda2_im",
                  "condition", "s_z_A", "s_z_B", "discriminant_re", "discriminant_im"});
  for (const auto& p : scan.points)
    t.add({p.value, p.lambda1.real(), p.lambda1.imag(), p.lambda2.real(), p.lambda2.imag(), p.condition, p.s_z_A,
           p.s_z_B, p.discriminant.real(), p.discriminant.imag()});
  json eps = json::array();
  for (const auto& e : scan.eps)
    eps.push_back({{"value", e.value},
                   {"lambda1", {e.lambda1.real(), e.lambda1.imag()}},
                   {"lambda2", {e.lambda2.real(), e.lambda2.imag()}},
                   {"discriminant", std::abs(e.discriminant)},
                   {"diabolic", e.diabolic}});
  const std::string path = csv_path(c, "ep-scan");
  t.write(path);
  io::write_sidecar(path, "ep-scan", r.config, {{"disc_tol", disc_tol}}, {{"exceptional_points", eps}});
  return exit_ok;
}

// ---------------------------------------------------------------------------

int run_pt_check(const Common& c, bool dicke) {
  Resolved r = resolve(c);
  require_axes(r, 0, 0, "pt-check");
  require_physical(r.base);
  const int N = r.base.N.is_thermodynamic() ? 2 : static_cast<int>(r.base.N.value());
  if (!dicke && N > 3) throw ConfigError("--N: the product-space check supports N <= 3 (use --dicke)");
  r.config["params"]["N"] = N;
  r.config["dicke"] = dicke;
  const auto res = exact::pt_check(r.base, N, dicke);
  const bool symmetric = res.residual < 1e-12;
  json out{{"residual", res.residual},
           {"conjugation_defect", res.conjugation_defect},
           {"pt_symmetric", symmetric},
           {"expected_symmetric", r.base.pt_symmetric()}};
  std::cout << out.dump() << '\n';
  if (!c.out.empty()) {
    io::CsvTable t({"residual", "conjugation_defect", "pt_symmetric"});
    t.add({res.residual, res.conjugation_defect, symmetric});
    t.write(c.out);
    io::write_sidecar(c.out, "pt-check", r.config, {{"symmetric_below", 1e-12}}, out);
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------

int run_stability_boundary(const Common& c, double vplus_ratio, double seed_amp, double v_tol) {
  Resolved r = resolve(c);
  require_axes(r, 0, 1, "stability-boundary");
  GridSpec vm{0.0, 3.0, 31};
  if (!r.axes.empty()) {
    if (r.axes[0].param != Param::V_minus_re) throw ConfigError("stability-boundary: only --vminus may be gridded");
    vm = r.axes[0].grid;
  }
  if (!(seed_amp > 0.0) || !(v_tol > 0.0)) throw ConfigError("--seed-amplitude and --v-tol must be positive");
  if (std::abs(vplus_ratio) > 1.0) throw ConfigError("--vplus-ratio: |V_plus/V| must not exceed 1");
  r.config["vminus"] = {{"lo", vm.lo}, {"hi", vm.hi}, {"count", vm.count}};
  r.config["vplus_ratio"] = vplus_ratio;
  r.config["seed_amplitude"] = seed_amp;
  r.config["v_tol"] = v_tol;
  const auto opt = classify_options(c);
  const auto pts = meanfield::stability_boundary(r.base, vm, vplus_ratio, seed_amp, v_tol, opt, c.workers);
  io::CsvTable t({"V_minus", "V_critical", "V_formula", "V_linear", "deviation"});
  double worst = 0.0;
  for (const auto& b : pts) {
    const double dev = std::abs(b.V_critical - b.V_formula);
    worst = std::max(worst, dev);
    t.add({b.V_minus, b.V_critical, b.V_formula, b.V_linear, dev});
  }
  const std::string path = csv_path(c, "stability-boundary");
  t.write(path);
  io::write_sidecar(path, "stability-boundary", r.config, opt.to_json(),
                    {{"max_deviation", worst},
                     {"assumption", "V_plus = " + io::format_number(vplus_ratio) + " * V along the scan"}});
  return exit_ok;
}

// ---------------------------------------------------------------------------

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config with 'params' and optional 'waveguide'");
  for (const auto& [param, flag] : param_flags)
    sub->add_option(flag, c.param_text[param], std::string(to_string(param)) + " (value or lo:hi:count)");
  sub->add_option("--N", c.N_text, "spins per species, or 'inf'");
  sub->add_option("-o,--out", c.out, "output CSV path");
  sub->add_option("--workers", c.workers, "worker threads (0 = all cores)");
  sub->add_option("--seed", c.seed, "seed for randomized initial conditions");
  sub->add_flag("--keep-going", c.keep_going, "exit 0 despite per-point failures");
  sub->add_option("--rtol", c.rtol, "ODE relative tolerance");
  sub->add_option("--atol", c.atol, "ODE absolute tolerance");
  sub->add_option("--transient", c.transient, "classifier transient (1/kappa)");
  sub->add_option("--window", c.window, "classifier analysis window (1/kappa)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonreciprocal synchronization of two spin ensembles"};
  app.set_version_flag("--version", std::string(nrsync::version));
  app.require_subcommand(1);
  Common c;
  std::function<int()> action;

  TrajectoryArgs ta;
  auto* tr = app.add_subcommand("trajectory", "integrate one trajectory");
  add_common(tr, c);
  tr->add_option("--solver", ta.solver, "meanfield or cumulant2");
  tr->add_option("--t-end", ta.t_end);
  tr->add_option("--dt", ta.dt, "sampling interval");
  tr->add_option("--ic", ta.ic, "re_A,im_A,re_B,im_B,s_z_A,s_z_B")->delimiter(',');
  tr->add_flag("--ic-random", ta.ic_random, "random ic drawn with --seed");
  tr->add_flag("--conjugate-ic", ta.conjugate_ic, "use the PT partner of the ic");
  tr->callback([&] { action = [&] { return run_trajectory(c, ta); }; });

  bool partner = false;
  auto* pd = app.add_subcommand("phase-diagram", "classify attractors over two gridded parameters");
  add_common(pd, c);
  pd->add_flag("--partner", partner, "also classify from the PT-partner ic");
  pd->callback([&] { action = [&] { return run_phase_diagram(c, partner); }; });

  double dwell_t = 300.0, dwell_w = 300.0;
  auto* hy = app.add_subcommand("hysteresis", "up/down ramp over delta or V_minus_im");
  add_common(hy, c);
  hy->add_option("--dwell", dwell_t, "settling time per step");
  hy->add_option("--dwell-window", dwell_w, "analysis window per step");
  hy->callback([&] { action = [&] { return run_hysteresis(c, dwell_t, dwell_w); }; });

  std::string n_list = "2,5,10,20,50,100,200,500,1000";
  int exact_max = 0;
  auto* cn = app.add_subcommand("correlators-vs-n", "steady correlators against N");
  add_common(cn, c);
  cn->add_option("--n-list", n_list, "comma-separated spin counts");
  cn->add_option("--exact-max", exact_max, "also solve exactly for N up to this value");
  cn->callback([&] { action = [&] { return run_correlators_vs_n(c, n_list, exact_max); }; });

  std::string export_stem;
  auto* eg = app.add_subcommand("exact-grid", "exact steady states on a parameter grid");
  add_common(eg, c);
  eg->add_option("--export-rho", export_stem, "write the density matrix (single point)");
  eg->callback([&] { action = [&] { return run_exact_grid(c, export_stem); }; });

  SpectrumArgs sa;
  auto* sp = app.add_subcommand("spectrum", "spectral density from the regression equations");
  add_common(sp, c);
  sp->add_option("--omega", sa.omega, "frequency grid lo:hi:count");
  sp->add_option("--source", sa.source, "A or B");
  sp->add_option("--method", sa.method, "auto, resolvent, quadrature or coevolved");
  sp->add_option("--tau-max", sa.tau_max);
  sp->add_option("--dtau", sa.dtau);
  sp->add_flag("--allow-window", sa.allow_window, "apply an exponential window to undecayed tails");
  sp->callback([&] { action = [&] { return run_spectrum(c, sa); }; });

  std::string populations = "meanfield";
  double disc_tol = 1e-8;
  auto* ep = app.add_subcommand("ep-scan", "exceptional points of the regression matrix");
  add_common(ep, c);
  ep->add_option("--populations", populations, "meanfield or cumulant2");
  ep->add_option("--disc-tol", disc_tol);
  ep->callback([&] { action = [&] { return run_ep_scan(c, populations, disc_tol); }; });

  bool dicke = false;
  auto* pt = app.add_subcommand("pt-check", "compare the Liouvillian with its PT transform");
  add_common(pt, c);
  pt->add_flag("--dicke", dicke, "use the permutation-invariant basis");
  pt->callback([&] { action = [&] { return run_pt_check(c, dicke); }; });

  double ratio = 1.0, seed_amp = 1e-4, v_tol = 1e-3;
  auto* sb = app.add_subcommand("stability-boundary", "incoherent to coherent threshold in V against V_minus");
  add_common(sb, c);
  sb->add_option("--vplus-ratio", ratio, "V_plus / V along the scan");
  sb->add_option("--seed-amplitude", seed_amp, "initial |s+|");
  sb->add_option("--v-tol", v_tol, "bisection tolerance in V");
  sb->callback([&] { action = [&] { return run_stability_boundary(c, ratio, seed_amp, v_tol); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }
  try {
    return action();
  } catch (const nrsync::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const nrsync::PhysicalityError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_point_failures;
  }
}
