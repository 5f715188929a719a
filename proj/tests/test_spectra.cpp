#include <gtest/gtest.h>

#include <random>

#include "nrsync/spectra.hpp"

using namespace nrsync;
using namespace nrsync::spectra;

namespace {

CouplingParams params(double V, double vp, cplx vm, std::optional<long long> N = {}, double delta = 0.0) {
  CouplingParams p;
  p.V = V;
  p.V_plus = vp;
  p.V_minus = vm;
  p.delta = delta;
  if (N) p.N = SpinCount::finite(*N);
  return p;
}

Mat2 expm(const Mat2& M, double t) {
  Eigen::ComplexEigenSolver<Mat2> es(M);
  return es.eigenvectors() * (es.eigenvalues() * t).array().exp().matrix().asDiagonal() *
         es.eigenvectors().inverse();
}

double argmax_omega(const Spectrum& s) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < s.P_A.size(); ++i)
    if (std::abs(s.P_A[i]) > std::abs(s.P_A[best])) best = i;
  return s.omega[best];
}

Spectrum synthetic(const std::vector<std::pair<double, double>>& peaks) {
  Spectrum s;
  s.omega = omega_grid(-2.0, 2.0, 4001);
  for (double w : s.omega) {
    cplx v = 0.0;
    for (auto [w0, a] : peaks) v += a * 0.01 / (0.0001 + (w - w0) * (w - w0));
    s.P_A.push_back(v);
    s.P_B.push_back(0.0);
  }
  return s;
}

}  // namespace

TEST(Regression, ClosedFormEigenvalues) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(-2.0, 2.0), z(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const auto p = params(2.0, std::clamp(u(rng), -2.0, 2.0), u(rng));
    const double s = z(rng);
    const auto m = regression_matrix(p, s, s);
    const auto [vab, vba] = directional_from_symmetric(p);
    const cplx root = s * std::sqrt(vab * vba);
    const cplx e1 = 0.5 * (p.V * s - p.kappa + root), e2 = 0.5 * (p.V * s - p.kappa - root);
    const auto [l1, l2] = m.eigenvalues();
    EXPECT_LT(std::min(std::abs(l1 - e1) + std::abs(l2 - e2), std::abs(l1 - e2) + std::abs(l2 - e1)), 1e-12);
  }
}

TEST(Regression, AntagonisticGivesConjugatePair) {
  const auto m = regression_matrix(params(2.0, 0.0, 1.3), 0.4, 0.4);
  const auto [l1, l2] = m.eigenvalues();
  EXPECT_GT(std::abs(l1.imag()), 1e-3);
  EXPECT_NEAR(std::abs(l1 - std::conj(l2)), 0.0, 1e-14);
}

TEST(Regression, FiniteNDiagonal) {
  const auto p = params(2.0, 0.5, 0.7, 10, 0.3);
  const auto m = regression_matrix(p, 0.4, -0.2);
  EXPECT_NEAR(std::abs(m.M(0, 0) - 0.5 * cplx((0.4 * 9.0 - 1.0) * 0.2 - 1.0, 0.3)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(m.M(1, 1) - 0.5 * cplx((-0.2 * 9.0 - 1.0) * 0.2 - 1.0, -0.3)), 0.0, 1e-15);
  EXPECT_THROW(regression_matrix(p, 1.5, 0.0), std::invalid_argument);
}

TEST(Regression, DiscriminantZeroMeansCollinearEigenvectors) {
  // Real couplings, equal populations: the discriminant 4 s^2 (V+^2 - V-^2) vanishes at V- = V+.
  const double vp = 0.8, s = 0.5;
  const auto ep = regression_matrix(params(2.0, vp, vp + 1e-9), s, s);
  EXPECT_LT(std::abs(ep.discriminant()), 1e-8);
  EXPECT_GT(ep.eigenvector_condition(), 1e3);
  EXPECT_FALSE(is_diabolic(ep));
  const auto away = regression_matrix(params(2.0, vp, 0.0), s, s);
  EXPECT_GT(std::abs(away.discriminant()), 0.1);
  EXPECT_LT(away.eigenvector_condition(), 10.0);
}

TEST(Regression, DiagonalDegeneracyIsDiabolic) {
  const auto m = regression_matrix(params(2.0, 0.0, 0.0), 0.3, 0.3);
  EXPECT_LT(std::abs(m.discriminant()), 1e-15);
  EXPECT_TRUE(is_diabolic(m));
}

TEST(Evolve, ConstantMatrixMatchesExponential) {
  const auto p = params(2.0, 0.6, 1.1, {}, 0.2);
  const auto m = regression_matrix(p, 0.1, -0.3);
  const Vec2 c0(cplx(0.2, 0.05), cplx(-0.1, 0.3));
  const auto cv = evolve_correlations(c0, m, Source::A, {.tau_max = 30.0, .dtau = 0.1});
  for (std::size_t i = 0; i < cv.tau.size(); i += 10) {
    const Vec2 ref = expm(m.M, cv.tau[i]) * c0;
    EXPECT_LT((cv.c[i] - ref).cwiseAbs().maxCoeff(), 1e-8) << "tau = " << cv.tau[i];
  }
}

TEST(Evolve, DivergenceReported) {
  const auto m = regression_matrix(params(2.0, 0.0, 0.0), 1.0, 1.0);  // eigenvalue (V - kappa)/2 > 0
  EXPECT_THROW(evolve_correlations(Vec2(1.0, 0.0), m, Source::A), DivergenceError);
}

TEST(Evolve, StartsFromSteadyMoments) {
  const auto p = params(2.0, 1.0, 0.5, 50);
  const auto st = cumulant::c2_steady(p);
  const Vec2 c0 = initial_correlations(st.state, Source::A);
  EXPECT_EQ(c0[0], cplx(st.state.pp_AA, 0.0));
  EXPECT_EQ(c0[1], std::conj(st.state.pp_AB));
  const auto m = regression_matrix(p, st.state.s_z_A, st.state.s_z_B);
  EXPECT_EQ(evolve_correlations(c0, m, Source::A, {.tau_max = 1.0}).c[0], c0);
  EXPECT_EQ(evolve_correlations_coevolved(st.state, p, Source::A, {.tau_max = 1.0}).c[0], c0);
  const Vec2 cb = initial_correlations(st.state, Source::B);
  EXPECT_EQ(cb[0], st.state.pp_AB);
  EXPECT_EQ(cb[1], cplx(st.state.pp_BB, 0.0));
}

TEST(Evolve, CoevolvedAtFixedPointEqualsConstant) {
  const auto p = params(2.0, 1.0, 0.5, 50);
  const auto st = cumulant::c2_steady(p);
  ASSERT_TRUE(st.converged);
  const auto m = regression_matrix(p, st.state.s_z_A, st.state.s_z_B);
  const Vec2 c0 = initial_correlations(st.state, Source::A);
  const auto a = evolve_correlations(c0, m, Source::A, {.tau_max = 20.0});
  const auto b = evolve_correlations_coevolved(st.state, p, Source::A, {.tau_max = 20.0});
  for (std::size_t i = 0; i < a.c.size(); ++i) EXPECT_LT((a.c[i] - b.c[i]).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Evolve, RealUnderPt) {
  const auto p = params(2.0, 1.0, 1.5, 100);
  const auto st = cumulant::c2_steady(p);
  const auto m = regression_matrix(p, st.state.s_z_A, st.state.s_z_B);
  const auto cv = evolve_correlations(initial_correlations(st.state, Source::A), m, Source::A, {.tau_max = 100.0});
  for (const auto& c : cv.c) EXPECT_LT(c.imag().cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Spectrum, FastPathEqualsQuadrature) {
  for (const auto& p : {params(2.0, 1.0, 0.5, 100), params(2.0, 0.0, 1.0, 100), params(2.0, 1.0, 0.3, 60, 0.4)}) {
    const auto st = cumulant::c2_steady(p);
    const auto m = regression_matrix(p, st.state.s_z_A, st.state.s_z_B);
    const Vec2 c0 = initial_correlations(st.state, Source::A);
    const auto om = omega_grid(-3.0, 3.0, 241);
    const auto fast = spectral_density(m, c0, om);
    const auto quad = spectral_density(evolve_correlations(c0, m, Source::A), om);
    double peak = 0.0, diff = 0.0;
    for (std::size_t i = 0; i < om.size(); ++i) {
      peak = std::max(peak, std::abs(fast.P_A[i]));
      diff = std::max({diff, std::abs(fast.P_A[i] - quad.P_A[i]), std::abs(fast.P_B[i] - quad.P_B[i])});
    }
    EXPECT_LT(diff / peak, 1e-6);
  }
}

TEST(Spectrum, MirrorSymmetricUnderPt) {
  const auto p = params(2.0, 1.0, 1.2, 100);
  const auto st = cumulant::c2_steady(p);
  const auto m = regression_matrix(p, st.state.s_z_A, st.state.s_z_B);
  const auto s = spectral_density(m, initial_correlations(st.state, Source::A), omega_grid(-4.0, 4.0, 801));
  EXPECT_LT(mirror_asymmetry(s.P_A), 1e-8);
}

TEST(Spectrum, DetuningBreaksMirrorSymmetry) {
  const auto p = params(2.0, 1.0, 0.0, 100, 0.4);
  const auto st = cumulant::c2_steady(p);
  const auto m = regression_matrix(p, st.state.s_z_A, st.state.s_z_B);
  const auto s = spectral_density(m, initial_correlations(st.state, Source::A), omega_grid(-4.0, 4.0, 801));
  EXPECT_GT(mirror_asymmetry(s.P_A), 1e-3);
}

TEST(Spectrum, PeakPositionsByRegime) {
  auto spectrum = [](const CouplingParams& p) {
    const auto st = cumulant::c2_steady(p);
    const auto m = regression_matrix(p, st.state.s_z_A, st.state.s_z_B);
    return spectral_density(m, initial_correlations(st.state, Source::A), omega_grid(-3.0, 3.0, 1201));
  };
  EXPECT_LT(std::abs(argmax_omega(spectrum(params(2.0, 1.0, 0.0, 100)))), 0.01);
  EXPECT_GT(std::abs(argmax_omega(spectrum(params(2.0, 0.0, 1.0, 100)))), 0.05);
}

TEST(Spectrum, UndecayedTailNeedsWindow) {
  const auto m = regression_matrix(params(2.0, 0.0, 0.0), 0.5, 0.5);  // decay rate 0.25
  const Vec2 c0(1.0, 0.0);
  const auto cv = evolve_correlations(c0, m, Source::A, {.tau_max = 20.0});
  const auto om = omega_grid(-1.0, 1.0, 21);
  EXPECT_THROW(spectral_density(cv, om), UndecayedTailError);
  const auto s = spectral_density(cv, om, {.allow_window = true});
  EXPECT_TRUE(s.windowed);
  EXPECT_GT(s.window_rate, 0.0);
}

TEST(Comb, SyntheticLadders) {
  EXPECT_TRUE(detect_comb(synthetic({{0.0, 1.0}, {0.3, 0.1}, {-0.3, 0.1}, {0.6, 0.01}, {-0.6, 0.01}})).comb);
  const auto r = detect_comb(synthetic({{0.0, 1.0}, {0.3, 0.1}, {-0.3, 0.1}, {0.6, 0.01}, {-0.6, 0.01}}));
  EXPECT_NEAR(r.spacing, 0.3, 2e-3);
  EXPECT_EQ(r.sidebands, 4u);
  EXPECT_FALSE(detect_comb(synthetic({{0.0, 1.0}})).comb);
  EXPECT_FALSE(detect_comb(synthetic({{0.0, 1.0}, {0.3, 0.1}, {-0.3, 0.1}})).comb);
  // Sidebands below the relative floor do not count.
  EXPECT_FALSE(detect_comb(synthetic({{0.0, 1.0}, {0.3, 1e-5}, {-0.3, 1e-5}, {0.6, 1e-5}})).comb);
}

TEST(EpScan, LocatesAnalyticExceptionalPoint) {
  const PopulationSource fixed = [](const CouplingParams&) { return std::pair{0.5, 0.5}; };
  const auto scan = exceptional_point_scan(params(2.0, 0.73, 0.0), Param::V_minus_re, parse_grid("0:2:21"), fixed);
  ASSERT_EQ(scan.eps.size(), 1u);
  EXPECT_NEAR(scan.eps[0].value, 0.73, 1e-6);
  EXPECT_LT(std::abs(scan.eps[0].discriminant), 1e-8);
  EXPECT_FALSE(scan.eps[0].diabolic);
  EXPECT_EQ(scan.points.size(), 21u);
}

TEST(EpScan, EmptyWhenNoCrossing) {
  const PopulationSource fixed = [](const CouplingParams&) { return std::pair{0.5, 0.5}; };
  const auto scan = exceptional_point_scan(params(2.0, 1.5, 0.0), Param::V_minus_re, parse_grid("0:1:11"), fixed);
  EXPECT_TRUE(scan.eps.empty());
}

TEST(EpScan, CovariantUnderUnitRescaling) {
  const auto pop = meanfield_populations();
  const auto a = exceptional_point_scan(params(2.0, 1.0, 0.0), Param::V_minus_re, parse_grid("1.5:2:6"), pop);
  auto q = params(4.0, 2.0, 0.0);
  q.kappa = 2.0;
  const auto b = exceptional_point_scan(q, Param::V_minus_re, parse_grid("3:4:6"), pop);
  ASSERT_EQ(a.eps.size(), 1u);
  ASSERT_EQ(b.eps.size(), 1u);
  EXPECT_NEAR(b.eps[0].value, 2.0 * a.eps[0].value, 1e-4);
  // Eigenvalues at the EP sit at the critical point; compare rates away from it.
  EXPECT_NEAR(b.points[0].lambda1.real(), 2.0 * a.points[0].lambda1.real(), 1e-4);
  EXPECT_NEAR(b.points[0].lambda2.real(), 2.0 * a.points[0].lambda2.real(), 1e-4);
}

TEST(OutputFields, VacuumIsDark) {
  SpinMoments m;
  m.N = 12;
  m.s_z_A = m.s_z_B = -1.0;
  const auto o = output_field_correlations(m, {.g1 = 0.5, .g2 = 0.7, .p1 = 1, .p2 = -1});
  EXPECT_EQ(o.intensity_1, 0.0);
  EXPECT_EQ(o.intensity_2, 0.0);
  EXPECT_EQ(o.cross, cplx(0.0, 0.0));
}

TEST(OutputFields, SingleSpeciesIdentity) {
  // g2 = 0 and only species A excited: <S+_A S-_A> from the normalized moments.
  SpinMoments m;
  m.N = 12;
  m.s_z_A = 0.3;
  m.pp_AA = 0.05;
  m.s_z_B = -1.0;
  const double g1 = 0.4;
  const auto o = output_field_correlations(m, {.g1 = g1, .g2 = 0.0});
  EXPECT_NEAR(o.intensity_1, g1 * g1 * (12.0 * 1.3 / 2.0 + 12.0 * 11.0 * 0.05), 1e-12);
}

TEST(OutputFields, CollectiveMomentsMatchExactOperators) {
  const auto p = params(2.0, 2.0, 0.0);
  const auto rho = exact::steady_state(exact::build_liouvillian_pi(p, 4));
  const auto& h = *rho.basis->space;
  const auto m = SpinMoments::from(exact::correlators(rho));
  EXPECT_NEAR(m.collective_AA(), rho.expect(exact::SpMat(h.Sm_A.adjoint() * h.Sm_A)).real(), 1e-12);
  EXPECT_NEAR(std::abs(m.collective_AB() - rho.expect(exact::SpMat(h.Sm_A.adjoint() * h.Sm_B))), 0.0, 1e-12);
  // a1_out = g1 (S-_A + p1 S-_B) evaluated directly.
  for (int p1 : {1, -1}) {
    const exact::SpMat a1 = 0.5 * (h.Sm_A + static_cast<double>(p1) * h.Sm_B);
    const double direct = rho.expect(exact::SpMat(a1.adjoint() * a1)).real();
    const auto o = output_field_correlations(m, {.g1 = 0.5, .g2 = 0.3, .p1 = p1});
    EXPECT_NEAR(o.intensity_1, direct, 1e-12);
  }
  const auto plus = output_field_correlations(m, {.g1 = 0.5, .p1 = 1});
  const auto minus = output_field_correlations(m, {.g1 = 0.5, .p1 = -1});
  EXPECT_GT(m.pp_AB.real(), 0.0);
  EXPECT_GT(plus.intensity_1, minus.intensity_1);
}
