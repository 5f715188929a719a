#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "nrsync/exact.hpp"

using namespace nrsync;
using namespace nrsync::exact;

namespace {

CouplingParams random_params(std::mt19937_64& rng, bool pt_symmetric = false) {
  std::uniform_real_distribution<double> u(-2.0, 2.0), v(0.2, 3.0), k(0.5, 1.5);
  CouplingParams p;
  p.kappa = k(rng);
  p.V = v(rng);
  p.V_plus = std::clamp(u(rng), -p.V, p.V);
  p.V_minus = pt_symmetric ? cplx(u(rng), 0.0) : cplx(u(rng), u(rng));
  p.delta = pt_symmetric ? 0.0 : u(rng);
  return p;
}

using Dense = Eigen::MatrixXcd;

Dense kron(const Dense& a, const Dense& b) {
  Dense out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Row-stacked vectorization: vec(A rho B) = (A kron B^T) vec(rho).
Dense lindblad_dense(const Dense& H, const std::vector<std::pair<double, Dense>>& jumps) {
  const Eigen::Index d = H.rows();
  const Dense I = Dense::Identity(d, d);
  Dense L = kron(cplx(0, -1) * H, I) + kron(I, cplx(0, 1) * H.transpose());
  for (const auto& [rate, J] : jumps) {
    const Dense JdJ = J.adjoint() * J;
    L += rate * (kron(J, J.conjugate()) - 0.5 * kron(JdJ, I) - 0.5 * kron(I, JdJ.transpose()));
  }
  return L;
}

/// Independent construction of the Liouvillian on the product space using
/// the explicit Lindblad form of the collective dissipation.
Dense oracle_liouvillian(const CouplingParams& p, int N) {
  const auto h = full_space(N);
  const Dense SmA(h->Sm_A), SmB(h->Sm_B), SzA(h->Sz_A), SzB(h->Sz_B);
  const Dense SpA = SmA.adjoint(), SpB = SmB.adjoint();
  const cplx i{0.0, 1.0};
  const Dense Hint = i * p.V_minus / (2.0 * N) * SpA * SmB;
  const Dense H = p.delta / 4.0 * (SzA - SzB) + Hint + Dense(Hint.adjoint());
  std::vector<std::pair<double, Dense>> jumps;
  const double sgn = p.V_plus < 0.0 ? -1.0 : 1.0;
  jumps.emplace_back(std::abs(p.V_plus) / N, SmA + sgn * SmB);
  jumps.emplace_back((p.V - std::abs(p.V_plus)) / N, SmA);
  jumps.emplace_back((p.V - std::abs(p.V_plus)) / N, SmB);
  for (int s = 0; s < N; ++s) {
    jumps.emplace_back(p.kappa, Dense(h->sm_A[s]).adjoint());
    jumps.emplace_back(p.kappa, Dense(h->sm_B[s]).adjoint());
  }
  return lindblad_dense(H, jumps);
}

/// Library matrix in the dense row-stacked layout (full space, all sector).
Dense to_dense(const SuperoperatorMatrix& m) {
  const int d = m.basis->space->dim;
  Dense out = Dense::Zero(static_cast<Eigen::Index>(d) * d, static_cast<Eigen::Index>(d) * d);
  for (int j = 0; j < m.L.outerSize(); ++j)
    for (SpMat::InnerIterator it(m.L, j); it; ++it) {
      const auto [r1, c1] = m.basis->elems[it.row()];
      const auto [r2, c2] = m.basis->elems[j];
      out(r1 * d + c1, r2 * d + c2) = it.value();
    }
  return out;
}

int dicke_index(const HilbertSpace& h, std::array<int, 4> label) {
  for (int s = 0; s < h.dim; ++s)
    if (h.labels[s] == label) return s;
  return -1;
}

DensityMatrix pure_diagonal(std::shared_ptr<const LiouvilleBasis> b, int state) {
  DensityMatrix rho;
  rho.basis = b;
  rho.values = Eigen::VectorXcd::Zero(b->size());
  rho.values[b->find(state, state)] = 1.0 / b->space->weight[b->space->block[state]];
  return rho;
}

}  // namespace

TEST(Dicke, DegeneracyCountsStates) {
  EXPECT_EQ(dicke_degeneracy(4, 4), 1.0);
  EXPECT_EQ(dicke_degeneracy(4, 2), 3.0);
  EXPECT_EQ(dicke_degeneracy(4, 0), 2.0);
  EXPECT_EQ(dicke_degeneracy(4, 1), 0.0);
  for (int N = 1; N <= 24; ++N) {
    double total = 0.0;
    for (int tj = N; tj >= 0; tj -= 2) total += (tj + 1) * dicke_degeneracy(N, tj);
    EXPECT_EQ(total, std::ldexp(1.0, N)) << "N = " << N;
  }
}

TEST(Assembly, MatchesDenseLindbladOracle) {
  std::mt19937_64 rng(21);
  for (int N = 1; N <= 2; ++N)
    for (int trial = 0; trial < 5; ++trial) {
      const auto p = random_params(rng);
      const Dense lib = to_dense(build_liouvillian_full(p, N));
      const Dense ref = oracle_liouvillian(p, N);
      EXPECT_LT((lib - ref).cwiseAbs().maxCoeff(), 1e-12) << "N = " << N;
    }
}

TEST(Assembly, CascadedFormEqualsStandard) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_params(rng);
    for (int N : {1, 2, 3}) {
      const auto a = build_liouvillian_full(p, N);
      const auto b = build_liouvillian_full(p, N, {.form = InterForm::cascaded});
      EXPECT_LT(max_abs_entry(SpMat(a.L - b.L)), 1e-12);
    }
    const auto a = build_liouvillian_pi(p, 5);
    const auto b = build_liouvillian_pi(p, 5, Sector::balanced, {.form = InterForm::cascaded});
    EXPECT_LT(max_abs_entry(SpMat(a.L - b.L)), 1e-12);
  }
}

TEST(Assembly, CollectiveLindbladIdentity) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_params(rng);
    for (const auto& basis : {make_basis(full_space(2), Sector::all), make_basis(dicke_space(4), Sector::all)}) {
      const SpMat a = collective_dissipation(*basis, p, false);
      const SpMat b = collective_dissipation(*basis, p, true);
      EXPECT_LT(max_abs_entry(SpMat(a - b)), 1e-12);
    }
  }
}

TEST(Assembly, DissipatorOfSumDecomposes) {
  const auto basis = make_basis(full_space(2), Sector::all);
  const auto& h = *basis->space;
  const SpMat o1 = h.Sm_A, o2 = SpMat(cplx(0.3, -0.8) * h.Sm_B);
  for (double s : {1.0, -1.0}) {
    SuperopBuilder lhs(*basis), rhs(*basis);
    lhs.dissipator(1.0, SpMat(o1 + s * o2));
    rhs.dissipator(1.0, o1);
    rhs.dissipator(1.0, o2);
    rhs.dissipator(s, o1, o2);
    rhs.dissipator(s, o2, o1);
    EXPECT_LT(max_abs_entry(SpMat(lhs.finish() - rhs.finish())), 1e-14);
  }
}

TEST(Assembly, TracePreserving) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_params(rng);
    EXPECT_LT(trace_defect(build_liouvillian_full(p, 3)), 1e-12);
    EXPECT_LT(trace_defect(build_liouvillian_pi(p, 7, Sector::all)), 1e-11);
    EXPECT_LT(trace_defect(build_liouvillian_pi(p, 8)), 1e-11);
  }
}

TEST(Assembly, HermiticityPreserving) {
  std::mt19937_64 rng(25);
  std::normal_distribution<double> g;
  const auto p = random_params(rng);
  const auto m = build_liouvillian_pi(p, 4, Sector::all);
  const auto& b = *m.basis;
  Eigen::VectorXcd rho(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) rho[i] = cplx(g(rng), g(rng));
  Eigen::VectorXcd herm = rho;
  for (std::size_t i = 0; i < b.size(); ++i) herm[i] = 0.5 * (rho[i] + std::conj(rho[b.find(b.elems[i].second, b.elems[i].first)]));
  const Eigen::VectorXcd out = m.L * herm;
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    worst = std::max(worst, std::abs(out[i] - std::conj(out[b.find(b.elems[i].second, b.elems[i].first)])));
  EXPECT_LT(worst, 1e-12);
}

TEST(Assembly, SectorViolationDetected) {
  const auto basis = make_basis(full_space(1), Sector::balanced);
  SuperopBuilder sb(*basis);
  EXPECT_THROW(sb.left(1.0, basis->space->Sm_A), std::logic_error);
}

TEST(SteadyState, SingleSpinRateEquation) {
  for (double V : {0.5, 2.0, 3.0})
    for (double kappa : {1.0, 0.7}) {
      CouplingParams p;
      p.kappa = kappa;
      p.V = V;
      const double expect = (kappa - V) / (kappa + V);
      for (const auto& m : {build_liouvillian_full(p, 1), build_liouvillian_pi(p, 1, Sector::all)}) {
        const auto c = correlators(steady_state(m));
        EXPECT_NEAR(c.s_z_A, expect, 1e-12);
        EXPECT_NEAR(c.s_z_B, expect, 1e-12);
        EXPECT_LT(std::abs(c.s_plus_A), 1e-14);
        EXPECT_LT(std::abs(c.pp_AB), 1e-14);
        EXPECT_FALSE(c.pp_AA.has_value());
      }
    }
}

TEST(SteadyState, PermutationInvariantMatchesFullSpace) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_params(rng);
    for (int N : {1, 2, 3}) {
      const auto full = steady_state(build_liouvillian_full(p, N));
      const auto pi = steady_state(build_liouvillian_pi(p, N));
      const auto cf = correlators(full), cs = site_correlators(full), cp = correlators(pi);
      EXPECT_LT(max_difference(cf, cp), 1e-8) << "N = " << N;
      EXPECT_LT(max_difference(cs, cp), 1e-8) << "N = " << N;
      EXPECT_EQ(cs.pp_AA.has_value(), cp.pp_AA.has_value());
    }
  }
}

TEST(SteadyState, BalancedSectorEqualsAllSector) {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 3; ++trial) {
    const auto p = random_params(rng);
    const auto a = correlators(steady_state(build_liouvillian_pi(p, 5, Sector::all)));
    const auto b = correlators(steady_state(build_liouvillian_pi(p, 5, Sector::balanced)));
    EXPECT_LT(max_difference(a, b), 1e-10);
  }
}

TEST(SteadyState, ResidualPositivityAndU1) {
  std::mt19937_64 rng(28);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_params(rng);
    const auto rho = steady_state(build_liouvillian_pi(p, 6, Sector::all));
    EXPECT_LT(rho.residual, 1e-10);
    EXPECT_GT(rho.min_eigenvalue, -1e-8);
    EXPECT_NEAR(rho.trace(), 1.0, 1e-12);
    const auto c = correlators(rho);
    EXPECT_LT(std::abs(c.s_plus_A), 1e-10);
    EXPECT_LT(std::abs(c.s_plus_B), 1e-10);
    EXPECT_LT(std::abs(c.plus_z_AB), 1e-10);
  }
}

TEST(SteadyState, RealUnderPtSymmetry) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_params(rng, true);
    const auto rho = steady_state(build_liouvillian_pi(p, 5));
    EXPECT_LT(rho.max_imag(), 1e-8);
    const auto c = correlators(rho);
    EXPECT_LT(std::abs(c.pp_AB.imag()), 1e-8);
    EXPECT_LT(std::abs(c.quad->imag()), 1e-8);
  }
  CouplingParams broken;
  broken.V = 2.0;
  broken.V_plus = 1.0;
  broken.V_minus = cplx(1.0, 0.8);
  EXPECT_GT(std::abs(correlators(steady_state(build_liouvillian_pi(broken, 4))).pp_AB.imag()), 1e-6);
}

TEST(SteadyState, AntagonisticCouplingDecorrelatesSpecies) {
  CouplingParams p;
  p.V = 2.0;
  p.V_minus = 2.0;
  const auto c = correlators(steady_state(build_liouvillian_pi(p, 6)));
  EXPECT_LT(std::abs(c.pp_AB), 1e-10);
}

TEST(SteadyState, DegenerateKernelReported) {
  const auto basis = make_basis(full_space(1), Sector::all);
  SuperopBuilder sb(*basis);
  // Pump on A only: any state of B is stationary.
  sb.dissipator(1.0, SpMat(basis->space->sm_A[0].adjoint()));
  const SuperoperatorMatrix m{sb.finish(), basis};
  EXPECT_THROW(steady_state(m), DegenerateKernelError);
  const SuperoperatorMatrix zero{SpMat(basis->size(), basis->size()), basis};
  EXPECT_THROW(steady_state(zero), DegenerateKernelError);
}

TEST(Basis, MemoryBudget) {
  try {
    make_basis(dicke_space(20), Sector::all, {.max_elements = 1000});
    FAIL() << "expected MemoryBudgetError";
  } catch (const MemoryBudgetError& e) {
    EXPECT_GT(e.attempted_dimension, 1000u);
  }
}

TEST(Correlators, ProductStateAllUp) {
  const auto b = make_basis(full_space(2), Sector::all);
  const auto rho = pure_diagonal(b, b->space->dim - 1);
  for (const auto& c : {correlators(rho), site_correlators(rho)}) {
    EXPECT_DOUBLE_EQ(c.s_z_A, 1.0);
    EXPECT_DOUBLE_EQ(c.s_z_B, 1.0);
    EXPECT_DOUBLE_EQ(*c.pp_AA, 0.0);
    EXPECT_DOUBLE_EQ(*c.zz_AA, 1.0);
    EXPECT_DOUBLE_EQ(c.zz_AB, 1.0);
  }
}

TEST(Correlators, DickeSymmetricSinglet) {
  // |j=1, m=0> on A (one excitation shared by two spins), B fully up.
  const auto b = make_basis(dicke_space(2), Sector::all);
  const int s = dicke_index(*b->space, {2, 0, 2, 2});
  ASSERT_GE(s, 0);
  const auto c = correlators(pure_diagonal(b, s));
  EXPECT_NEAR(*c.pp_AA, 0.5, 1e-15);
  EXPECT_NEAR(c.s_z_A, 0.0, 1e-15);
  EXPECT_NEAR(*c.zz_AA, -1.0, 1e-15);
  EXPECT_NEAR(*c.pp_BB, 0.0, 1e-15);
  // Same state on the product space: (|01> + |10>)/sqrt 2 on sites 0,1; sites 2,3 up.
  const auto f = make_basis(full_space(2), Sector::all);
  DensityMatrix rho;
  rho.basis = f;
  rho.values = Eigen::VectorXcd::Zero(f->size());
  for (int r : {0b1101, 0b1110})
    for (int col : {0b1101, 0b1110}) rho.values[f->find(r, col)] = 0.5;
  const auto cs = site_correlators(rho);
  EXPECT_NEAR(*cs.pp_AA, 0.5, 1e-15);
  EXPECT_LT(max_difference(cs, c), 1e-14);
}

TEST(Pt, ResidualVanishesExactlyOnSymmetricParams) {
  std::mt19937_64 rng(30);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_params(rng);
    if (coin(rng)) p.delta = 0.0;
    if (coin(rng)) p.V_minus = p.V_minus.real();
    for (bool dicke : {false, true}) {
      const auto r = pt_check(p, dicke ? 4 : 2, dicke);
      EXPECT_EQ(r.residual < 1e-12, p.pt_symmetric());
      EXPECT_LT(r.conjugation_defect, 1e-12);
    }
  }
}

TEST(Pt, NamedParameterSets) {
  CouplingParams p;
  p.V = 2.0;
  p.V_minus = 1.0;
  EXPECT_LT(pt_check(p, 2).residual, 1e-12);
  p.delta = 0.5;
  EXPECT_GT(pt_check(p, 2).residual, 1e-3);
  p.delta = 0.0;
  p.V_minus = cplx(0.0, 1.0);
  EXPECT_GT(pt_check(p, 2).residual, 1e-3);
}

TEST(Export, BinaryAndHeader) {
  CouplingParams p;
  p.V = 2.0;
  p.V_plus = 1.0;
  const auto rho = steady_state(build_liouvillian_pi(p, 3));
  const auto dir = std::filesystem::temp_directory_path() / "nrsync_export";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "rho").string();
  export_density_matrix(rho, stem);
  EXPECT_EQ(std::filesystem::file_size(stem + ".bin"), 16u * rho.basis->size());
  std::ifstream f(stem + ".json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j["N"], 3);
  EXPECT_EQ(j["count"], rho.basis->size());
  std::ifstream bin(stem + ".bin", std::ios::binary);
  double re = 0.0, im = 0.0;
  bin.read(reinterpret_cast<char*>(&re), 8);
  bin.read(reinterpret_cast<char*>(&im), 8);
  EXPECT_EQ(re, rho.values[0].real());
  EXPECT_EQ(im, rho.values[0].imag());
  std::filesystem::remove_all(dir);
}
