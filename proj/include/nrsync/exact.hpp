#pragma once

// Exact Lindblad steady states.
//
// Two Hilbert-space representations share one superoperator builder:
//  * the full product space of 2N spins (oracle, N <= 3), and
//  * the permutation-invariant (Dicke) space, where a density matrix is
//    block diagonal in the total spins (j_A, j_B) and each block stands for
//    d_N(j_A) d_N(j_B) identical copies.
//
// A density matrix is stored as a list of (row, col) state pairs plus one
// complex coefficient per pair. Superoperators act on that coefficient
// vector. For the full space with every pair present this is the row-major
// vectorization vec(rho)[r * dim + c] = rho(r, c).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/UmfPackSupport>

#include "core.hpp"
#include "json.hpp"

namespace nrsync::exact {

using SpMat = Eigen::SparseMatrix<cplx>;
using SpMatRow = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<cplx>;

class MemoryBudgetError : public std::runtime_error {
 public:
  MemoryBudgetError(const std::string& what, std::size_t attempted)
      : std::runtime_error(what), attempted_dimension(attempted) {}
  std::size_t attempted_dimension;
};

class DegenerateKernelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Number of ways N spins-1/2 couple to total spin j (twice-j given).
inline double dicke_degeneracy(int N, int two_j) {
  if (N == 0) return two_j == 0 ? 1.0 : 0.0;
  if (two_j < 0 || two_j > N || (N - two_j) % 2 != 0) return 0.0;
  const double lg = std::lgamma(N + 1.0) + std::log(two_j + 1.0) - std::lgamma((N - two_j) / 2 + 1.0) -
                    std::lgamma((N + two_j) / 2 + 2.0);
  return std::round(std::exp(lg));
}

struct HilbertSpace {
  enum class Kind { full, dicke };
  Kind kind = Kind::full;
  int N = 1;
  int dim = 0;

  std::vector<int> block;       // block id of each state
  std::vector<int> charge;      // excitation count (full) or 2 m_A + 2 m_B (dicke)
  std::vector<double> weight;   // multiplicity of each block
  std::vector<std::array<int, 4>> labels;  // dicke: (2j_A, 2m_A, 2j_B, 2m_B)

  // Collective operators S- = sum_i sigma-_i and S^z = sum_i sigma^z_i.
  SpMat Sm_A, Sm_B, Sz_A, Sz_B;
  // Full space only: single-site lowering operators.
  std::vector<SpMat> sm_A, sm_B;
};

/// Product space of 2N spins; site s < N belongs to A, site N + s to B.
/// Bit s of a basis index set means spin s is up.
inline std::shared_ptr<const HilbertSpace> full_space(int N) {
  if (N < 1 || N > 4) throw std::invalid_argument("full product space supports 1 <= N <= 4");
  auto h = std::make_shared<HilbertSpace>();
  h->kind = HilbertSpace::Kind::full;
  h->N = N;
  h->dim = 1 << (2 * N);
  h->block.assign(h->dim, 0);
  h->weight = {1.0};
  h->charge.resize(h->dim);
  for (int s = 0; s < h->dim; ++s) h->charge[s] = __builtin_popcount(static_cast<unsigned>(s));

  auto lowering = [&](int site) {
    std::vector<Triplet> t;
    for (int s = 0; s < h->dim; ++s)
      if (s >> site & 1) t.emplace_back(s & ~(1 << site), s, 1.0);
    SpMat m(h->dim, h->dim);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  };
  auto pauli_z = [&](int site) {
    std::vector<Triplet> t;
    for (int s = 0; s < h->dim; ++s) t.emplace_back(s, s, (s >> site & 1) ? 1.0 : -1.0);
    SpMat m(h->dim, h->dim);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  };
  h->Sm_A = SpMat(h->dim, h->dim);
  h->Sm_B = SpMat(h->dim, h->dim);
  h->Sz_A = SpMat(h->dim, h->dim);
  h->Sz_B = SpMat(h->dim, h->dim);
  for (int i = 0; i < N; ++i) {
    h->sm_A.push_back(lowering(i));
    h->sm_B.push_back(lowering(N + i));
    h->Sm_A += h->sm_A.back();
    h->Sm_B += h->sm_B.back();
    h->Sz_A += pauli_z(i);
    h->Sz_B += pauli_z(N + i);
  }
  return h;
}

/// Dicke space: direct sum over (j_A, j_B) of the (2j_A+1)(2j_B+1) multiplets.
inline std::shared_ptr<const HilbertSpace> dicke_space(int N) {
  if (N < 1) throw std::invalid_argument("dicke space requires N >= 1");
  auto h = std::make_shared<HilbertSpace>();
  h->kind = HilbertSpace::Kind::dicke;
  h->N = N;
  std::vector<int> js;
  for (int tj = N; tj >= 0; tj -= 2) js.push_back(tj);
  int b = 0;
  for (int tjA : js) {
    for (int tjB : js) {
      h->weight.push_back(dicke_degeneracy(N, tjA) * dicke_degeneracy(N, tjB));
      for (int tmA = tjA; tmA >= -tjA; tmA -= 2)
        for (int tmB = tjB; tmB >= -tjB; tmB -= 2) {
          h->labels.push_back({tjA, tmA, tjB, tmB});
          h->block.push_back(b);
          h->charge.push_back(tmA + tmB);
        }
      ++b;
    }
  }
  h->dim = static_cast<int>(h->labels.size());
  std::unordered_map<std::uint64_t, int> index;
  auto key = [](const std::array<int, 4>& l) {
    std::uint64_t k = 0;
    for (int v : l) k = k * 4096 + static_cast<std::uint64_t>(v + 2048);
    return k;
  };
  for (int s = 0; s < h->dim; ++s) index[key(h->labels[s])] = s;

  std::vector<Triplet> mA, mB, zA, zB;
  for (int s = 0; s < h->dim; ++s) {
    const auto& l = h->labels[s];
    zA.emplace_back(s, s, static_cast<double>(l[1]));
    zB.emplace_back(s, s, static_cast<double>(l[3]));
    // J-|j,m> = sqrt((j+m)(j-m+1)) |j,m-1>
    if (l[1] > -l[0]) {
      const double j = l[0] / 2.0, m = l[1] / 2.0;
      mA.emplace_back(index.at(key({l[0], l[1] - 2, l[2], l[3]})), s, std::sqrt((j + m) * (j - m + 1)));
    }
    if (l[3] > -l[2]) {
      const double j = l[2] / 2.0, m = l[3] / 2.0;
      mB.emplace_back(index.at(key({l[0], l[1], l[2], l[3] - 2})), s, std::sqrt((j + m) * (j - m + 1)));
    }
  }
  auto build = [&](std::vector<Triplet>& t) {
    SpMat m(h->dim, h->dim);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  };
  h->Sm_A = build(mA);
  h->Sm_B = build(mB);
  h->Sz_A = build(zA);
  h->Sz_B = build(zB);
  return h;
}

/// Which density-matrix elements are kept.
enum class Sector {
  all,       // every pair within a block
  balanced,  // additionally equal excitation number on both sides (holds the steady state)
};

struct LiouvilleBasis {
  std::shared_ptr<const HilbertSpace> space;
  Sector sector = Sector::all;
  std::vector<std::pair<int, int>> elems;
  std::unordered_map<std::uint64_t, int> index;

  std::size_t size() const { return elems.size(); }
  int find(int r, int c) const {
    const auto it = index.find(static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(space->dim) + c);
    return it == index.end() ? -1 : it->second;
  }
  /// Trace weight of element i (zero off the diagonal).
  double trace_weight(std::size_t i) const {
    const auto [r, c] = elems[i];
    return r == c ? space->weight[space->block[r]] : 0.0;
  }
};

struct ExactOptions {
  std::size_t max_elements = 4'000'000;
};

inline std::shared_ptr<const LiouvilleBasis> make_basis(std::shared_ptr<const HilbertSpace> space, Sector sector,
                                                        const ExactOptions& opt = {}) {
  auto b = std::make_shared<LiouvilleBasis>();
  b->space = space;
  b->sector = sector;
  // Count first so that an oversized request fails before allocating.
  std::vector<int> block_size;
  for (int s = 0; s < space->dim; ++s) {
    if (space->block[s] >= static_cast<int>(block_size.size())) block_size.resize(space->block[s] + 1, 0);
    ++block_size[space->block[s]];
  }
  std::size_t upper = 0;
  for (int n : block_size) upper += static_cast<std::size_t>(n) * n;
  if (sector == Sector::all && upper > opt.max_elements)
    throw MemoryBudgetError("Liouville space of " + std::to_string(upper) + " elements exceeds the budget of " +
                                std::to_string(opt.max_elements),
                            upper);
  std::vector<std::vector<int>> members(block_size.size());
  for (int s = 0; s < space->dim; ++s) members[space->block[s]].push_back(s);
  for (const auto& m : members)
    for (int r : m)
      for (int c : m) {
        if (sector == Sector::balanced && space->charge[r] != space->charge[c]) continue;
        b->elems.emplace_back(r, c);
        if (b->elems.size() > opt.max_elements)
          throw MemoryBudgetError("Liouville space exceeds the budget of " + std::to_string(opt.max_elements) +
                                      " elements",
                                  b->elems.size());
      }
  b->index.reserve(b->elems.size());
  for (std::size_t i = 0; i < b->elems.size(); ++i)
    b->index[static_cast<std::uint64_t>(b->elems[i].first) * static_cast<std::uint64_t>(space->dim) +
             b->elems[i].second] = static_cast<int>(i);
  return b;
}

// ---------------------------------------------------------------------------

/// Accumulates superoperator terms as triplets over a LiouvilleBasis.
class SuperopBuilder {
 public:
  explicit SuperopBuilder(const LiouvilleBasis& basis) : b_(basis) {}

  /// rho -> coeff * A rho B
  void sandwich(cplx coeff, const SpMat& A, const SpMat& B) {
    const SpMatRow Br(B);
    for (std::size_t src = 0; src < b_.size(); ++src) {
      const auto [k, l] = b_.elems[src];
      for (SpMat::InnerIterator ia(A, k); ia; ++ia)
        for (SpMatRow::InnerIterator ib(Br, l); ib; ++ib) add(ia.row(), ib.col(), src, coeff * ia.value() * ib.value());
    }
  }
  /// rho -> coeff * A rho
  void left(cplx coeff, const SpMat& A) {
    for (std::size_t src = 0; src < b_.size(); ++src) {
      const auto [k, l] = b_.elems[src];
      for (SpMat::InnerIterator ia(A, k); ia; ++ia) add(ia.row(), l, src, coeff * ia.value());
    }
  }
  /// rho -> coeff * rho B
  void right(cplx coeff, const SpMat& B) {
    const SpMatRow Br(B);
    for (std::size_t src = 0; src < b_.size(); ++src) {
      const auto [k, l] = b_.elems[src];
      for (SpMatRow::InnerIterator ib(Br, l); ib; ++ib) add(k, ib.col(), src, coeff * ib.value());
    }
  }
  /// coeff * D[o1, o2] with D[o1,o2] rho = o1 rho o2^dag - (o2^dag o1 rho + rho o2^dag o1)/2
  void dissipator(cplx coeff, const SpMat& o1, const SpMat& o2) {
    const SpMat o2d = o2.adjoint();
    const SpMat prod = o2d * o1;
    sandwich(coeff, o1, o2d);
    left(-0.5 * coeff, prod);
    right(-0.5 * coeff, prod);
  }
  void dissipator(cplx coeff, const SpMat& o) { dissipator(coeff, o, o); }
  /// -i [H, rho]
  void hamiltonian(const SpMat& H) {
    left(cplx{0.0, -1.0}, H);
    right(cplx{0.0, 1.0}, H);
  }
  /// Raw entry; `target` and `src` are basis indices.
  void add_entry(std::size_t target, std::size_t src, cplx v) { t_.emplace_back(target, src, v); }

  SpMat finish() {
    SpMat m(b_.size(), b_.size());
    m.setFromTriplets(t_.begin(), t_.end());
    t_.clear();
    return m;
  }

 private:
  void add(int r, int c, std::size_t src, cplx v) {
    if (v == cplx{}) return;
    const int tgt = b_.find(r, c);
    if (tgt < 0) throw std::logic_error("superoperator term leaves the chosen Liouville sector");
    t_.emplace_back(tgt, src, v);
  }

  const LiouvilleBasis& b_;
  std::vector<Triplet> t_;
};

namespace detail {

/// <j_r, M - sigma; 1/2, sigma | J, M>, all arguments doubled.
inline double cg_half(int tjr, int tJ, int tM, int tsigma) {
  if (std::abs(tM - tsigma) > tjr || std::abs(tM) > tJ) return 0.0;
  const double den = 2.0 * (tjr + 1);
  if (tJ == tjr + 1) return tsigma > 0 ? std::sqrt((tjr + tM + 1) / den) : std::sqrt((tjr - tM + 1) / den);
  if (tJ == tjr - 1) return tsigma > 0 ? -std::sqrt((tjr - tM + 1) / den) : std::sqrt((tjr + tM + 1) / den);
  return 0.0;
}

/// Coefficient of |J', M+1><J', M'+1| in sum_i sigma+_i (|J,M><J,M'| (x) 1_K) sigma-_i,
/// obtained by splitting one spin off the N-spin multiplet.
inline double pump_coefficient(int N, int tJp, int tJ, int tM, int tMp) {
  if (std::abs(tM + 2) > tJp || std::abs(tMp + 2) > tJp) return 0.0;
  double acc = 0.0;
  for (int tjr : {tJ - 1, tJ + 1}) {
    if (tjr < 0 || tjr > N - 1 || std::abs(tjr - tJp) != 1) continue;
    const double f1 = cg_half(tjr, tJp, tM + 2, +1) * cg_half(tjr, tJ, tM, -1);
    const double f2 = cg_half(tjr, tJp, tMp + 2, +1) * cg_half(tjr, tJ, tMp, -1);
    acc += dicke_degeneracy(N - 1, tjr) * f1 * f2;
  }
  return acc * N / dicke_degeneracy(N, tJp);
}

}  // namespace detail

/// coeff * sum_i D[sigma+_i] on species `a` (0 = A, 1 = B) of a Dicke-space basis.
inline void add_local_pump_dicke(SuperopBuilder& sb, const LiouvilleBasis& basis, int a, double coeff) {
  const HilbertSpace& h = *basis.space;
  const int N = h.N;
  std::unordered_map<std::uint64_t, int> state_index;
  auto key = [](const std::array<int, 4>& l) {
    std::uint64_t k = 0;
    for (int v : l) k = k * 4096 + static_cast<std::uint64_t>(v + 2048);
    return k;
  };
  for (int s = 0; s < h.dim; ++s) state_index[key(h.labels[s])] = s;
  const int jo = 2 * a, mo = 2 * a + 1;
  for (std::size_t src = 0; src < basis.size(); ++src) {
    const auto [r, c] = basis.elems[src];
    const auto& lr = h.labels[r];
    const auto& lc = h.labels[c];
    const int tJ = lr[jo], tM = lr[mo], tMp = lc[mo];
    // Anticommutator: sum_i sigma-_i sigma+_i = N/2 - J_z.
    sb.add_entry(src, src, -0.5 * coeff * (N - 0.5 * (tM + tMp)));
    for (int tJp : {tJ - 2, tJ, tJ + 2}) {
      if (tJp < 0 || tJp > N) continue;
      const double cf = detail::pump_coefficient(N, tJp, tJ, tM, tMp);
      if (cf == 0.0) continue;
      auto nr = lr, nc = lc;
      nr[jo] = tJp, nr[mo] = tM + 2;
      nc[jo] = tJp, nc[mo] = tMp + 2;
      const int tr = state_index.at(key(nr)), tc = state_index.at(key(nc));
      const int tgt = basis.find(tr, tc);
      if (tgt < 0) throw std::logic_error("local pump leaves the chosen Liouville sector");
      sb.add_entry(static_cast<std::size_t>(tgt), src, coeff * cf);
    }
  }
}

// ---------------------------------------------------------------------------

enum class InterForm {
  standard,  // coherent H_inter plus symmetric dissipative cross terms
  cascaded,  // commutator form in terms of the directional couplings
};

struct AssemblyOptions {
  InterForm form = InterForm::standard;
  /// Relabel A <-> B and reverse the sign of H_inter.
  bool pt_transform = false;
};

struct SuperoperatorMatrix {
  SpMat L;
  std::shared_ptr<const LiouvilleBasis> basis;
};

namespace detail {

struct SpeciesOps {
  const SpMat* Sm;
  const SpMat* Sz;
  const std::vector<SpMat>* sites;
  int index;
};

inline std::pair<SpeciesOps, SpeciesOps> species(const HilbertSpace& h, bool swapped) {
  SpeciesOps A{&h.Sm_A, &h.Sz_A, &h.sm_A, 0}, B{&h.Sm_B, &h.Sz_B, &h.sm_B, 1};
  if (swapped) std::swap(A, B);
  return {A, B};
}

}  // namespace detail

/// Intra- plus interspecies collective dissipation, either as the sum of the
/// generalized dissipators or as the equivalent explicit Lindblad form with
/// jump operator S-_A + sign(V+) S-_B.
inline SpMat collective_dissipation(const LiouvilleBasis& basis, const CouplingParams& p, bool lindblad_form) {
  const HilbertSpace& h = *basis.space;
  const double invN = 1.0 / h.N;
  SuperopBuilder sb(basis);
  if (!lindblad_form) {
    sb.dissipator(p.V * invN, h.Sm_A);
    sb.dissipator(p.V * invN, h.Sm_B);
    sb.dissipator(p.V_plus * invN, h.Sm_A, h.Sm_B);
    sb.dissipator(p.V_plus * invN, h.Sm_B, h.Sm_A);
  } else {
    const double sgn = p.V_plus < 0.0 ? -1.0 : 1.0;
    const SpMat jump = h.Sm_A + sgn * h.Sm_B;
    sb.dissipator(std::abs(p.V_plus) * invN, jump);
    sb.dissipator((p.V - std::abs(p.V_plus)) * invN, h.Sm_A);
    sb.dissipator((p.V - std::abs(p.V_plus)) * invN, h.Sm_B);
  }
  return sb.finish();
}

/// Full Liouvillian on the given basis. The space's N is used; params.N is ignored.
inline SuperoperatorMatrix assemble(std::shared_ptr<const LiouvilleBasis> basis, const CouplingParams& p,
                                    const AssemblyOptions& opt = {}) {
  p.validate();
  const HilbertSpace& h = *basis->space;
  const double invN = 1.0 / h.N;
  const auto [A, B] = detail::species(h, opt.pt_transform);
  const SpMat SpA = A.Sm->adjoint(), SpB = B.Sm->adjoint();
  SuperopBuilder sb(*basis);

  // H0 = delta (S^z_A - S^z_B) / 4
  if (p.delta != 0.0) sb.hamiltonian(SpMat(0.25 * p.delta * (*A.Sz - *B.Sz)));

  const double h_sign = opt.pt_transform ? -1.0 : 1.0;
  if (opt.form == InterForm::standard) {
    // H_inter = i V-/(2N) S+_A S-_B - i conj(V-)/(2N) S+_B S-_A
    const cplx c = h_sign * cplx{0.0, 1.0} * p.V_minus * 0.5 * invN;
    const SpMat Hint = SpMat(c * (SpA * *B.Sm)) + SpMat(std::conj(c) * (SpB * *A.Sm));
    sb.hamiltonian(Hint);
    sb.dissipator(p.V_plus * invN, *A.Sm, *B.Sm);
    sb.dissipator(p.V_plus * invN, *B.Sm, *A.Sm);
  } else {
    // -(conj(V_AB)[S+_B, S-_A rho] + V_AB [rho S+_A, S-_B]) / 2N, and A <-> B with V_BA.
    // Under the PT relabelling the sign flip of H_inter maps V- -> -V-.
    CouplingParams q = p;
    q.V_minus *= h_sign;
    const auto d = directional_from_symmetric(q);
    auto cascade = [&](cplx v, const SpMat& Sm_src, const SpMat& Sp_src, const SpMat& Sm_dst, const SpMat& Sp_dst) {
      const double s = -0.5 * invN;
      // conj(v) (S+_dst S-_src rho - S-_src rho S+_dst)
      sb.left(s * std::conj(v), SpMat(Sp_dst * Sm_src));
      sb.sandwich(-s * std::conj(v), Sm_src, Sp_dst);
      // v (rho S+_src S-_dst - S-_dst rho S+_src)
      sb.right(s * v, SpMat(Sp_src * Sm_dst));
      sb.sandwich(-s * v, Sm_dst, Sp_src);
    };
    cascade(d.V_AB, *A.Sm, SpA, *B.Sm, SpB);
    cascade(d.V_BA, *B.Sm, SpB, *A.Sm, SpA);
  }
  sb.dissipator(p.V * invN, *A.Sm);
  sb.dissipator(p.V * invN, *B.Sm);

  if (h.kind == HilbertSpace::Kind::full) {
    for (const auto* ops : {A.sites, B.sites})
      for (const SpMat& sm : *ops) sb.dissipator(p.kappa, SpMat(sm.adjoint()));
  } else {
    add_local_pump_dicke(sb, *basis, A.index, p.kappa);
    add_local_pump_dicke(sb, *basis, B.index, p.kappa);
  }
  return {sb.finish(), std::move(basis)};
}

inline SuperoperatorMatrix build_liouvillian_full(const CouplingParams& p, int N, const AssemblyOptions& opt = {},
                                                  Sector sector = Sector::all) {
  if (N < 1 || N > 3) throw std::invalid_argument("full-space Liouvillian supports N in {1, 2, 3}");
  return assemble(make_basis(full_space(N), sector), p, opt);
}

inline SuperoperatorMatrix build_liouvillian_pi(const CouplingParams& p, int N, Sector sector = Sector::balanced,
                                                const AssemblyOptions& opt = {}, const ExactOptions& eo = {}) {
  return assemble(make_basis(dicke_space(N), sector, eo), p, opt);
}

/// Largest |sum_i w_i L_ij| over columns j: the trace functional must annihilate L.
inline double trace_defect(const SuperoperatorMatrix& m) {
  Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(m.L.cols());
  for (int j = 0; j < m.L.outerSize(); ++j)
    for (SpMat::InnerIterator it(m.L, j); it; ++it) acc[j] += m.basis->trace_weight(it.row()) * it.value();
  return acc.cwiseAbs().maxCoeff();
}

inline double max_abs_entry(const SpMat& m) {
  double v = 0.0;
  for (int j = 0; j < m.outerSize(); ++j)
    for (SpMat::InnerIterator it(m, j); it; ++it) v = std::max(v, std::abs(it.value()));
  return v;
}

// ---------------------------------------------------------------------------

struct DensityMatrix {
  std::shared_ptr<const LiouvilleBasis> basis;
  Eigen::VectorXcd values;
  double residual = 0.0;        // max |L rho|
  double gap = 0.0;             // estimated slowest nonzero relaxation rate
  double min_eigenvalue = 0.0;  // most negative eigenvalue over blocks

  int N() const { return basis->space->N; }
  /// Expectation value tr(rho O).
  cplx expect(const SpMat& O) const {
    const HilbertSpace& h = *basis->space;
    cplx acc = 0.0;
    for (std::size_t i = 0; i < basis->size(); ++i) {
      const auto [r, c] = basis->elems[i];
      const cplx o = O.coeff(c, r);
      if (o != cplx{}) acc += h.weight[h.block[r]] * values[i] * o;
    }
    return acc;
  }
  double trace() const {
    double t = 0.0;
    for (std::size_t i = 0; i < basis->size(); ++i) t += basis->trace_weight(i) * values[i].real();
    return t;
  }
  /// Dense matrix of one block (full space: the whole density matrix).
  Eigen::MatrixXcd block_matrix(int blk, std::vector<int>* states = nullptr) const {
    const HilbertSpace& h = *basis->space;
    std::vector<int> st;
    std::vector<int> pos(h.dim, -1);
    for (int s = 0; s < h.dim; ++s)
      if (h.block[s] == blk) pos[s] = static_cast<int>(st.size()), st.push_back(s);
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(st.size(), st.size());
    for (std::size_t i = 0; i < basis->size(); ++i) {
      const auto [r, c] = basis->elems[i];
      if (h.block[r] == blk) m(pos[r], pos[c]) = values[i];
    }
    if (states) *states = std::move(st);
    return m;
  }
  /// Largest |Im| over stored entries.
  double max_imag() const { return values.imag().cwiseAbs().maxCoeff(); }
};

namespace detail {

inline double min_block_eigenvalue(const DensityMatrix& rho) {
  double lo = std::numeric_limits<double>::infinity();
  const int nblocks = static_cast<int>(rho.basis->space->weight.size());
  for (int b = 0; b < nblocks; ++b) {
    const Eigen::MatrixXcd m = rho.block_matrix(b);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m, Eigen::EigenvaluesOnly);
    lo = std::min(lo, es.eigenvalues().minCoeff());
  }
  return lo;
}

}  // namespace detail

struct SteadyStateOptions {
  /// Smallest acceptable magnitude of the first nonzero Liouvillian eigenvalue.
  double degeneracy_tol = 1e-9;
  int gap_iterations = 30;
};

/// Unit-trace kernel vector of L by a bordered direct solve: one population
/// row of L is replaced with the trace functional. The solve runs on the
/// block-weight-scaled coefficients (W L W^-1), which keeps entries O(1)
/// when the Dicke multiplicities are large. The same factorization then
/// yields, by inverse iteration on the traceless subspace, an estimate of
/// the slowest nonzero relaxation rate (reported as `gap`).
inline DensityMatrix steady_state(const SuperoperatorMatrix& m, const SteadyStateOptions& opt = {}) {
  const LiouvilleBasis& b = *m.basis;
  const HilbertSpace& h = *b.space;
  const Eigen::Index n = m.L.rows();
  Eigen::VectorXd scale(n);
  std::vector<bool> diagonal(n);
  int pivot_row = -1;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [r, c] = b.elems[i];
    scale[i] = h.weight[h.block[r]];
    diagonal[i] = r == c;
    if (diagonal[i] && pivot_row < 0) pivot_row = static_cast<int>(i);
  }
  if (pivot_row < 0) throw std::logic_error("basis has no population entries");

  std::vector<Triplet> t;
  t.reserve(m.L.nonZeros() + b.size());
  for (int j = 0; j < m.L.outerSize(); ++j)
    for (SpMat::InnerIterator it(m.L, j); it; ++it)
      if (it.row() != pivot_row) t.emplace_back(it.row(), j, it.value() * (scale[it.row()] / scale[j]));
  for (Eigen::Index i = 0; i < n; ++i)
    if (diagonal[i]) t.emplace_back(pivot_row, static_cast<int>(i), 1.0);
  SpMat bordered(n, n);
  bordered.setFromTriplets(t.begin(), t.end());
  bordered.makeCompressed();

  Eigen::UmfPackLU<SpMat> lu;
  lu.compute(bordered);
  if (lu.info() != Eigen::Success) {
    if (lu.umfpackFactorizeReturncode() == UMFPACK_ERROR_out_of_memory)
      throw MemoryBudgetError("sparse LU ran out of memory for a Liouvillian of dimension " + std::to_string(n),
                              static_cast<std::size_t>(n));
    throw DegenerateKernelError("bordered steady-state system is singular (the kernel is not one-dimensional)");
  }
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(n);
  rhs[pivot_row] = 1.0;
  const Eigen::VectorXcd y = lu.solve(rhs);
  if (!y.allFinite()) throw DegenerateKernelError("bordered steady-state solve produced non-finite values");

  DensityMatrix rho;
  rho.basis = m.basis;
  rho.values = y.cwiseQuotient(scale.cast<cplx>());
  const Eigen::VectorXcd raw = rho.values;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const int j = b.find(b.elems[i].second, b.elems[i].first);
    rho.values[i] = 0.5 * (raw[i] + std::conj(raw[j]));
  }
  rho.values /= rho.trace();
  rho.residual = (m.L * rho.values).cwiseAbs().maxCoeff();

  // Inverse iteration on trace-zero vectors, where the bordered solve with a
  // zero pivot entry inverts the scaled L.
  const Eigen::VectorXcd ss = rho.values.cwiseProduct(scale.cast<cplx>());
  auto project = [&](Eigen::VectorXcd& v) {
    cplx tr = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (diagonal[i]) tr += v[i];
    v -= tr * ss;
  };
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = cplx{std::cos(0.37 * i), std::sin(1.13 * i)};
  project(v);
  v.normalize();
  double growth = 0.0;
  for (int k = 0; k < opt.gap_iterations; ++k) {
    Eigen::VectorXcd r = v;
    r[pivot_row] = 0.0;
    Eigen::VectorXcd x = lu.solve(r);
    project(x);
    const double g = x.norm();
    if (!std::isfinite(g) || g == 0.0) break;
    growth = g;
    v = x / g;
  }
  rho.gap = growth > 0.0 ? 1.0 / growth : std::numeric_limits<double>::infinity();
  if (rho.gap < opt.degeneracy_tol)
    throw DegenerateKernelError("second Liouvillian eigenvalue within " + std::to_string(rho.gap) + " of zero");
  rho.min_eigenvalue = detail::min_block_eigenvalue(rho);
  return rho;
}

// ---------------------------------------------------------------------------

/// Normalized moments of a permutation-symmetric state. Same-species pair
/// moments (and quad) need two distinct spins and are empty for N = 1.
struct CorrelatorSet {
  int N = 0;
  double s_z_A = 0.0, s_z_B = 0.0;
  std::optional<double> pp_AA, pp_BB;
  cplx pp_AB;
  std::optional<cplx> quad;  // <sigma+_A sigma+_A' sigma-_B sigma-_B'>
  std::optional<double> zz_AA, zz_BB;
  double zz_AB = 0.0;
  cplx s_plus_A, s_plus_B;
  cplx plus_z_AB;  // <sigma+_A sigma^z_B>
};

/// Correlators from collective moments of S-, S^z.
inline CorrelatorSet correlators(const DensityMatrix& rho) {
  const HilbertSpace& h = *rho.basis->space;
  const double N = h.N;
  const SpMat SpA = h.Sm_A.adjoint(), SpB = h.Sm_B.adjoint();
  CorrelatorSet c;
  c.N = h.N;
  const double szA = rho.expect(h.Sz_A).real(), szB = rho.expect(h.Sz_B).real();
  c.s_z_A = szA / N;
  c.s_z_B = szB / N;
  c.pp_AB = rho.expect(SpMat(SpA * h.Sm_B)) / (N * N);
  c.zz_AB = rho.expect(SpMat(h.Sz_A * h.Sz_B)).real() / (N * N);
  c.s_plus_A = rho.expect(SpA) / N;
  c.s_plus_B = rho.expect(SpB) / N;
  c.plus_z_AB = rho.expect(SpMat(SpA * h.Sz_B)) / (N * N);
  if (h.N >= 2) {
    const double pairs = N * (N - 1);
    c.pp_AA = (rho.expect(SpMat(SpA * h.Sm_A)).real() - 0.5 * (N + szA)) / pairs;
    c.pp_BB = (rho.expect(SpMat(SpB * h.Sm_B)).real() - 0.5 * (N + szB)) / pairs;
    c.zz_AA = (rho.expect(SpMat(h.Sz_A * h.Sz_A)).real() - N) / pairs;
    c.zz_BB = (rho.expect(SpMat(h.Sz_B * h.Sz_B)).real() - N) / pairs;
    c.quad = rho.expect(SpMat(SpA * SpA * h.Sm_B * h.Sm_B)) / (pairs * pairs);
  }
  return c;
}

/// Same quantities evaluated from single-site operators on the first spins of
/// each species. Full product space only.
inline CorrelatorSet site_correlators(const DensityMatrix& rho) {
  const HilbertSpace& h = *rho.basis->space;
  if (h.kind != HilbertSpace::Kind::full) throw std::invalid_argument("site correlators need the full product space");
  const Eigen::MatrixXcd r = rho.block_matrix(0);
  auto ev = [&](const SpMat& O) { return (r * Eigen::MatrixXcd(O)).trace(); };
  const SpMat& a0 = h.sm_A[0];
  const SpMat& b0 = h.sm_B[0];
  auto z = [](const SpMat& sm) {
    const SpMat sp = sm.adjoint();
    return SpMat(sp * sm - sm * sp);
  };
  const SpMat za0 = z(a0), zb0 = z(b0);
  CorrelatorSet c;
  c.N = h.N;
  c.s_z_A = ev(za0).real();
  c.s_z_B = ev(zb0).real();
  c.pp_AB = ev(SpMat(SpMat(a0.adjoint()) * b0));
  c.zz_AB = ev(SpMat(za0 * zb0)).real();
  c.s_plus_A = ev(SpMat(a0.adjoint()));
  c.s_plus_B = ev(SpMat(b0.adjoint()));
  c.plus_z_AB = ev(SpMat(SpMat(a0.adjoint()) * zb0));
  if (h.N >= 2) {
    const SpMat& a1 = h.sm_A[1];
    const SpMat& b1 = h.sm_B[1];
    c.pp_AA = ev(SpMat(SpMat(a0.adjoint()) * a1)).real();
    c.pp_BB = ev(SpMat(SpMat(b0.adjoint()) * b1)).real();
    c.zz_AA = ev(SpMat(za0 * z(a1))).real();
    c.zz_BB = ev(SpMat(zb0 * z(b1))).real();
    c.quad = ev(SpMat(SpMat(a0.adjoint()) * SpMat(a1.adjoint()) * b0 * b1));
  }
  return c;
}

/// Largest absolute difference over all fields present in both sets.
inline double max_difference(const CorrelatorSet& x, const CorrelatorSet& y) {
  double d = 0.0;
  auto upd = [&](auto a, auto b) { d = std::max(d, static_cast<double>(std::abs(a - b))); };
  upd(x.s_z_A, y.s_z_A);
  upd(x.s_z_B, y.s_z_B);
  upd(x.pp_AB, y.pp_AB);
  upd(x.zz_AB, y.zz_AB);
  upd(x.s_plus_A, y.s_plus_A);
  upd(x.s_plus_B, y.s_plus_B);
  upd(x.plus_z_AB, y.plus_z_AB);
  if (x.pp_AA && y.pp_AA) {
    upd(*x.pp_AA, *y.pp_AA);
    upd(*x.pp_BB, *y.pp_BB);
    upd(*x.zz_AA, *y.zz_AA);
    upd(*x.zz_BB, *y.zz_BB);
    upd(*x.quad, *y.quad);
  }
  return d;
}

// ---------------------------------------------------------------------------

struct PtCheck {
  double residual = 0.0;            // max |L' - L|, zero iff the model is PT symmetric
  double conjugation_defect = 0.0;  // max |L' - conj(L)|, zero for every parameter set
};

/// Compares the Liouvillian with its PT-transformed assembly on the full
/// product space (N <= 3) or the Dicke space (any N).
inline PtCheck pt_check(const CouplingParams& p, int N, bool dicke = false) {
  auto basis = dicke ? make_basis(dicke_space(N), Sector::all) : make_basis(full_space(N), Sector::all);
  const SpMat L = assemble(basis, p).L;
  const SpMat Lt = assemble(basis, p, {.pt_transform = true}).L;
  const SpMat Lc = L.conjugate();
  return {max_abs_entry(SpMat(Lt - L)), max_abs_entry(SpMat(Lt - Lc))};
}

// ---------------------------------------------------------------------------

/// Writes `<stem>.bin` (little-endian complex128 per stored element, basis
/// order) and `<stem>.json` describing states, elements and weights.
inline void export_density_matrix(const DensityMatrix& rho, const std::string& stem) {
  const LiouvilleBasis& b = *rho.basis;
  const HilbertSpace& h = *b.space;
  {
    std::ofstream out(stem + ".bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + stem + ".bin");
    for (Eigen::Index i = 0; i < rho.values.size(); ++i) {
      const double re = rho.values[i].real(), im = rho.values[i].imag();
      out.write(reinterpret_cast<const char*>(&re), sizeof re);
      out.write(reinterpret_cast<const char*>(&im), sizeof im);
    }
  }
  nlohmann::json j;
  j["N"] = h.N;
  j["basis"] = h.kind == HilbertSpace::Kind::full ? "product" : "dicke";
  j["sector"] = b.sector == Sector::all ? "all" : "balanced";
  j["dtype"] = "complex128-le";
  j["count"] = b.size();
  j["block_weights"] = h.weight;
  nlohmann::json states = nlohmann::json::array();
  for (int s = 0; s < h.dim; ++s) {
    if (h.kind == HilbertSpace::Kind::dicke)
      states.push_back({{"two_j_A", h.labels[s][0]}, {"two_m_A", h.labels[s][1]}, {"two_j_B", h.labels[s][2]},
                        {"two_m_B", h.labels[s][3]}, {"block", h.block[s]}});
    else
      states.push_back({{"bits", s}, {"block", 0}});
  }
  j["states"] = std::move(states);
  nlohmann::json elems = nlohmann::json::array();
  for (const auto& [r, c] : b.elems) elems.push_back({r, c});
  j["elements"] = std::move(elems);
  j["residual"] = rho.residual;
  std::ofstream out(stem + ".json");
  if (!out) throw std::runtime_error("cannot open " + stem + ".json");
  out << j.dump(1) << '\n';
}

}  // namespace nrsync::exact
