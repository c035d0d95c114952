// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tendae/scenario.hpp"
#include "tendae/tensor.hpp"

namespace tendae {

struct AlsOptions {
  int max_iter = 500;
  double tol = 1e-6;  // threshold on |e(i) - e(i-1)|
  enum class Init { random, hosvd, gevd } init = Init::random;
  std::uint64_t seed = 0;
  double pinv_rcond = 1e-10;
};

struct AlsResult {
  CMat a, b, c;  // mode-1..3 factors
  // e(i) = ||t - reconstruction(i)||_F^2 / ||t||_F^2, starting at the
  // initialization. Exact LS substeps make this nonincreasing.
  std::vector<double> residual_history;
  bool converged = false;
  int iterations = 0;
  int rank_warnings = 0;  // LS substeps whose coefficient matrix hit the rcond cut
};

namespace detail {

// Solves min_A ||unf - A * kr^T||_F via the pseudo-inverse of kr^T,
// regularized at rcond; bumps *warnings when kr is rank deficient.
inline CMat ls_factor(const CMat& unf, const CMat& kr, double rcond,
                      int* warnings) {
  Eigen::BDCSVD<CMat> svd(kr, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const Eigen::Index n = s.size();
  CVec inv = CVec::Zero(n);
  const double cut = rcond * s(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (s(i) > cut && s(i) > 0.0) {
      inv(i) = cdouble(1.0 / s(i), 0.0);
      ++rank;
    }
  if (rank < std::min(kr.rows(), kr.cols()) && warnings) ++(*warnings);
  // (kr^T)^+ = conj(U) inv(S) V^T
  return unf *
         (svd.matrixU().conjugate() * inv.asDiagonal() * svd.matrixV().transpose());
}

}  // namespace detail

// Truncated per-mode left singular bases of the unfoldings; the deterministic
// initialization for the alternating fits.
[[nodiscard]] inline std::array<CMat, 3> hosvd_init(const Tensor3& t, int r1,
                                                    int r2, int r3) {
  const int ranks[3] = {r1, r2, r3};
  std::array<CMat, 3> basis;
  for (int mode = 1; mode <= 3; ++mode) {
    const CMat unf = unfold(t, mode);
    const Eigen::Index avail = std::min(unf.rows(), unf.cols());
    if (ranks[mode - 1] < 1 || ranks[mode - 1] > avail)
      throw std::invalid_argument(
          "hosvd_init: mode-" + std::to_string(mode) + " rank " +
          std::to_string(ranks[mode - 1]) + " exceeds available basis size " +
          std::to_string(avail));
    Eigen::BDCSVD<CMat> svd(unf, Eigen::ComputeThinU);
    basis[mode - 1] = svd.matrixU().leftCols(ranks[mode - 1]);
  }
  return basis;
}

// Algebraic slice-pencil initialization (direct trilinear decomposition).
// Two random mixtures of the lateral slices are compressed onto the leading
// mode-2/mode-3 singular bases; the eigenvectors of p1 p2^{-1} carry the
// compressed mode-2 factor, the mode-3 factor follows by a linear solve with
// the same column pairing, and the mode-1 factor by one exact LS step. On
// noiseless rank-`rank` data this is exact whenever the random mixtures
// separate the components (almost surely), independent of how correlated the
// factor columns are -- the regime where plain alternating sweeps stall.
// A numerically singular pencil falls back to a seeded random start.
[[nodiscard]] inline std::array<CMat, 3> gevd_init(const Tensor3& t, int rank,
                                                   std::uint64_t seed = 0,
                                                   double rcond = 1e-10) {
  const Eigen::Index I = t.dim1(), J = t.dim2(), R = t.dim3();
  if (rank < 1) throw std::invalid_argument("gevd_init: rank must be >= 1");
  if (rank > std::min(J, R))
    throw std::invalid_argument(
        "gevd_init: rank " + std::to_string(rank) +
        " exceeds min(dim2, dim3) = " + std::to_string(std::min(J, R)));
  if (rank > 1 && I < 2)
    throw std::invalid_argument("gevd_init: dim1 >= 2 required beyond rank 1");

  Eigen::BDCSVD<CMat> svd2(unfold(t, 2), Eigen::ComputeThinU);
  Eigen::BDCSVD<CMat> svd3(unfold(t, 3), Eigen::ComputeThinU);
  const CMat u = svd2.matrixU().leftCols(rank);  // J x F
  const CMat v = svd3.matrixU().leftCols(rank);  // R x F

  // Compressed lateral slices u^H t(i,:,:) conj(v), each F x F.
  std::vector<CMat> s(static_cast<std::size_t>(I));
  CMat slice(J, R);
  for (Eigen::Index i = 0; i < I; ++i) {
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index j = 0; j < J; ++j) slice(j, r) = t(i, j, r);
    s[static_cast<std::size_t>(i)] = u.adjoint() * slice * v.conjugate();
  }

  Rng rng(derive_seed(seed, 0x70656e63696cULL, static_cast<std::uint64_t>(I),
                      static_cast<std::uint64_t>(J)));
  CMat w_b, c2t;
  bool ok = false;
  for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
    CMat p1 = CMat::Zero(rank, rank), p2 = CMat::Zero(rank, rank);
    for (Eigen::Index i = 0; i < I; ++i) {
      p1 += rng.cnormal() * s[static_cast<std::size_t>(i)];
      p2 += rng.cnormal() * s[static_cast<std::size_t>(i)];
    }
    Eigen::FullPivLU<CMat> lu(p2);
    if (lu.rank() < rank) continue;
    Eigen::ComplexEigenSolver<CMat> eig(p1 * lu.inverse());
    if (eig.info() != Eigen::Success) continue;
    Eigen::FullPivLU<CMat> luw(eig.eigenvectors());
    if (luw.rank() < rank) continue;
    w_b = eig.eigenvectors();
    c2t = luw.solve(p2);
    ok = true;
  }

  std::array<CMat, 3> f;
  if (!ok) {
    Rng fb(derive_seed(seed, 0x66616c6cULL, static_cast<std::uint64_t>(I),
                       static_cast<std::uint64_t>(R)));
    f[0] = fb.cnormal_matrix(I, rank);
    f[1] = fb.cnormal_matrix(J, rank);
    f[2] = fb.cnormal_matrix(R, rank);
    return f;
  }
  f[1] = u * w_b;
  f[2] = v * c2t.transpose();
  f[0] = detail::ls_factor(unfold(t, 1), khatri_rao(f[2], f[1]), rcond,
                           nullptr);
  return f;
}

namespace detail {

inline void check_als_dims(const char* fn, Eigen::Index I, Eigen::Index J,
                           Eigen::Index R, int rank) {
  if (rank < 1)
    throw std::invalid_argument(std::string(fn) + ": rank must be >= 1");
  if (J * R < rank || I * R < rank || I * J < rank)
    throw std::invalid_argument(
        std::string(fn) +
        ": every pair product of dimensions must reach the rank (dims " +
        std::to_string(I) + "x" + std::to_string(J) + "x" + std::to_string(R) +
        ", rank " + std::to_string(rank) + ")");
}

inline void init_factors(const Tensor3& t, int rank, const AlsOptions& opt,
                         AlsResult& res) {
  if (opt.init == AlsOptions::Init::hosvd) {
    const auto basis = hosvd_init(t, rank, rank, rank);
    res.a = basis[0];
    res.b = basis[1];
    res.c = basis[2];
  } else if (opt.init == AlsOptions::Init::gevd) {
    const auto f = gevd_init(t, rank, opt.seed, opt.pinv_rcond);
    res.a = f[0];
    res.b = f[1];
    res.c = f[2];
  } else {
    Rng rng(opt.seed);
    res.a = rng.cnormal_matrix(t.dim1(), rank);
    res.b = rng.cnormal_matrix(t.dim2(), rank);
    res.c = rng.cnormal_matrix(t.dim3(), rank);
  }
}

}  // namespace detail

// Rank-R trilinear alternating least squares. Each sweep solves the three
// exact LS subproblems
//   a <- [t]_(1) ((c kr b)^T)^+ ,  b <- [t]_(2) ((c kr a)^T)^+ ,
//   c <- [t]_(3) ((b kr a)^T)^+
// and stops when |e(i) - e(i-1)| < tol. The last iterate is the best one.
[[nodiscard]] inline AlsResult als_parafac3(const Tensor3& t, int rank,
                                            const AlsOptions& opt = {}) {
  const Eigen::Index I = t.dim1(), J = t.dim2(), R = t.dim3();
  detail::check_als_dims("als_parafac3", I, J, R, rank);
  const double tnorm2 = t.data().squaredNorm();
  if (tnorm2 == 0.0)
    throw std::invalid_argument("als_parafac3: zero tensor");

  const CMat u1 = unfold(t, 1), u2 = unfold(t, 2), u3 = unfold(t, 3);

  AlsResult res;
  detail::init_factors(t, rank, opt, res);

  auto rel_residual = [&]() {
    return (u3 - res.c * khatri_rao(res.b, res.a).transpose()).squaredNorm() /
           tnorm2;
  };
  double e_prev = rel_residual();
  res.residual_history.push_back(e_prev);

  for (int i = 1; i <= opt.max_iter; ++i) {
    res.a = detail::ls_factor(u1, khatri_rao(res.c, res.b), opt.pinv_rcond,
                              &res.rank_warnings);
    res.b = detail::ls_factor(u2, khatri_rao(res.c, res.a), opt.pinv_rcond,
                              &res.rank_warnings);
    res.c = detail::ls_factor(u3, khatri_rao(res.b, res.a), opt.pinv_rcond,
                              &res.rank_warnings);
    const double e = rel_residual();
    res.residual_history.push_back(e);
    res.iterations = i;
    if (std::abs(e - e_prev) < opt.tol) {
      res.converged = true;
      break;
    }
    e_prev = e;
  }
  return res;
}

// Rank-R trilinear fit under a known nonnegative weight grid on the
// (mode-2, mode-3) plane, shared across mode-1:
//   min sum_{i,j,r} w(j,r) |t(i,j,r) - sum_f a(i,f) b(j,f) c(r,f)|^2 .
// This is the exact ML fit when the entries carry independent noise whose
// variance varies only over that plane -- the situation after dividing a
// measurement by a known per-cell gain: the weight is the squared gain, and
// a vanished gain masks its cell instead of injecting amplified noise into
// the fit. Every sweep still solves exact (row-scaled) LS subproblems, so
// the weighted relative residual history is nonincreasing; uniform weights
// reproduce the als_parafac3 iterates. Initialization is evaluated on the
// unweighted tensor.
[[nodiscard]] inline AlsResult als_parafac3_weighted(const Tensor3& t,
                                                     int rank, const RMat& w23,
                                                     const AlsOptions& opt = {}) {
  const Eigen::Index I = t.dim1(), J = t.dim2(), R = t.dim3();
  detail::check_als_dims("als_parafac3_weighted", I, J, R, rank);
  if (w23.rows() != J || w23.cols() != R)
    throw std::invalid_argument(
        "als_parafac3_weighted: weight grid must be dim2 x dim3 (got " +
        std::to_string(w23.rows()) + "x" + std::to_string(w23.cols()) +
        ", need " + std::to_string(J) + "x" + std::to_string(R) + ")");
  if ((w23.array() < 0.0).any())
    throw std::invalid_argument(
        "als_parafac3_weighted: weights must be nonnegative");
  if (!(w23.maxCoeff() > 0.0))
    throw std::invalid_argument(
        "als_parafac3_weighted: weights must not all vanish");

  const CMat u1 = unfold(t, 1), u2 = unfold(t, 2), u3 = unfold(t, 3);
  const RMat sw = w23.cwiseSqrt();
  // Square roots arranged for the mode-1 unfolding's column order (j fast).
  RVec sw1(J * R);
  for (Eigen::Index r = 0; r < R; ++r)
    for (Eigen::Index j = 0; j < J; ++j) sw1(r * J + j) = sw(j, r);

  const double tnorm2 = (u1 * sw1.asDiagonal()).squaredNorm();
  if (tnorm2 == 0.0)
    throw std::invalid_argument(
        "als_parafac3_weighted: zero tensor on the weight support");

  AlsResult res;
  {
    // The algebraic initializations are not weight-aware, and a negligible
    // weight usually marks a division artifact whose magnitude dwarfs the
    // signal; feed them a copy with such cells zeroed.
    Tensor3 t_init = t;
    const double clip = 1e-3 * w23.maxCoeff();
    for (Eigen::Index r = 0; r < R; ++r)
      for (Eigen::Index j = 0; j < J; ++j)
        if (w23(j, r) <= clip)
          for (Eigen::Index i = 0; i < I; ++i) t_init(i, j, r) = cdouble(0, 0);
    detail::init_factors(t_init, rank, opt, res);
  }

  auto rel_residual = [&]() {
    return ((u1 - res.a * khatri_rao(res.c, res.b).transpose()) *
            sw1.asDiagonal())
               .squaredNorm() /
           tnorm2;
  };
  double e_prev = rel_residual();
  res.residual_history.push_back(e_prev);

  for (int i = 1; i <= opt.max_iter; ++i) {
    // Mode-1 rows all see the same weights: one scaled solve.
    res.a = detail::ls_factor(
        CMat(u1 * sw1.asDiagonal()),
        CMat(sw1.asDiagonal() * khatri_rao(res.c, res.b)), opt.pinv_rcond,
        &res.rank_warnings);
    // Mode-2/mode-3 rows each see their own slice of the weight grid.
    {
      const CMat kr = khatri_rao(res.c, res.a);  // rows r*I + i
      CMat krw(kr.rows(), kr.cols());
      CMat rhs(1, u2.cols());
      for (Eigen::Index j = 0; j < J; ++j) {
        for (Eigen::Index r = 0; r < R; ++r) {
          krw.middleRows(r * I, I) = sw(j, r) * kr.middleRows(r * I, I);
          rhs.middleCols(r * I, I) = sw(j, r) * u2.row(j).segment(r * I, I);
        }
        res.b.row(j) =
            detail::ls_factor(rhs, krw, opt.pinv_rcond, &res.rank_warnings);
      }
    }
    {
      const CMat kr = khatri_rao(res.b, res.a);  // rows j*I + i
      CMat krw(kr.rows(), kr.cols());
      CMat rhs(1, u3.cols());
      for (Eigen::Index r = 0; r < R; ++r) {
        for (Eigen::Index j = 0; j < J; ++j) {
          krw.middleRows(j * I, I) = sw(j, r) * kr.middleRows(j * I, I);
          rhs.middleCols(j * I, I) = sw(j, r) * u3.row(r).segment(j * I, I);
        }
        res.c.row(r) =
            detail::ls_factor(rhs, krw, opt.pinv_rcond, &res.rank_warnings);
      }
    }
    const double e = rel_residual();
    res.residual_history.push_back(e);
    res.iterations = i;
    if (std::abs(e - e_prev) < opt.tol) {
      res.converged = true;
      break;
    }
    e_prev = e;
  }
  return res;
}

// Trilinear fit of the angular-stage tensor (K x L_SR x N). Mode-2 and mode-3
// factor columns carry the per-target receive-side and departure-side
// signatures up to the trilinear scale/permutation ambiguity.
[[nodiscard]] inline AlsResult fit_angular(const Tensor3& g_tensor, int rank,
                                           const AlsOptions& opt = {}) {
  if (g_tensor.dim2() * g_tensor.dim3() < rank)
    throw identifiability_error(
        "fit_angular: L_SR*N >= K required (L_SR*N=" +
        std::to_string(g_tensor.dim2() * g_tensor.dim3()) +
        ", K=" + std::to_string(rank) + ")");
  return als_parafac3(g_tensor, rank, opt);
}

struct BalsResult {
  CMat h;   // N x L_ST estimate
  CMat f1;  // K x MQ inner-tensor mode-1 unfolding estimate
  std::vector<double> residual_history;
  bool converged = false;
  int iterations = 0;
  int rank_warnings = 0;
};

struct NestedResult {
  BalsResult outer;
  CVec h_left;         // sqrt(sigma) * leading left singular vector of h
  double h_sigma = 0;  // leading singular value of h
  AlsResult inner;     // factors: coupling (K x K), Doppler (M x K), delay (Q x K)
  Tensor3 inner_input; // the folded K x M x Q grid the inner fit consumed
  CMat f1_pinned;      // f1 re-solved at the pinned h (set when a_st is given)
  bool pinned = false;
  double pinned_residual = 0;  // relative residual of the pinned refit
};

// Two-block alternating fit of the nested tensor (MQ x N x K) whose mode-1
// factor is pinned to I_MQ:
//   h  <- [j]_(2) (x (f1 kr I_MQ)^T)^+
//   f1 <- [j]_(3) (((h x) kr I_MQ)^T)^+
// followed by a rank-R trilinear fit of f1 folded as K x M x Q. The h
// initialization is irrelevant (h is updated first); f1 starts random. The
// init option is forwarded to the inner trilinear fit only, where the slice
// pencil (gevd) is the robust choice: the Doppler signatures of slow targets
// are strongly correlated and plain alternating sweeps stall on them.
//
// a_st, when given, is the known transmit-side signature (length L_ST). The
// exact solutions of the two-block problem form a gauge family: h is rank
// one, so h' = b m^T fits for any m, with f1 absorbing the per-column ratio
// (a_st^T x)_p / (m^T x)_p. Only the left direction b is determined. That
// ratio is not a separable (Doppler x delay) modulation in general, so the
// inner fit on the raw f1 is meaningless. Re-solving f1 once at the pinned
// channel h_left a_st^T collapses the gauge to a single scalar and restores
// the trilinear structure; the delay/Doppler readout needs this.
//
// The pinned refit estimates cell p of f1 from data weighted by the known
// pilot projection (a_st^T x)_p, so the cell's error variance scales with
// 1/|(a_st^T x)_p|^2: a pilot column nearly orthogonal to a_st yields a
// cell of amplified noise that would poison an unweighted grid fit. The
// inner fit therefore runs with the matching weights |(a_st^T x)_p|^2,
// which mask faded cells instead.
[[nodiscard]] inline NestedResult fit_nested(const Tensor3& j_tensor,
                                             const CMat& x, int m_count,
                                             int q_count, int rank,
                                             const AlsOptions& opt = {},
                                             const CVec* a_st = nullptr) {
  const Eigen::Index mq = j_tensor.dim1(), n = j_tensor.dim2(),
                     k_dim = j_tensor.dim3();
  const Eigen::Index l_st = x.rows();
  if (x.cols() != mq)
    throw std::invalid_argument("fit_nested: pilot columns must equal MQ");
  if (static_cast<Eigen::Index>(m_count) * q_count != mq)
    throw std::invalid_argument("fit_nested: m_count*q_count must equal MQ");
  if (mq < l_st)
    throw identifiability_error("fit_nested: MQ >= L_ST required (MQ=" +
                                std::to_string(mq) +
                                ", L_ST=" + std::to_string(l_st) + ")");
  if (mq < rank)
    throw identifiability_error("fit_nested: MQ >= K required (MQ=" +
                                std::to_string(mq) +
                                ", K=" + std::to_string(rank) + ")");
  const double tnorm2 = j_tensor.data().squaredNorm();
  if (tnorm2 == 0.0)
    throw std::invalid_argument("fit_nested: zero tensor");

  const CMat u2 = unfold(j_tensor, 2), u3 = unfold(j_tensor, 3);
  const CMat eye = CMat::Identity(mq, mq);

  NestedResult res;
  Rng rng(opt.seed);
  res.outer.h = rng.cnormal_matrix(n, l_st);
  res.outer.f1 = rng.cnormal_matrix(k_dim, mq);

  auto rel_residual = [&]() {
    const CMat m = khatri_rao(CMat(res.outer.h * x), eye);
    return (u3 - res.outer.f1 * m.transpose()).squaredNorm() / tnorm2;
  };
  double e_prev = rel_residual();
  res.outer.residual_history.push_back(e_prev);

  for (int i = 1; i <= opt.max_iter; ++i) {
    const CMat coeff_h = x * khatri_rao(res.outer.f1, eye).transpose();
    res.outer.h = detail::ls_factor(u2, coeff_h.transpose(), opt.pinv_rcond,
                                    &res.outer.rank_warnings);
    res.outer.f1 =
        detail::ls_factor(u3, khatri_rao(CMat(res.outer.h * x), eye),
                          opt.pinv_rcond, &res.outer.rank_warnings);
    const double e = rel_residual();
    res.outer.residual_history.push_back(e);
    res.outer.iterations = i;
    if (std::abs(e - e_prev) < opt.tol) {
      res.outer.converged = true;
      break;
    }
    e_prev = e;
  }

  Eigen::BDCSVD<CMat> svd(res.outer.h, Eigen::ComputeThinU);
  res.h_sigma = svd.singularValues()(0);
  res.h_left = std::sqrt(res.h_sigma) * svd.matrixU().col(0);

  const CMat* f1_for_inner = &res.outer.f1;
  if (a_st != nullptr) {
    if (a_st->size() != l_st)
      throw std::invalid_argument(
          "fit_nested: a_st length must equal pilot rows");
    const CMat hx_pin = (res.h_left * a_st->transpose()) * x;
    res.f1_pinned = detail::ls_factor(u3, khatri_rao(hx_pin, eye),
                                      opt.pinv_rcond, &res.outer.rank_warnings);
    res.pinned_residual =
        (u3 - res.f1_pinned * khatri_rao(hx_pin, eye).transpose())
            .squaredNorm() /
        tnorm2;
    res.pinned = true;
    f1_for_inner = &res.f1_pinned;
  }

  res.inner_input = fold(*f1_for_inner, 1, k_dim, m_count, q_count);
  if (res.pinned) {
    const RVec xa2 = (x.transpose() * *a_st).cwiseAbs2();
    const Eigen::Map<const RMat> w23(xa2.data(), m_count, q_count);
    res.inner = als_parafac3_weighted(res.inner_input, rank, w23, opt);
  } else {
    res.inner = als_parafac3(res.inner_input, rank, opt);
  }
  return res;
}

}  // namespace tendae
