// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tendae/ntfe.hpp"
#include "tendae/scenario.hpp"
#include "tendae/tensor.hpp"

namespace tendae {

// Removes the known reflection schedule: y' = y s^+, computed through the
// Gram matrix s s^H (the schedule is wide). Throws when the schedule is
// numerically rank deficient; the message carries the condition estimate.
[[nodiscard]] inline CMat right_filter(const CMat& y, const RisSchedule& sch,
                                       double cond_limit = 1e10) {
  if (y.cols() != sch.s.cols())
    throw std::invalid_argument(
        "right_filter: observation has " + std::to_string(y.cols()) +
        " slots, schedule has " + std::to_string(sch.s.cols()));
  Eigen::SelfAdjointEigenSolver<CMat> eig(sch.s * sch.s.adjoint());
  const RVec& ev = eig.eigenvalues();  // ascending
  const double lmax = ev(ev.size() - 1);
  const double lmin = ev(0);
  const double cond = lmin > 0 ? std::sqrt(lmax / lmin)
                               : std::numeric_limits<double>::infinity();
  if (!(cond < cond_limit))
    throw std::runtime_error(
        "right_filter: schedule rank-deficient, condition estimate " +
        std::to_string(cond) + " exceeds limit " + std::to_string(cond_limit));
  const CVec inv = ev.cwiseInverse().cast<cdouble>();
  const CMat winv =
      eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().adjoint();
  return (y * sch.s.adjoint()) * winv;
}

// Rank-K split of the right-filtered data. For the bd schedule the
// rearranged matrix is a sum of K outer products vec(g_k) vec(j_k^T)^T; the
// truncated SVD absorbs singular values symmetrically so the two coupling
// matrices of the split cancel (t_g t_j^T = I_K). Component columns carry an
// unknown per-target scale and an unknown common ordering; downstream stages
// must not assume any column alignment.
struct KsaFactors {
  CMat g;            // (L_SR N) x K, columns sqrt(sigma_k) u_k
  CMat j;            // (MQ N) x K, columns sqrt(sigma_k) conj(v_k)
  RVec sigma;        // component strengths
  Tensor3 g_tensor;  // K x L_SR x N
  Tensor3 j_tensor;  // MQ x N x K
  bool rank_warning = false;  // requested k exceeds the numerical rank
  double tail_energy = 0.0;   // squared energy beyond the first k components
  double tail_rel = 0.0;      // tail_energy / total energy
  bool converged = true;      // diagonal-mode fit convergence flag
  std::vector<double> residual_history;  // diagonal-mode fit history
};

[[nodiscard]] inline KsaFactors ksa_rank_k(const CMat& y_filt, int l_sr, int n,
                                           int mq, int k) {
  if (y_filt.rows() != static_cast<Eigen::Index>(l_sr) * mq ||
      y_filt.cols() != static_cast<Eigen::Index>(n) * n)
    throw std::invalid_argument(
        "ksa_rank_k: filtered data must be (L_SR*MQ) x N^2");
  const CMat r = rearrange(y_filt, mq, n, l_sr, n);
  if (k < 1 || k > std::min(r.rows(), r.cols()))
    throw std::invalid_argument("ksa_rank_k: k out of range");
  Eigen::BDCSVD<CMat> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const RVec& s = svd.singularValues();

  KsaFactors out;
  out.sigma = s.head(k);
  const CVec root = out.sigma.cwiseSqrt().cast<cdouble>();
  out.g = svd.matrixU().leftCols(k) * root.asDiagonal();
  out.j = svd.matrixV().leftCols(k).conjugate() * root.asDiagonal();
  out.g_tensor = fold(out.g.transpose(), 1, k, l_sr, n);
  out.j_tensor = fold(out.j.transpose(), 3, mq, n, k);

  const double total = s.squaredNorm();
  out.tail_energy = s.tail(s.size() - k).squaredNorm();
  out.tail_rel = total > 0 ? out.tail_energy / total : 0.0;
  out.rank_warning = s(k - 1) <= 1e-12 * s(0);
  return out;
}

// Diagonal-schedule counterpart: the right-filtered data folded along the
// reflecting-element axis is a rank-K trilinear tensor, fit by alternating
// LS. Factor columns are repackaged in the same container, with
// vec-of-g columns kron(v_k, a_k) and vec-of-j^T columns kron(1_N, w_k), so
// the downstream tensors satisfy the same two stage models (the
// element-profile column absorbs both surface-side signatures; the
// transmitter-surface factor degenerates to a constant profile).
[[nodiscard]] inline KsaFactors krsa_rank_k(const CMat& y_filt, int l_sr,
                                            int mq, int n, int k,
                                            const AlsOptions& opt = {}) {
  if (y_filt.rows() != static_cast<Eigen::Index>(l_sr) * mq ||
      y_filt.cols() != n)
    throw std::invalid_argument(
        "krsa_rank_k: filtered data must be (L_SR*MQ) x N");
  const Tensor3 w = fold(y_filt.transpose(), 3, l_sr, mq, n);
  const AlsResult als = als_parafac3(w, k, opt);

  KsaFactors out;
  out.converged = als.converged;
  out.residual_history = als.residual_history;
  out.g = CMat(static_cast<Eigen::Index>(l_sr) * n, k);
  out.j = CMat(static_cast<Eigen::Index>(mq) * n, k);
  out.sigma = RVec(k);
  const CVec ones = CVec::Ones(n);
  for (int c = 0; c < k; ++c) {
    out.g.col(c) = kron(CVec(als.c.col(c)), CVec(als.a.col(c)));
    out.j.col(c) = kron(ones, CVec(als.b.col(c)));
    out.sigma(c) =
        als.a.col(c).norm() * als.b.col(c).norm() * als.c.col(c).norm();
  }
  out.g_tensor = fold(out.g.transpose(), 1, k, l_sr, n);
  out.j_tensor = fold(out.j.transpose(), 3, mq, n, k);
  out.tail_energy = als.residual_history.back() * w.data().squaredNorm();
  out.tail_rel = als.residual_history.back();
  return out;
}

}  // namespace tendae
