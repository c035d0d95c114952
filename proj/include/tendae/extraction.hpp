// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tendae/scenario.hpp"

namespace tendae {

// Single-source shift-invariance frequency estimate: the least-squares
// solution rho of v[1:] ~= rho * v[:-1], returned as arg(rho) in (-pi, pi].
// For v(i) = c * exp(j w i) with any c != 0 this is w exactly (mod 2 pi);
// the ratio form cancels the column scaling left behind by a trilinear fit.
[[nodiscard]] inline double esprit_1d(const CVec& v) {
  if (v.size() < 2)
    throw std::invalid_argument("esprit_1d: need length >= 2");
  const auto head = v.head(v.size() - 1);
  const double den = head.squaredNorm();
  if (den == 0.0)
    throw std::invalid_argument("esprit_1d: zero shift subvector");
  const cdouble rho = head.dot(v.tail(v.size() - 1)) / den;
  return std::arg(rho);
}

// Weighted single-tone fit for signatures whose entries carry known
// reliabilities (inverse noise variance, up to scale): the exact maximizer
// of the weighted periodogram |sum_p w(p) v(p) exp(-j w p)|^2, located by a
// dense sub-bin scan plus Newton polishing. This is the ML frequency
// estimate under independent per-entry Gaussian noise of variance 1/w(p);
// the one-lag ratio form above only approaches its accuracy. A zero weight
// masks the entry entirely.
[[nodiscard]] inline double tone_omega_ml(const CVec& v, const RVec& w) {
  const Eigen::Index p_count = v.size();
  if (p_count < 2)
    throw std::invalid_argument("tone_omega_ml: need length >= 2");
  if (w.size() != p_count)
    throw std::invalid_argument("tone_omega_ml: weight length must match");
  if ((w.array() < 0.0).any())
    throw std::invalid_argument("tone_omega_ml: weights must be nonnegative");
  const CVec c = w.asDiagonal() * v;
  if (c.norm() == 0.0)
    throw std::invalid_argument(
        "tone_omega_ml: zero signature on the weight support");

  const auto z_at = [&](double omega, int order) {
    cdouble z(0.0, 0.0);
    for (Eigen::Index p = 0; p < p_count; ++p) {
      double f = 1.0;
      if (order == 1) f = static_cast<double>(p);
      if (order == 2) f = static_cast<double>(p) * static_cast<double>(p);
      z += f * c(p) * std::polar(1.0, -omega * static_cast<double>(p));
    }
    return z;
  };

  const int grid = 64 * static_cast<int>(p_count);
  double best_omega = 0.0, best_a = -1.0;
  for (int g = 0; g < grid; ++g) {
    const double omega = -kPi + 2.0 * kPi * (g + 0.5) / grid;
    const double a = std::norm(z_at(omega, 0));
    if (a > best_a) {
      best_a = a;
      best_omega = omega;
    }
  }

  // Newton on d|z|^2/dw; the scan already brackets the global maximum to a
  // fraction of a bin, so curvature stays negative along the polish.
  double omega = best_omega;
  for (int it = 0; it < 32; ++it) {
    const cdouble z0 = z_at(omega, 0);
    const cdouble z1 = cdouble(0.0, -1.0) * z_at(omega, 1);
    const cdouble z2 = -z_at(omega, 2);
    const double d1 = 2.0 * std::real(z1 * std::conj(z0));
    const double d2 = 2.0 * std::real(z2 * std::conj(z0)) + 2.0 * std::norm(z1);
    if (!(d2 < 0.0)) break;
    const double step = d1 / d2;
    omega -= step;
    if (std::abs(step) < 1e-14) break;
  }
  if (omega > kPi) omega -= 2.0 * kPi;
  if (omega <= -kPi) omega += 2.0 * kPi;
  return omega;
}

struct Tone2dEstimate {
  double omega_row = 0;  // frequency along the row index
  double omega_col = 0;  // frequency along the column index
};

// Weighted 2-D single-tone fit on a grid g(m, q) ~ s * exp(j(w_m m + w_q q)):
// maximizer of |sum_{m,q} w(m,q) g(m,q) exp(-j(w_m m + w_q q))|^2, located by
// a factorized sub-bin scan plus Newton polishing. ML under independent
// per-cell Gaussian noise of variance 1/w(m,q); zero weights mask cells. An
// axis of length one pins its frequency to zero.
[[nodiscard]] inline Tone2dEstimate tone2d_ml(const CMat& g, const RMat& w) {
  const Eigen::Index m_n = g.rows(), q_n = g.cols();
  if (m_n < 1 || q_n < 1)
    throw std::invalid_argument("tone2d_ml: empty grid");
  if (w.rows() != m_n || w.cols() != q_n)
    throw std::invalid_argument("tone2d_ml: weight grid must match");
  if ((w.array() < 0.0).any())
    throw std::invalid_argument("tone2d_ml: weights must be nonnegative");
  const CMat c = g.cwiseProduct(w.cast<cdouble>());
  if (c.norm() == 0.0)
    throw std::invalid_argument("tone2d_ml: zero grid on the weight support");

  const int gm = m_n > 1 ? 16 * static_cast<int>(m_n) : 1;
  const int gq = q_n > 1 ? 16 * static_cast<int>(q_n) : 1;
  const auto omega_of = [](int idx, int count) {
    return count > 1 ? -kPi + 2.0 * kPi * (idx + 0.5) / count : 0.0;
  };
  CMat e_q(gq, q_n);
  for (int iq = 0; iq < gq; ++iq)
    for (Eigen::Index q = 0; q < q_n; ++q)
      e_q(iq, q) = std::polar(1.0, -omega_of(iq, gq) * static_cast<double>(q));
  const CMat b = c * e_q.transpose();  // m_n x gq
  Tone2dEstimate est;
  double best = -1.0;
  CVec e_m(m_n);
  for (int im = 0; im < gm; ++im) {
    const double om = omega_of(im, gm);
    for (Eigen::Index m = 0; m < m_n; ++m)
      e_m(m) = std::polar(1.0, -om * static_cast<double>(m));
    for (int iq = 0; iq < gq; ++iq) {
      const double a = std::norm(e_m.dot(b.col(iq).conjugate()));
      if (a > best) {
        best = a;
        est.omega_row = om;
        est.omega_col = omega_of(iq, gq);
      }
    }
  }

  // Newton polish of |z|^2 over the active axes; the scan already brackets
  // the global maximum to a fraction of a bin.
  const auto z_at = [&](double om, double oq, int dm, int dq) {
    cdouble z(0.0, 0.0);
    for (Eigen::Index q = 0; q < q_n; ++q)
      for (Eigen::Index m = 0; m < m_n; ++m) {
        double f = 1.0;
        for (int d = 0; d < dm; ++d) f *= static_cast<double>(m);
        for (int d = 0; d < dq; ++d) f *= static_cast<double>(q);
        z += f * c(m, q) *
             std::polar(1.0, -(om * static_cast<double>(m) +
                               oq * static_cast<double>(q)));
      }
    return z;
  };
  const cdouble mj(0.0, -1.0);
  for (int it = 0; it < 32; ++it) {
    const cdouble z0 = z_at(est.omega_row, est.omega_col, 0, 0);
    const cdouble zm = mj * z_at(est.omega_row, est.omega_col, 1, 0);
    const cdouble zq = mj * z_at(est.omega_row, est.omega_col, 0, 1);
    const cdouble zmm = -z_at(est.omega_row, est.omega_col, 2, 0);
    const cdouble zqq = -z_at(est.omega_row, est.omega_col, 0, 2);
    const cdouble zmq = -z_at(est.omega_row, est.omega_col, 1, 1);
    const double d_m = 2.0 * std::real(zm * std::conj(z0));
    const double d_q = 2.0 * std::real(zq * std::conj(z0));
    const double d_mm =
        2.0 * std::real(zmm * std::conj(z0)) + 2.0 * std::norm(zm);
    const double d_qq =
        2.0 * std::real(zqq * std::conj(z0)) + 2.0 * std::norm(zq);
    const double d_mq =
        2.0 * std::real(zmq * std::conj(z0) + zm * std::conj(zq));
    double step_m = 0, step_q = 0;
    if (m_n > 1 && q_n > 1) {
      const double det = d_mm * d_qq - d_mq * d_mq;
      if (!(d_mm < 0.0) || !(det > 0.0)) break;
      step_m = (d_qq * d_m - d_mq * d_q) / det;
      step_q = (d_mm * d_q - d_mq * d_m) / det;
    } else if (m_n > 1) {
      if (!(d_mm < 0.0)) break;
      step_m = d_m / d_mm;
    } else {
      if (!(d_qq < 0.0)) break;
      step_q = d_q / d_qq;
    }
    est.omega_row -= step_m;
    est.omega_col -= step_q;
    if (std::abs(step_m) < 1e-14 && std::abs(step_q) < 1e-14) break;
  }
  const auto wrap = [](double omega) {
    if (omega > kPi) omega -= 2.0 * kPi;
    if (omega <= -kPi) omega += 2.0 * kPi;
    return omega;
  };
  est.omega_row = wrap(est.omega_row);
  est.omega_col = wrap(est.omega_col);
  return est;
}

// Delay from a subcarrier signature c(q) = s * exp(-j 2 pi q delta_f tau).
[[nodiscard]] inline double tau_from_signature(const CVec& c,
                                               double delta_f_hz) {
  if (delta_f_hz <= 0.0)
    throw std::invalid_argument("tau_from_signature: delta_f_hz must be > 0");
  return -esprit_1d(c) / (2.0 * kPi * delta_f_hz);
}

[[nodiscard]] inline double tau_from_signature(const CVec& c,
                                               double delta_f_hz,
                                               const RVec& w) {
  if (delta_f_hz <= 0.0)
    throw std::invalid_argument("tau_from_signature: delta_f_hz must be > 0");
  return -tone_omega_ml(c, w) / (2.0 * kPi * delta_f_hz);
}

// Doppler from a symbol signature d(m) = s * exp(+j 2 pi m t_s nu).
[[nodiscard]] inline double nu_from_signature(const CVec& d, double t_s) {
  if (t_s <= 0.0)
    throw std::invalid_argument("nu_from_signature: t_s must be > 0");
  return esprit_1d(d) / (2.0 * kPi * t_s);
}

[[nodiscard]] inline double nu_from_signature(const CVec& d, double t_s,
                                              const RVec& w) {
  if (t_s <= 0.0)
    throw std::invalid_argument("nu_from_signature: t_s must be > 0");
  return tone_omega_ml(d, w) / (2.0 * kPi * t_s);
}

struct AngleEstimate {
  double mu = 0;     // y-axis spatial frequency, pi sin(phi) sin(theta)
  double psi = 0;    // z-axis spatial frequency, pi cos(phi)
  double phi = 0;    // radians, principal branch of arccos
  double theta = 0;  // radians, principal branch of arcsin
};

// Planar-array frequency estimates without the angle inversion: the exact
// weighted 2-D tone fit over the full aperture (tone2d_ml), which both the
// per-axis shift ratios and their pooled variants only approximate. Index
// layout matches ura_steering: element n = iy*nz + iz, phases run as
// exp(-j(iy mu + iz psi)), so the grid frequencies are the negated tones.
[[nodiscard]] inline std::array<double, 2> ura_freqs(const CVec& v, int ny,
                                                     int nz) {
  if (ny < 2 || nz < 2)
    throw std::invalid_argument("ura_freqs: need ny >= 2 and nz >= 2");
  if (v.size() != static_cast<Eigen::Index>(ny) * nz)
    throw std::invalid_argument("ura_freqs: vector length must be ny*nz");
  if (v.norm() == 0.0)
    throw std::invalid_argument("ura_freqs: zero shift subvector");
  // Column-major view: row index iz (fast), column index iy.
  const Eigen::Map<const CMat> grid(v.data(), nz, ny);
  const Tone2dEstimate tone = tone2d_ml(grid, RMat::Ones(nz, ny));
  return {-tone.omega_col, -tone.omega_row};
}

// Principal-branch inversion phi = arccos(psi/pi),
// theta = arcsin(mu/(pi sin phi)). Frequencies outside the invertible range
// raise std::domain_error instead of wrapping silently.
[[nodiscard]] inline AngleEstimate ura_angles(double mu, double psi) {
  AngleEstimate est;
  est.mu = mu;
  est.psi = psi;

  constexpr double kDomainSlack = 1e-9;
  const double c = psi / kPi;
  if (std::abs(c) > 1.0 + kDomainSlack)
    throw std::domain_error("esprit_2d: |psi|/pi > 1, not invertible");
  est.phi = std::acos(std::clamp(c, -1.0, 1.0));
  const double sin_phi = std::sin(est.phi);
  if (sin_phi < 1e-9)
    throw std::domain_error("esprit_2d: singular elevation, sin(phi) ~ 0");
  const double s = mu / (kPi * sin_phi);
  if (std::abs(s) > 1.0 + kDomainSlack)
    throw std::domain_error("esprit_2d: |mu/(pi sin phi)| > 1, not invertible");
  est.theta = std::asin(std::clamp(s, -1.0, 1.0));
  return est;
}

// 2D angle estimate from a single steering-like vector: full-aperture tone
// fit along both array axes, then the principal-branch inversion.
[[nodiscard]] inline AngleEstimate esprit_2d(const CVec& v, int ny, int nz) {
  const auto [mu, psi] = ura_freqs(v, ny, nz);
  return ura_angles(mu, psi);
}

// Orthogonalized per-target vectors: thin SVD of the factor matrix, column k
// of the result is sqrt(sigma_k) u_k. Exact for K = 1 and for orthogonal
// columns; correlated columns mix, which is the accepted cost of this
// convention (close targets degrade).
[[nodiscard]] inline CMat extract_per_target(const CMat& factor) {
  if (factor.rows() < factor.cols())
    throw std::invalid_argument("extract_per_target: need rows >= cols");
  Eigen::BDCSVD<CMat> svd(factor, Eigen::ComputeThinU);
  CMat out(factor.rows(), factor.cols());
  for (Eigen::Index k = 0; k < factor.cols(); ++k)
    out.col(k) = std::sqrt(svd.singularValues()(k)) * svd.matrixU().col(k);
  return out;
}

// Rebuilds exact unit-modulus steering columns at the estimated angles.
[[nodiscard]] inline CMat refine_manifold(const RVec& phi, const RVec& theta,
                                          int ny, int nz) {
  if (phi.size() != theta.size())
    throw std::invalid_argument("refine_manifold: angle lists must match");
  CMat out(static_cast<Eigen::Index>(ny) * nz, phi.size());
  for (Eigen::Index k = 0; k < phi.size(); ++k)
    out.col(k) = ura_steering(ny, nz, phi(k), theta(k));
  return out;
}

namespace detail {

// Least-squares gain solve shared by both reflection modes. Columns of
// `composite` are the unit-gain per-target patterns in the filtered-channel
// vector space; `target` is the matching vectorization of the data.
[[nodiscard]] inline CVec solve_gains(const CMat& composite,
                                      const CVec& target) {
  Eigen::BDCSVD<CMat> svd(composite,
                          Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(0) == 0.0 || sv(sv.size() - 1) <= 1e-12 * sv(0))
    throw std::runtime_error("estimate_gains: rank-deficient composite");
  return svd.solve(target);
}

}  // namespace detail

// Closed-form path gains for the fully connected mode:
//   alpha_hat = (Jbar^T kr Gbar)^+ vec(R(y_filt)),
// where Gbar col k = b_tx_k kron a_sr_k, Jbar^T col k = vec(J_k^T) with
// J_k = h x diag(c_k kron d_k), and R is the (MQ x N) block rearrangement.
// All factor inputs are unit-gain patterns; the gains absorb the scales.
[[nodiscard]] inline CVec estimate_gains(const CMat& y_filt, const CMat& a_sr,
                                         const CMat& b_tx, const CMat& h,
                                         const CMat& x, const CMat& c_tau,
                                         const CMat& d_nu) {
  const Eigen::Index l_sr = a_sr.rows(), n = b_tx.rows(), k = a_sr.cols();
  const Eigen::Index q = c_tau.rows(), m = d_nu.rows(), mq = m * q;
  if (b_tx.cols() != k || c_tau.cols() != k || d_nu.cols() != k)
    throw std::invalid_argument("estimate_gains: factor column count mismatch");
  if (h.rows() != n || h.cols() != x.rows() || x.cols() != mq)
    throw std::invalid_argument("estimate_gains: channel/pilot shape mismatch");
  if (y_filt.rows() != l_sr * mq || y_filt.cols() != n * n)
    throw std::invalid_argument("estimate_gains: observation shape mismatch");
  if (l_sr * n * mq * n < k)
    throw identifiability_error(
        "estimate_gains: L_SR*N*MQ*N >= K required (" +
        std::to_string(l_sr * n * mq * n) + " < " + std::to_string(k) + ")");

  const CMat rearranged = rearrange(y_filt, static_cast<int>(mq),
                                    static_cast<int>(n),
                                    static_cast<int>(l_sr),
                                    static_cast<int>(n));
  const CMat hx = h * x;
  CMat composite(l_sr * n * mq * n, k);
  for (Eigen::Index t = 0; t < k; ++t) {
    const CVec g_vec = kron(CVec(b_tx.col(t)), CVec(a_sr.col(t)));
    const CVec cd = kron(CVec(c_tau.col(t)), CVec(d_nu.col(t)));
    CMat jt(mq, n);  // J_t^T, row p = hx(:,p)^T scaled by the p-th signature
    for (Eigen::Index p = 0; p < mq; ++p) jt.row(p) = cd(p) * hx.col(p).transpose();
    composite.col(t) =
        kron(CVec(Eigen::Map<const CVec>(jt.data(), mq * n)), g_vec);
  }
  return detail::solve_gains(
      composite, CVec(Eigen::Map<const CVec>(rearranged.data(),
                                             rearranged.size())));
}

// Closed-form path gains for the diagonal mode, where the filtered channel
// is the trilinear stack T(l, p, nn) = sum_k alpha_k a_sr(l,k) w(p,k) c(nn,k)
// with w the pilot-weighted delay-Doppler profile and c the combined
// (arrival .* departure) surface profile.
[[nodiscard]] inline CVec estimate_gains_diag(const CMat& y_filt,
                                              const CMat& a_sr, const CMat& w,
                                              const CMat& c_comb) {
  const Eigen::Index l_sr = a_sr.rows(), mq = w.rows(), n = c_comb.rows();
  const Eigen::Index k = a_sr.cols();
  if (w.cols() != k || c_comb.cols() != k)
    throw std::invalid_argument(
        "estimate_gains_diag: factor column count mismatch");
  if (y_filt.rows() != l_sr * mq || y_filt.cols() != n)
    throw std::invalid_argument(
        "estimate_gains_diag: observation shape mismatch");
  if (l_sr * mq * n < k)
    throw identifiability_error(
        "estimate_gains_diag: L_SR*MQ*N >= K required (" +
        std::to_string(l_sr * mq * n) + " < " + std::to_string(k) + ")");

  CMat composite(l_sr * mq * n, k);
  for (Eigen::Index t = 0; t < k; ++t)
    composite.col(t) = kron(
        CVec(c_comb.col(t)), CVec(kron(CVec(w.col(t)), CVec(a_sr.col(t)))));
  return detail::solve_gains(
      composite,
      CVec(Eigen::Map<const CVec>(y_filt.data(), y_filt.size())));
}

// Ground-truth-side parameter tuple used for permutation matching and RMSE.
struct TargetParams {
  double tau_s = 0;
  double nu_hz = 0;
  double phi_sr = 0;
  double theta_sr = 0;
  double phi_ris_d = 0;
  double theta_ris_d = 0;
};

// Evaluation-only alignment of estimated targets to ground truth: exhaustive
// search over all K! assignments minimizing the summed squared normalized
// distance (tau/t_s, nu*t_s, the four per-target angles in radians, equal
// weights). Returns perm with perm[i] = truth index assigned to estimate i.
[[nodiscard]] inline std::vector<int> match_targets(
    const std::vector<TargetParams>& truth,
    const std::vector<TargetParams>& est, double symbol_time_s) {
  if (truth.size() != est.size())
    throw std::invalid_argument("match_targets: list length mismatch");
  if (truth.size() > 6)
    throw std::invalid_argument("match_targets: exhaustive search capped at 6");
  if (symbol_time_s <= 0.0)
    throw std::invalid_argument("match_targets: symbol_time_s must be > 0");
  const int k = static_cast<int>(truth.size());

  auto dist = [&](const TargetParams& a, const TargetParams& b) {
    const double dt = (a.tau_s - b.tau_s) / symbol_time_s;
    const double dn = (a.nu_hz - b.nu_hz) * symbol_time_s;
    const double d1 = a.phi_sr - b.phi_sr, d2 = a.theta_sr - b.theta_sr;
    const double d3 = a.phi_ris_d - b.phi_ris_d,
                 d4 = a.theta_ris_d - b.theta_ris_d;
    return dt * dt + dn * dn + d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4;
  };

  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> best = order;
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0;
    for (int i = 0; i < k; ++i)
      cost += dist(est[static_cast<std::size_t>(i)],
                   truth[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    if (cost < best_cost) {
      best_cost = cost;
      best = order;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return best;
}

// Full per-scene estimation output. RIS angle fields are only meaningful
// when the corresponding has_* flag is set: the diagonal mode observes only
// the elementwise product of the arrival and departure surface profiles and
// cannot resolve either side.
struct EstimateReport {
  RVec tau_s, nu_hz;                // per target
  RVec phi_sr, theta_sr;            // per target, receive side
  RVec phi_ris_d, theta_ris_d;      // per target, surface departure
  CVec alpha;                       // per target
  double phi_ris_a = 0, theta_ris_a = 0;  // shared surface arrival
  bool has_ris_arrival = false;
  bool has_ris_departure = false;
  std::vector<int> permutation;  // estimate index -> truth index, evaluation only
};

}  // namespace tendae
