// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace tendae {

using cdouble = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

// SplitMix64 step; used to derive independent stream seeds from a master seed.
[[nodiscard]] inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for a named sub-stream (e.g. targets / schedule / noise) of a trial.
[[nodiscard]] inline std::uint64_t derive_seed(std::uint64_t master,
                                               std::uint64_t a,
                                               std::uint64_t b = 0,
                                               std::uint64_t c = 0) {
  std::uint64_t s = splitmix64(master ^ 0x7c6bab5f9f8e03d1ULL);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  return splitmix64(s ^ c);
}

// Deterministic RNG: std::mt19937_64 bit stream (fully specified by the
// standard) with explicit uniform/Box-Muller transforms, so identical seeds
// give identical doubles on any conforming implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard real Gaussian.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  // Circularly symmetric complex Gaussian, unit variance (0.5 per component).
  cdouble cnormal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-std::log(u1));
    return {r * std::cos(2.0 * kPi * u2), r * std::sin(2.0 * kPi * u2)};
  }

  CMat cnormal_matrix(Eigen::Index rows, Eigen::Index cols) {
    CMat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = cnormal();
    return m;
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

// Moore-Penrose pseudo-inverse. Singular values <= rcond * s_max are treated
// as zero. rank_out / deficient report the effective rank decision.
[[nodiscard]] inline CMat pinv(const CMat& a, double rcond = 1e-10,
                               int* rank_out = nullptr,
                               bool* deficient = nullptr) {
  if (a.rows() == 0 || a.cols() == 0)
    throw std::invalid_argument("pinv: empty matrix");
  Eigen::BDCSVD<CMat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const double cut = rcond * s(0);
  const Eigen::Index n = s.size();
  CVec inv = CVec::Zero(n);
  int rank = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (s(i) > cut && s(i) > 0.0) {
      inv(i) = cdouble(1.0 / s(i), 0.0);
      ++rank;
    }
  }
  if (rank_out) *rank_out = rank;
  if (deficient) *deficient = rank < std::min(a.rows(), a.cols());
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().adjoint();
}

// FNV-1a over raw bytes; used for content digests in manifests.
[[nodiscard]] inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[nodiscard]] inline std::uint64_t digest(const CMat& m) {
  return fnv1a64(m.data(), sizeof(cdouble) * static_cast<std::size_t>(m.size()));
}

[[nodiscard]] inline double deg2rad(double d) { return d * kPi / 180.0; }
[[nodiscard]] inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace tendae
