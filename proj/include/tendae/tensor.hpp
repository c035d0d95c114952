// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "tendae/common.hpp"

namespace tendae {

// Dense third-order complex tensor. Flat storage is column-major:
// element (i, j, r) lives at data()[i + dim1*j + dim1*dim2*r].
// All multilinear contracts are expressed through unfold/fold below, so the
// layout itself is an implementation detail.
class Tensor3 {
 public:
  Tensor3() : d1_(0), d2_(0), d3_(0) {}

  Tensor3(Eigen::Index d1, Eigen::Index d2, Eigen::Index d3)
      : d1_(d1), d2_(d2), d3_(d3) {
    if (d1 < 0 || d2 < 0 || d3 < 0)
      throw std::invalid_argument("Tensor3: negative dimension");
    data_ = CVec::Zero(d1 * d2 * d3);
  }

  [[nodiscard]] Eigen::Index dim1() const { return d1_; }
  [[nodiscard]] Eigen::Index dim2() const { return d2_; }
  [[nodiscard]] Eigen::Index dim3() const { return d3_; }
  [[nodiscard]] Eigen::Index size() const { return data_.size(); }

  cdouble& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index r) {
    return data_(i + d1_ * j + d1_ * d2_ * r);
  }
  cdouble operator()(Eigen::Index i, Eigen::Index j, Eigen::Index r) const {
    return data_(i + d1_ * j + d1_ * d2_ * r);
  }

  [[nodiscard]] CVec& data() { return data_; }
  [[nodiscard]] const CVec& data() const { return data_; }

  [[nodiscard]] double norm() const { return data_.norm(); }

 private:
  Eigen::Index d1_, d2_, d3_;
  CVec data_;
};

namespace detail {
inline void check_mode(int mode, const char* fn) {
  if (mode < 1 || mode > 3)
    throw std::invalid_argument(std::string(fn) + ": mode must be 1, 2 or 3");
}
}  // namespace detail

// Mode-n unfolding of an I x J x R tensor:
//   mode 1: I x (J R), frontal slices side by side, column r*J + j
//   mode 2: J x (I R), transposed frontal slices,   column r*I + i
//   mode 3: R x (I J), row r is vec of slice r,     column j*I + i
[[nodiscard]] inline CMat unfold(const Tensor3& t, int mode) {
  detail::check_mode(mode, "unfold");
  const Eigen::Index I = t.dim1(), J = t.dim2(), R = t.dim3();
  if (mode == 1) {
    // Column r*J + j coincides with the flat layout: plain reshape.
    return Eigen::Map<const CMat>(t.data().data(), I, J * R);
  }
  if (mode == 2) {
    CMat m(J, I * R);
    for (Eigen::Index r = 0; r < R; ++r) {
      Eigen::Map<const CMat> slice(t.data().data() + I * J * r, I, J);
      m.block(0, r * I, J, I) = slice.transpose();
    }
    return m;
  }
  CMat m(R, I * J);
  for (Eigen::Index r = 0; r < R; ++r)
    m.row(r) = Eigen::Map<const CVec>(t.data().data() + I * J * r, I * J)
                   .transpose();
  return m;
}

// Inverse of unfold: rebuilds the I x J x R tensor from its mode-n unfolding.
[[nodiscard]] inline Tensor3 fold(const CMat& m, int mode, Eigen::Index I,
                                  Eigen::Index J, Eigen::Index R) {
  detail::check_mode(mode, "fold");
  const Eigen::Index want_rows = mode == 1 ? I : (mode == 2 ? J : R);
  const Eigen::Index want_cols = I * J * R / std::max<Eigen::Index>(want_rows, 1);
  if (m.rows() != want_rows || m.cols() != want_cols || I * J * R != m.size())
    throw std::invalid_argument(
        "fold: matrix " + std::to_string(m.rows()) + "x" +
        std::to_string(m.cols()) + " does not match mode-" +
        std::to_string(mode) + " unfolding of " + std::to_string(I) + "x" +
        std::to_string(J) + "x" + std::to_string(R));
  Tensor3 t(I, J, R);
  if (mode == 1) {
    Eigen::Map<CMat>(t.data().data(), I, J * R) = m;
    return t;
  }
  if (mode == 2) {
    for (Eigen::Index r = 0; r < R; ++r)
      Eigen::Map<CMat>(t.data().data() + I * J * r, I, J) =
          m.block(0, r * I, J, I).transpose();
    return t;
  }
  for (Eigen::Index r = 0; r < R; ++r)
    Eigen::Map<CVec>(t.data().data() + I * J * r, I * J) = m.row(r).transpose();
  return t;
}

// Mode-n product t x_n a. Contract: unfold(result, n) == a * unfold(t, n).
[[nodiscard]] inline Tensor3 n_mode_product(const Tensor3& t, const CMat& a,
                                            int mode) {
  detail::check_mode(mode, "n_mode_product");
  const Eigen::Index dims[3] = {t.dim1(), t.dim2(), t.dim3()};
  if (a.cols() != dims[mode - 1])
    throw std::invalid_argument(
        "n_mode_product: factor has " + std::to_string(a.cols()) +
        " columns, mode-" + std::to_string(mode) + " dimension is " +
        std::to_string(dims[mode - 1]));
  Eigen::Index nd[3] = {dims[0], dims[1], dims[2]};
  nd[mode - 1] = a.rows();
  return fold(a * unfold(t, mode), mode, nd[0], nd[1], nd[2]);
}

[[nodiscard]] inline CMat kron(const CMat& a, const CMat& b) {
  return Eigen::kroneckerProduct(a, b);
}

[[nodiscard]] inline CVec kron(const CVec& a, const CVec& b) {
  CVec out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

// Column-wise Kronecker product of two matrices with equal column counts.
[[nodiscard]] inline CMat khatri_rao(const CMat& a, const CMat& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("khatri_rao: column counts differ (" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.cols()) + ")");
  CMat out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index k = 0; k < a.cols(); ++k)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      out.col(k).segment(i * b.rows(), b.rows()) = a(i, k) * b.col(k);
  return out;
}

// Block rearrangement. c is (i1*i2) x (j1*j2), viewed as an i1 x j1 grid of
// i2 x j2 blocks. Column i1c + j1c*i1 of the result is vec of block
// (i1c, j1c), so for any Kronecker sum,
//   rearrange(sum_k A_k kron B_k) == sum_k vec(B_k) vec(A_k)^T
// with A_k of size i1 x j1 and B_k of size i2 x j2.
[[nodiscard]] inline CMat rearrange(const CMat& c, Eigen::Index i1,
                                    Eigen::Index j1, Eigen::Index i2,
                                    Eigen::Index j2) {
  if (c.rows() != i1 * i2 || c.cols() != j1 * j2)
    throw std::invalid_argument(
        "rearrange: matrix " + std::to_string(c.rows()) + "x" +
        std::to_string(c.cols()) + " is not (" + std::to_string(i1) + "*" +
        std::to_string(i2) + ")x(" + std::to_string(j1) + "*" +
        std::to_string(j2) + ")");
  CMat out(i2 * j2, i1 * j1);
  for (Eigen::Index j1c = 0; j1c < j1; ++j1c)
    for (Eigen::Index i1c = 0; i1c < i1; ++i1c)
      for (Eigen::Index j2c = 0; j2c < j2; ++j2c)
        out.col(i1c + j1c * i1).segment(j2c * i2, i2) =
            c.block(i1c * i2, j1c * j2 + j2c, i2, 1);
  return out;
}

// Inverse of rearrange with the same block geometry.
[[nodiscard]] inline CMat inverse_rearrange(const CMat& r, Eigen::Index i1,
                                            Eigen::Index j1, Eigen::Index i2,
                                            Eigen::Index j2) {
  if (r.rows() != i2 * j2 || r.cols() != i1 * j1)
    throw std::invalid_argument(
        "inverse_rearrange: matrix " + std::to_string(r.rows()) + "x" +
        std::to_string(r.cols()) + " is not (" + std::to_string(i2) + "*" +
        std::to_string(j2) + ")x(" + std::to_string(i1) + "*" +
        std::to_string(j1) + ")");
  CMat out(i1 * i2, j1 * j2);
  for (Eigen::Index j1c = 0; j1c < j1; ++j1c)
    for (Eigen::Index i1c = 0; i1c < i1; ++i1c)
      for (Eigen::Index j2c = 0; j2c < j2; ++j2c)
        out.block(i1c * i2, j1c * j2 + j2c, i2, 1) =
            r.col(i1c + j1c * i1).segment(j2c * i2, i2);
  return out;
}

// Rank-R trilinear reconstruction from factor matrices a (I x R), b (J x R),
// c (K x R): t(i,j,k) = sum_r a(i,r) b(j,r) c(k,r).
[[nodiscard]] inline Tensor3 parafac_reconstruct(const CMat& a, const CMat& b,
                                                 const CMat& c) {
  if (a.cols() != b.cols() || b.cols() != c.cols())
    throw std::invalid_argument("parafac_reconstruct: factor column counts differ");
  return fold(a * khatri_rao(c, b).transpose(), 1, a.rows(), b.rows(), c.rows());
}

// Core times factor matrices along each mode.
[[nodiscard]] inline Tensor3 tucker_reconstruct(const Tensor3& core,
                                                const CMat& a, const CMat& b,
                                                const CMat& c) {
  return n_mode_product(n_mode_product(n_mode_product(core, a, 1), b, 2), c, 3);
}

// Largest k such that every subset of k columns is linearly independent.
// Exhaustive over column subsets; meant for small diagnostic matrices only.
// A subset counts as dependent when its smallest singular value is at most
// rel_tol times its largest.
[[nodiscard]] inline int k_rank(const CMat& m, double rel_tol = 1e-8) {
  const Eigen::Index cols = m.cols();
  if (cols > 8)
    throw std::invalid_argument("k_rank: supports at most 8 columns, got " +
                                std::to_string(cols));
  if (cols == 0) return 0;
  const int kmax = static_cast<int>(std::min(m.rows(), cols));
  for (int k = 1; k <= kmax; ++k) {
    for (unsigned mask = 0; mask < (1u << cols); ++mask) {
      if (__builtin_popcount(mask) != k) continue;
      CMat sub(m.rows(), k);
      int c = 0;
      for (Eigen::Index j = 0; j < cols; ++j)
        if (mask & (1u << j)) sub.col(c++) = m.col(j);
      Eigen::JacobiSVD<CMat> svd(sub);
      const auto& s = svd.singularValues();
      if (s(0) <= 0.0 || s(s.size() - 1) <= rel_tol * s(0)) return k - 1;
    }
  }
  return kmax;
}

}  // namespace tendae
