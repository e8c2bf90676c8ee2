// Copyright 2026 The Headlink Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "headlink/error.hpp"

namespace headlink {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Total sum of squares below which a target is treated as constant.
inline constexpr double kSstEpsilon = 1e-12;
/// Default relative tolerance for numerical_rank.
inline constexpr double kRankRtol = 1e-10;

struct FitOptions {
  bool intercept = true;
  double ridge_lambda = 0.0;
};

template <typename Scalar>
struct LstsqSolution {
  /// (p+1) x d with intercept (intercept in the last row), p x d otherwise.
  Mat<Scalar> weights;
  Scalar residual_ss = 0;
  Eigen::Index effective_rank = 0;
};

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite())
    throw Error(ErrorCode::NonFiniteInput, std::string(what) + " contains NaN or Inf");
}

/// Appends a trailing column of ones.
template <typename Derived>
Mat<typename Derived::Scalar> with_intercept(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()).setOnes();
  return out;
}

/// Applies fitted weights to a design, handling the intercept row.
template <typename DerivedX, typename DerivedW>
Mat<typename DerivedX::Scalar> apply_weights(const Eigen::MatrixBase<DerivedX>& x,
                                             const Eigen::MatrixBase<DerivedW>& w,
                                             bool intercept) {
  if (!intercept) return x * w;
  Mat<typename DerivedX::Scalar> y = x * w.topRows(w.rows() - 1);
  y.rowwise() += w.row(w.rows() - 1);
  return y;
}

/// SVD factorization of a design matrix, reusable across right-hand sides.
/// Produces the minimum-norm least-squares solution; ridge damping is applied
/// to the retained singular values.
template <typename Scalar>
class LeastSquares {
 public:
  template <typename Derived>
  LeastSquares(const Eigen::MatrixBase<Derived>& x, const FitOptions& opts)
      : opts_(opts) {
    if (x.rows() < 1) throw Error(ErrorCode::InvalidShape, "design has no rows");
    if (!(opts.ridge_lambda >= 0.0))
      throw Error(ErrorCode::InvalidArgument, "ridge_lambda must be >= 0");
    require_finite(x, "design");
    design_ = opts.intercept ? with_intercept(x.template cast<Scalar>())
                             : Mat<Scalar>(x.template cast<Scalar>());
    svd_.compute(design_, Eigen::ComputeThinU | Eigen::ComputeThinV);

    const auto& s = svd_.singularValues();
    const Scalar smax = s.size() ? s(0) : Scalar(0);
    const Scalar tol = std::numeric_limits<Scalar>::epsilon() *
                       static_cast<Scalar>(std::max(design_.rows(), design_.cols())) * smax;
    const Scalar lambda = static_cast<Scalar>(opts.ridge_lambda);
    factors_.resize(s.size());
    rank_ = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s(i) > tol && s(i) > Scalar(0)) {
        factors_(i) = s(i) / (s(i) * s(i) + lambda);
        ++rank_;
      } else {
        factors_(i) = Scalar(0);
      }
    }
  }

  template <typename Derived>
  LstsqSolution<Scalar> solve(const Eigen::MatrixBase<Derived>& y) const {
    if (y.rows() != design_.rows())
      throw Error(ErrorCode::InvalidShape,
                  "row mismatch: design has " + std::to_string(design_.rows()) +
                      " rows, target has " + std::to_string(y.rows()));
    require_finite(y, "target");
    const Mat<Scalar> yc = y.template cast<Scalar>();
    LstsqSolution<Scalar> out;
    out.weights = svd_.matrixV() * (factors_.asDiagonal() * (svd_.matrixU().transpose() * yc));
    out.residual_ss = (yc - design_ * out.weights).squaredNorm();
    out.effective_rank = rank_;
    return out;
  }

  const Mat<Scalar>& design() const { return design_; }
  bool intercept() const { return opts_.intercept; }
  Eigen::Index rank() const { return rank_; }

 private:
  FitOptions opts_;
  Mat<Scalar> design_;
  Eigen::BDCSVD<Mat<Scalar>> svd_;
  Vec<Scalar> factors_;
  Eigen::Index rank_ = 0;
};

template <typename DerivedX, typename DerivedY>
LstsqSolution<typename DerivedX::Scalar> lstsq(const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedY>& y,
                                               bool intercept = true,
                                               double ridge_lambda = 0.0) {
  if (x.rows() != y.rows())
    throw Error(ErrorCode::InvalidShape, "X and Y row counts differ");
  return LeastSquares<typename DerivedX::Scalar>(x, FitOptions{intercept, ridge_lambda})
      .solve(y);
}

/// Frobenius-form coefficient of determination against per-column means.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar r2_score(const Eigen::MatrixBase<DerivedA>& y,
                                   const Eigen::MatrixBase<DerivedB>& yhat) {
  using Scalar = typename DerivedA::Scalar;
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols())
    throw Error(ErrorCode::InvalidShape, "r2_score operands differ in shape");
  if (y.rows() < 2) throw Error(ErrorCode::InvalidShape, "r2_score needs at least 2 rows");
  const Scalar ss_res = (y - yhat).squaredNorm();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = y.colwise().mean();
  const Scalar ss_tot = (y.rowwise() - mean).squaredNorm();
  if (ss_tot < static_cast<Scalar>(kSstEpsilon))
    return ss_res < static_cast<Scalar>(kSstEpsilon) ? Scalar(1) : Scalar(0);
  return Scalar(1) - ss_res / ss_tot;
}

/// R^2 from a residual sum of squares, with the same degenerate convention.
template <typename Derived>
typename Derived::Scalar r2_from_residual(const Eigen::MatrixBase<Derived>& y,
                                          typename Derived::Scalar ss_res) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = y.colwise().mean();
  const Scalar ss_tot = (y.rowwise() - mean).squaredNorm();
  if (ss_tot < static_cast<Scalar>(kSstEpsilon))
    return ss_res < static_cast<Scalar>(kSstEpsilon) ? Scalar(1) : Scalar(0);
  return Scalar(1) - ss_res / ss_tot;
}

/// Count of singular values above rtol * sigma_max * max(rows, cols).
template <typename Derived>
Eigen::Index numerical_rank(const Eigen::MatrixBase<Derived>& m, double rtol = kRankRtol) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) throw Error(ErrorCode::InvalidShape, "numerical_rank of empty matrix");
  require_finite(m, "matrix");
  Eigen::BDCSVD<Mat<Scalar>> svd(m.eval());
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == Scalar(0)) return 0;
  const Scalar cutoff = static_cast<Scalar>(rtol) * s(0) *
                        static_cast<Scalar>(std::max(m.rows(), m.cols()));
  return (s.array() > cutoff).count();
}

/// Orthonormal basis for the column space of a, rank decided at machine precision.
template <typename Derived>
Mat<typename Derived::Scalar> column_basis(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  Eigen::BDCSVD<Mat<Scalar>> svd(a.eval(), Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  const Scalar tol = s.size() ? std::numeric_limits<Scalar>::epsilon() *
                                    static_cast<Scalar>(std::max(a.rows(), a.cols())) * s(0)
                              : Scalar(0);
  const Eigen::Index r = (s.array() > tol).count();
  return svd.matrixU().leftCols(r);
}

/// ||(I - P_A) B||_F^2 = inf_C ||A C - B||_F^2, via an orthonormal basis of col(A).
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar projector_residual(const Eigen::MatrixBase<DerivedA>& a,
                                             const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() != b.rows())
    throw Error(ErrorCode::InvalidShape, "A and B row counts differ");
  require_finite(a, "A");
  require_finite(b, "B");
  const auto q = column_basis(a);
  return (b - q * (q.transpose() * b)).squaredNorm();
}

}  // namespace headlink
