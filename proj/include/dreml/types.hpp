#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace dre {

using Label = std::int64_t;
using Index = Eigen::Index;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

// Rows are samples everywhere in this library.
using Matrix = Mat<double>;
using Vector = Vec<double>;
using RowVector = RowVec<double>;

using Labels = std::vector<Label>;

/// Scale every row of `m` to unit L2 norm in place. Rows whose norm is
/// below `eps` are left untouched and their indices returned.
template <typename Derived>
std::vector<Index> normalize_rows(Eigen::MatrixBase<Derived>& m, typename Derived::Scalar eps = 1e-12) {
  std::vector<Index> degenerate;
  for (Index i = 0; i < m.rows(); ++i) {
    const auto n = m.row(i).norm();
    if (n < eps) {
      degenerate.push_back(i);
      continue;
    }
    m.row(i) /= n;
  }
  return degenerate;
}

/// Max absolute deviation of any row norm from one.
template <typename Derived>
typename Derived::Scalar max_row_norm_error(const Eigen::MatrixBase<Derived>& m) {
  if (m.rows() == 0) return 0;
  return (m.rowwise().norm().array() - typename Derived::Scalar(1)).abs().maxCoeff();
}

}  // namespace dre
