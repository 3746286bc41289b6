#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace rfid {

/// Activations are stored one token per row.
template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <class Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Mask = std::vector<bool>;

/// Row-wise softmax with -inf entries treated as excluded. A row with every
/// entry excluded becomes all zeros instead of NaN.
template <class Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& scores) {
  using Scalar = typename Derived::Scalar;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    const Scalar peak = row.maxCoeff();
    if (peak == -std::numeric_limits<Scalar>::infinity()) {
      row.setZero();
      continue;
    }
    row = (row.array() - peak).exp();
    row /= row.sum();
  }
}

/// log-sum-exp of one row, stable for large magnitudes.
template <class Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& row) {
  using Scalar = typename Derived::Scalar;
  const Scalar peak = row.maxCoeff();
  return peak + std::log((row.array() - peak).exp().sum());
}

/// Sinusoidal position table, `positions` x `width`.
template <class Scalar>
Matrix<Scalar> sinusoidal_positions(int positions, int width) {
  Matrix<Scalar> table(positions, width);
  for (int p = 0; p < positions; ++p) {
    for (int i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      const double angle = p * rate;
      table(p, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return table;
}

/// Index of the largest entry; ties resolve to the lowest index.
template <class Derived>
int argmax(const Eigen::MatrixBase<Derived>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace rfid
