#pragma once

// Dense straight-line oracles shared by the unit and acceptance suites.
// Nothing here calls into the solver code paths it is used to check: the
// tensor operator is assembled as an explicit Kronecker matrix and every
// projection is an explicit dense matrix.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bcdreg/core.hpp"

namespace bcdreg::oracle {

inline BlockVector random_blocks(std::mt19937_64& gen, std::size_t blocks, std::size_t n,
                                 double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  BlockVector x(blocks, n);
  for (auto& v : x.data()) v = dist(gen);
  return x;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& gen, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(gen);
  return m;
}

inline Eigen::VectorXd to_dense(const BlockVector& x) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v(static_cast<Eigen::Index>(i)) = x.data()[i];
  return v;
}

inline BlockVector from_dense(const Eigen::VectorXd& v, std::size_t blocks) {
  BlockVector x(blocks, static_cast<std::size_t>(v.size()) / blocks);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = v(static_cast<Eigen::Index>(i));
  return x;
}

/// kron(a, b) with block-major ordering matching BlockVector storage.
inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Straight-line loping BCD on explicit matrices. Returns every iterate x_0..x_steps.
struct DenseLopingBcd {
  Eigen::MatrixXd V;
  Eigen::MatrixXd K;
  double tau;
  std::vector<double> delta;
  double step;
  bool loping = true;

  std::vector<Eigen::VectorXd> run(Eigen::VectorXd x, const Eigen::VectorXd& y,
                                   std::size_t steps) const {
    const Eigen::Index B = V.cols(), D = V.rows();
    const Eigen::MatrixXd A = kron(V, K);
    std::vector<Eigen::VectorXd> iterates{x};
    for (std::size_t k = 0; k < steps; ++k) {
      const Eigen::Index b = static_cast<Eigen::Index>(k % static_cast<std::size_t>(B));
      const Eigen::VectorXd vb = V.col(b);
      const Eigen::MatrixXd Qb =
          kron(vb * vb.transpose() / vb.squaredNorm(), Eigen::MatrixXd::Identity(K.rows(), K.rows()));
      Eigen::MatrixXd eb = Eigen::MatrixXd::Zero(B, B);
      eb(b, b) = 1.0;
      const Eigen::MatrixXd Pb = kron(eb, Eigen::MatrixXd::Identity(K.cols(), K.cols()));
      const double r = (Qb * (y - A * x)).norm();
      const int d = !loping || r >= tau * delta[static_cast<std::size_t>(b)] ? 1 : 0;
      x = x - d * step * Pb * A.transpose() * (A * x - y);
      iterates.push_back(x);
      (void)D;
    }
    return iterates;
  }
};

/// Minimum-distance solution to x0 of A x = y via complete orthogonal decomposition.
inline Eigen::VectorXd min_norm_solution(const Eigen::MatrixXd& A, const Eigen::VectorXd& y,
                                         const Eigen::VectorXd& x0) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  return x0 + cod.solve(y - A * x0);
}

}  // namespace bcdreg::oracle
