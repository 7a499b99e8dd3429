#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bcdreg/core.hpp"

namespace bcdreg {

/**
 * A bounded linear map K : R^n -> R^m together with its adjoint.
 *
 * Public entry points check dimensions and forward to the protected
 * do_apply / do_adjoint, which may assume correctly sized, non-aliasing
 * arguments and must overwrite the output.
 */
class LinearOp {
 public:
  virtual ~LinearOp() = default;

  virtual std::size_t domain_dim() const = 0;
  virtual std::size_t range_dim() const = 0;

  void apply(std::span<const double> x, std::span<double> y) const {
    check(x.size(), domain_dim(), "apply: input");
    check(y.size(), range_dim(), "apply: output");
    do_apply(x, y);
  }

  void adjoint_apply(std::span<const double> y, std::span<double> x) const {
    check(y.size(), range_dim(), "adjoint_apply: input");
    check(x.size(), domain_dim(), "adjoint_apply: output");
    do_adjoint(y, x);
  }

  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> y(range_dim());
    apply(x, y);
    return y;
  }

  std::vector<double> adjoint_apply(std::span<const double> y) const {
    std::vector<double> x(domain_dim());
    adjoint_apply(y, x);
    return x;
  }

 protected:
  virtual void do_apply(std::span<const double> x, std::span<double> y) const = 0;
  virtual void do_adjoint(std::span<const double> y, std::span<double> x) const = 0;

 private:
  static void check(std::size_t got, std::size_t want, const char* what) {
    if (got != want)
      throw shape_error(std::string(what) + " has length " + std::to_string(got) + ", expected " +
                        std::to_string(want));
  }
};

class IdentityOp final : public LinearOp {
 public:
  explicit IdentityOp(std::size_t n) : n_(n) {}
  std::size_t domain_dim() const override { return n_; }
  std::size_t range_dim() const override { return n_; }

 protected:
  void do_apply(std::span<const double> x, std::span<double> y) const override {
    std::copy(x.begin(), x.end(), y.begin());
  }
  void do_adjoint(std::span<const double> y, std::span<double> x) const override {
    std::copy(y.begin(), y.end(), x.begin());
  }

 private:
  std::size_t n_;
};

/// Explicit dense matrix.
class MatrixOp final : public LinearOp {
 public:
  explicit MatrixOp(Matrix m) : m_(std::move(m)) {}
  std::size_t domain_dim() const override { return static_cast<std::size_t>(m_.cols()); }
  std::size_t range_dim() const override { return static_cast<std::size_t>(m_.rows()); }
  const Matrix& matrix() const { return m_; }

 protected:
  void do_apply(std::span<const double> x, std::span<double> y) const override {
    Eigen::Map<Eigen::VectorXd>(y.data(), m_.rows()) =
        m_ * Eigen::Map<const Eigen::VectorXd>(x.data(), m_.cols());
  }
  void do_adjoint(std::span<const double> y, std::span<double> x) const override {
    Eigen::Map<Eigen::VectorXd>(x.data(), m_.cols()) =
        m_.transpose() * Eigen::Map<const Eigen::VectorXd>(y.data(), m_.rows());
  }

 private:
  Matrix m_;
};

/**
 * Composite trapezoid discretization of f -> (s -> int_0^s f) on the nodes
 * t_j = j/p, j = 0..p. Both apply and adjoint run in O(p); the adjoint is
 * the literal transpose of the quadrature matrix.
 */
class IntegrationOp final : public LinearOp {
 public:
  explicit IntegrationOp(std::size_t intervals) : p_(intervals) {
    if (intervals == 0) throw config_error("IntegrationOp: need at least one interval");
  }

  std::size_t intervals() const { return p_; }
  std::size_t domain_dim() const override { return p_ + 1; }
  std::size_t range_dim() const override { return p_ + 1; }

  /// Dense quadrature matrix, for tests and small oracles.
  Matrix matrix() const {
    const auto n = static_cast<Eigen::Index>(p_ + 1);
    const double h = 1.0 / static_cast<double>(p_);
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index j = 1; j < n; ++j) {
      m(j, 0) = 0.5 * h;
      for (Eigen::Index i = 1; i < j; ++i) m(j, i) = h;
      m(j, j) = 0.5 * h;
    }
    return m;
  }

 protected:
  void do_apply(std::span<const double> f, std::span<double> g) const override {
    const double h = 1.0 / static_cast<double>(p_);
    g[0] = 0.0;
    double acc = 0.0;
    for (std::size_t j = 1; j <= p_; ++j) {
      acc += 0.5 * h * (f[j - 1] + f[j]);
      g[j] = acc;
    }
  }

  void do_adjoint(std::span<const double> g, std::span<double> f) const override {
    // (T^T g)_i = h (g_i / 2 + sum_{j>i} g_j) for i >= 1, and h/2 sum_{j>=1} g_j for i = 0.
    const double h = 1.0 / static_cast<double>(p_);
    double tail = 0.0;  // sum_{j>i} g_j
    for (std::size_t i = p_; i >= 1; --i) {
      f[i] = h * (0.5 * g[i] + tail);
      tail += g[i];
    }
    f[0] = 0.5 * h * tail;
  }

 private:
  std::size_t p_;
};

/// Wraps an operator and counts forward and adjoint applications.
class CountingOp final : public LinearOp {
 public:
  explicit CountingOp(std::shared_ptr<const LinearOp> inner) : inner_(std::move(inner)) {}

  std::size_t domain_dim() const override { return inner_->domain_dim(); }
  std::size_t range_dim() const override { return inner_->range_dim(); }

  std::size_t forward_calls() const { return forward_.load(); }
  std::size_t adjoint_calls() const { return adjoint_.load(); }
  std::size_t total_calls() const { return forward_calls() + adjoint_calls(); }
  void reset() const {
    forward_ = 0;
    adjoint_ = 0;
  }

 protected:
  void do_apply(std::span<const double> x, std::span<double> y) const override {
    ++forward_;
    inner_->apply(x, y);
  }
  void do_adjoint(std::span<const double> y, std::span<double> x) const override {
    ++adjoint_;
    inner_->adjoint_apply(y, x);
  }

 private:
  std::shared_ptr<const LinearOp> inner_;
  mutable std::atomic<std::size_t> forward_{0};
  mutable std::atomic<std::size_t> adjoint_{0};
};

/// Relative singular-value threshold below which V is treated as rank deficient.
inline constexpr double kRankTolerance = 1e-10;

/**
 * A = V ⊗ K acting on X^B -> Y^D. V must have full column rank B and no
 * zero column; the constructor enforces both.
 */
class TensorOp {
 public:
  TensorOp(Matrix V, std::shared_ptr<const LinearOp> K) : V_(std::move(V)), K_(std::move(K)) {
    if (!K_) throw config_error("TensorOp: null operator K");
    if (V_.cols() < 1 || V_.rows() < 1) throw config_error("TensorOp: V is empty");
    if (V_.rows() < V_.cols())
      throw config_error("TensorOp: V has fewer rows than columns, rank B impossible");
    col_norm_sq_.resize(static_cast<std::size_t>(V_.cols()));
    for (Eigen::Index b = 0; b < V_.cols(); ++b) {
      col_norm_sq_[static_cast<std::size_t>(b)] = V_.col(b).squaredNorm();
      if (col_norm_sq_[static_cast<std::size_t>(b)] == 0.0)
        throw config_error("TensorOp: column " + std::to_string(b) + " of V vanishes");
    }
    Eigen::JacobiSVD<Matrix> svd(V_);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) <= kRankTolerance * sv(0))
      throw config_error("TensorOp: V is rank deficient (smallest singular value " +
                         std::to_string(sv(sv.size() - 1)) + ")");
  }

  const Matrix& V() const { return V_; }
  const LinearOp& K() const { return *K_; }
  std::shared_ptr<const LinearOp> K_ptr() const { return K_; }

  std::size_t num_blocks() const { return static_cast<std::size_t>(V_.cols()); }
  std::size_t num_outputs() const { return static_cast<std::size_t>(V_.rows()); }
  std::size_t domain_block_size() const { return K_->domain_dim(); }
  std::size_t range_block_size() const { return K_->range_dim(); }

  double column_norm_sq(std::size_t b) const { return col_norm_sq_.at(b); }
  double max_column_norm_sq() const {
    return *std::max_element(col_norm_sq_.begin(), col_norm_sq_.end());
  }

  BlockVector zero_domain() const { return BlockVector(num_blocks(), domain_block_size()); }
  BlockVector zero_range() const { return BlockVector(num_outputs(), range_block_size()); }

  /// (Id ⊗ K) x, one application of K per block.
  BlockVector apply_blockwise(const BlockVector& x) const {
    if (x.block_size() != domain_block_size())
      throw shape_error("apply_blockwise: block length does not match K's domain");
    BlockVector out(x.num_blocks(), range_block_size());
    for (std::size_t b = 0; b < x.num_blocks(); ++b) K_->apply(x.block(b), out.block(b));
    return out;
  }

  /// (Id ⊗ K*) y, one application of K* per block.
  BlockVector adjoint_blockwise(const BlockVector& y) const {
    if (y.block_size() != range_block_size())
      throw shape_error("adjoint_blockwise: block length does not match K's range");
    BlockVector out(y.num_blocks(), domain_block_size());
    for (std::size_t b = 0; b < y.num_blocks(); ++b) K_->adjoint_apply(y.block(b), out.block(b));
    return out;
  }

  /// A x computed as V_Y ∘ K_B.
  BlockVector apply(const BlockVector& x) const {
    check_domain(x, "apply_forward");
    return v_lift(V_, apply_blockwise(x));
  }

  /// A x computed as K_D ∘ V_X.
  BlockVector apply_lifted(const BlockVector& x) const {
    check_domain(x, "apply_lifted");
    return apply_blockwise(v_lift(V_, x));
  }

  /// A* y = (V^T ⊗ K*) y, mixing first so K* runs B times rather than D times.
  BlockVector adjoint(const BlockVector& y) const {
    if (y.num_blocks() != num_outputs() || y.block_size() != range_block_size())
      throw shape_error("apply_adjoint: expected " + std::to_string(num_outputs()) + " blocks of " +
                        std::to_string(range_block_size()));
    return adjoint_blockwise(v_lift_adjoint(V_, y));
  }

 private:
  void check_domain(const BlockVector& x, const char* what) const {
    if (x.num_blocks() != num_blocks() || x.block_size() != domain_block_size())
      throw shape_error(std::string(what) + ": expected " + std::to_string(num_blocks()) +
                        " blocks of " + std::to_string(domain_block_size()));
  }

  Matrix V_;
  std::shared_ptr<const LinearOp> K_;
  std::vector<double> col_norm_sq_;
};

inline BlockVector apply_forward(const TensorOp& A, const BlockVector& x) { return A.apply(x); }
inline BlockVector apply_adjoint(const TensorOp& A, const BlockVector& y) { return A.adjoint(y); }

/// P_b x: keeps block b, zeroes the rest.
inline BlockVector project_block(const BlockVector& x, std::size_t b) {
  BlockVector out(x.num_blocks(), x.block_size());
  const auto src = x.block(b);
  std::copy(src.begin(), src.end(), out.block(b).begin());
  return out;
}

/// Q_b y = (v_b v_b^T / ||v_b||^2 ⊗ Id) y for column b of V.
inline BlockVector q_project(const Matrix& V, std::size_t b, const BlockVector& y) {
  if (b >= static_cast<std::size_t>(V.cols()))
    throw shape_error("q_project: column index " + std::to_string(b) + " out of range");
  if (static_cast<std::size_t>(V.rows()) != y.num_blocks())
    throw shape_error("q_project: V rows do not match block count");
  const auto col = V.col(static_cast<Eigen::Index>(b));
  const double nrm2 = col.squaredNorm();
  if (nrm2 == 0.0) throw config_error("q_project: column " + std::to_string(b) + " vanishes");
  std::vector<double> w(y.block_size(), 0.0);  // v_b^T y
  for (Eigen::Index d = 0; d < V.rows(); ++d) axpy(col(d), y.block(d), w);
  BlockVector out(y.num_blocks(), y.block_size());
  for (Eigen::Index d = 0; d < V.rows(); ++d) axpy(col(d) / nrm2, w, out.block(d));
  return out;
}

struct NormEstimate {
  double value = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

inline constexpr double kNormTolerance = 1e-8;
inline constexpr std::size_t kNormMaxIter = 10000;
inline constexpr std::uint64_t kNormSeed = 0x5eed5eedULL;

/**
 * Largest singular value of op by power iteration on op* op. The start
 * vector is drawn from a fixed-seed mt19937_64 so the estimate, and every
 * step size derived from it, is reproducible.
 */
inline NormEstimate operator_norm(const LinearOp& op, double tol = kNormTolerance,
                                  std::size_t max_iter = kNormMaxIter,
                                  std::uint64_t seed = kNormSeed) {
  NormEstimate est;
  const std::size_t n = op.domain_dim();
  if (n == 0 || op.range_dim() == 0) {
    est.converged = true;
    return est;
  }
  std::mt19937_64 gen(seed);
  std::vector<double> v(n), w(op.range_dim()), u(n);
  for (auto& e : v) e = 2.0 * (static_cast<double>(gen() >> 11) * 0x1.0p-53) - 1.0;
  double nv = norm(v);
  for (auto& e : v) e /= nv;

  double sigma = 0.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    op.apply(v, w);
    const double next = norm(w);  // ||K v|| with ||v|| = 1
    est.iterations = it;
    if (next == 0.0) {
      // Either the operator vanishes or v landed in its kernel; the latter
      // has probability zero for a random start.
      est.value = 0.0;
      est.converged = true;
      return est;
    }
    const bool done = it > 1 && std::abs(next - sigma) <= tol * next;
    sigma = next;
    if (done) {
      est.converged = true;
      break;
    }
    op.adjoint_apply(w, u);
    nv = norm(u);
    if (nv == 0.0) break;
    for (std::size_t i = 0; i < n; ++i) v[i] = u[i] / nv;
  }
  est.value = sigma;
  return est;
}

/// Spectral norm of a dense matrix through the same power iteration.
inline NormEstimate operator_norm(const Matrix& m, double tol = kNormTolerance,
                                  std::size_t max_iter = kNormMaxIter) {
  return operator_norm(MatrixOp(m), tol, max_iter);
}

}  // namespace bcdreg
