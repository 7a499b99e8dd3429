#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bcdreg/errors.hpp"

namespace bcdreg {

/// Dense mixing matrix V (D rows, B columns).
using Matrix = Eigen::MatrixXd;

/**
 * An element of X^B: B blocks of a common length, stored block after block
 * in one contiguous buffer. Block indices are zero based.
 */
class BlockVector {
 public:
  BlockVector() = default;

  BlockVector(std::size_t num_blocks, std::size_t block_size)
      : num_blocks_(num_blocks), block_size_(block_size), data_(num_blocks * block_size, 0.0) {
    if (num_blocks == 0) throw shape_error("BlockVector: at least one block is required");
  }

  BlockVector(std::initializer_list<std::initializer_list<double>> blocks)
      : BlockVector(std::vector<std::vector<double>>(blocks.begin(), blocks.end())) {}

  explicit BlockVector(const std::vector<std::vector<double>>& blocks) {
    if (blocks.empty()) throw shape_error("BlockVector: at least one block is required");
    num_blocks_ = blocks.size();
    block_size_ = blocks.front().size();
    data_.reserve(num_blocks_ * block_size_);
    for (const auto& b : blocks) {
      if (b.size() != block_size_) throw shape_error("BlockVector: blocks differ in length");
      data_.insert(data_.end(), b.begin(), b.end());
    }
  }

  std::size_t num_blocks() const noexcept { return num_blocks_; }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> block(std::size_t b) {
    check_block(b);
    return {data_.data() + b * block_size_, block_size_};
  }
  std::span<const double> block(std::size_t b) const {
    check_block(b);
    return {data_.data() + b * block_size_, block_size_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& operator()(std::size_t b, std::size_t i) { return data_[b * block_size_ + i]; }
  double operator()(std::size_t b, std::size_t i) const { return data_[b * block_size_ + i]; }

  bool same_shape(const BlockVector& other) const noexcept {
    return num_blocks_ == other.num_blocks_ && block_size_ == other.block_size_;
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const BlockVector& a, const BlockVector& b) = default;

 private:
  void check_block(std::size_t b) const {
    if (b >= num_blocks_)
      throw shape_error("block index " + std::to_string(b) + " out of range [0, " +
                        std::to_string(num_blocks_) + ")");
  }

  std::size_t num_blocks_ = 0;
  std::size_t block_size_ = 0;
  std::vector<double> data_;
};

/// Bit-for-bit equality of two iterates (distinguishes -0.0 from 0.0).
inline bool identical(const BlockVector& a, const BlockVector& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

inline void require_same_shape(const BlockVector& a, const BlockVector& b, const char* what) {
  if (!a.same_shape(b))
    throw shape_error(std::string(what) + ": shape mismatch (" + std::to_string(a.num_blocks()) +
                      "x" + std::to_string(a.block_size()) + " vs " +
                      std::to_string(b.num_blocks()) + "x" + std::to_string(b.block_size()) + ")");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double inner(const BlockVector& x, const BlockVector& y) {
  require_same_shape(x, y, "inner");
  return dot(x.data(), y.data());
}

inline double norm2(const BlockVector& x) { return std::sqrt(dot(x.data(), x.data())); }

/// x - y
inline BlockVector difference(const BlockVector& x, const BlockVector& y) {
  require_same_shape(x, y, "difference");
  BlockVector r = x;
  axpy(-1.0, y.data(), r.data());
  return r;
}

/// (V ⊗ Id) x: D output blocks, block d = sum_b V(d,b) x[b].
inline BlockVector v_lift(const Matrix& V, const BlockVector& x) {
  if (static_cast<std::size_t>(V.cols()) != x.num_blocks())
    throw shape_error("v_lift: V has " + std::to_string(V.cols()) + " columns but x has " +
                      std::to_string(x.num_blocks()) + " blocks");
  BlockVector out(static_cast<std::size_t>(V.rows()), x.block_size());
  for (Eigen::Index d = 0; d < V.rows(); ++d)
    for (Eigen::Index b = 0; b < V.cols(); ++b)
      if (V(d, b) != 0.0) axpy(V(d, b), x.block(b), out.block(d));
  return out;
}

/// (V^T ⊗ Id) y, the adjoint of v_lift.
inline BlockVector v_lift_adjoint(const Matrix& V, const BlockVector& y) {
  if (static_cast<std::size_t>(V.rows()) != y.num_blocks())
    throw shape_error("v_lift_adjoint: V has " + std::to_string(V.rows()) + " rows but y has " +
                      std::to_string(y.num_blocks()) + " blocks");
  BlockVector out(static_cast<std::size_t>(V.cols()), y.block_size());
  for (Eigen::Index b = 0; b < V.cols(); ++b)
    for (Eigen::Index d = 0; d < V.rows(); ++d)
      if (V(d, b) != 0.0) axpy(V(d, b), y.block(d), out.block(b));
  return out;
}

/// ||(V ⊗ Id) x||, the norm in which the BCD error decreases monotonically.
inline double normV(const Matrix& V, const BlockVector& x) { return norm2(v_lift(V, x)); }

}  // namespace bcdreg
