#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bcdreg/core.hpp"
#include "bcdreg/operators.hpp"

namespace bcdreg {

// ---------------------------------------------------------------------------
// Control sequences

/**
 * The block schedule b(k). Cyclic control visits 0, 1, ..., B-1 and repeats;
 * a custom control repeats the given sequence periodically. `window` is the
 * length p such that every p consecutive indices are required to cover all
 * blocks.
 */
struct Control {
  enum class Kind { cyclic, custom };

  Kind kind = Kind::cyclic;
  std::size_t blocks = 1;
  std::size_t window = 1;
  std::vector<std::size_t> sequence;

  static Control cyclic(std::size_t num_blocks) {
    if (num_blocks == 0) throw config_error("Control: need at least one block");
    return Control{Kind::cyclic, num_blocks, num_blocks, {}};
  }

  static Control custom(std::vector<std::size_t> seq, std::size_t num_blocks, std::size_t window) {
    if (seq.empty()) throw config_error("Control: custom sequence is empty");
    for (auto b : seq)
      if (b >= num_blocks) throw config_error("Control: block index " + std::to_string(b) + " out of range");
    if (window == 0) throw config_error("Control: window must be positive");
    return Control{Kind::custom, num_blocks, window, std::move(seq)};
  }

  std::size_t block_at(std::size_t k) const {
    return kind == Kind::cyclic ? k % blocks : sequence[k % sequence.size()];
  }

  std::size_t period() const { return kind == Kind::cyclic ? blocks : sequence.size(); }
};

struct ControlReport {
  bool ok = true;
  /// First index k at which {b(k), ..., b(k+p-1)} misses a block.
  std::optional<std::size_t> violation_start;
  std::vector<std::size_t> missing_blocks;

  explicit operator bool() const { return ok; }
};

/**
 * Checks that every window of `window` consecutive control indices covers
 * all blocks. The periodic extension is checked over one full period,
 * including windows that wrap around the end of a custom sequence.
 */
inline ControlReport validate_control(const Control& control) {
  ControlReport report;
  const std::size_t p = control.window;
  const std::size_t period = control.period();
  for (std::size_t start = 0; start < period; ++start) {
    std::vector<bool> seen(control.blocks, false);
    for (std::size_t j = 0; j < p; ++j) seen[control.block_at(start + j)] = true;
    for (std::size_t b = 0; b < control.blocks; ++b)
      if (!seen[b]) report.missing_blocks.push_back(b);
    if (!report.missing_blocks.empty()) {
      report.ok = false;
      report.violation_start = start;
      return report;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Step sizes and stopping

struct StepRule {
  enum class Kind { constant, adaptive };

  Kind kind = Kind::constant;
  double step = 0.0;       ///< s_star for the constant rule
  double theta = 1.0;      ///< factor on A_k for the adaptive rule
  double gamma_min = 0.0;  ///< in (0, 1 - 1/tau]
  double theta_max = 1.0;  ///< < 2

  static StepRule constant(double s, double gamma_min, double theta_max = 1.0) {
    return StepRule{Kind::constant, s, 1.0, gamma_min, theta_max};
  }
  static StepRule adaptive(double theta, double gamma_min, double theta_max) {
    return StepRule{Kind::adaptive, 0.0, theta, gamma_min, theta_max};
  }

  void validate() const {
    if (!(gamma_min > 0.0)) throw config_error("StepRule: gamma_min must be positive");
    if (!(theta_max < 2.0) || !(theta_max > 0.0))
      throw config_error("StepRule: theta_max must lie in (0, 2)");
    if (kind == Kind::constant && !(step > 0.0))
      throw config_error("StepRule: constant step must be positive");
    if (kind == Kind::adaptive && !(theta > 0.0 && theta <= theta_max))
      throw config_error("StepRule: theta must lie in (0, theta_max]");
  }
};

/**
 * Largest constant step certified by the summability bound: every A_k is
 * at least gamma_min / (||K||^2 max_b ||v_b||^2), so this step gives
 * theta_k <= 1. It coincides with gamma_min / ||K||^2 whenever the columns
 * of V have norm at most one.
 */
inline double certified_constant_step(const TensorOp& A, double gamma_min, double k_norm) {
  if (!(k_norm > 0.0)) throw config_error("certified_constant_step: ||K|| must be positive");
  return gamma_min / (k_norm * k_norm * std::max(1.0, A.max_column_norm_sq()));
}

struct StopRule {
  double tau = 1.5;
  std::vector<double> delta;  ///< per block noise levels
  std::size_t window = 1;     ///< must equal the control window
  std::size_t max_iter = 1'000'000;

  static StopRule uniform(double tau, double delta, std::size_t blocks, std::size_t window,
                          std::size_t max_iter = 1'000'000) {
    return StopRule{tau, std::vector<double>(blocks, delta), window, max_iter};
  }

  void validate(std::size_t blocks) const {
    if (!(tau > 1.0)) throw config_error("StopRule: tau must exceed 1");
    if (delta.size() != blocks)
      throw config_error("StopRule: expected " + std::to_string(blocks) + " noise levels");
    for (double d : delta)
      if (!(d >= 0.0)) throw config_error("StopRule: noise levels must be non-negative");
    if (window == 0) throw config_error("StopRule: window must be positive");
  }
};

/// d_k: 1 iff r >= tau * delta_b (inclusive at the boundary).
inline int loping_flag(double r, double tau, double delta_b) {
  if (!(tau > 1.0)) throw config_error("loping_flag: tau must exceed 1");
  return r >= tau * delta_b ? 1 : 0;
}

/**
 * theta * A_k with A_k = ||v_b||^2 r (r - delta_b) / denom_sq, where
 * denom_sq = ||V_X P_b A*(y - A x)||^2. A zero denominator yields 0.
 */
inline double adaptive_step(double r, double delta_b, double v_norm_sq, double denom_sq,
                            double theta) {
  if (r < delta_b)
    throw config_error("adaptive step: residual " + std::to_string(r) + " below noise level " +
                       std::to_string(delta_b));
  if (denom_sq == 0.0) return 0.0;
  return theta * v_norm_sq * r * (r - delta_b) / denom_sq;
}

// ---------------------------------------------------------------------------
// Solver state

struct StepRecord {
  std::size_t k = 0;
  std::size_t cycle = 0;
  std::size_t block = 0;  ///< updated block; equals B for a full Landweber update
  int d = 1;
  double step = 0.0;
  double residual = 0.0;  ///< r_k at x_k (block residual for BCD, full for Landweber)
  double err2 = std::numeric_limits<double>::quiet_NaN();  ///< at x_{k+1}
  double errV = std::numeric_limits<double>::quiet_NaN();  ///< at x_{k+1}
  double objective = 0.0;                                  ///< 0.5 ||A x_{k+1} - y||^2
};

struct SolverState {
  BlockVector x;  ///< current iterate
  BlockVector h;  ///< cached K(x[b]) per block
  std::size_t k = 0;
  std::vector<StepRecord> history;

  bool converged = false;                 ///< stopping rule fired before max_iter
  std::optional<std::size_t> stop_index;  ///< k_* when converged
  double initial_err2 = std::numeric_limits<double>::quiet_NaN();
  double initial_errV = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::size_t, BlockVector>> snapshots;  ///< (k, x_k)
};

inline SolverState make_state(const TensorOp& A, BlockVector x0) {
  if (x0.num_blocks() != A.num_blocks() || x0.block_size() != A.domain_block_size())
    throw shape_error("initial guess does not match the operator's domain");
  SolverState s;
  s.h = A.apply_blockwise(x0);
  s.x = std::move(x0);
  return s;
}

namespace detail {

inline void check_data(const TensorOp& A, const BlockVector& y) {
  if (y.num_blocks() != A.num_outputs() || y.block_size() != A.range_block_size())
    throw shape_error("data does not match the operator's range: expected " +
                      std::to_string(A.num_outputs()) + " blocks of " +
                      std::to_string(A.range_block_size()));
}

/// A x - y from the cached block images.
inline BlockVector misfit(const TensorOp& A, const SolverState& s, const BlockVector& y) {
  BlockVector m = v_lift(A.V(), s.h);
  axpy(-1.0, y.data(), m.data());
  return m;
}

/// w_b = sum_d V(d,b) m[d] = (V_Y* m)[b]; then ||Q_b m|| = ||w_b|| / ||v_b||.
inline std::vector<double> mixed_block(const TensorOp& A, const BlockVector& m, std::size_t b) {
  std::vector<double> w(m.block_size(), 0.0);
  const auto col = A.V().col(static_cast<Eigen::Index>(b));
  for (Eigen::Index d = 0; d < col.size(); ++d)
    if (col(d) != 0.0) axpy(col(d), m.block(static_cast<std::size_t>(d)), w);
  return w;
}

inline void check_finite(std::span<const double> v, std::size_t k, const char* method) {
  for (double e : v)
    if (!std::isfinite(e))
      throw numerical_error(std::string(method) + ": non-finite iterate at iteration " +
                            std::to_string(k) + " (step size too large?)");
}

inline void record_errors(const TensorOp& A, const BlockVector& x, const BlockVector* reference,
                          StepRecord& rec) {
  if (!reference) return;
  const BlockVector e = difference(x, *reference);
  rec.err2 = norm2(e);
  rec.errV = normV(A.V(), e);
}

inline void init_errors(const TensorOp& A, SolverState& s, const BlockVector* reference) {
  if (!reference) return;
  require_same_shape(s.x, *reference, "reference solution");
  const BlockVector e = difference(s.x, *reference);
  s.initial_err2 = norm2(e);
  s.initial_errV = normV(A.V(), e);
}

/// Updates block b by x[b] -= s * grad and refreshes h[b].
inline void update_block(const TensorOp& A, SolverState& st, std::size_t b,
                         std::span<const double> grad, double s, const char* method) {
  auto xb = st.x.block(b);
  axpy(-s, grad, xb);
  check_finite(xb, st.k, method);
  A.K().apply(xb, st.h.block(b));
}

}  // namespace detail

/// r = ||Q_b (y - A x)|| evaluated from the cached images.
inline double block_residual(const TensorOp& A, const SolverState& state, const BlockVector& y,
                             std::size_t b) {
  detail::check_data(A, y);
  if (b >= A.num_blocks()) throw shape_error("block_residual: block index out of range");
  const BlockVector m = detail::misfit(A, state, y);
  return norm(detail::mixed_block(A, m, b)) / std::sqrt(A.column_norm_sq(b));
}

/**
 * theta * A_k for block b at the current iterate. Uses
 * ||V_X P_b A* z|| = ||v_b|| ||K* w_b||, which avoids touching the other
 * blocks.
 */
inline double adaptive_step_size(const TensorOp& A, const SolverState& state, const BlockVector& y,
                                 std::size_t b, double delta_b, double theta) {
  detail::check_data(A, y);
  const BlockVector m = detail::misfit(A, state, y);
  const std::vector<double> w = detail::mixed_block(A, m, b);
  const double vn2 = A.column_norm_sq(b);
  const double r = norm(w) / std::sqrt(vn2);
  const std::vector<double> g = A.K().adjoint_apply(w);
  return adaptive_step(r, delta_b, vn2, vn2 * dot(g, g), theta);
}

/// One Landweber update of every block; 2B applications of K / K*.
inline SolverState& landweber_step(const TensorOp& A, SolverState& state, const BlockVector& y,
                                   double s) {
  detail::check_data(A, y);
  if (!(s >= 0.0)) throw config_error("landweber_step: step size must be non-negative");
  const BlockVector m = detail::misfit(A, state, y);
  const BlockVector grad = A.adjoint(m);
  StepRecord rec;
  rec.k = state.k;
  rec.cycle = state.k;
  rec.block = A.num_blocks();
  rec.step = s;
  rec.residual = norm2(m);
  axpy(-s, grad.data(), state.x.data());
  detail::check_finite(state.x.data(), state.k, "landweber");
  state.h = A.apply_blockwise(state.x);
  state.history.push_back(rec);
  ++state.k;
  return state;
}

/// One BCD update of block b; one application each of K* and K.
inline SolverState& bcd_step(const TensorOp& A, SolverState& state, const BlockVector& y,
                             std::size_t b, double s) {
  detail::check_data(A, y);
  if (b >= A.num_blocks()) throw shape_error("bcd_step: block index out of range");
  if (!(s >= 0.0)) throw config_error("bcd_step: step size must be non-negative");
  const BlockVector m = detail::misfit(A, state, y);
  const std::vector<double> w = detail::mixed_block(A, m, b);
  const std::vector<double> g = A.K().adjoint_apply(w);
  StepRecord rec;
  rec.k = state.k;
  rec.cycle = state.k / A.num_blocks();
  rec.block = b;
  rec.step = s;
  rec.residual = norm(w) / std::sqrt(A.column_norm_sq(b));
  detail::update_block(A, state, b, g, s, "bcd");
  state.history.push_back(rec);
  ++state.k;
  return state;
}

struct BcdOptions {
  bool loping = true;                ///< false runs plain BCD (d_k = 1 always)
  std::size_t snapshot_stride = 0;   ///< store x every this many cycles (0: never)
  bool verify_stationary = false;    ///< cross-check the stop by bitwise iterate comparison
};

/**
 * Loping BCD: x_{k+1} = x_k - d_k s_k P_b A*(A x_k - y), b = b(k). Stops at
 * the first k_* such that p consecutive steps starting at k_* are skipped,
 * which leaves x_{k_*} = ... = x_{k_*+p} and bounds every block residual
 * by tau * delta_b. Hitting max_iter leaves `converged` false.
 */
inline SolverState run_loping_bcd(const TensorOp& A, BlockVector x0, const BlockVector& y,
                                  const Control& control, const StepRule& steps,
                                  const StopRule& stop, const BlockVector* reference = nullptr,
                                  const BcdOptions& options = {}) {
  detail::check_data(A, y);
  const std::size_t B = A.num_blocks();
  if (control.blocks != B) throw config_error("control block count does not match V");
  stop.validate(B);
  steps.validate();
  if (stop.window != control.window)
    throw config_error("stop rule window " + std::to_string(stop.window) +
                       " differs from control window " + std::to_string(control.window));
  if (options.loping && steps.gamma_min > 1.0 - 1.0 / stop.tau + 1e-15)
    throw config_error("gamma_min must not exceed 1 - 1/tau");
  if (auto report = validate_control(control); !report)
    throw config_error("control violates the covering condition at index " +
                       std::to_string(*report.violation_start));

  SolverState st = make_state(A, std::move(x0));
  detail::init_errors(A, st, reference);

  std::size_t skipped = 0;
  BlockVector frozen;  // iterate at the start of the current skipped run (debug only)
  const std::size_t snap_every = options.snapshot_stride * control.window;

  BlockVector m = detail::misfit(A, st, y);
  for (std::size_t k = 0; k < stop.max_iter; ++k) {
    st.k = k;
    const std::size_t b = control.block_at(k);
    const std::vector<double> w = detail::mixed_block(A, m, b);
    const double vn2 = A.column_norm_sq(b);
    const double r = norm(w) / std::sqrt(vn2);

    StepRecord rec;
    rec.k = k;
    rec.cycle = k / control.window;
    rec.block = b;
    rec.residual = r;
    rec.d = options.loping ? loping_flag(r, stop.tau, stop.delta[b]) : 1;

    if (rec.d == 1) {
      const std::vector<double> g = A.K().adjoint_apply(w);
      if (steps.kind == StepRule::Kind::constant) {
        rec.step = steps.step;
      } else {
        rec.step = adaptive_step(r, stop.delta[b], vn2, vn2 * dot(g, g), steps.theta);
      }
      detail::update_block(A, st, b, g, rec.step, "loping bcd");
      m = detail::misfit(A, st, y);
      skipped = 0;
    } else {
      if (skipped == 0 && options.verify_stationary) frozen = st.x;
      ++skipped;
    }

    rec.objective = 0.5 * dot(m.data(), m.data());
    detail::record_errors(A, st.x, reference, rec);
    st.history.push_back(rec);

    if (snap_every != 0 && (k + 1) % snap_every == 0) st.snapshots.emplace_back(k + 1, st.x);

    if (options.loping && skipped == stop.window) {
      st.converged = true;
      st.stop_index = k + 1 - stop.window;
      if (options.verify_stationary && !identical(frozen, st.x))
        throw std::logic_error("loping bcd: iterate changed during a skipped cycle");
      st.k = k + 1;
      return st;
    }
  }
  st.k = stop.max_iter;
  return st;
}

/// Plain BCD for a fixed number of single-block steps.
inline SolverState run_bcd(const TensorOp& A, BlockVector x0, const BlockVector& y,
                           const Control& control, const StepRule& steps, std::size_t iterations,
                           const BlockVector* reference = nullptr,
                           std::size_t snapshot_stride = 0) {
  StopRule stop = StopRule::uniform(1.5, 0.0, A.num_blocks(), control.window, iterations);
  BcdOptions opt;
  opt.loping = false;
  opt.snapshot_stride = snapshot_stride;
  return run_loping_bcd(A, std::move(x0), y, control, steps, stop, reference, opt);
}

struct LandweberStop {
  std::optional<double> tau;  ///< with delta: stop once ||A x_k - y|| <= tau * delta
  double delta = 0.0;
  std::size_t max_iter = 1'000'000;

  static LandweberStop discrepancy(double tau, double delta, std::size_t max_iter = 1'000'000) {
    if (!(tau > 1.0)) throw config_error("LandweberStop: tau must exceed 1");
    return LandweberStop{tau, delta, max_iter};
  }
  static LandweberStop fixed(std::size_t iterations) { return LandweberStop{std::nullopt, 0.0, iterations}; }
};

/**
 * Landweber iteration x_{k+1} = x_k - s A*(A x_k - y), stopped by the
 * discrepancy principle or after a fixed count.
 */
inline SolverState run_landweber(const TensorOp& A, BlockVector x0, const BlockVector& y, double s,
                                 const LandweberStop& stop, const BlockVector* reference = nullptr,
                                 std::size_t snapshot_stride = 0) {
  detail::check_data(A, y);
  if (!(s >= 0.0)) throw config_error("run_landweber: step size must be non-negative");
  SolverState st = make_state(A, std::move(x0));
  detail::init_errors(A, st, reference);
  const double threshold = stop.tau ? *stop.tau * stop.delta : -1.0;

  BlockVector m = detail::misfit(A, st, y);
  for (std::size_t k = 0; k < stop.max_iter; ++k) {
    st.k = k;
    const double res = norm2(m);
    if (stop.tau && res <= threshold) {
      st.converged = true;
      st.stop_index = k;
      return st;
    }
    const BlockVector grad = A.adjoint(m);
    StepRecord rec;
    rec.k = k;
    rec.cycle = k;
    rec.block = A.num_blocks();
    rec.step = s;
    rec.residual = res;
    axpy(-s, grad.data(), st.x.data());
    detail::check_finite(st.x.data(), k, "landweber");
    st.h = A.apply_blockwise(st.x);
    m = detail::misfit(A, st, y);
    rec.objective = 0.5 * dot(m.data(), m.data());
    detail::record_errors(A, st.x, reference, rec);
    st.history.push_back(rec);
    if (snapshot_stride != 0 && (k + 1) % snapshot_stride == 0) st.snapshots.emplace_back(k + 1, st.x);
  }
  st.k = stop.max_iter;
  if (stop.tau) {
    // The last iterate may already satisfy the discrepancy bound.
    if (norm2(m) <= threshold) {
      st.converged = true;
      st.stop_index = stop.max_iter;
    }
  } else {
    st.converged = true;
    st.stop_index = stop.max_iter;
  }
  return st;
}

}  // namespace bcdreg
