#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "bcdreg/bench/config.hpp"
#include "bcdreg/bench/io.hpp"
#include "bcdreg/bench/rng.hpp"
#include "bcdreg/operators.hpp"
#include "bcdreg/solvers.hpp"

namespace bcdreg::bench {

/**
 * Two test functions on p+1 nodes t_j = j/p:
 *   block 0: Gaussian bump exp(-((t - 0.35)/0.12)^2)
 *   block 1: ramp 0.8 t/0.6 up to t = 0.6, then a jump down to 0.3 and a
 *            slope of -0.5.
 */
inline BlockVector make_integral_phantom(std::size_t p) {
  if (p < 4) throw config_error("make_integral_phantom: need p >= 4");
  BlockVector f(2, p + 1);
  for (std::size_t j = 0; j <= p; ++j) {
    const double t = static_cast<double>(j) / static_cast<double>(p);
    const double u = (t - 0.35) / 0.12;
    f(0, j) = std::exp(-u * u);
    f(1, j) = t < 0.6 ? 0.8 * t / 0.6 : 0.3 - 0.5 * (t - 0.6);
  }
  return f;
}

struct NoisyData {
  BlockVector y_delta;
  double delta = 0.0;          ///< ||y_delta - y||
  std::vector<double> delta_b;  ///< ||Q_b (y_delta - y)||
};

/// Adds i.i.d. N(0, std^2) to every component, in storage order, from Rng(seed).
inline NoisyData add_noise(const Matrix& V, const BlockVector& y, double std_dev, std::uint64_t seed) {
  if (!(std_dev >= 0.0) || !std::isfinite(std_dev)) throw config_error("add_noise: std must be finite and >= 0");
  if (static_cast<std::size_t>(V.rows()) != y.num_blocks()) throw shape_error("add_noise: V rows must match data blocks");
  BlockVector z(y.num_blocks(), y.block_size());
  if (std_dev > 0.0) {
    Rng rng(seed);
    for (auto& e : z.data()) e = std_dev * rng.normal();
  }
  NoisyData out{y, norm2(z), {}};
  axpy(1.0, z.data(), out.y_delta.data());
  for (Eigen::Index b = 0; b < V.cols(); ++b)
    out.delta_b.push_back(std_dev > 0.0 ? norm2(q_project(V, static_cast<std::size_t>(b), z)) : 0.0);
  return out;
}

struct IntegralSetup {
  std::size_t p = 100;
  Matrix vtilde = (Matrix(2, 2) << -3.0, 1.0, -1.0, 0.0).finished();
  double noise_std = 0.001;
  std::uint64_t seed = 20240501;
  double tau = 1.5;
  double gamma_min = 1.0 / 3.0;
  double theta_max = 1.0;
  bool adaptive = false;  ///< step rule of the loping run
  double theta = 1.0;
  std::size_t exact_cycles = 5000;
  std::size_t noisy_cycles = 5000;
  std::size_t max_iter = 10'000'000;
  std::string output_dir = "out/integral";

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{"problem",     "p",        "vtilde_rows", "vtilde",      "noise_std",
                                         "seed",        "tau",      "gamma_min",   "theta_max",   "step_rule",
                                         "theta",       "exact_cycles", "noisy_cycles", "max_iter", "output_dir"};
    return k;
  }

  static IntegralSetup from_config(const Config& c) {
    c.require_known(keys());
    if (c.get_string("problem", "integral") != "integral") throw config_error("problem must be 'integral'");
    IntegralSetup s;
    s.p = c.get_uint("p", s.p);
    if (c.has("vtilde")) {
      const auto vals = c.get_doubles("vtilde", {});
      const auto rows = c.get_uint("vtilde_rows", 2);
      if (rows == 0 || vals.size() % rows != 0) throw config_error("vtilde: entry count not divisible by vtilde_rows");
      const auto cols = vals.size() / rows;
      s.vtilde.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
          s.vtilde(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vals[i * cols + j];
    }
    s.noise_std = c.get_double("noise_std", s.noise_std);
    s.seed = c.get_uint("seed", s.seed);
    s.tau = c.get_double("tau", s.tau);
    s.gamma_min = c.get_double("gamma_min", s.gamma_min);
    s.theta_max = c.get_double("theta_max", s.theta_max);
    const auto rule = c.get_string("step_rule", "constant");
    if (rule != "constant" && rule != "adaptive") throw config_error("step_rule must be constant or adaptive");
    s.adaptive = rule == "adaptive";
    s.theta = c.get_double("theta", s.theta);
    s.exact_cycles = c.get_uint("exact_cycles", s.exact_cycles);
    s.noisy_cycles = c.get_uint("noisy_cycles", s.noisy_cycles);
    s.max_iter = c.get_uint("max_iter", s.max_iter);
    s.output_dir = c.get_string("output_dir", s.output_dir);
    if (!(s.tau > 1.0)) throw config_error("tau must exceed 1");
    if (s.gamma_min > 1.0 - 1.0 / s.tau + 1e-15) throw config_error("gamma_min must not exceed 1 - 1/tau");
    return s;
  }
};

/// V = vtilde / ||vtilde||, K = trapezoid integration on p intervals, exact and noisy data.
struct IntegralProblem {
  std::shared_ptr<IntegrationOp> K;
  TensorOp A;
  BlockVector x_true;
  BlockVector y;
  NoisyData noisy;
  double k_norm = 0.0;
  double step = 0.0;  ///< certified constant step, shared by BCD and Landweber

  static IntegralProblem build(const IntegralSetup& s) {
    auto K = std::make_shared<IntegrationOp>(s.p);
    const double vn = operator_norm(s.vtilde).value;
    if (!(vn > 0)) throw config_error("vtilde is zero");
    TensorOp A(s.vtilde / vn, K);
    if (A.num_blocks() != 2) throw config_error("the integral phantom has two blocks; vtilde needs two columns");
    auto x = make_integral_phantom(s.p);
    auto y = A.apply(x);
    auto noisy = add_noise(A.V(), y, s.noise_std, s.seed);
    const auto est = operator_norm(*K);
    if (!est.converged) throw numerical_error("power iteration for ||K|| did not converge");
    const double step = certified_constant_step(A, s.gamma_min, est.value);
    return {K, std::move(A), std::move(x), std::move(y), std::move(noisy), est.value, step};
  }

  /// ||Q_b(y - y_delta)|| / ||Q_b y|| per block, then the total ratio last.
  std::vector<double> relative_data_errors() const {
    std::vector<double> out;
    const auto z = difference(noisy.y_delta, y);
    for (std::size_t b = 0; b < A.num_blocks(); ++b)
      out.push_back(norm2(q_project(A.V(), b, z)) / norm2(q_project(A.V(), b, y)));
    out.push_back(norm2(z) / norm2(y));
    return out;
  }
};

struct IntegralResult {
  IntegralProblem problem;
  SolverState exact_bcd;
  SolverState exact_landweber;
  SolverState noisy_bcd;
  SolverState noisy_loping;
  SolverState noisy_landweber;
  std::vector<std::string> files;
};

inline IntegralResult run_integral_experiment(const IntegralSetup& s, bool write = true, const std::string& config_hash = "") {
  auto P = IntegralProblem::build(s);
  const auto& A = P.A;
  const std::size_t B = A.num_blocks();
  const auto control = Control::cyclic(B);
  const auto constant = StepRule::constant(P.step, s.gamma_min, s.theta_max);
  const auto x0 = A.zero_domain();

  auto exact_bcd = run_bcd(A, x0, P.y, control, constant, s.exact_cycles * B, &P.x_true);
  auto exact_lw = run_landweber(A, x0, P.y, P.step, LandweberStop::fixed(s.exact_cycles), &P.x_true);
  auto noisy_bcd = run_bcd(A, x0, P.noisy.y_delta, control, constant, s.noisy_cycles * B, &P.x_true);
  const auto rule = s.adaptive ? StepRule::adaptive(s.theta, s.gamma_min, s.theta_max) : constant;
  StopRule stop{s.tau, P.noisy.delta_b, control.window, s.max_iter};
  auto loping = run_loping_bcd(A, x0, P.noisy.y_delta, control, rule, stop, &P.x_true);
  auto noisy_lw = run_landweber(A, x0, P.noisy.y_delta, P.step, LandweberStop::discrepancy(s.tau, P.noisy.delta, s.max_iter),
                                &P.x_true);

  IntegralResult r{std::move(P), std::move(exact_bcd), std::move(exact_lw), std::move(noisy_bcd), std::move(loping),
                   std::move(noisy_lw), {}};
  if (write) {
    Manifest m(s.output_dir, config_hash);
    emit_csv(r.exact_bcd.history, m.add("integral_exact_bcd.csv"));
    emit_csv(r.exact_landweber.history, m.add("integral_exact_landweber.csv"));
    emit_csv(r.noisy_bcd.history, m.add("integral_noisy_bcd.csv"));
    emit_csv(r.noisy_loping.history, m.add("integral_noisy_loping_bcd.csv"));
    emit_csv(r.noisy_landweber.history, m.add("integral_noisy_landweber.csv"));
    m.write();
    r.files = m.files();
  }
  return r;
}

}  // namespace bcdreg::bench
