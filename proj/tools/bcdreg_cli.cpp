// bcdreg command line: run the two experiments, adjoint tests, norm estimates.
//
//   bcdreg run-integral [--config FILE] [--set key=value]... [--output-dir DIR]
//   bcdreg run-ct       [--config FILE] [--set key=value]... [--output-dir DIR]
//   bcdreg adjoint-check --problem integral|tensor|ct [--pairs N] [--seed S]
//   bcdreg norm-estimate --problem integral|tensor|ct
//
// Exit codes: 0 ok, 1 bad configuration or arguments, 2 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bcdreg/bench/ct.hpp"
#include "bcdreg/bench/integral.hpp"

using namespace bcdreg;
using namespace bcdreg::bench;

namespace {

Config gather(const std::string& path, const std::vector<std::string>& sets, const std::string& out_dir) {
  Config c = path.empty() ? Config() : Config::load(path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw config_error("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!out_dir.empty()) c.set("output_dir", out_dir);
  return c;
}

void print_files(const std::string& dir, const std::vector<std::string>& files) {
  std::printf("wrote %zu files to %s (see manifest.txt)\n", files.size(), dir.c_str());
}

int run_integral(const Config& c) {
  const auto s = IntegralSetup::from_config(c);
  const auto r = run_integral_experiment(s, true, c.hash_hex());
  const auto rel = r.problem.relative_data_errors();
  std::printf("config_hash %s\n", c.hash_hex().c_str());
  std::printf("||K|| %.6g  constant step %.6g\n", r.problem.k_norm, r.problem.step);
  std::printf("relative data error per block:");
  for (std::size_t b = 0; b + 1 < rel.size(); ++b) std::printf(" %.4g", rel[b]);
  std::printf("  total %.4g\n", rel.back());
  auto last = [](const SolverState& st) { return st.history.empty() ? StepRecord{} : st.history.back(); };
  std::printf("exact BCD       %zu cycles: err2 %.6g errV %.6g\n", s.exact_cycles, last(r.exact_bcd).err2,
              last(r.exact_bcd).errV);
  std::printf("exact Landweber %zu iters:  err2 %.6g errV %.6g\n", s.exact_cycles, last(r.exact_landweber).err2,
              last(r.exact_landweber).errV);
  std::printf("noisy loping BCD: stopped at k_* = %zu (%s), err2 %.6g\n", r.noisy_loping.stop_index.value_or(r.noisy_loping.k),
              r.noisy_loping.converged ? "converged" : "max_iter reached", last(r.noisy_loping).err2);
  std::printf("noisy Landweber (discrepancy): %zu iters (%s), err2 %.6g\n", r.noisy_landweber.k,
              r.noisy_landweber.converged ? "converged" : "max_iter reached", last(r.noisy_landweber).err2);
  print_files(s.output_dir, r.files);
  return 0;
}

int run_ct(const Config& c) {
  const auto s = CtSetup::from_config(c);
  const auto r = run_ct_experiment(s, true, c.hash_hex());
  std::printf("config_hash %s\n", c.hash_hex().c_str());
  std::printf("geometry %zux%zu, %zu sources x %zu rays, %zu energies, noise std %.4g\n", s.geometry.n, s.geometry.n,
              s.geometry.sources, s.geometry.angles, r.problem.model.num_energies(), r.problem.noise_std);
  auto report = [](const char* name, const tomo::NonlinearState& st) {
    if (st.history.empty()) return;
    const auto& e = st.history.back().rel_error;
    std::printf("%-16s %zu steps: e = (%.4g, %.4g)", name, st.history.size(), e[0], e.size() > 1 ? e[1] : 0.0);
    std::printf("  min at row (%zu, %zu)\n", argmin_rel_error(st, 0), e.size() > 1 ? argmin_rel_error(st, 1) : 0);
  };
  report("exact BCD", r.exact_bcd);
  report("exact Landweber", r.exact_landweber);
  report("noisy BCD", r.noisy_bcd);
  report("noisy Landweber", r.noisy_landweber);
  print_files(s.output_dir, r.files);
  return 0;
}

// flattens a TensorOp so the generic dot-product test and power iteration apply
class FlatTensorOp final : public LinearOp {
 public:
  explicit FlatTensorOp(TensorOp A) : A_(std::move(A)) {}
  std::size_t domain_dim() const override { return A_.num_blocks() * A_.domain_block_size(); }
  std::size_t range_dim() const override { return A_.num_outputs() * A_.range_block_size(); }

 protected:
  void do_apply(std::span<const double> x, std::span<double> y) const override {
    BlockVector in(A_.num_blocks(), A_.domain_block_size());
    std::copy(x.begin(), x.end(), in.data().begin());
    const auto out = A_.apply(in);
    std::copy(out.data().begin(), out.data().end(), y.begin());
  }
  void do_adjoint(std::span<const double> y, std::span<double> x) const override {
    BlockVector in(A_.num_outputs(), A_.range_block_size());
    std::copy(y.begin(), y.end(), in.data().begin());
    const auto out = A_.adjoint(in);
    std::copy(out.data().begin(), out.data().end(), x.begin());
  }

 private:
  TensorOp A_;
};

std::shared_ptr<const LinearOp> problem_op(const std::string& problem) {
  if (problem == "integral") return std::make_shared<IntegrationOp>(100);
  if (problem == "tensor") {
    const IntegralSetup s;
    return std::make_shared<FlatTensorOp>(TensorOp(s.vtilde / operator_norm(s.vtilde).value, std::make_shared<IntegrationOp>(s.p)));
  }
  if (problem == "ct") return std::make_shared<tomo::FanBeamOp>(tomo::FanBeamGeometry{});
  throw config_error("--problem must be integral, tensor or ct");
}

int adjoint_check(const std::string& problem, std::size_t pairs, std::uint64_t seed) {
  const auto op = problem_op(problem);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  double worst = 0;
  std::vector<double> x(op->domain_dim()), y(op->range_dim()), Ax(op->range_dim()), Aty(op->domain_dim());
  for (std::size_t i = 0; i < pairs; ++i) {
    for (auto& e : x) e = nd(gen);
    for (auto& e : y) e = nd(gen);
    op->apply(x, Ax);
    op->adjoint_apply(y, Aty);
    const double lhs = dot(Ax, y), rhs = dot(x, Aty);
    worst = std::max(worst, std::abs(lhs - rhs) / (norm(Ax) * norm(y) + norm(x) * norm(Aty)));
  }
  std::printf("%s: max relative adjoint defect over %zu pairs: %.3e\n", problem.c_str(), pairs, worst);
  return 0;
}

int norm_estimate(const std::string& problem) {
  const auto est = operator_norm(*problem_op(problem));
  std::printf("%s: ||A|| ~ %.10g (%s)\n", problem.c_str(), est.value, est.converged ? "converged" : "not converged");
  if (!est.converged) throw numerical_error("power iteration did not converge");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block coordinate descent and Landweber regularization for tensor-product operators"};
  app.require_subcommand(1);

  std::string config_path, out_dir, problem;
  std::vector<std::string> sets;
  std::size_t pairs = 50;
  std::uint64_t seed = 1;

  auto* integral = app.add_subcommand("run-integral", "integral-equation experiment");
  auto* ct = app.add_subcommand("run-ct", "multi-spectral fan-beam CT experiment");
  for (auto* sub : {integral, ct}) {
    sub->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override a config key (key=value), repeatable");
    sub->add_option("--output-dir", out_dir, "output directory (overrides output_dir)");
  }
  auto* adj = app.add_subcommand("adjoint-check", "dot-product test <Ax, y> = <x, A*y>");
  adj->add_option("--problem", problem, "integral | tensor | ct")->required();
  adj->add_option("--pairs", pairs, "random pairs")->check(CLI::PositiveNumber);
  adj->add_option("--seed", seed, "RNG seed");
  auto* nrm = app.add_subcommand("norm-estimate", "power-iteration estimate of ||A||");
  nrm->add_option("--problem", problem, "integral | tensor | ct")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*integral) return run_integral(gather(config_path, sets, out_dir));
    if (*ct) return run_ct(gather(config_path, sets, out_dir));
    if (*adj) return adjoint_check(problem, pairs, seed);
    if (*nrm) return norm_estimate(problem);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
