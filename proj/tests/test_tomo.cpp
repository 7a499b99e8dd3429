#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "bcdreg/tomo/nonlinear.hpp"
#include "bcdreg/tomo/phantom.hpp"

using namespace bcdreg;
using namespace bcdreg::tomo;

namespace {

FanBeamGeometry small_geometry(std::size_t n = 24) {
  FanBeamGeometry g;
  g.n = n;
  g.sources = 24;
  g.angles = 25;
  g.samples = 60;
  return g;
}

std::vector<double> random_vec(std::mt19937_64& gen, std::size_t n) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& e : v) e = d(gen);
  return v;
}

BlockVector random_maps(std::mt19937_64& gen, std::size_t B, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  BlockVector f(B, n);
  for (auto& e : f.data()) e = d(gen);
  return f;
}

SpectralOptions coarse_options(std::size_t energies) {
  SpectralOptions o;
  o.energies = energies;
  return o;
}

// Model with one material and explicit curves, for the small hand oracles.
SpectralModel one_material(std::vector<double> s, std::vector<double> mu, double c = 1.0) {
  SpectralModel m;
  m.energies.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) m.energies[i] = 20.0 + 10.0 * static_cast<double>(i);
  m.weights = std::move(s);
  m.mu.resize(static_cast<Eigen::Index>(mu.size()), 1);
  for (std::size_t i = 0; i < mu.size(); ++i) m.mu(static_cast<Eigen::Index>(i), 0) = mu[i];
  m.windows = {{}};
  for (std::size_t i = 0; i < m.weights.size(); ++i) m.windows[0].push_back(i);
  m.c = Matrix::Constant(1, 1, c);
  return m;
}

Matrix dense_projector(const FanBeamGeometry& g) {
  Matrix R(static_cast<Eigen::Index>(g.sino_size()), static_cast<Eigen::Index>(g.image_size()));
  std::vector<double> e(g.image_size(), 0.0);
  for (std::size_t p = 0; p < g.image_size(); ++p) {
    e[p] = 1.0;
    const auto col = fan_beam_forward(g, e);
    for (std::size_t j = 0; j < col.size(); ++j) R(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(p)) = col[j];
    e[p] = 0.0;
  }
  return R;
}

// Straight-line forward model and Jacobian on dense matrices, no caching.
struct DenseModel {
  SpectralModel model;
  Matrix R;

  std::vector<Eigen::VectorXd> H(const std::vector<Eigen::VectorXd>& f) const {
    const std::size_t B = model.num_materials();
    std::vector<Eigen::VectorXd> A(B, Eigen::VectorXd::Zero(R.rows()));
    for (std::size_t k = 0; k < B; ++k)
      for (auto i : model.windows[k]) {
        Eigen::VectorXd mu_i = Eigen::VectorXd::Zero(R.cols());
        for (std::size_t m = 0; m < B; ++m) mu_i += model.mu(Eigen::Index(i), Eigen::Index(m)) * f[m];
        A[k] += model.weights[i] * (-(R * mu_i).array()).exp().matrix();
      }
    std::vector<Eigen::VectorXd> out(B, Eigen::VectorXd::Zero(R.rows()));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < B; ++k) out[b] += model.c(Eigen::Index(b), Eigen::Index(k)) * A[k].array().log().matrix();
    return out;
  }

  // dH_b / df_m as an explicit matrix.
  Matrix jacobian(const std::vector<Eigen::VectorXd>& f, std::size_t b, std::size_t m) const {
    const std::size_t B = model.num_materials();
    Matrix J = Matrix::Zero(R.rows(), R.cols());
    for (std::size_t k = 0; k < B; ++k) {
      Eigen::VectorXd A = Eigen::VectorXd::Zero(R.rows());
      Matrix dA = Matrix::Zero(R.rows(), R.cols());
      for (auto i : model.windows[k]) {
        Eigen::VectorXd mu_i = Eigen::VectorXd::Zero(R.cols());
        for (std::size_t q = 0; q < B; ++q) mu_i += model.mu(Eigen::Index(i), Eigen::Index(q)) * f[q];
        const Eigen::VectorXd e = (-(R * mu_i).array()).exp().matrix();
        A += model.weights[i] * e;
        dA -= model.weights[i] * model.mu(Eigen::Index(i), Eigen::Index(m)) * e.asDiagonal() * R;
      }
      J += model.c(Eigen::Index(b), Eigen::Index(k)) * A.cwiseInverse().asDiagonal() * dA;
    }
    return J;
  }
};

std::vector<Eigen::VectorXd> split(const BlockVector& f) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t b = 0; b < f.num_blocks(); ++b)
    out.emplace_back(Eigen::Map<const Eigen::VectorXd>(f.block(b).data(), Eigen::Index(f.block_size())));
  return out;
}

double directional_fd(const SpectralModel& model, const FanBeamGeometry& g, const BlockVector& f,
                      const BlockVector& h, const BlockVector& v, std::size_t b, double eps) {
  BlockVector fp = f, fm = f;
  axpy(eps, h.data(), fp.data());
  axpy(-eps, h.data(), fm.data());
  return (objective(evaluate(model, g, fp), v, b) - objective(evaluate(model, g, fm), v, b)) / (2 * eps);
}

}  // namespace

// --- geometry ---------------------------------------------------------------

TEST(FanBeamGeometry, SourcesOnUnitCircleAndDirectionsUnit) {
  FanBeamGeometry g;
  for (std::size_t k = 0; k < g.sources; ++k) {
    const auto a = g.source(k);
    EXPECT_NEAR(std::hypot(a[0], a[1]), 1.0, 1e-12);
    for (std::size_t l : {std::size_t{0}, g.angles / 2, g.angles - 1}) {
      const auto d = g.direction(k, l);
      EXPECT_NEAR(std::hypot(d[0], d[1]), 1.0, 1e-12);
    }
    // central ray points at the origin
    const auto d = g.direction(k, g.angles / 2);
    EXPECT_NEAR(a[0] + d[0], 0.0, 1e-12);
    EXPECT_NEAR(a[1] + d[1], 0.0, 1e-12);
  }
  EXPECT_NEAR(g.fan_offset(0), -M_PI / 3, 1e-15);
  EXPECT_NEAR(g.fan_offset(g.angles - 1), M_PI / 3, 1e-15);
  EXPECT_GT(g.sample_spacing(), 0.0);
}

TEST(FanBeamGeometry, Validation) {
  FanBeamGeometry g;
  g.samples = 1;
  EXPECT_THROW(g.validate(), config_error);
  g = {};
  g.support_radius = 1.0;
  EXPECT_THROW(g.validate(), config_error);
  g = {};
  g.n = 0;
  EXPECT_THROW(g.validate(), config_error);
  EXPECT_NO_THROW(FanBeamGeometry{}.validate());
}

// --- fan_beam_forward / adjoint -------------------------------------------

TEST(FanBeam, ZeroInZeroOut) {
  FanBeamGeometry g = small_geometry();
  for (double v : fan_beam_forward(g, std::vector<double>(g.image_size(), 0.0))) EXPECT_EQ(v, 0.0);
  for (double v : fan_beam_adjoint(g, std::vector<double>(g.sino_size(), 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(FanBeam, ChordLengthThroughCentre) {
  FanBeamGeometry g;  // desk geometry: odd angle count, so the central ray has offset 0
  const double r = 0.5, h = g.pixel_size();
  std::vector<double> disc(g.image_size());
  for (std::size_t iy = 0; iy < g.n; ++iy)
    for (std::size_t ix = 0; ix < g.n; ++ix) {
      const double x = -1 + (ix + 0.5) * h, y = -1 + (iy + 0.5) * h;
      disc[iy * g.n + ix] = x * x + y * y <= r * r ? 1.0 : 0.0;
    }
  const auto sino = fan_beam_forward(g, disc);
  const double tol = 2.0 / g.samples + 2 * h;
  for (std::size_t k = 0; k < g.sources; ++k) EXPECT_NEAR(sino[k * g.angles + g.angles / 2], 2 * r, tol) << k;
}

TEST(FanBeam, ConstantImageAlongTheAxes) {
  // Along an axis the interpolant of a constant 1 is 1 on [-1+h/2, 1-h/2] and
  // falls linearly to 1/2 at +-1, so the ray over [-1, 1] integrates to 2 - h/4.
  FanBeamGeometry g;
  g.sources = 4;
  g.samples = 2001;
  const std::vector<double> one(g.image_size(), 1.0);
  const auto sino = fan_beam_forward(g, one);
  const double h = g.pixel_size(), dt = g.sample_spacing();
  // trapezoid error at the two kinks where the slope jumps by 1/h
  const double tol = 2 * dt * dt / (4 * h);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(sino[k * g.angles + g.angles / 2], 2 - h / 4, tol);
}

TEST(FanBeam, Linearity) {
  FanBeamGeometry g = small_geometry();
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_vec(gen, g.image_size()), q = random_vec(gen, g.image_size());
    const double a = 1.7, b = -0.3;
    std::vector<double> c(f.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a * f[i] + b * q[i];
    const auto rc = fan_beam_forward(g, c), rf = fan_beam_forward(g, f), rq = fan_beam_forward(g, q);
    for (std::size_t j = 0; j < rc.size(); ++j) EXPECT_NEAR(rc[j], a * rf[j] + b * rq[j], 1e-12);
  }
}

TEST(FanBeam, AdjointTestDeskGeometry) {
  FanBeamGeometry g;
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto f = random_vec(gen, g.image_size()), s = random_vec(gen, g.sino_size());
    const auto rf = fan_beam_forward(g, f), rs = fan_beam_adjoint(g, s);
    const double defect = std::abs(dot(rf, s) - dot(f, rs)) / (norm(rf) * norm(s) + norm(f) * norm(rs));
    EXPECT_LT(defect, 1e-10);
  }
}

TEST(FanBeam, SingleBinBackprojectsAlongItsRay) {
  FanBeamGeometry g = small_geometry(32);
  const double h = g.pixel_size();
  for (auto [k, l] : {std::pair<std::size_t, std::size_t>{0, 12}, {5, 3}, {17, 22}}) {
    std::vector<double> sino(g.sino_size(), 0.0);
    sino[k * g.angles + l] = 1.0;
    const auto img = fan_beam_adjoint(g, sino);
    const auto a = g.source(k), d = g.direction(k, l);
    std::size_t nonzero = 0;
    for (std::size_t iy = 0; iy < g.n; ++iy)
      for (std::size_t ix = 0; ix < g.n; ++ix) {
        if (img[iy * g.n + ix] == 0.0) continue;
        ++nonzero;
        EXPECT_GT(img[iy * g.n + ix], 0.0);
        // distance from the pixel centre to the sampled segment
        const double px = -1 + (ix + 0.5) * h - a[0], py = -1 + (iy + 0.5) * h - a[1];
        const double t = std::clamp(px * d[0] + py * d[1], 0.0, g.ray_length);
        EXPECT_LE(std::hypot(px - t * d[0], py - t * d[1]), h * std::sqrt(2.0) + 1e-12);
      }
    EXPECT_GT(nonzero, 0u);
  }
}

TEST(FanBeamOp, NormEstimateAndDims) {
  FanBeamOp R(small_geometry());
  EXPECT_EQ(R.domain_dim(), 24u * 24u);
  EXPECT_EQ(R.range_dim(), 24u * 25u);
  const auto est = operator_norm(R);
  EXPECT_TRUE(est.converged);
  EXPECT_GT(est.value, 0.0);
  EXPECT_THROW(R.apply(std::vector<double>(3)), shape_error);
}

// --- spectral model ---------------------------------------------------------

TEST(SpectralModel, DefaultsAreValidAndSplitAt70keV) {
  const auto m = make_two_material_model();
  EXPECT_EQ(m.num_energies(), 10u);
  EXPECT_EQ(m.num_materials(), 2u);
  for (auto i : m.windows[0]) EXPECT_LT(m.energies[i], 70.0);
  for (auto i : m.windows[1]) EXPECT_GE(m.energies[i], 70.0);
  EXPECT_EQ(m.windows[0].size() + m.windows[1].size(), 10u);
  EXPECT_DOUBLE_EQ(m.energies.front(), 20.0);
  EXPECT_DOUBLE_EQ(m.energies.back(), 120.0);
  EXPECT_DOUBLE_EQ(m.c(0, 1), -1.35);
  EXPECT_DOUBLE_EQ(m.c(1, 1), 2.3);
}

TEST(SpectralModel, SurrogateCurvesShape) {
  double peak = 0;
  for (double e = 20; e < 120; e += 0.5) {
    EXPECT_GT(surrogate_brain_attenuation(e), surrogate_brain_attenuation(e + 0.5));
    EXPECT_GT(surrogate_bone_attenuation(e), surrogate_bone_attenuation(e + 0.5));
    EXPECT_GT(surrogate_bone_attenuation(e), surrogate_brain_attenuation(e));
    peak = std::max(peak, surrogate_spectrum(e));
  }
  EXPECT_NEAR(peak, 1.0, 1e-12);
  // bone loses more attenuation over the range in absolute terms
  EXPECT_GT(surrogate_bone_attenuation(20) - surrogate_bone_attenuation(120),
            surrogate_brain_attenuation(20) - surrogate_brain_attenuation(120));
}

TEST(SpectralModel, ValidationCatchesBadModels) {
  auto m = make_two_material_model();
  auto bad = m;
  bad.windows[1].push_back(bad.windows[0].front());
  EXPECT_THROW(bad.validate(), config_error);
  bad = m;
  bad.windows[1].clear();
  EXPECT_THROW(bad.validate(), config_error);
  bad = m;
  bad.c = Matrix::Ones(2, 2);
  EXPECT_THROW(bad.validate(), config_error);
  bad = m;
  bad.weights[0] = -1;
  EXPECT_THROW(bad.validate(), config_error);
  bad = m;
  for (auto i : bad.windows[0]) bad.weights[i] = 0;
  EXPECT_THROW(bad.validate(), config_error);
}

TEST(SpectralModel, TwoColumnFilesAreInterpolated) {
  const auto path = std::filesystem::temp_directory_path() / "bcdreg_two_column_test.txt";
  {
    std::ofstream out(path);
    out << "# energy value\n10 2.0\n\n130 0.8  # tail\n";
  }
  const auto t = read_two_column(path.string());
  ASSERT_EQ(t.size(), 2u);
  const auto v = interpolate(t, {10, 70, 130, 200});
  EXPECT_DOUBLE_EQ(v[0], 2.0);
  EXPECT_NEAR(v[1], 1.4, 1e-15);
  EXPECT_DOUBLE_EQ(v[2], 0.8);
  EXPECT_DOUBLE_EQ(v[3], 0.8);

  SpectralOptions o;
  o.bone_file = path.string();
  const auto m = make_two_material_model(o);
  EXPECT_NEAR(m.mu(0, 1), 2.0 - 1.2 * 10 / 120, 1e-12);

  {
    std::ofstream out(path);
    out << "10 1 7\n20 2\n";
  }
  EXPECT_THROW(read_two_column(path.string()), config_error);
  std::filesystem::remove(path);
  EXPECT_THROW(read_two_column(path.string()), config_error);
}

// --- measurement stages -----------------------------------------------------

TEST(MsForward, ZeroMapsGiveWindowTotals) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  const auto I = ms_forward(m, g, BlockVector(2, g.image_size()));
  for (std::size_t b = 0; b < 2; ++b) {
    double total = 0;
    for (auto i : m.windows[b]) total += m.weights[i];
    for (double x : I.block(b)) EXPECT_NEAR(x, total, 1e-13 * total);
  }
}

TEST(MsForward, SingleEnergyIsBeerLambert) {
  const auto g = small_geometry(12);
  const auto m = one_material({1.0}, {0.7});
  std::mt19937_64 gen(3);
  const auto f = random_maps(gen, 1, g.image_size(), 0, 1);
  const auto I = ms_forward(m, g, f);
  std::vector<double> scaled(f.block(0).begin(), f.block(0).end());
  for (auto& x : scaled) x *= 0.7;
  const auto r = fan_beam_forward(g, scaled);
  for (std::size_t j = 0; j < r.size(); ++j) EXPECT_NEAR(I(0, j), std::exp(-r[j]), 1e-14);
}

TEST(MsForward, EqualsStageByStageComposition) {
  FanBeamGeometry g;
  g.n = 4;
  g.sources = 6;
  g.angles = 5;
  g.samples = 20;
  const auto m = one_material({0.6, 1.3}, {0.9, 0.4});
  std::mt19937_64 gen(4);
  const auto f = random_maps(gen, 1, 16, 0, 1);

  // four stages, each by hand
  std::vector<std::vector<double>> u(2, std::vector<double>(16));
  for (int i = 0; i < 2; ++i)
    for (int p = 0; p < 16; ++p) u[i][p] = m.mu(i, 0) * f(0, p);
  std::vector<std::vector<double>> r(2);
  for (int i = 0; i < 2; ++i) r[i] = fan_beam_forward(g, u[i]);
  std::vector<double> expect(g.sino_size(), 0.0);
  for (int i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < expect.size(); ++j) expect[j] += m.weights[i] * std::exp(-r[i][j]);

  const auto I = ms_forward(m, g, f);
  for (std::size_t j = 0; j < expect.size(); ++j) EXPECT_NEAR(I(0, j), expect[j], 1e-12);

  // the library's own stage functions compose to the same thing
  const auto staged = window_sum(m, exp_stage(project_each(g, mix_materials(m, f))));
  EXPECT_EQ(staged, I);
  // and the cached evaluation path (projection before mixing) agrees
  const auto ev = evaluate(m, g, f);
  for (std::size_t j = 0; j < expect.size(); ++j) EXPECT_NEAR(ev.intensity(0, j), expect[j], 1e-12);
}

TEST(MsForward, PositiveAndRejectsNonFinite) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = random_maps(gen, 2, g.image_size(), -2, 5);
    const auto I = ms_forward(m, g, f);
    for (double x : I.data()) EXPECT_GT(x, 0.0);
  }
  BlockVector f(2, g.image_size());
  f(1, 3) = std::nan("");
  EXPECT_THROW(ms_forward(m, g, f), numerical_error);
  EXPECT_THROW(ms_forward(m, g, BlockVector(1, g.image_size())), shape_error);
}

TEST(ExpStageDerivative, Examples) {
  const BlockVector g0{{0.0, 0.0}}, h{{2.0, -1.0}};
  EXPECT_EQ(exp_stage_derivative(g0, h), (BlockVector{{-2.0, 1.0}}));
  EXPECT_EQ(exp_stage_derivative(h, BlockVector{{0.0, 0.0}}), (BlockVector{{-0.0, -0.0}}));
  EXPECT_NEAR(exp_stage_derivative(BlockVector{{1.0}}, BlockVector{{2.0}})(0, 0), -0.7357588823428847, 1e-15);
  EXPECT_THROW(exp_stage_derivative(g0, BlockVector{{1.0}}), shape_error);
}

TEST(ExpStageDerivative, MatchesDifferenceQuotient) {
  std::mt19937_64 gen(6);
  auto g = random_maps(gen, 3, 10, -1, 2), h = random_maps(gen, 3, 10, -1, 1);
  const double eps = 1e-6;
  BlockVector gp = g;
  axpy(eps, h.data(), gp.data());
  const auto d = exp_stage_derivative(g, h);
  const auto e0 = exp_stage(g), e1 = exp_stage(gp);
  for (std::size_t j = 0; j < d.size(); ++j)
    EXPECT_NEAR((e1.data()[j] - e0.data()[j]) / eps, d.data()[j], 1e-5);
}

TEST(Precondition, Examples) {
  auto m = make_two_material_model();
  const BlockVector I{{std::exp(1.0), 2.0}, {std::exp(1.0), 3.0}};
  const auto H = precondition(m, I);
  EXPECT_NEAR(H(0, 0), -0.35, 1e-14);
  EXPECT_NEAR(H(1, 0), 1.3, 1e-14);

  m.c = Matrix::Identity(2, 2);
  const auto L = precondition(m, I);
  EXPECT_DOUBLE_EQ(L(0, 1), std::log(2.0));
  EXPECT_DOUBLE_EQ(L(1, 1), std::log(3.0));
  EXPECT_EQ(precondition(m, BlockVector{{1, 1}, {1, 1}}), BlockVector(2, 2));

  EXPECT_THROW(precondition(m, BlockVector{{1, 0}, {1, 1}}), numerical_error);
  EXPECT_THROW(precondition(m, BlockVector{{1, -1}, {1, 1}}), numerical_error);
}

// --- residual gradient ------------------------------------------------------

TEST(ResidualGradient, ZeroAtExactData) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  std::mt19937_64 gen(7);
  const auto f = random_maps(gen, 2, g.image_size(), 0.1, 0.9);
  const auto v = evaluate(m, g, f).H;
  for (std::size_t b = 0; b < 2; ++b) {
    const auto grad = residual_gradient(m, g, f, v, b);
    for (double x : grad.data()) EXPECT_EQ(x, 0.0);
  }
}

TEST(ResidualGradient, MatchesCentralDifferences) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  std::mt19937_64 gen(8);
  const auto v = precondition(m, ms_forward(m, g, make_head_phantom(g)));
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_maps(gen, 2, g.image_size(), 0.1, 0.9);
    BlockVector h(2, g.image_size());
    for (auto& e : h.data()) e = nd(gen);
    for (std::size_t b = 0; b < 2; ++b) {
      const double analytic = dot(residual_gradient(m, g, f, v, b).data(), h.data());
      const double fd = directional_fd(m, g, f, h, v, b, 1e-5);
      EXPECT_LE(std::abs(analytic - fd), 1e-4 * std::abs(analytic)) << "trial " << trial << " window " << b;
    }
  }
}

TEST(ResidualGradient, SingleEnergyClosedForm) {
  // B = N = 1, c = 1, f = 0: Phi = 0.5||log(s) - v||^2 at f = 0 and
  // dPhi = -mu R*[log s - v].
  FanBeamGeometry g;
  g.n = 2;
  g.sources = 3;
  g.angles = 3;
  g.samples = 11;
  const double s = 1.7, mu = 0.8;
  const auto m = one_material({s}, {mu});
  const BlockVector v{{0.1, -0.2, 0.3, 0.0, 0.5, 0.25, -0.1, 0.05, 0.2}};
  const auto grad = residual_gradient(m, g, BlockVector(1, 4), v, 0);
  std::vector<double> r(g.sino_size());
  for (std::size_t j = 0; j < r.size(); ++j) r[j] = std::log(s) - v(0, j);
  const auto back = fan_beam_adjoint(g, r);
  for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(grad(0, p), -mu * back[p], 1e-14);

  // the sign is the one the difference quotient sees
  const BlockVector h{{1, 0.5, -0.25, 2}};
  EXPECT_NEAR(dot(grad.data(), h.data()), directional_fd(m, g, BlockVector(1, 4), h, v, 0, 1e-6), 1e-8);
}

TEST(ResidualGradient, MatchesDenseJacobian) {
  FanBeamGeometry g;
  g.n = 6;
  g.sources = 8;
  g.angles = 7;
  g.samples = 30;
  const auto m = make_two_material_model(coarse_options(4));
  DenseModel dm{m, dense_projector(g)};
  std::mt19937_64 gen(9);
  const auto f = random_maps(gen, 2, 36, 0.1, 0.9);
  const auto v = random_maps(gen, 2, g.sino_size(), -1, 1);
  const auto H = dm.H(split(f));
  for (std::size_t b = 0; b < 2; ++b) {
    const auto grad = residual_gradient(m, g, f, v, b);
    const Eigen::VectorXd rho = H[b] - Eigen::Map<const Eigen::VectorXd>(v.block(b).data(), Eigen::Index(g.sino_size()));
    for (std::size_t q = 0; q < 2; ++q) {
      const Eigen::VectorXd expect = dm.jacobian(split(f), b, q).transpose() * rho;
      for (std::size_t p = 0; p < 36; ++p)
        EXPECT_NEAR(grad(q, p), expect(Eigen::Index(p)), 1e-11 * (1 + expect.norm()));
    }
  }
}

// --- phantom ----------------------------------------------------------------

TEST(HeadPhantom, RangeSupportAndMixedDisc) {
  FanBeamGeometry g;
  const auto f = make_head_phantom(g);
  ASSERT_EQ(f.num_blocks(), 2u);
  EXPECT_EQ(f, make_head_phantom(g));
  const double h = g.pixel_size();
  bool mixed = false;
  for (std::size_t iy = 0; iy < g.n; ++iy)
    for (std::size_t ix = 0; ix < g.n; ++ix) {
      const std::size_t p = iy * g.n + ix;
      for (std::size_t b = 0; b < 2; ++b) {
        EXPECT_GE(f(b, p), 0.0);
        EXPECT_LE(f(b, p), 1.0);
      }
      const double x = -1 + (ix + 0.5) * h, y = -1 + (iy + 0.5) * h;
      if (std::hypot(x, y) > g.support_radius) {
        EXPECT_EQ(f(0, p) + f(1, p), 0.0);
      }
      mixed = mixed || (f(0, p) == 0.5 && f(1, p) == 0.5);
    }
  EXPECT_TRUE(mixed);
  EXPECT_GT(norm(f.block(0)), 0.0);
  EXPECT_GT(norm(f.block(1)), 0.0);
}

// --- run_nonlinear ----------------------------------------------------------

TEST(RunNonlinear, ZeroStepLeavesMapsUnchanged) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  const auto fs = make_head_phantom(g);
  const auto v = precondition(m, ms_forward(m, g, fs));
  std::mt19937_64 gen(10);
  const auto f0 = random_maps(gen, 2, g.image_size(), 0, 1);
  for (auto method : {NonlinearMethod::bcd, NonlinearMethod::landweber}) {
    NonlinearOptions o;
    o.method = method;
    o.step = {0.0};
    o.cycles = 3;
    const auto st = run_nonlinear(m, g, f0, v, o, &fs);
    EXPECT_TRUE(identical(st.f, f0));
    EXPECT_EQ(st.history.size(), method == NonlinearMethod::bcd ? 6u : 3u);
  }
}

TEST(RunNonlinear, ExactDataIsStationary) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  const auto fs = make_head_phantom(g);
  const auto v = evaluate(m, g, fs).H;
  for (auto method : {NonlinearMethod::bcd, NonlinearMethod::landweber}) {
    NonlinearOptions o;
    o.method = method;
    o.step = {10.0, 0.5};
    o.cycles = 2;
    const auto st = run_nonlinear(m, g, fs, v, o, &fs);
    EXPECT_EQ(st.f, fs);
    for (const auto& r : st.history) EXPECT_EQ(r.rel_error[0], 0.0);
  }
}

TEST(RunNonlinear, MatchesStraightLineBcdSingleMaterial) {
  FanBeamGeometry g;
  g.n = 8;
  g.sources = 10;
  g.angles = 9;
  g.samples = 40;
  const auto m = one_material({0.5, 1.0, 0.7}, {1.2, 0.8, 0.5}, 1.3);
  DenseModel dm{m, dense_projector(g)};
  std::mt19937_64 gen(11);
  const auto ftrue = random_maps(gen, 1, 64, 0, 1);
  const auto v = precondition(m, ms_forward(m, g, ftrue));
  const double s = 2.0;

  NonlinearOptions o;
  o.step = {s};
  o.cycles = 3;
  const auto st = run_nonlinear(m, g, BlockVector(1, 64), v, o);

  Eigen::VectorXd f = Eigen::VectorXd::Zero(64);
  const Eigen::VectorXd vd = Eigen::Map<const Eigen::VectorXd>(v.block(0).data(), Eigen::Index(g.sino_size()));
  for (int k = 0; k < 3; ++k) {
    const Eigen::VectorXd rho = dm.H({f})[0] - vd;
    f -= s * dm.jacobian({f}, 0, 0).transpose() * rho;
    f = f.cwiseMax(0.0).cwiseMin(1.0);
    EXPECT_NEAR(st.history[k].phi[0], 0.5 * (dm.H({f})[0] - vd).squaredNorm(), 1e-10);
  }
  for (std::size_t p = 0; p < 64; ++p) EXPECT_NEAR(st.f(0, p), f(Eigen::Index(p)), 1e-10);
  EXPECT_FALSE(identical(st.f, BlockVector(1, 64)));
}

TEST(RunNonlinear, MatchesStraightLineTwoMaterials) {
  FanBeamGeometry g;
  g.n = 6;
  g.sources = 8;
  g.angles = 7;
  g.samples = 30;
  const auto m = make_two_material_model(coarse_options(6));
  DenseModel dm{m, dense_projector(g)};
  std::mt19937_64 gen(12);
  const auto v = precondition(m, ms_forward(m, g, random_maps(gen, 2, 36, 0, 1)));
  std::vector<Eigen::VectorXd> vd;
  for (std::size_t b = 0; b < 2; ++b)
    vd.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.block(b).data(), Eigen::Index(g.sino_size())));
  const std::vector<double> steps{3.0, 0.2};

  for (bool own : {true, false}) {
    NonlinearOptions o;
    o.step = steps;
    o.cycles = 3;
    o.own_window = own;
    const auto st = run_nonlinear(m, g, BlockVector(2, 36), v, o);
    std::vector<Eigen::VectorXd> f(2, Eigen::VectorXd::Zero(36));
    for (int k = 0; k < 6; ++k) {
      const std::size_t b = k % 2;
      const auto H = dm.H(f);
      Eigen::VectorXd grad = dm.jacobian(f, b, b).transpose() * (H[b] - vd[b]);
      if (!own) grad += dm.jacobian(f, 1 - b, b).transpose() * (H[1 - b] - vd[1 - b]);
      f[b] = (f[b] - steps[b] * grad).cwiseMax(0.0).cwiseMin(1.0);
    }
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t p = 0; p < 36; ++p) EXPECT_NEAR(st.f(b, p), f[b](Eigen::Index(p)), 1e-10) << own;
  }

  NonlinearOptions o;
  o.method = NonlinearMethod::landweber;
  o.step = {0.2};
  o.cycles = 3;
  const auto st = run_nonlinear(m, g, BlockVector(2, 36), v, o);
  std::vector<Eigen::VectorXd> f(2, Eigen::VectorXd::Zero(36));
  for (int k = 0; k < 3; ++k) {
    const auto H = dm.H(f);
    std::vector<Eigen::VectorXd> next = f;
    for (std::size_t q = 0; q < 2; ++q) {
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(36);
      for (std::size_t b = 0; b < 2; ++b) grad += dm.jacobian(f, b, q).transpose() * (H[b] - vd[b]);
      next[q] = (f[q] - 0.2 * grad).cwiseMax(0.0).cwiseMin(1.0);
    }
    f = next;
  }
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 36; ++p) EXPECT_NEAR(st.f(b, p), f[b](Eigen::Index(p)), 1e-10);
}

// Heuristic: a small projected step on block b is a descent step for Phi_b.
TEST(RunNonlinearHeuristic, OwnWindowObjectiveDoesNotIncreaseAtSmallSteps) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  const auto fs = make_head_phantom(g);
  const auto v = precondition(m, ms_forward(m, g, fs));
  NonlinearOptions o;
  o.step = {2.0, 0.05};
  o.cycles = 20;
  const auto st = run_nonlinear(m, g, BlockVector(2, g.image_size()), v, o, &fs);
  std::vector<double> prev = st.initial_phi;
  for (const auto& r : st.history) {
    EXPECT_LE(r.phi[r.block], prev[r.block] * (1 + 1e-12)) << "k=" << r.k;
    prev = r.phi;
  }
}

TEST(RunNonlinear, DivergenceIsReportedWithIteration) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  const auto fs = make_head_phantom(g);
  const auto v = precondition(m, ms_forward(m, g, fs));
  NonlinearOptions o;
  o.step = {1e6};
  o.cycles = 50;
  o.box = false;
  try {
    run_nonlinear(m, g, BlockVector(2, g.image_size()), v, o);
    FAIL() << "expected numerical_error";
  } catch (const numerical_error& e) {
    EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
  }
}

TEST(RunNonlinear, InputValidation) {
  const auto g = small_geometry();
  const auto m = make_two_material_model();
  const BlockVector v(2, g.sino_size());
  NonlinearOptions o;
  o.cycles = 1;
  BlockVector outside(2, g.image_size());
  outside(0, 0) = 1.5;
  EXPECT_THROW(run_nonlinear(m, g, outside, v, o), config_error);
  o.step = {1.0, 2.0, 3.0};
  EXPECT_THROW(run_nonlinear(m, g, BlockVector(2, g.image_size()), v, o), config_error);
  o.step = {-1.0};
  EXPECT_THROW(run_nonlinear(m, g, BlockVector(2, g.image_size()), v, o), config_error);
  o.step = {1.0};
  EXPECT_THROW(run_nonlinear(m, g, BlockVector(2, 5), v, o), shape_error);
  EXPECT_THROW(run_nonlinear(m, g, BlockVector(2, g.image_size()), BlockVector(2, 3), o), shape_error);
}

TEST(RunNonlinear, NoisyDataSemiConverges) {
  const auto g = small_geometry(32);
  const auto m = make_two_material_model();
  const auto fs = make_head_phantom(g);
  auto v = precondition(m, ms_forward(m, g, fs));
  double peak = 0;
  for (double x : v.data()) peak = std::max(peak, std::abs(x));
  std::mt19937_64 gen(13);
  std::normal_distribution<double> nd(0.0, 0.02 * peak);
  for (auto& x : v.data()) x += nd(gen);
  NonlinearOptions o;
  o.step = {50.0, 0.5};
  o.cycles = 60;
  const auto st = run_nonlinear(m, g, BlockVector(2, g.image_size()), v, o, &fs);
  std::size_t argmin = 0;
  for (std::size_t k = 0; k < st.history.size(); ++k)
    if (st.history[k].rel_error[0] < st.history[argmin].rel_error[0]) argmin = k;
  EXPECT_LT(argmin + 1, st.history.size());
  EXPECT_LT(st.history[argmin].rel_error[0], st.initial_rel_error[0]);
}
