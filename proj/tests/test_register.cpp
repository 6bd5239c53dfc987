#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gcskel/register.hpp"
#include "test_support.hpp"

using namespace gcskel;
using gcskel::test::height_patch;
using gcskel::test::random_column_stochastic;
using gcskel::test::random_oriented_set;
using gcskel::test::random_rotation;
using gcskel::test::transform_cloud;

namespace {

PointCloud one_point(const Vec3& p, const Vec3& n) {
  return PointCloud({{p, n}}, true);
}

PointCloud cloud_of(std::vector<OrientedPoint> pts) {
  return PointCloud(std::move(pts), true);
}

struct RandomConfig {
  OrientedSet x, y;
  Eigen::MatrixXd P;
  Vec3 psi;
  double s, alpha, sigma;
};

RandomConfig random_config(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(4, 25);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  RandomConfig c;
  c.x = random_oriented_set(n(rng), rng);
  c.y = random_oriented_set(n(rng), rng);
  c.P = random_column_stochastic(c.y.size(), c.x.size(), rng);
  c.psi = Vec3(u(rng), u(rng), u(rng));
  c.s = std::exp(0.5 * u(rng));
  c.alpha = 0.2 + 4.0 * (u(rng) + 2.0);
  c.sigma = 0.3 + 0.5 * (u(rng) + 2.0);
  return c;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(b), 1e-8);
}

}  // namespace

TEST(EStep, SingleComponentTakesAllMass) {
  const auto x = height_patch(5);
  const auto y = one_point(Vec3(3, 1, 0), Vec3::UnitX());
  const auto P = e_step(x, y, RegistrationParams{});
  ASSERT_EQ(P.P.rows(), 1);
  EXPECT_TRUE((P.P.array() == 1.0).all());
}

TEST(EStep, EquidistantComponentsShareMass) {
  const auto x = one_point(Vec3::Zero(), Vec3::UnitZ());
  const auto y = cloud_of({{Vec3(1, 0, 0), Vec3::UnitZ()}, {Vec3(-1, 0, 0), -Vec3::UnitY()}});
  RegistrationParams p;
  p.alpha = 1e-12;
  const auto P = e_step(x, y, p);
  EXPECT_NEAR(P.P(0, 0), 0.5, 1e-9);
  EXPECT_NEAR(P.P(1, 0), 0.5, 1e-9);
}

TEST(EStep, ConcentrationFavoursAlignedNormal) {
  const auto x = one_point(Vec3::Zero(), Vec3::UnitZ());
  const auto y = cloud_of({{Vec3(0.1, 0, 0), Vec3::UnitZ()}, {Vec3(0, 0.1, 0), -Vec3::UnitZ()}});
  RegistrationParams p;
  p.alpha = 10.0;
  p.sigma = 1e6;
  const auto P = e_step(x, y, p);
  EXPECT_NEAR(std::log(P.P(0, 0) / P.P(1, 0)), 20.0, 1e-6);
}

TEST(EStep, ColumnsSumToOne) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 20; ++t) {
    const auto c = random_config(rng);
    RegistrationParams p;
    p.rotation = chart_to_rotation(c.psi);
    p.scale = c.s;
    p.alpha = c.alpha;
    p.sigma = 0.05 + 0.1 * t;  // includes very peaked posteriors
    const auto r = e_step_full(c.x, c.y, p);
    for (Eigen::Index i = 0; i < r.P.P.cols(); ++i)
      EXPECT_NEAR(r.P.P.col(i).sum(), 1.0, 1e-9);
    EXPECT_TRUE((r.P.P.array() >= 0.0).all() && (r.P.P.array() <= 1.0).all());
  }
}

TEST(EStep, NonFiniteParametersRejected) {
  const auto x = height_patch(4);
  RegistrationParams p;
  p.sigma = std::nan("");
  EXPECT_THROW(e_step(x, x, p), NumericalError);
}

TEST(MStepObjective, EqualsDirectExpectationAtClosedFormTranslation) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    const auto c = random_config(rng);
    const auto st = m_step_statistics(c.x, c.y, c.P);
    RegistrationParams p;
    p.rotation = chart_to_rotation(c.psi);
    p.scale = c.s;
    p.alpha = c.alpha;
    p.sigma = c.sigma;
    p.translation = closed_form_translation(st, p.rotation, p.scale);
    const double direct = q_full(c.x, c.y, c.P, p);
    const double reduced = q_objective(st, p.rotation, p.scale, p.alpha, p.sigma);
    EXPECT_NEAR(direct, reduced, 1e-9 * std::max(1.0, std::abs(direct)));
    // the closed-form t minimises the direct expectation
    for (int k = 0; k < 3; ++k) {
      RegistrationParams q = p;
      q.translation(k) += 1e-3;
      EXPECT_GT(q_full(c.x, c.y, c.P, q), direct);
      q.translation(k) -= 2e-3;
      EXPECT_GT(q_full(c.x, c.y, c.P, q), direct);
    }
  }
}

TEST(MStepObjective, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(23);
  const double h = 1e-6;
  for (int t = 0; t < 50; ++t) {
    const auto c = random_config(rng);
    const auto st = m_step_statistics(c.x, c.y, c.P);
    const auto g = q_gradient(st, c.psi, c.s, c.alpha, c.sigma);
    auto q = [&](const Vec3& psi, double s, double a, double sg) {
      return q_objective(st, chart_to_rotation(psi), s, a, sg);
    };
    for (int k = 0; k < 3; ++k) {
      Vec3 e = Vec3::Zero();
      e(k) = h;
      const double fd = (q(c.psi + e, c.s, c.alpha, c.sigma) -
                         q(c.psi - e, c.s, c.alpha, c.sigma)) / (2 * h);
      EXPECT_LT(rel_err(g.psi(k), fd), 1e-5) << "psi" << k << " trial " << t;
    }
    const double fs = (q(c.psi, c.s + h, c.alpha, c.sigma) - q(c.psi, c.s - h, c.alpha, c.sigma)) / (2 * h);
    const double fa = (q(c.psi, c.s, c.alpha + h, c.sigma) - q(c.psi, c.s, c.alpha - h, c.sigma)) / (2 * h);
    const double fg = (q(c.psi, c.s, c.alpha, c.sigma + h) - q(c.psi, c.s, c.alpha, c.sigma - h)) / (2 * h);
    EXPECT_LT(rel_err(g.scale, fs), 1e-5);
    EXPECT_LT(rel_err(g.alpha, fa), 1e-5);
    EXPECT_LT(rel_err(g.sigma, fg), 1e-5);
  }
}

TEST(MStepObjective, GradientWithChartBase) {
  std::mt19937_64 rng(24);
  const auto c = random_config(rng);
  const auto st = m_step_statistics(c.x, c.y, c.P);
  const Mat3 base = random_rotation(rng, kPi);
  const auto g = q_gradient(st, c.psi, c.s, c.alpha, c.sigma, true, base);
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Vec3 e = Vec3::Zero();
    e(k) = h;
    const double fd =
        (q_objective(st, chart_to_rotation(c.psi + e) * base, c.s, c.alpha, c.sigma) -
         q_objective(st, chart_to_rotation(c.psi - e) * base, c.s, c.alpha, c.sigma)) / (2 * h);
    EXPECT_LT(rel_err(g.psi(k), fd), 1e-5);
  }
}

TEST(MStep, SelfMatchIsFixedPoint) {
  const auto x = height_patch(8);
  const OrientedSet xs(x);
  CorrespondenceMatrix P{Eigen::MatrixXd::Identity(xs.size(), xs.size())};
  RegistrationParams warm;
  warm.sigma = initial_sigma(xs, xs);
  const auto out = m_step(x, x, P, warm);
  EXPECT_LT((out.rotation - Mat3::Identity()).norm(), 1e-3);
  EXPECT_NEAR(out.scale, 1.0, 1e-3);
  EXPECT_LT(out.translation.norm(), 1e-3 * 2.0 * std::sqrt(2.0));
}

TEST(MStep, NeverWorseThanWarmStart) {
  std::mt19937_64 rng(25);
  RegConfig cfg;
  for (int t = 0; t < 20; ++t) {
    const auto c = random_config(rng);
    const auto st = m_step_statistics(c.x, c.y, c.P);
    RegistrationParams warm;
    warm.rotation = chart_to_rotation(c.psi);
    warm.scale = c.s;
    warm.alpha = std::min(c.alpha, 9.0);
    warm.sigma = c.sigma;
    const double q0 = q_objective(st, warm.rotation, warm.scale, warm.alpha, warm.sigma);
    const auto out = m_step_stats(st, warm, cfg, 1e-9);
    const double q1 = q_objective(st, out.params.rotation, out.params.scale,
                                  out.params.alpha, out.params.sigma);
    EXPECT_LE(q1, q0 + 1e-9);
    EXPECT_GT(out.params.alpha, 0.0);
    EXPECT_LE(out.params.alpha, 10.0);
  }
}

TEST(MStep, SigmaMatchesStationaryPoint) {
  std::mt19937_64 rng(26);
  for (int t = 0; t < 10; ++t) {
    const auto c = random_config(rng);
    const auto st = m_step_statistics(c.x, c.y, c.P);
    const Mat3 r = chart_to_rotation(c.psi);
    const double resid = st.K2 - 2.0 * c.s * (st.A.transpose() * r).trace() + c.s * c.s * st.K1;
    const double closed = std::sqrt(resid / (3.0 * st.n));
    // BFGS over log sigma only, everything else frozen
    auto fn = [&](const Eigen::VectorXd& z, Eigen::VectorXd& g) {
      const double sg = std::exp(z(0));
      g.resize(1);
      g(0) = q_gradient(st, c.psi, c.s, c.alpha, sg).sigma * sg;
      return q_objective(st, r, c.s, c.alpha, sg);
    };
    Eigen::VectorXd z0(1);
    z0 << std::log(c.sigma);
    const auto res = bfgs_minimize(fn, z0);
    EXPECT_NEAR(std::exp(res.x(0)), closed, 1e-4);
  }
}

TEST(Register, RecoversExactSimilarity) {
  std::mt19937_64 rng(27);
  const auto y = height_patch(12);
  for (int t = 0; t < 5; ++t) {
    const Mat3 r = random_rotation(rng, 0.5);
    const double s = 0.8 + 0.1 * t;
    const Vec3 tr(0.3, -0.2, 0.1 * t);
    const auto x = transform_cloud(y, r, s, tr);
    const auto rep = register_clouds(x, y);
    EXPECT_LT(rotation_error(rep.params.rotation, r), 0.05);
    EXPECT_LT(std::abs(rep.params.scale - s) / s, 0.02);
    EXPECT_LT((rep.params.translation - tr).norm(), 0.05);
  }
}

TEST(Register, PositionOnlyVariantAlsoRecovers) {
  std::mt19937_64 rng(28);
  const auto y = height_patch(12);
  const Mat3 r = random_rotation(rng, 0.4);
  const auto x = transform_cloud(y, r, 1.2, Vec3(0.1, 0.2, 0.3));
  RegConfig cfg;
  cfg.use_normals = false;
  const auto rep = register_clouds(x, y, cfg);
  EXPECT_LT(rotation_error(rep.params.rotation, r), 0.05);
  EXPECT_NEAR(rep.params.scale, 1.2, 0.024);
}

TEST(Register, LikelihoodNeverIncreases) {
  std::mt19937_64 rng(29);
  for (int t = 0; t < 5; ++t) {
    const auto y = height_patch(9, true, 100 + t);
    const auto x = transform_cloud(height_patch(9, true, 200 + t),
                                   random_rotation(rng, 0.4), 1.1, Vec3(0.2, 0, 0));
    const auto rep = register_clouds(x, y);
    double prev = rep.initial_nll;
    for (const auto& it : rep.trace) {
      EXPECT_LE(it.nll, prev + 1e-7) << "iteration " << it.iteration;
      prev = it.nll;
    }
  }
}

TEST(Register, DistantClutterGetsNoMass) {
  // Y = X plus an unstructured blob far outside the noise scale of X.
  const auto x = height_patch(8);
  const OrientedSet xs(x);
  const double sigma_x = initial_sigma(xs, xs);
  std::mt19937_64 rng(32);
  const auto blob = random_oriented_set(40, rng);
  std::vector<OrientedPoint> pts = x.points();
  for (Eigen::Index j = 0; j < blob.size(); ++j)
    pts.push_back({0.5 * blob.pos.row(j).transpose() + Vec3(12.0 * sigma_x, 0, 0),
                   blob.nrm.row(j).transpose()});
  const PointCloud y(std::move(pts), true);
  const auto rep = register_clouds(x, y);
  for (Eigen::Index i = 0; i < rep.P.P.cols(); ++i)
    EXPECT_LT(rep.P.P.col(i).tail(blob.size()).sum(), 0.01);
}

TEST(Register, EquivariantUnderRigidMotion) {
  std::mt19937_64 rng(30);
  const auto y = height_patch(10);
  const auto x = transform_cloud(y, random_rotation(rng, 0.3), 1.1, Vec3(0.1, 0.1, 0));
  const auto base = register_clouds(x, y);
  const Mat3 g = random_rotation(rng, kPi);
  const Vec3 gt(1.0, -2.0, 0.5);
  const auto moved = register_clouds(transform_cloud(x, g, 1.0, gt),
                                     transform_cloud(y, g, 1.0, gt));
  EXPECT_LT((moved.params.rotation - g * base.params.rotation * g.transpose()).norm(), 5e-3);
  EXPECT_NEAR(moved.params.scale, base.params.scale, 1e-6);
}

TEST(Register, ReportsProperRotationAndAngleRange) {
  const auto y = height_patch(8, true, 3);
  const auto x = height_patch(8, true, 4);
  const auto rep = register_clouds(x, y);
  const Mat3& r = rep.params.rotation;
  EXPECT_LT((r.transpose() * r - Mat3::Identity()).norm(), 1e-6);
  EXPECT_GT(r.determinant(), 0.0);
  EXPECT_GE(rep.mean_best_match_angle, 0.0);
  EXPECT_LE(rep.mean_best_match_angle, 180.0);
  EXPECT_GT(rep.params.alpha, 0.0);
  EXPECT_LE(rep.params.alpha, 10.0);
}

TEST(Register, TooFewPointsRefused) {
  const auto x = cloud_of({{Vec3::Zero(), Vec3::UnitZ()}, {Vec3::UnitX(), Vec3::UnitZ()}});
  EXPECT_THROW(register_clouds(x, height_patch(4)), InvalidArgument);
}

TEST(SelectMatched, ExactTransformSelectsEverything) {
  std::mt19937_64 rng(31);
  const auto y = height_patch(8);
  const auto x = transform_cloud(y, random_rotation(rng, 0.3), 1.05, Vec3(0, 0.1, 0));
  const auto rep = register_clouds(x, y);
  EXPECT_EQ(select_matched_points(x, y, rep).size(), y.size());
}

TEST(SelectMatched, DistanceAndAngleGates) {
  const auto x = height_patch(6);
  std::vector<OrientedPoint> pts = x.points();
  RegistrationParams p;
  p.sigma = 0.01;
  pts.push_back({Vec3(0, 0, 10.0), Vec3::UnitZ()});                        // far away
  pts.push_back({x.position(7), -x.normal(7)});                           // flipped normal
  const PointCloud y(std::move(pts), true);
  const auto sel = select_matched_points(OrientedSet(x), OrientedSet(y), p);
  EXPECT_EQ(sel.size(), x.size());
  EXPECT_EQ(sel.back(), x.size() - 1);
}
