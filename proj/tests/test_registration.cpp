#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cgcn/errors.hpp"
#include "cgcn/pointcloud.hpp"
#include "cgcn/registration.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cgcn;
using namespace cgcn::reg;
using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

std::vector<Vec3> random_points(std::size_t n, Rng& rng) {
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  return pts;
}

RigidTransform random_axis_angle(Rng& rng) {
  Vec3 axis;
  do {
    axis = Vec3(rng.normal(), rng.normal(), rng.normal());
  } while (axis.norm() < 1e-3);
  RigidTransform T;
  T.R = axis_angle(axis.normalized(), rng.uniform(0.0, std::numbers::pi));
  T.t = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
  return T;
}

std::vector<Vec3> transformed(const std::vector<Vec3>& pts, const RigidTransform& T) {
  std::vector<Vec3> out;
  for (const auto& p : pts) out.push_back(T.apply(p));
  return out;
}

RigidTransform from_euler(double a, double b, double c, Vec3 t = Vec3::Zero()) {
  return {compose_zyx({a, b, c}), t};
}

}  // namespace

TEST(SoftCorrespondence, RowsAreDistributions) {
  Rng rng(1);
  const Tensor a = test::random_tensor(7, 5, rng), b = test::random_tensor(9, 5, rng);
  const auto corr = soft_correspondence(a, b, random_points(9, rng), 0.5);
  for (std::size_t i = 0; i < 7; ++i) {
    double total = 0.0;
    for (double w : corr.weights.row(i)) {
      EXPECT_GE(w, 0.0);
      total += w;
    }
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
}

TEST(SoftCorrespondence, ColdLimitPicksMatches) {
  // one-hot descriptors, target order scrambled
  const std::size_t n = 8;
  const std::size_t perm[n] = {3, 0, 7, 5, 1, 6, 2, 4};
  Tensor src(n, n), tgt(n, n);
  Rng rng(2);
  const auto pts = random_points(n, rng);
  for (std::size_t i = 0; i < n; ++i) {
    src(i, i) = 1.0;
    tgt(perm[i], i) = 1.0;
  }
  const auto corr = soft_correspondence(src, tgt, pts, 1e-3);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (corr.weights(i, j) > corr.weights(i, best)) best = j;
    EXPECT_EQ(best, perm[i]);
    EXPECT_LT((corr.virtual_points[i] - pts[perm[i]]).norm(), 1e-12);
  }
}

TEST(SoftCorrespondence, GraphMatchesDirect) {
  Rng rng(3);
  const Tensor a = test::random_tensor(6, 4, rng), b = test::random_tensor(5, 4, rng);
  const auto pts = random_points(5, rng);
  const auto corr = soft_correspondence(a, b, pts, 0.2);
  Graph g;
  const Tensor v = g.value(soft_correspondence(g, g.constant(a), g.constant(b), g.constant(to_tensor(pts)), 0.2));
  for (std::size_t i = 0; i < 6; ++i)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(v(i, c), corr.virtual_points[i][c], 1e-14);
  EXPECT_THROW(soft_correspondence(a, b, pts, 0.0), ParameterError);
}

TEST(Procrustes, RecoversThousandRandomMotions) {
  Rng rng(4);
  double worst_r = 0.0, worst_t = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto src = random_points(3 + rng.below(30), rng);
    const auto T = random_axis_angle(rng);
    const auto got = procrustes(src, transformed(src, T));
    worst_r = std::max(worst_r, (got.R - T.R).norm());
    worst_t = std::max(worst_t, (got.t - T.t).norm());
  }
  EXPECT_LT(worst_r, 1e-9);
  EXPECT_LT(worst_t, 1e-9);
}

TEST(Procrustes, MirroredPlanarKeepsProperRotation) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec3> src(10), dst(10);
    for (std::size_t i = 0; i < 10; ++i) {
      src[i] = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
      dst[i] = Vec3(-src[i].x(), src[i].y(), 0.0);
    }
    const auto T = random_axis_angle(rng);
    const auto got = procrustes(transformed(src, T), dst);
    EXPECT_NEAR(got.R.determinant(), 1.0, 1e-12);
    EXPECT_TRUE(got.is_valid(1e-9));
  }
}

TEST(Procrustes, Equivariance) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto src = random_points(12, rng), dst = random_points(12, rng);
    const auto base = procrustes(src, dst);
    const auto Q = random_axis_angle(rng);
    const auto moved = procrustes(src, transformed(dst, Q));
    const auto expected = Q.compose(base);
    EXPECT_LT((moved.R - expected.R).norm(), 1e-9);
    EXPECT_LT((moved.t - expected.t).norm(), 1e-9);
  }
}

TEST(Procrustes, WeightsIgnoreOutliers) {
  Rng rng(7);
  auto src = random_points(10, rng);
  const auto T = random_axis_angle(rng);
  auto dst = transformed(src, T);
  std::vector<double> w(12, 2.5);
  src.push_back(Vec3(5, 5, 5));
  dst.push_back(Vec3(-9, 0, 1));
  src.push_back(Vec3(-3, 2, 1));
  dst.push_back(Vec3(4, 4, 4));
  w[10] = w[11] = 0.0;
  const auto got = procrustes(src, dst, w);
  EXPECT_LT((got.R - T.R).norm(), 1e-9);
  EXPECT_LT((got.t - T.t).norm(), 1e-9);
}

TEST(Procrustes, DegenerateInputs) {
  EXPECT_THROW(procrustes({Vec3::Zero(), Vec3::UnitX()}, {Vec3::Zero(), Vec3::UnitX()}), DegenerateGeometryError);
  std::vector<Vec3> line;
  for (int i = 0; i < 6; ++i) line.push_back(Vec3(i, 2.0 * i, 0.0));
  EXPECT_THROW(procrustes(line, line), DegenerateGeometryError);
  EXPECT_THROW(procrustes(std::vector<Vec3>(4, Vec3::Zero()), std::vector<Vec3>(4, Vec3::Zero())), DegenerateGeometryError);
  EXPECT_THROW(procrustes(line, std::vector<Vec3>(5, Vec3::Zero())), ParameterError);
}

TEST(ProcrustesBackward, FiniteDifferences) {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const Tensor src = to_tensor(random_points(6, rng)), dst = to_tensor(random_points(6, rng));
    const Tensor probe = test::random_tensor(4, 3, rng);
    const auto r = test::check_gradients(
        {src, dst},
        [&](Graph& g, const std::vector<Var>& v) { return g.sum(g.mul(procrustes(g, v[0], v[1]), g.constant(probe))); },
        1e-5);
    EXPECT_LT(r.max_rel_error, 1e-4) << "trial " << trial;
  }
}

TEST(ProcrustesBackward, LossThroughProcrustes) {
  Rng rng(8);
  const auto src = random_points(6, rng);
  const auto truth = random_axis_angle(rng);
  auto dst = transformed(src, truth);
  for (auto& p : dst) p += Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
  const auto r = test::check_gradients(
      {to_tensor(src), to_tensor(dst)},
      [&](Graph& g, const std::vector<Var>& v) { return loss_rt(g, procrustes(g, v[0], v[1]), truth); }, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(ProcrustesBackward, RepeatedSingularValuesZeroGradient) {
  // the six axis points have isotropic covariance, so all singular values coincide
  const std::vector<Vec3> pts{Vec3::UnitX(), -Vec3::UnitX(), Vec3::UnitY(), -Vec3::UnitY(), Vec3::UnitZ(), -Vec3::UnitZ()};
  ProcrustesState state;
  procrustes(pts, pts, {}, &state);
  const std::size_t before = degenerate_gradient_count().load();
  const auto grad = procrustes_backward(state, Mat3::Ones(), Vec3::Ones());
  EXPECT_TRUE(grad.zeroed);
  EXPECT_EQ(degenerate_gradient_count().load(), before + 1);
  for (const auto& d : grad.d_src) EXPECT_EQ(d, Vec3::Zero());
  for (const auto& d : grad.d_dst) EXPECT_EQ(d, Vec3::Zero());
}

TEST(ProcrustesBackward, TranslationGradientAnalytic) {
  // centred source: t = c_d - R·0, so ∂t/∂dst_i = w_i I and R receives no signal from dt
  Rng rng(9);
  auto src = random_points(8, rng);
  Vec3 c = Vec3::Zero();
  for (const auto& p : src) c += p;
  c /= 8.0;
  for (auto& p : src) p -= c;
  ProcrustesState state;
  procrustes(src, transformed(src, random_axis_angle(rng)), {}, &state);
  const Vec3 dt(0.3, -1.2, 0.7);
  const auto grad = procrustes_backward(state, Mat3::Zero(), dt);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_LT((grad.d_dst[i] - dt / 8.0).norm(), 1e-12);
    EXPECT_LT((grad.d_src[i] + state.result.R.transpose() * dt / 8.0).norm(), 1e-12);
  }
}

TEST(LossRt, Examples) {
  const RigidTransform I;
  EXPECT_EQ(loss_rt(I, I), 0.0);
  EXPECT_DOUBLE_EQ(loss_rt({Mat3::Identity(), Vec3(1, 0, 0)}, I), 1.0);
  EXPECT_NEAR(loss_rt(from_euler(90, 0, 0), I), 4.0, 1e-12);
}

TEST(LossRt, LeftMultiplicationInvariance) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_axis_angle(rng), b = random_axis_angle(rng);
    const Mat3 Q = random_axis_angle(rng).R;
    EXPECT_NEAR(loss_rt({Q * a.R, a.t}, {Q * b.R, b.t}), loss_rt(a, b), 1e-12);
  }
}

TEST(LossRt, GraphMatchesDirect) {
  Rng rng(11);
  const auto a = random_axis_angle(rng), b = random_axis_angle(rng);
  Tensor rt(4, 3);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rt(r, c) = a.R(r, c);
    rt(3, r) = a.t[r];
  }
  Graph g;
  EXPECT_NEAR(g.value(loss_rt(g, g.constant(rt), b))(0, 0), loss_rt(a, b), 1e-12);
  const auto back = to_transform(rt);
  EXPECT_EQ(back.R, a.R);
  EXPECT_EQ(back.t, a.t);
}

TEST(Euler, RoundTrip) {
  const auto e = euler_zyx(compose_zyx({10, 20, 30}));
  EXPECT_NEAR(e.alpha, 10, 1e-9);
  EXPECT_NEAR(e.beta, 20, 1e-9);
  EXPECT_NEAR(e.gamma, 30, 1e-9);
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const EulerZYX in{rng.uniform(-179, 179), rng.uniform(-89, 89), rng.uniform(-179, 179)};
    const auto out = euler_zyx(compose_zyx(in));
    EXPECT_NEAR(out.alpha, in.alpha, 1e-9);
    EXPECT_NEAR(out.beta, in.beta, 1e-9);
    EXPECT_NEAR(out.gamma, in.gamma, 1e-9);
  }
}

TEST(Euler, GimbalLock) {
  for (double beta : {90.0, -90.0}) {
    const Mat3 R = compose_zyx({25, beta, 40});
    const auto e = euler_zyx(R);
    EXPECT_NEAR(e.beta, beta, 1e-9);
    EXPECT_EQ(e.gamma, 0.0);
    EXPECT_LT((compose_zyx(e) - R).norm(), 1e-9);
  }
}

TEST(Metrics, HandExample) {
  const RigidTransform pred = from_euler(11, 19, 31), truth = from_euler(10, 20, 30);
  const RigidTransform p[] = {pred}, t[] = {truth};
  const auto m = compute_metrics(p, t);
  EXPECT_NEAR(m.r_mse, 1.0, 1e-9);
  EXPECT_NEAR(m.r_rmse, 1.0, 1e-9);
  EXPECT_NEAR(m.r_mae, 1.0, 1e-9);
  EXPECT_EQ(m.t_mse, 0.0);
  EXPECT_EQ(m.t_mae, 0.0);
}

TEST(Metrics, WrapsAngles) {
  const RigidTransform p[] = {from_euler(179.5, 0, 0)}, t[] = {from_euler(-179.5, 0, 0)};
  EXPECT_NEAR(compute_metrics(p, t).r_mae, 1.0 / 3.0, 1e-9);
}

TEST(Metrics, MatchesBruteForce) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(200 + trial);
    const std::size_t n = 1 + rng.below(10);
    std::vector<RigidTransform> preds, truths;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(random_axis_angle(rng));
      truths.push_back(random_axis_angle(rng));
    }
    const auto m = compute_metrics(preds, truths);
    const auto o = test::metrics_oracle(preds, truths);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(m.values()[k], o.values()[k], 1e-12 * std::max(1.0, o.values()[k]));
  }
}

TEST(Metrics, ColumnLayout) {
  std::string joined;
  for (const char* c : RegistrationMetrics::kColumns) joined += std::string(joined.empty() ? "" : ",") + c;
  EXPECT_EQ(joined, "R-MSE,R-RMSE,R-MAE,T-MSE,T-RMSE,T-MAE");
  const RigidTransform p[] = {RigidTransform{}};
  EXPECT_THROW(compute_metrics(p, std::span<const RigidTransform>{}), ParameterError);
}

TEST(Icp, SmallRotationConverges) {
  const auto cloud = normalize_unit_sphere(gen_synthetic(ShapeSpec::parse("cube"), 512, 0.0, 3));
  RigidTransform T;
  T.R = axis_angle(Vec3(1, 2, 3).normalized(), 5.0 * std::numbers::pi / 180.0);
  const auto tgt = transformed(cloud.points, T);
  const auto result = icp_baseline(cloud.points, tgt, 50, 1e-12);
  ASSERT_FALSE(result.mean_residuals.empty());
  EXPECT_LE(result.iterations, 50);
  EXPECT_LT(result.mean_residuals.back(), 1e-6);
  EXPECT_LT((result.transform.R - T.R).norm(), 1e-6);
}

TEST(Icp, ResidualNeverIncreases) {
  const auto cloud = normalize_unit_sphere(gen_synthetic(ShapeSpec::parse("torus"), 256, 0.0, 4));
  const auto T = random_rotation(45.0, 5, 0.3);
  const auto result = icp_baseline(cloud.points, transformed(cloud.points, T), 50, 1e-9);
  EXPECT_TRUE(result.transform.is_valid());
  for (std::size_t i = 1; i + 1 < result.mean_residuals.size(); ++i)
    EXPECT_LE(result.mean_residuals[i], result.mean_residuals[i - 1]);
}

TEST(Icp, IdentityStaysPut) {
  Rng rng(13);
  const auto pts = random_points(50, rng);
  const auto result = icp_baseline(pts, pts, 10, 1e-12);
  EXPECT_LT((result.transform.R - Mat3::Identity()).norm(), 1e-12);
  EXPECT_LT(result.transform.t.norm(), 1e-12);
  EXPECT_THROW(icp_baseline({}, pts, 10, 1e-9), ParameterError);
}
