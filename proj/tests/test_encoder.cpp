#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "cgcn/encoder.hpp"
#include "cgcn/errors.hpp"
#include "cgcn/registration.hpp"
#include "test_support.hpp"

using namespace cgcn;
using namespace cgcn::nn;

namespace {

PointCloud shape_cloud(std::size_t n, std::uint64_t seed) {
  const char* names[] = {"sphere", "cube", "cylinder", "torus"};
  return normalize_unit_sphere(gen_synthetic(ShapeSpec::parse(names[seed % 4]), n, 0.0, seed));
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.widths = {8, 8, 8, 16};
  c.descriptor_dim = 16;
  return c;
}

ParamStore make_params(const Encoder& enc, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  enc.init_params(store, rng);
  return store;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

Tensor describe(const Encoder& enc, const ParamStore& store, const PointCloud& cloud) {
  return enc.describe(store, prepare_cloud(cloud, enc.config()));
}

// Random probe of the descriptors against central differences over a sample of parameter entries.
double encoder_fd_error(const Encoder& enc, ParamStore store, const PointCloud& cloud, std::uint64_t seed) {
  const auto prepared = prepare_cloud(cloud, enc.config());
  Rng rng(seed);
  const Tensor probe = test::random_tensor(cloud.size(), enc.config().descriptor_dim, rng);
  auto objective = [&](const ParamStore& s, Gradients* grads) {
    Graph g;
    Parameters p(g, s, grads != nullptr);
    const Var out = g.sum(g.mul(enc.forward(g, p, prepared).descriptors, g.constant(probe)));
    if (grads) {
      g.backward(out);
      *grads = p.gradients();
    }
    return g.value(out)(0, 0);
  };
  Gradients grads;
  objective(store, &grads);
  double worst = 0.0;
  for (auto& [name, t] : store.tensors()) {
    for (int pick = 0; pick < 6; ++pick) {
      const std::size_t e = rng.below(t.size());
      const double x = t.data[e];
      t.data[e] = x + 1e-6;
      const double up = objective(store, nullptr);
      t.data[e] = x - 1e-6;
      const double down = objective(store, nullptr);
      t.data[e] = x;
      const double fd = (up - down) / 2e-6;
      const double an = grads.at(name).data[e];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}));
    }
  }
  return worst;
}

}  // namespace

TEST(Encoder, OutputShape) {
  const Encoder enc(EncoderConfig{});
  const auto store = make_params(enc, 1);
  const auto cloud = shape_cloud(96, 1);
  const Tensor d = describe(enc, store, cloud);
  EXPECT_EQ(d.rows, 96u);
  EXPECT_EQ(d.cols, 256u);
  for (double x : d.data) ASSERT_TRUE(std::isfinite(x));
}

TEST(Encoder, NormalSignFlip) {
  for (bool adapt : {false, true}) {
    EncoderConfig cfg;
    cfg.scale_adaptation = adapt;
    const Encoder enc(cfg);
    const auto store = make_params(enc, 2);
    for (std::uint64_t s = 0; s < 3; ++s) {
      auto cloud = shape_cloud(128, 10 + s);
      auto flipped = cloud;
      Rng rng(s);
      // flip a random subset, as unoriented data would
      for (auto& v : flipped.normals)
        if (rng.uniform() < 0.5) v = -v;
      EXPECT_LE(max_abs_diff(describe(enc, store, cloud), describe(enc, store, flipped)), 1e-9);
    }
  }
}

TEST(Encoder, RigidRotation) {
  for (bool adapt : {false, true}) {
    EncoderConfig cfg;
    cfg.scale_adaptation = adapt;
    const Encoder enc(cfg);
    const auto store = make_params(enc, 3);
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto cloud = shape_cloud(128, 20 + s);
      const auto moved = apply_rigid(cloud, random_rotation(180.0, 40 + s, 0.5));
      EXPECT_LE(max_abs_diff(describe(enc, store, cloud), describe(enc, store, moved)), 1e-5);
    }
  }
}

TEST(Encoder, PermutationExact) {
  const Encoder enc(EncoderConfig{});
  const auto store = make_params(enc, 4);
  const auto cloud = shape_cloud(128, 5);
  std::vector<std::size_t> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(6);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  PointCloud shuffled;
  for (auto i : order) {
    shuffled.points.push_back(cloud.points[i]);
    shuffled.normals.push_back(cloud.normals[i]);
  }
  const Tensor a = describe(enc, store, cloud), b = describe(enc, store, shuffled);
  for (std::size_t s = 0; s < order.size(); ++s)
    for (std::size_t c = 0; c < a.cols; ++c) ASSERT_EQ(b(s, c), a(order[s], c));
}

TEST(Encoder, CyclicAzimuthInvariance) {
  for (auto mode : {AzimuthMode::kLocal, AzimuthMode::kWorld}) {
    EncoderConfig base;
    base.azimuth = mode;
    EncoderConfig turned = base;
    turned.azimuth_offset = 2.0 * std::numbers::pi / base.K;
    const Encoder a(base), b(turned);
    const auto store = make_params(a, 7);
    const auto cloud = shape_cloud(128, 8);
    EXPECT_LE(max_abs_diff(describe(a, store, cloud), describe(b, store, cloud)), 1e-9);
  }
}

TEST(Encoder, Deterministic) {
  const Encoder enc(EncoderConfig{});
  const auto s1 = make_params(enc, 9), s2 = make_params(enc, 9);
  EXPECT_TRUE(s1 == s2);
  EXPECT_EQ(serialize_checkpoint(s1), serialize_checkpoint(s2));
  const auto cloud = shape_cloud(64, 9);
  EXPECT_EQ(describe(enc, s1, cloud).data, describe(enc, s2, cloud).data);
}

TEST(Encoder, FeatureLayerConstantFeatures) {
  const Encoder enc(small_config());
  const auto store = make_params(enc, 10);
  const auto cloud = shape_cloud(64, 11);
  const auto prepared = prepare_cloud(cloud, enc.config());
  Graph g;
  const Var averaged = g.sparse_rows(g.constant(Tensor(cloud.size(), 3, 0.7)), prepared.neighbor_map);
  for (double x : g.value(averaged).data) EXPECT_NEAR(x, 0.7, 1e-15);
  Parameters p(g, store, false);
  const Var geo = group_geometry(g, g.constant(prepared.grid_rows), prepared.maps);
  const Var out = enc.feature_layer(g, p, "enc.l0", Var{}, geo, prepared);
  EXPECT_EQ(g.value(out).rows, cloud.size());
  EXPECT_EQ(g.value(out).cols, 2 * enc.conv_channels(0));
}

TEST(Encoder, FeatureLayerRotation) {
  const Encoder enc(small_config());
  const auto store = make_params(enc, 12);
  const auto cloud = shape_cloud(96, 13);
  const auto moved = apply_rigid(cloud, random_rotation(180.0, 14, 0.3));
  auto run = [&](const PointCloud& c) {
    const auto prepared = prepare_cloud(c, enc.config());
    Graph g;
    Parameters p(g, store, false);
    const Var geo = group_geometry(g, g.constant(prepared.grid_rows), prepared.maps);
    const Var l0 = enc.feature_layer(g, p, "enc.l0", Var{}, geo, prepared);
    return Tensor(g.value(enc.feature_layer(g, p, "enc.l1", l0, geo, prepared)));
  };
  EXPECT_LE(max_abs_diff(run(cloud), run(moved)), 1e-5);
}

TEST(Encoder, ParameterGradients) {
  const auto cloud = shape_cloud(48, 15);
  for (int variant = 0; variant < 5; ++variant) {
    EncoderConfig cfg = small_config();
    if (variant == 1) cfg.conv = ConvMode::kChannelwise;
    if (variant == 2) cfg.global_context = false;
    if (variant == 3) cfg.scale_adaptation = true;
    if (variant == 4) {
      cfg.scale_adaptation = true;
      cfg.scale_mode = ScaleMode::kBlend;
    }
    const Encoder enc(cfg);
    EXPECT_LT(encoder_fd_error(enc, make_params(enc, 16 + variant), cloud, 30 + variant), 1e-4) << "variant " << variant;
  }
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig bad;
  bad.widths = {8, 8, 8};
  EXPECT_THROW(Encoder{bad}, ParameterError);
  bad = EncoderConfig{};
  bad.widths = {8, 7, 8, 8};
  EXPECT_THROW(Encoder{bad}, ParameterError);
  bad = EncoderConfig{};
  bad.scale_adaptation = true;
  bad.scales = {0.2, 0.1};
  EXPECT_THROW(Encoder{bad}, ParameterError);
  PointCloud no_normals;
  no_normals.points = {Vec3::Zero()};
  EXPECT_THROW(prepare_cloud(no_normals, EncoderConfig{}), ParameterError);
}

TEST(EndToEnd, EncoderThroughProcrustes) {
  // 32-point problem: descriptors -> soft correspondence -> Procrustes -> loss
  const Encoder enc(small_config());
  ParamStore store = make_params(enc, 50);
  const auto src = shape_cloud(32, 51);
  const auto truth = random_rotation(30.0, 52, 0.2);
  const auto tgt = apply_rigid(src, truth);
  const auto ps = prepare_cloud(src, enc.config()), pt = prepare_cloud(tgt, enc.config());
  auto objective = [&](const ParamStore& s, Gradients* grads) {
    Graph g;
    Parameters p(g, s, grads != nullptr);
    const Var ds = enc.forward(g, p, ps).descriptors;
    const Var dt = enc.forward(g, p, pt).descriptors;
    const Var virt = reg::soft_correspondence(g, ds, dt, g.constant(reg::to_tensor(tgt.points)), 0.1);
    const Var loss = reg::loss_rt(g, reg::procrustes(g, g.constant(reg::to_tensor(src.points)), virt), truth);
    if (grads) {
      g.backward(loss);
      *grads = p.gradients();
    }
    return g.value(loss)(0, 0);
  };
  Gradients grads;
  objective(store, &grads);
  Rng rng(53);
  double worst = 0.0;
  for (auto& [name, t] : store.tensors()) {
    for (int pick = 0; pick < 8; ++pick) {
      const std::size_t e = rng.below(t.size());
      const double x = t.data[e];
      t.data[e] = x + 1e-6;
      const double up = objective(store, nullptr);
      t.data[e] = x - 1e-6;
      const double down = objective(store, nullptr);
      t.data[e] = x;
      const double fd = (up - down) / 2e-6;
      const double an = grads.at(name).data[e];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}));
    }
  }
  EXPECT_LT(worst, 1e-3);
}
