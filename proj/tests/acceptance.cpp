// Acceptance gate: one PASS/FAIL line per criterion; exits 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "cgcn/bench.hpp"
#include "cgcn/config.hpp"
#include "cgcn/encoder.hpp"
#include "cgcn/errors.hpp"
#include "cgcn/layers.hpp"
#include "cgcn/registration.hpp"
#include "cgcn/report.hpp"
#include "cgcn/training.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cgcn;
using nn::Graph;
using nn::Tensor;
using nn::Var;
using test::max_abs_diff;
using test::random_tensor;

namespace {

int failures = 0;

void verdict(int id, const char* name, bool ok, const std::string& detail, double seconds) {
  std::printf("%s %2d %-28s %s [%.1f s]\n", ok ? "PASS" : "FAIL", id, name, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); }
};

PointCloud random_cloud(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  const char* names[] = {"sphere", "cube", "cylinder", "torus", "composite(sphere,cylinder)"};
  return normalize_unit_sphere(gen_synthetic(ShapeSpec::parse(names[seed % 5]), n, noise, seed));
}

Tensor describe(const nn::Encoder& enc, const nn::ParamStore& store, const PointCloud& cloud) {
  return enc.describe(store, nn::prepare_cloud(cloud, enc.config()));
}

nn::ParamStore random_params(const nn::Encoder& enc, std::uint64_t seed) {
  nn::ParamStore store;
  Rng rng(seed);
  enc.init_params(store, rng);
  return store;
}

Var project(Graph& g, Var v, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor& t = g.value(v);
  return g.sum(g.mul(v, g.constant(random_tensor(t.rows, t.cols, rng))));
}

void criterion_sign() {
  Timer t;
  const nn::Encoder enc(nn::EncoderConfig{});
  const auto store = random_params(enc, 1);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto cloud = random_cloud(512, 1000 + s);
    auto flipped = cloud;
    for (auto& v : flipped.normals) v = -v;
    worst = std::max(worst, max_abs_diff(describe(enc, store, cloud), describe(enc, store, flipped)));
  }
  verdict(1, "sign invariance", worst <= 1e-9 && t.seconds() < 120.0,
          fmt("200 clouds N=512: max|d|=%.3g (<= 1e-9), runtime limit 120 s", worst), t.seconds());
}

void criterion_rotation() {
  Timer t;
  const nn::Encoder enc(nn::EncoderConfig{});
  const auto store = random_params(enc, 2);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto cloud = random_cloud(512, 2000 + s, 0.002);
    const auto moved = apply_rigid(cloud, random_rotation(180.0, 3000 + s, 0.5));
    worst = std::max(worst, max_abs_diff(describe(enc, store, cloud), describe(enc, store, moved)));
  }
  verdict(2, "rotation robustness", worst <= 1e-5 && t.seconds() < 300.0,
          fmt("200 clouds N=512: max|d|=%.3g (<= 1e-5), runtime limit 300 s", worst), t.seconds());
}

void criterion_permutation() {
  Timer t;
  const nn::Encoder enc(nn::EncoderConfig{});
  const auto store = random_params(enc, 3);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto cloud = random_cloud(256, 4000 + s);
    std::vector<std::size_t> order(cloud.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(s);
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    PointCloud shuffled;
    for (auto i : order) {
      shuffled.points.push_back(cloud.points[i]);
      shuffled.normals.push_back(cloud.normals[i]);
    }
    const Tensor a = describe(enc, store, cloud), b = describe(enc, store, shuffled);
    for (std::size_t r = 0; r < order.size(); ++r)
      for (std::size_t c = 0; c < a.cols; ++c) worst = std::max(worst, std::abs(b(r, c) - a(order[r], c)));
  }
  verdict(3, "permutation invariance", worst == 0.0, fmt("20 clouds N=256: max|d|=%.3g (== 0)", worst), t.seconds());
}

void criterion_azimuth() {
  Timer t;
  double worst = 0.0;
  for (auto mode : {AzimuthMode::kLocal, AzimuthMode::kWorld}) {
    nn::EncoderConfig base;
    base.azimuth = mode;
    nn::EncoderConfig turned = base;
    turned.azimuth_offset = 2.0 * std::numbers::pi / base.K;
    const nn::Encoder a(base), b(turned);
    const auto store = random_params(a, 4);
    for (std::uint64_t s = 0; s < 10; ++s) {
      const auto cloud = random_cloud(256, 5000 + s);
      worst = std::max(worst, max_abs_diff(describe(a, store, cloud), describe(b, store, cloud)));
    }
  }
  verdict(4, "cyclic azimuth invariance", worst <= 1e-9,
          fmt("20 clouds, both tangent modes: max|d|=%.3g (<= 1e-9)", worst), t.seconds());
}

void criterion_oracles() {
  Timer t;
  double ring = 0, chan = 0, agg = 0, ctx = 0, met = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(6000 + trial);
    {
      const std::size_t K = 4 + rng.below(5), cin = 1 + rng.below(5), cout = 1 + rng.below(5), blocks = 1 + rng.below(4);
      const Tensor x = random_tensor(blocks * 2 * K, cin, rng), w = random_tensor(9 * cin, cout, rng);
      Graph g;
      const Tensor got = g.value(g.ring_conv(g.constant(x), g.constant(w), nn::RingConvShape{2, K}));
      ring = std::max(ring, max_abs_diff(got, test::ring_conv_oracle(x, w, 2, K)));
    }
    {
      const std::size_t n = 1 + rng.below(4), K = 4 + rng.below(5), cin = 1 + rng.below(5), cout = 1 + rng.below(4);
      const Tensor x = random_tensor(n * 3 * K, cin, rng), w = random_tensor(cin, cout, rng);
      const auto maps = nn::make_group_maps(n, static_cast<int>(K));
      Graph g;
      const Tensor got =
          g.value(nn::channelwise_convolve(g, g.gather_rows(g.constant(x), maps.to_groups), g.constant(w), maps));
      chan = std::max(chan, max_abs_diff(got, test::channelwise_oracle(x, w)));
    }
    {
      const std::size_t n = 1 + rng.below(5), per = 3 * (4 + rng.below(5)), C = 1 + rng.below(6);
      const Tensor x = random_tensor(n * per, C, rng);
      Graph g;
      agg = std::max(agg, max_abs_diff(g.value(nn::kernel_aggregate(g, g.constant(x), per)),
                                       test::kernel_aggregate_oracle(x, per)));
    }
    {
      const std::size_t n = 64, C = 1 + rng.below(5);
      std::vector<Vec3> pts(n);
      for (auto& p : pts) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      const Tensor f = random_tensor(n, C, rng);
      const double d = rng.uniform(0.2, 1.0);
      Graph g;
      const Tensor got = g.value(nn::global_context(g, g.constant(f), nn::global_context_weights(pts, d)));
      ctx = std::max(ctx, max_abs_diff(got, test::global_context_oracle(pts, f, d)));
    }
    {
      std::vector<RigidTransform> preds, truths;
      for (std::size_t i = 0, n = 1 + rng.below(10); i < n; ++i) {
        preds.push_back(random_rotation(180.0, rng.next_u64(), 1.0));
        truths.push_back(random_rotation(180.0, rng.next_u64(), 1.0));
      }
      const auto m = reg::compute_metrics(preds, truths).values();
      const auto o = test::metrics_oracle(preds, truths).values();
      for (std::size_t k = 0; k < 6; ++k) met = std::max(met, std::abs(m[k] - o[k]) / std::max(1.0, std::abs(o[k])));
    }
  }
  const double worst = std::max({ring, chan, agg, ctx, met});
  verdict(5, "oracle equivalence", worst <= 1e-12,
          fmt("100 instances each: ring_conv %.2g, channelwise %.2g, aggregate %.2g, context %.2g", ring, chan, agg, ctx) +
              fmt(", metrics %.2g (<= 1e-12)", met),
          t.seconds());
}

double encoder_end_to_end_error() {
  nn::EncoderConfig cfg;
  cfg.widths = {8, 8, 8, 16};
  cfg.descriptor_dim = 16;
  const nn::Encoder enc(cfg);
  auto store = random_params(enc, 50);
  const auto src = random_cloud(32, 51);
  const auto truth = random_rotation(30.0, 52, 0.2);
  const auto tgt = apply_rigid(src, truth);
  const auto ps = nn::prepare_cloud(src, cfg), pt = nn::prepare_cloud(tgt, cfg);
  auto objective = [&](const nn::ParamStore& s, nn::Gradients* grads) {
    Graph g;
    nn::Parameters p(g, s, grads != nullptr);
    const Var ds = enc.forward(g, p, ps).descriptors, dt = enc.forward(g, p, pt).descriptors;
    const Var virt = reg::soft_correspondence(g, ds, dt, g.constant(reg::to_tensor(tgt.points)), 0.1);
    const Var loss = reg::loss_rt(g, reg::procrustes(g, g.constant(reg::to_tensor(src.points)), virt), truth);
    if (grads) {
      g.backward(loss);
      *grads = p.gradients();
    }
    return g.value(loss)(0, 0);
  };
  nn::Gradients grads;
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
      const double fd = (up - down) / 2e-6, an = grads.at(name).data[e];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3}));
    }
  }
  return worst;
}

void criterion_gradients() {
  Timer t;
  using Fn = test::ScalarFn;
  double prim = 0.0;
  auto check = [&](const std::vector<Tensor>& in, const Fn& fn) {
    prim = std::max(prim, test::check_gradients(in, fn, 1e-5).max_rel_error);
  };
  for (int p = 0; p < 20; ++p) {
    Rng rng(7000 + p);
    const Tensor a = random_tensor(4, 5, rng), b = random_tensor(4, 5, rng), row = random_tensor(1, 5, rng);
    const Tensor m = random_tensor(5, 3, rng);
    Tensor pos = a, apart = a, kinkless(4, 5);
    for (auto& x : pos.data) x = std::abs(x) + 0.2;
    for (std::size_t i = 0; i < a.size(); ++i) apart.data[i] = b.data[i] + (rng.uniform() < 0.5 ? -0.3 : 0.3);
    for (auto& x : kinkless.data) x = (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.1, 1.0);
    check({a, b}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.add(v[0], v[1]), 1); });
    check({a, row}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.sub(v[0], v[1]), 2); });
    check({a, row}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.mul(v[0], v[1]), 3); });
    check({a}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.scale(v[0], -1.7), 4); });
    check({apart, b}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.maximum(v[0], v[1]), 5); });
    check({kinkless}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.relu(v[0]), 6); });
    check({a}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.exp(v[0]), 7); });
    check({pos}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.log(v[0]), 8); });
    check({a, m}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.matmul(v[0], v[1]), 9); });
    check({a}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.transpose(v[0]), 10); });
    check({a, b}, [](Graph& g, const std::vector<Var>& v) {
      const Var parts[] = {v[0], v[1]};
      return project(g, g.concat_cols(parts), 11);
    });
    check({a}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.slice_rows(v[0], 1, 2), 12); });
    check({a}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.slice_cols(v[0], 1, 3), 13); });
    auto index = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{3, 0, 0, 2, 1});
    check({a}, [index](Graph& g, const std::vector<Var>& v) { return project(g, g.gather_rows(v[0], index), 14); });
    auto map = std::make_shared<nn::SparseRows>();
    map->input_rows = 4;
    for (int r = 0; r < 3; ++r) {
      for (int e = 0; e < 3; ++e) map->add(static_cast<std::uint32_t>(rng.below(4)), rng.uniform(-1, 1));
      map->add_row();
    }
    std::shared_ptr<const nn::SparseRows> cmap = map;
    check({a}, [cmap](Graph& g, const std::vector<Var>& v) { return project(g, g.sparse_rows(v[0], cmap), 15); });
    const Tensor seg = random_tensor(6, 3, rng);
    Tensor distinct(6, 3);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < 6; ++r) distinct(r, c) = 0.2 * ((r * 5 + c * 3 + p) % 6) + rng.uniform(0, 0.05);
    check({seg}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.segment_sum(v[0], 3), 16); });
    check({seg}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.segment_mean(v[0], 2), 17); });
    check({distinct}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.segment_max(v[0], 3), 18); });
    check({seg}, [](Graph& g, const std::vector<Var>& v) { return g.mean(g.exp(v[0])); });
    const Tensor logits = random_tensor(3, 8, rng, -2, 2);
    check({logits}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.softmax_rows(v[0]), 19); });
    check({logits}, [](Graph& g, const std::vector<Var>& v) { return project(g, g.log_softmax_rows(v[0]), 20); });
    check({random_tensor(24, 3, rng), random_tensor(27, 4, rng)}, [](Graph& g, const std::vector<Var>& v) {
      return project(g, g.ring_conv(v[0], v[1], nn::RingConvShape{2, 6}), 21);
    });
    // layer operations and the registration head
    const auto maps = nn::make_group_maps(2, 6);
    check({random_tensor(36, 3, rng), random_tensor(27, 2, rng)}, [&maps](Graph& g, const std::vector<Var>& v) {
      return project(g, nn::group_convolve(g, g.gather_rows(v[0], maps.to_groups), v[1], maps), 22);
    });
    check({random_tensor(36, 3, rng), random_tensor(3, 2, rng)}, [&maps](Graph& g, const std::vector<Var>& v) {
      return project(g, nn::channelwise_convolve(g, g.gather_rows(v[0], maps.to_groups), v[1], maps), 23);
    });
    check({random_tensor(36, 3, rng)}, [&maps](Graph& g, const std::vector<Var>& v) {
      return project(g, nn::group_geometry(g, v[0], maps, 2), 24);
    });
    std::vector<Vec3> pts(8);
    for (auto& q : pts) q = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const auto weights = nn::global_context_weights(pts, 0.7);
    check({random_tensor(8, 3, rng)}, [&weights](Graph& g, const std::vector<Var>& v) {
      return project(g, nn::global_context(g, v[0], weights), 25);
    });
    check({random_tensor(6, 4, rng), random_tensor(7, 4, rng), random_tensor(7, 3, rng)},
          [](Graph& g, const std::vector<Var>& v) { return project(g, reg::soft_correspondence(g, v[0], v[1], v[2], 0.5), 26); });
    check({random_tensor(6, 3, rng), random_tensor(6, 3, rng)},
          [](Graph& g, const std::vector<Var>& v) { return project(g, reg::procrustes(g, v[0], v[1]), 27); });
    const auto truth = random_rotation(90.0, 7100 + p, 0.5);
    check({random_tensor(4, 3, rng)}, [&truth](Graph& g, const std::vector<Var>& v) { return reg::loss_rt(g, v[0], truth); });
  }
  const double e2e = encoder_end_to_end_error();
  verdict(6, "gradient correctness", prim < 1e-4 && e2e < 1e-3,
          fmt("primitives max rel %.2g (< 1e-4); encoder->procrustes 32 points %.2g (< 1e-3)", prim, e2e), t.seconds());
}

void criterion_procrustes() {
  Timer t;
  double er = 0.0, et = 0.0, det_dev = 0.0;
  Rng rng(8000);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Vec3> src(3 + rng.below(30));
    for (auto& p : src) p = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const auto T = random_rotation(180.0, rng.next_u64(), 2.0);
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(T.apply(p));
    const auto got = reg::procrustes(src, dst);
    er = std::max(er, (got.R - T.R).norm());
    et = std::max(et, (got.t - T.t).norm());
  }
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Vec3> src(10), dst(10);
    const auto T = random_rotation(180.0, rng.next_u64(), 1.0);
    for (std::size_t i = 0; i < 10; ++i) {
      const Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
      src[i] = T.apply(p);
      dst[i] = Vec3(-p.x(), p.y(), 0.0);
    }
    det_dev = std::max(det_dev, std::abs(reg::procrustes(src, dst).R.determinant() - 1.0));
  }
  verdict(7, "procrustes exactness", er < 1e-9 && et < 1e-9 && det_dev < 1e-12,
          fmt("1000 motions: |R-R0| %.2g, |t-t0| %.2g (< 1e-9); 200 mirrored planar: |det-1| %.2g", er, et, det_dev),
          t.seconds());
}

struct RegRun {
  reg::RegistrationMetrics model, icp;
  double seconds = 0.0;
};

RegRun registration_run(const ExperimentConfig& c) {
  Timer t;
  const auto run = train_registration(c);
  return {run.result->metrics, run.icp->metrics, t.seconds()};
}

void criteria_registration() {
  const ExperimentConfig base;
  const auto circ = registration_run(base);
  const bool ok8 = circ.model.r_mae < 5.0 && circ.model.t_mae < 0.01 && circ.model.r_mae < circ.icp.r_mae &&
                   circ.model.t_mae < circ.icp.t_mae;
  verdict(8, "desk-scale registration", ok8,
          fmt("R-MAE %.4g deg (< 5, ICP %.4g), T-MAE %.3g (< 0.01, ICP %.3g)", circ.model.r_mae, circ.icp.r_mae,
              circ.model.t_mae, circ.icp.t_mae),
          circ.seconds);

  auto cw_cfg = base;
  cw_cfg.model.conv = nn::ConvMode::kChannelwise;
  const auto cw = registration_run(cw_cfg);
  auto nogc_cfg = base;
  nogc_cfg.model.global_context = false;
  const auto nogc = registration_run(nogc_cfg);
  const bool ok10 = circ.model.r_mae <= cw.model.r_mae && circ.model.r_mae <= nogc.model.r_mae;
  verdict(10, "ablation direction", ok10,
          fmt("R-MAE circular %.4g <= channelwise %.4g; context on %.4g <= off %.4g", circ.model.r_mae, cw.model.r_mae,
              circ.model.r_mae, nogc.model.r_mae),
          circ.seconds + cw.seconds + nogc.seconds);
}

void criterion_classification() {
  Timer t;
  const auto run = train_classification(ExperimentConfig{});
  const double aligned = *run.accuracy_aligned, rotated = *run.accuracy_rotated;
  verdict(9, "classification rotation", aligned >= 0.95 && aligned - rotated <= 0.02,
          fmt("aligned %.4f (>= 0.95), rotated %.4f, drop %.4f (<= 0.02)", aligned, rotated, aligned - rotated),
          t.seconds());
}

void criterion_determinism() {
  Timer t;
  auto c = parse_config("[data]\npoints = 128\ntrain_count = 6\ntest_count = 4\n[train]\nepochs = 2\n"
                        "[classify]\ntrain_per_class = 2\ntest_per_class = 2\n[bench]\nclouds = 2\n");
  bool same = true;
  const char* where = "";
  {
    const auto a = train_registration(c), b = train_registration(c);
    const auto ca = nn::serialize_checkpoint(a.params), cb = nn::serialize_checkpoint(b.params);
    if (ca != cb || report_json(&a, nullptr, c, "train-reg", git_blob_sha1(ca)).dump() !=
                        report_json(&b, nullptr, c, "train-reg", git_blob_sha1(cb)).dump()) {
      same = false;
      where = " train-reg differs";
    }
  }
  {
    const auto a = train_classification(c), b = train_classification(c);
    const auto ca = nn::serialize_checkpoint(a.params), cb = nn::serialize_checkpoint(b.params);
    if (ca != cb || report_json(&a, nullptr, c, "train-cls", git_blob_sha1(ca)).dump() !=
                        report_json(&b, nullptr, c, "train-cls", git_blob_sha1(cb)).dump()) {
      same = false;
      where = " train-cls differs";
    }
  }
  {
    const auto a = bench_invariance(c), b = bench_invariance(c);
    if (report_json(nullptr, &a, c, "bench-invariance", "").dump() !=
        report_json(nullptr, &b, c, "bench-invariance", "").dump()) {
      same = false;
      where = " bench differs";
    }
  }
  verdict(11, "determinism", same,
          std::string("train-reg, train-cls, bench-invariance run twice: reports and checkpoints ") +
              (same ? "bit-identical" : "differ:") + where,
          t.seconds());
}

}  // namespace

// Optional arguments pick criteria by id; criteria 8 and 10 share one run.
int main(int argc, char** argv) {
  struct Step {
    std::vector<int> ids;
    std::function<void()> run;
  };
  const std::vector<Step> steps{
      {{1}, criterion_sign},         {{2}, criterion_rotation},   {{3}, criterion_permutation},
      {{4}, criterion_azimuth},      {{5}, criterion_oracles},    {{6}, criterion_gradients},
      {{7}, criterion_procrustes},   {{8, 10}, criteria_registration},
      {{9}, criterion_classification}, {{11}, criterion_determinism}};
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
  for (const auto& step : steps) {
    if (!wanted.empty() && std::none_of(step.ids.begin(), step.ids.end(), [&](int id) {
          return std::find(wanted.begin(), wanted.end(), id) != wanted.end();
        }))
      continue;
    try {
      step.run();
    } catch (const std::exception& e) {
      std::printf("FAIL    criterion raised: %s\n", e.what());
      ++failures;
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
