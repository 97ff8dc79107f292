#include "cgcn/bench.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "cgcn/encoder.hpp"
#include "cgcn/errors.hpp"
#include "cgcn/training.hpp"

namespace cgcn {

namespace {

struct Deviation {
  double max = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;

  void add(double d) {
    max = std::max(max, std::abs(d));
    sum_sq += d * d;
    ++count;
  }
  BenchRow row(std::string name, double parameter) const {
    return {std::move(name), parameter, max, count ? std::sqrt(sum_sq / static_cast<double>(count)) : 0.0, count};
  }
};

// Compares rows a[ia[k]] and b[ib[k]].
void compare(Deviation& dev, const nn::Tensor& a, const nn::Tensor& b, const std::vector<std::size_t>& ia,
             const std::vector<std::size_t>& ib) {
  for (std::size_t k = 0; k < ia.size(); ++k) {
    for (std::size_t c = 0; c < a.cols; ++c) dev.add(a(ia[k], c) - b(ib[k], c));
  }
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  auto v = iota(n);
  for (std::size_t k = n; k > 1; --k) std::swap(v[k - 1], v[rng.below(k)]);
  return v;
}

PointCloud pick(const PointCloud& c, const std::vector<std::size_t>& idx) {
  PointCloud out;
  for (auto i : idx) {
    out.points.push_back(c.points[i]);
    out.normals.push_back(c.normals[i]);
  }
  return out;
}

// Same centroid and scale as normalize_unit_sphere(reference).
PointCloud normalize_like(const PointCloud& c, const PointCloud& reference) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : reference.points) centroid += p;
  centroid /= static_cast<double>(reference.size());
  double r = 0.0;
  for (const auto& p : reference.points) r = std::max(r, (p - centroid).norm());
  PointCloud out = c;
  for (auto& p : out.points) p = (p - centroid) / r;
  return out;
}

}  // namespace

std::vector<BenchRow> bench_invariance(const ExperimentConfig& config, const nn::ParamStore* params) {
  config.validate();
  const nn::ParamStore own = params ? nn::ParamStore{} : init_model(config, Task::kRegister);
  const nn::ParamStore& store = params ? *params : own;
  const nn::Encoder encoder(config.model);
  const std::size_t n = config.bench.points;
  const std::uint64_t base = derive_seed(config.seed, 30);

  nn::EncoderConfig scaled_model = config.model;
  const double lambda = config.bench.scale;
  scaled_model.sigma *= lambda;
  for (auto& s : scaled_model.scales) s *= lambda;
  scaled_model.global_bandwidth *= lambda;
  const nn::Encoder scaled_encoder(scaled_model);

  const std::size_t levels = config.bench.noise_levels.size();
  const std::size_t clouds = config.bench.clouds;
  std::vector<std::vector<Deviation>> per_cloud(clouds);

  parallel_for(clouds, worker_count(), [&](std::size_t ci) {
    auto& d = per_cloud[ci];
    d.assign(6 + levels, Deviation{});
    const ShapeSpec& shape = config.data.train_shapes[ci % config.data.train_shapes.size()];
    const std::uint64_t seed = derive_seed(base, ci);
    const PointCloud raw = gen_synthetic(shape, n, 0.0, seed);
    PointCloud cloud = normalize_unit_sphere(raw);
    cloud.labels.clear();
    auto describe = [&](const PointCloud& c) { return encoder.describe(store, nn::prepare_cloud(c, config.model)); };
    const nn::Tensor ref = describe(cloud);
    const auto all = iota(n);
    Rng rng(derive_seed(seed, 1));

    compare(d[0], ref, describe(apply_rigid(cloud, random_rotation(180.0, derive_seed(seed, 2)))), all, all);

    PointCloud flipped = cloud;
    for (auto& v : flipped.normals) v = -v;
    compare(d[1], ref, describe(flipped), all, all);

    const auto perm = shuffled(n, rng);
    compare(d[2], ref, describe(pick(cloud, perm)), perm, all);

    PointCloud doubled = cloud;
    const PointCloud extra = normalize_like(gen_synthetic(shape, n, 0.0, derive_seed(seed, 3)), raw);
    doubled.points.insert(doubled.points.end(), extra.points.begin(), extra.points.end());
    doubled.normals.insert(doubled.normals.end(), extra.normals.begin(), extra.normals.end());
    compare(d[3], ref, describe(doubled), all, all);

    auto half = shuffled(n, rng);
    half.resize(n / 2);
    compare(d[4], ref, describe(pick(cloud, half)), half, iota(half.size()));

    PointCloud big = cloud;
    for (auto& p : big.points) p *= lambda;
    compare(d[5], ref, scaled_encoder.describe(store, nn::prepare_cloud(big, scaled_model)), all, all);

    for (std::size_t k = 0; k < levels; ++k) {
      PointCloud noisy = cloud;
      Rng nr(derive_seed(seed, 10 + k));
      const double s = config.bench.noise_levels[k];
      if (s > 0.0) {
        for (auto& p : noisy.points) p += s * Vec3(nr.normal(), nr.normal(), nr.normal());
      }
      compare(d[6 + k], ref, describe(noisy), all, all);
    }
  });

  // merge in cloud order
  std::vector<Deviation> total(6 + levels);
  for (const auto& d : per_cloud) {
    for (std::size_t r = 0; r < total.size(); ++r) {
      total[r].max = std::max(total[r].max, d[r].max);
      total[r].sum_sq += d[r].sum_sq;
      total[r].count += d[r].count;
    }
  }
  std::vector<BenchRow> rows{
      total[0].row("rotation", 180.0),    total[1].row("sign_flip", 0.0),   total[2].row("permutation", 0.0),
      total[3].row("density_x2", 2.0),    total[4].row("density_x0.5", 0.5), total[5].row("global_scale", lambda),
  };
  for (std::size_t k = 0; k < levels; ++k) rows.push_back(total[6 + k].row("noise", config.bench.noise_levels[k]));
  rows.push_back(plane_density_row(config));
  return rows;
}

BenchRow plane_density_row(const ExperimentConfig& config) {
  constexpr int kSide = 17;
  const double h = 2.0 / (kSide - 1);
  PointCloud plane;
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      plane.points.emplace_back(-1.0 + h * x, -1.0 + h * y, 0.0);
      plane.normals.emplace_back(0.0, 0.0, 1.0);
    }
  }
  PointCloud dense = plane;
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x + 1 < kSide; ++x) {
      dense.points.emplace_back(-1.0 + h * (x + 0.5), -1.0 + h * y, 0.0);
      dense.normals.emplace_back(0.0, 0.0, 1.0);
    }
  }
  // world azimuth: on a plane every local reference direction is degenerate at the centre
  auto grid = [&](const PointCloud& c) {
    const NeighborIndex index(c.points);
    const FrameSet frames = make_frames(c, index, AzimuthMode::kWorld);
    return project_features(frames, build_layout(config.model.sigma, config.model.K),
                            FeatureOptions{config.model.knn, config.model.bandwidth});
  };
  const auto a = grid(plane);
  const auto b = grid(dense);
  // keep points whose kernels stay well inside the patch
  const double margin = 2.0 * config.model.sigma + 2.0 * h;
  Deviation dev;
  for (std::size_t i = 0; i < plane.size(); ++i) {
    const Vec3& p = plane.points[i];
    if (std::abs(p.x()) > 1.0 - margin || std::abs(p.y()) > 1.0 - margin) continue;
    const std::size_t per = a.kernels() * static_cast<std::size_t>(a.channels);
    for (std::size_t e = 0; e < per; ++e) dev.add(a.values[i * per + e] - b.values[i * per + e]);
  }
  return dev.row("plane_density_x2_features", 2.0);
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "perturbation,parameter,max_deviation,rms_deviation,compared\n";
  for (const auto& r : rows) {
    os << r.perturbation << "," << format_number(r.parameter) << "," << format_number(r.max_deviation) << ","
       << format_number(r.rms_deviation) << "," << r.compared << "\n";
  }
  return os.str();
}

}  // namespace cgcn
