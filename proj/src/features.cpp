#include "cgcn/features.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "cgcn/errors.hpp"

namespace cgcn {

namespace {

// Forward-mode scalar carrying d/dσ.
struct Dual {
  double v = 0.0;
  double d = 0.0;
  Dual() = default;
  Dual(double value, double deriv = 0.0) : v(value), d(deriv) {}
};
inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator-(Dual a) { return {-a.v, -a.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) { return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)}; }
inline Dual exp(Dual a) {
  const double e = std::exp(a.v);
  return {e, e * a.d};
}
inline Dual sqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, s > 0.0 ? a.d / (2.0 * s) : 0.0};
}
inline Dual abs(Dual a) { return a.v < 0.0 ? -a : a; }
inline double value(Dual a) { return a.v; }
inline double value(double a) { return a; }
using std::abs;
using std::exp;
using std::sqrt;

template <typename T>
struct V3 {
  T x, y, z;
};
template <typename T>
V3<T> operator-(const V3<T>& a, const V3<T>& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
template <typename T>
T dot(const V3<T>& a, const V3<T>& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}
template <typename T>
T norm(const V3<T>& a) {
  return sqrt(dot(a, a));
}
template <typename T>
V3<T> lift(const Vec3& p) {
  return {T(p.x()), T(p.y()), T(p.z())};
}

// Canonical unit-scale ring coordinates shared by every scale.
const KernelLayout& unit_layout(int K) {
  static const KernelLayout layouts[] = {build_layout(1.0, 4), build_layout(1.0, 5), build_layout(1.0, 6),
                                         build_layout(1.0, 7), build_layout(1.0, 8)};
  if (K < 4 || K > 8) throw ParameterError("kernels per ring must lie in [4, 8]");
  return layouts[K - 4];
}

// Ring neighbours of position j in the traversal used for f4.
inline int next_position(int ring, int j, int K) { return ring == kLowerRing ? (j + K - 1) % K : (j + 1) % K; }
inline int prev_position(int ring, int j, int K) { return ring == kLowerRing ? (j + 1) % K : (j + K - 1) % K; }

// Features of all 3K kernels of one point at scale `sigma`. Neighbour sets are
// found at value(sigma); T = Dual additionally propagates d/dσ.
template <typename T>
void point_features(const FrameSet& frames, std::size_t i, const KernelLayout& unit, T sigma,
                    const FeatureOptions& options, T* out, Vec3* averaged, KernelNeighborhoods* hoods) {
  const Vec3& xc = frames.cloud->points[i];
  const Vec3& nv = frames.cloud->normals[i];
  TangentBasis basis = frames.bases[i];
  if (frames.azimuth != 0.0) {
    const double c = std::cos(frames.azimuth), s = std::sin(frames.azimuth);
    basis.t1 = c * frames.bases[i].t1 + s * frames.bases[i].t2;
    basis.t2 = nv.cross(basis.t1);
  }
  const int K = unit.K;
  const int count = unit.count();
  const auto& pts = frames.index->points();

  std::vector<V3<T>> kernel(static_cast<std::size_t>(count));
  std::vector<V3<T>> xhat(static_cast<std::size_t>(count));
  const V3<T> x = lift<T>(xc);
  const V3<T> v = lift<T>(nv);
  std::vector<T> e;
  for (int k = 0; k < count; ++k) {
    const Vec3& q = unit.local[static_cast<std::size_t>(k)];
    const T a = sigma * T(q.x()), b = sigma * T(q.y()), c = sigma * T(q.z());
    // same association order as place_kernels
    V3<T> w{x.x + a * T(basis.t1.x()) + b * T(basis.t2.x()) + c * T(nv.x()),
            x.y + a * T(basis.t1.y()) + b * T(basis.t2.y()) + c * T(nv.y()),
            x.z + a * T(basis.t1.z()) + b * T(basis.t2.z()) + c * T(nv.z())};
    kernel[static_cast<std::size_t>(k)] = w;

    const Vec3 query(value(w.x), value(w.y), value(w.z));
    const auto hits = frames.index->knn(query, options.k);
    const T d = options.bandwidth == BandwidthMode::kPerKernel ? sigma * T(unit.center_distance[static_cast<std::size_t>(k)])
                                                                : sigma;
    const T d2 = d * d;
    e.assign(hits.size(), T(0.0));
    std::size_t lowest = 0;
    for (std::size_t h = 0; h < hits.size(); ++h) {
      const V3<T> diff = lift<T>(pts[hits[h].index]) - w;
      e[h] = dot(diff, diff) / d2;
      if (value(e[h]) < value(e[lowest])) lowest = h;
    }
    // shifting by the smallest exponent leaves the normalized weights unchanged
    const T shift = e[lowest];
    T total(0.0);
    for (auto& eh : e) {
      eh = exp(-(eh - shift));
      total = total + eh;
    }
    V3<T> mean{T(0.0), T(0.0), T(0.0)};
    for (std::size_t h = 0; h < hits.size(); ++h) {
      const T wn = e[h] / total;
      const Vec3& p = pts[hits[h].index];
      mean.x = mean.x + wn * T(p.x());
      mean.y = mean.y + wn * T(p.y());
      mean.z = mean.z + wn * T(p.z());
      if (hoods) {
        hoods->index.push_back(hits[h].index);
        hoods->weight.push_back(value(wn));
        if constexpr (std::is_same_v<T, Dual>) hoods->d_weight.push_back(wn.d);
      }
    }
    if (hoods) hoods->offsets.push_back(hoods->index.size());
    xhat[static_cast<std::size_t>(k)] = mean;
    if (averaged) averaged[k] = Vec3(value(mean.x), value(mean.y), value(mean.z));
  }

  for (int ring = 0; ring < kRings; ++ring) {
    for (int j = 0; j < K; ++j) {
      const int k = ring * K + j;
      const V3<T>& xh = xhat[static_cast<std::size_t>(k)];
      const V3<T> rel = xh - x;
      const T len = norm(rel);
      T f1(0.0);
      if (value(len) > 0.0) {
        const T cosine = dot(v, rel) / len;
        f1 = ring == kUpperRing ? cosine : (ring == kLowerRing ? -cosine : abs(cosine));
      }
      const T f2 = len / sigma;
      const T f3 = norm(xh - kernel[static_cast<std::size_t>(k)]) / sigma;
      const T to_next = norm(xh - kernel[static_cast<std::size_t>(ring * K + next_position(ring, j, K))]);
      const T to_prev = norm(xh - kernel[static_cast<std::size_t>(ring * K + prev_position(ring, j, K))]);
      const T denom = to_next + to_prev;
      const T f4 = value(denom) > 0.0 ? to_next / denom : T(0.5);
      T* dst = out + static_cast<std::size_t>(k) * kGeometricChannels;
      dst[0] = f1;
      dst[1] = f2;
      dst[2] = f3;
      dst[3] = f4;
    }
  }
}

void check_frames(const FrameSet& frames) {
  if (!frames.cloud || !frames.index) throw ParameterError("frame set is not initialized");
  if (!frames.cloud->has_normals()) throw ParameterError("feature extraction needs normals");
  if (frames.bases.size() != frames.cloud->size()) throw ParameterError("one tangent basis per point required");
}

KernelFeatureGrid empty_grid(std::size_t n, int K) {
  KernelFeatureGrid grid;
  grid.points = n;
  grid.K = K;
  grid.values.assign(n * kRings * static_cast<std::size_t>(K) * kGeometricChannels, 0.0);
  grid.averaged.assign(n * kRings * static_cast<std::size_t>(K), Vec3::Zero());
  return grid;
}

}  // namespace

double gaussian_weight(const Vec3& x, const Vec3& kernel_point, double d) {
  return std::exp(-(x - kernel_point).squaredNorm() / (d * d));
}

std::optional<Vec3> weighted_average(const Vec3& kernel_point, std::span<const Vec3> neighbors, double d) {
  if (neighbors.empty()) return std::nullopt;
  if (!(d > 0.0)) throw ParameterError("bandwidth must be positive");
  double shift = std::numeric_limits<double>::infinity();
  for (const auto& p : neighbors) shift = std::min(shift, (p - kernel_point).squaredNorm() / (d * d));
  double total = 0.0;
  Vec3 sum = Vec3::Zero();
  for (const auto& p : neighbors) {
    const double w = std::exp(-((p - kernel_point).squaredNorm() / (d * d) - shift));
    total += w;
    sum += w * p;
  }
  return Vec3(sum / total);
}

FrameSet make_frames(const PointCloud& cloud, const NeighborIndex& index, AzimuthMode mode, std::size_t reference_k,
                     double azimuth) {
  FrameSet frames;
  frames.cloud = &cloud;
  frames.index = &index;
  frames.bases = frame_bases(cloud.points, cloud.normals, index, mode, reference_k);
  frames.azimuth = azimuth;
  return frames;
}

KernelFeatureGrid project_features(const FrameSet& frames, const KernelLayout& layout, const FeatureOptions& options,
                                   KernelNeighborhoods* neighborhoods) {
  check_frames(frames);
  if (options.k < 1) throw ParameterError("kNN count must be at least 1");
  const auto& unit = unit_layout(layout.K);
  const std::size_t n = frames.cloud->size();
  auto grid = empty_grid(n, layout.K);
  if (neighborhoods) *neighborhoods = KernelNeighborhoods{};
  const std::size_t stride = grid.kernels() * kGeometricChannels;
  for (std::size_t i = 0; i < n; ++i) {
    point_features<double>(frames, i, unit, layout.sigma, options, grid.values.data() + i * stride,
                           grid.averaged.data() + i * grid.kernels(), neighborhoods);
  }
  return grid;
}

std::vector<KernelFeatureGrid> multiscale_extract(const FrameSet& frames, int K, std::span<const double> sigmas,
                                                  const FeatureOptions& options) {
  if (sigmas.empty()) throw ParameterError("at least one scale required");
  for (std::size_t s = 1; s < sigmas.size(); ++s) {
    if (!(sigmas[s] > sigmas[s - 1])) throw ParameterError("scales must be strictly increasing");
  }
  std::vector<KernelFeatureGrid> grids;
  grids.reserve(sigmas.size());
  for (double sigma : sigmas) grids.push_back(project_features(frames, build_layout(sigma, K), options));
  return grids;
}

ScaledGrid project_features_scaled(const FrameSet& frames, int K, std::span<const double> sigma_per_point,
                                   const FeatureOptions& options) {
  check_frames(frames);
  const std::size_t n = frames.cloud->size();
  if (sigma_per_point.size() != n) throw ParameterError("one scale per point required");
  const auto& unit = unit_layout(K);
  ScaledGrid out;
  out.grid = empty_grid(n, K);
  out.d_sigma.assign(out.grid.values.size(), 0.0);
  const std::size_t stride = out.grid.kernels() * kGeometricChannels;
  std::vector<Dual> buffer(stride);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigma_per_point[i] > 0.0)) throw ParameterError("scale must be positive");
    point_features<Dual>(frames, i, unit, Dual(sigma_per_point[i], 1.0), options, buffer.data(),
                         out.grid.averaged.data() + i * out.grid.kernels(), &out.neighborhoods);
    for (std::size_t c = 0; c < stride; ++c) {
      out.grid.values[i * stride + c] = buffer[c].v;
      out.d_sigma[i * stride + c] = buffer[c].d;
    }
  }
  return out;
}

double adapted_sigma(std::span<const double> logits, std::span<const double> sigmas) {
  if (logits.size() != sigmas.size() || logits.empty()) throw ParameterError("logits and scales differ in length");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0, mix = 0.0;
  for (std::size_t s = 0; s < logits.size(); ++s) {
    const double p = std::exp(logits[s] - top);
    total += p;
    mix += p * sigmas[s];
  }
  return mix / total;
}

std::vector<double> adapted_sigma_gradient(std::span<const double> logits, std::span<const double> sigmas) {
  const double mixed = adapted_sigma(logits, sigmas);
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double l : logits) total += std::exp(l - top);
  std::vector<double> g(logits.size());
  for (std::size_t s = 0; s < logits.size(); ++s) g[s] = std::exp(logits[s] - top) / total * (sigmas[s] - mixed);
  return g;
}

}  // namespace cgcn
