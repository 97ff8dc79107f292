#include "cgcn/kernels.hpp"

#include <cmath>
#include <numbers>

#include "cgcn/errors.hpp"

namespace cgcn {

KernelLayout build_layout(double sigma, int K) {
  if (K < 4 || K > 8) throw ParameterError("kernels per ring must lie in [4, 8]");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("kernel scale must be positive");
  KernelLayout layout;
  layout.K = K;
  layout.sigma = sigma;
  layout.radius = sigma;
  layout.height = sigma;

  // Mirror positions share cos and negate sin so that z-mirroring with
  // j -> -j reproduces the layout bit for bit.
  std::vector<double> c(static_cast<std::size_t>(K)), s(static_cast<std::size_t>(K));
  for (int j = 0; j <= K / 2; ++j) {
    const double theta = 2.0 * std::numbers::pi * j / K;
    c[j] = std::cos(theta);
    s[j] = std::sin(theta);
    if (j > 0 && j < K - j) {
      c[K - j] = c[j];
      s[K - j] = -s[j];
    }
  }
  if (K % 2 == 0) s[K / 2] = 0.0;

  const double heights[kRings] = {layout.height, 0.0, -layout.height};
  const int signs[kRings] = {1, 0, -1};
  for (int m = 0; m < kRings; ++m) {
    for (int j = 0; j < K; ++j) {
      const Vec3 p(layout.radius * c[j], layout.radius * s[j], heights[m]);
      layout.local.push_back(p);
      layout.center_distance.push_back(p.norm());
      layout.sign.push_back(signs[m]);
    }
  }
  return layout;
}

TangentBasis tangent_basis(const Vec3& v) {
  const double len = v.norm();
  if (!(len > 0.0) || !v.allFinite()) throw ParameterError("tangent basis needs a non-zero normal");
  int axis = 0;
  for (int i = 1; i < 3; ++i) {
    if (std::abs(v[i]) < std::abs(v[axis])) axis = i;
  }
  Vec3 e = Vec3::Zero();
  e[axis] = 1.0;
  const Vec3 t1 = (e - e.dot(v) * v).normalized();
  return {t1, v.cross(t1)};
}

TangentBasis tangent_basis(const Vec3& v, const Vec3& reference, double eps) {
  const Vec3 tangential = reference - reference.dot(v) * v;
  const double len = tangential.norm();
  if (!(len > eps * reference.norm()) || !(len > 0.0)) return tangent_basis(v);
  const Vec3 t1 = tangential / len;
  return {t1, v.cross(t1)};
}

KernelFrame place_kernels(const Vec3& point, const Vec3& normal, const KernelLayout& layout,
                          const TangentBasis& basis, double azimuth) {
  KernelFrame frame;
  frame.center = point;
  frame.normal = normal;
  frame.basis = basis;
  if (azimuth != 0.0) {
    const double c = std::cos(azimuth), s = std::sin(azimuth);
    frame.basis.t1 = c * basis.t1 + s * basis.t2;
    frame.basis.t2 = normal.cross(frame.basis.t1);
  }
  frame.world.reserve(layout.local.size());
  for (const auto& q : layout.local) {
    frame.world.push_back(point + q.x() * frame.basis.t1 + q.y() * frame.basis.t2 + q.z() * normal);
  }
  return frame;
}

KernelFrame place_kernels(const Vec3& point, const Vec3& normal, const KernelLayout& layout) {
  return place_kernels(point, normal, layout, tangent_basis(normal));
}

}  // namespace cgcn

namespace cgcn {

std::vector<TangentBasis> frame_bases(const std::vector<Vec3>& points, const std::vector<Vec3>& normals,
                                      const NeighborIndex& index, AzimuthMode mode, std::size_t reference_k) {
  if (normals.size() != points.size()) throw ParameterError("frame_bases needs one normal per point");
  std::vector<TangentBasis> bases;
  bases.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (mode == AzimuthMode::kWorld) {
      bases.push_back(tangent_basis(normals[i]));
      continue;
    }
    Vec3 offset = Vec3::Zero();
    for (const auto& h : index.knn(points[i], reference_k)) offset += index.points()[h.index] - points[i];
    bases.push_back(tangent_basis(normals[i], offset));
  }
  return bases;
}

}  // namespace cgcn
