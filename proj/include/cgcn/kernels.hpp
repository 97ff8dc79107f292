#pragma once

#include <array>
#include <optional>
#include <vector>

#include "cgcn/geometry.hpp"
#include "cgcn/spatial.hpp"

namespace cgcn {

/// Ring indices of the cylindrical layout.
enum Ring : int { kUpperRing = 0, kMiddleRing = 1, kLowerRing = 2 };
inline constexpr int kRings = 3;

/// Canonical cylinder of 3 rings x K kernels, normal along +z.
/// Kernel (ring m, position j) has flat index m*K + j and sits at
/// (r cos 2πj/K, r sin 2πj/K, h_m) with h = {+h, 0, -h}.
struct KernelLayout {
  int K = 6;
  double sigma = 1.0;
  double radius = 1.0;
  double height = 1.0;
  std::vector<Vec3> local;            // 3K canonical positions
  std::vector<double> center_distance;  // ‖local‖, exact under z-mirroring
  std::vector<int> sign;             // +1 upper, 0 middle, -1 lower

  int count() const { return kRings * K; }
  int flat(int ring, int position) const { return ring * K + position; }
};

/// r = h = sigma. Requires 4 <= K <= 8 and sigma > 0.
KernelLayout build_layout(double sigma, int K);

struct TangentBasis {
  Vec3 t1, t2;
};

/// Orthonormal completion {t1, t2, v}: t1 is the world axis least aligned with v
/// projected onto v's orthogonal plane, t2 = v × t1. Identical t1 for v and -v.
TangentBasis tangent_basis(const Vec3& v);

/// As above, but t1 follows the tangential part of `reference` when that part
/// is longer than `eps`·‖reference‖. Falls back to the axis rule otherwise.
TangentBasis tangent_basis(const Vec3& v, const Vec3& reference, double eps = 1e-9);

/// Traversal of ring positions inside a sign group. The above group walks j
/// upwards, the below group walks j downwards starting at 0, so flipping the
/// normal maps one sequence onto the other.
inline int group_position(bool above, int step, int K) { return above ? step : (K - step) % K; }

/// Kernels of one point placed in world coordinates.
struct KernelFrame {
  Vec3 center;
  Vec3 normal;
  TangentBasis basis;
  std::vector<Vec3> world;  // 3K, flat layout order
};

/// world = point + [t1 t2 v]·local. `azimuth` rotates the basis in the tangent plane.
KernelFrame place_kernels(const Vec3& point, const Vec3& normal, const KernelLayout& layout,
                          const TangentBasis& basis, double azimuth = 0.0);

/// Uses tangent_basis(normal).
KernelFrame place_kernels(const Vec3& point, const Vec3& normal, const KernelLayout& layout);

/// Flat kernel index that kernel `k` becomes when the normal sign flips:
/// (m, j) -> (2 - m, -j mod K).
inline int sign_exchange(int k, int K) {
  const int m = k / K, j = k % K;
  return (kRings - 1 - m) * K + (K - j) % K;
}

}  // namespace cgcn

namespace cgcn {

enum class AzimuthMode {
  kLocal,  // t1 from the tangential offset of the neighbour centroid (rotation-equivariant)
  kWorld,  // t1 from the least-aligned world axis
};

/// Per-point tangent bases. kLocal uses the centroid of the `reference_k`
/// nearest neighbours; points whose offset has no tangential part fall back to kWorld.
std::vector<TangentBasis> frame_bases(const std::vector<Vec3>& points, const std::vector<Vec3>& normals,
                                      const NeighborIndex& index, AzimuthMode mode,
                                      std::size_t reference_k = 16);

}  // namespace cgcn
