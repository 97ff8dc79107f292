#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cgcn/geometry.hpp"

namespace cgcn {

struct Neighbor {
  std::uint32_t index;
  double distance;
};

/// Strict order used for every neighbour query: squared distance first, then
/// lexicographic coordinates, then index (only reached for duplicate points).
inline bool neighbor_before(double d2a, const Vec3& a, std::uint32_t ia, double d2b, const Vec3& b,
                            std::uint32_t ib) {
  if (d2a != d2b) return d2a < d2b;
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  if (a.z() != b.z()) return a.z() < b.z();
  return ia < ib;
}

/// Exact k-nearest-neighbour search over an immutable point set.
///
/// Balanced kd-tree, median split on the widest axis. Results are the
/// min(k, N) closest points sorted by `neighbor_before`, so the returned
/// (coordinate, distance) sequence does not depend on input order.
/// Queries are const and may run concurrently.
class NeighborIndex {
 public:
  explicit NeighborIndex(std::vector<Vec3> points);

  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;

  /// Linear-scan reference with identical ordering.
  std::vector<Neighbor> knn_brute_force(const Vec3& query, std::size_t k) const;

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }

 private:
  struct Node {
    std::uint32_t begin, end;  // range in order_
    std::int32_t left = -1, right = -1;
    int axis = -1;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace cgcn
