#include "cgcn/spatial.hpp"

#include <algorithm>
#include <cmath>

#include "cgcn/errors.hpp"

namespace cgcn {

namespace {

constexpr std::uint32_t kLeafSize = 8;

// Bounded max-heap of the best candidates seen so far.
class Candidates {
 public:
  Candidates(const std::vector<Vec3>& pts, std::size_t k) : pts_(pts), k_(k) { heap_.reserve(k + 1); }

  bool full() const { return heap_.size() >= k_; }
  double worst() const { return heap_.front().d2; }

  void offer(std::uint32_t idx, double d2) {
    Entry e{d2, idx};
    if (!full()) {
      heap_.push_back(e);
      std::push_heap(heap_.begin(), heap_.end(), cmp());
    } else if (less(e, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), cmp());
      heap_.back() = e;
      std::push_heap(heap_.begin(), heap_.end(), cmp());
    }
  }

  std::vector<Neighbor> sorted() {
    std::sort_heap(heap_.begin(), heap_.end(), cmp());
    std::vector<Neighbor> out;
    out.reserve(heap_.size());
    for (const auto& e : heap_) out.push_back({e.idx, std::sqrt(e.d2)});
    return out;
  }

 private:
  struct Entry {
    double d2;
    std::uint32_t idx;
  };
  bool less(const Entry& a, const Entry& b) const {
    return neighbor_before(a.d2, pts_[a.idx], a.idx, b.d2, pts_[b.idx], b.idx);
  }
  struct Cmp {
    const Candidates* self;
    bool operator()(const Entry& a, const Entry& b) const { return self->less(a, b); }
  };
  Cmp cmp() const { return Cmp{this}; }

  const std::vector<Vec3>& pts_;
  std::size_t k_;
  std::vector<Entry> heap_;
};

}  // namespace

NeighborIndex::NeighborIndex(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw ParameterError("cannot index an empty point set");
  for (const auto& p : points_) {
    if (!p.allFinite()) throw ParameterError("point set contains non-finite coordinates");
  }
  order_.resize(points_.size());
  for (std::uint32_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, static_cast<std::uint32_t>(points_.size()));
}

std::int32_t NeighborIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (auto i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all points coincide

  const auto mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  auto& node = nodes_[static_cast<std::size_t>(id)];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

std::vector<Neighbor> NeighborIndex::knn(const Vec3& query, std::size_t k) const {
  k = std::min(k, points_.size());
  if (k == 0) return {};
  Candidates best(points_, k);

  // Left subtree holds coordinates <= split, right subtree >= split.
  auto visit = [&](auto&& self, std::int32_t id) -> void {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.axis < 0) {
      for (auto i = node.begin; i < node.end; ++i) {
        const auto idx = order_[i];
        best.offer(idx, (points_[idx] - query).squaredNorm());
      }
      return;
    }
    const double diff = query[node.axis] - node.split;
    const auto near = diff <= 0.0 ? node.left : node.right;
    const auto far = diff <= 0.0 ? node.right : node.left;
    self(self, near);
    // ties at the current worst distance may still win on the coordinate rule
    if (!best.full() || diff * diff <= best.worst()) self(self, far);
  };
  visit(visit, 0);
  return best.sorted();
}

std::vector<Neighbor> NeighborIndex::knn_brute_force(const Vec3& query, std::size_t k) const {
  std::vector<std::pair<double, std::uint32_t>> all;
  all.reserve(points_.size());
  for (std::uint32_t i = 0; i < points_.size(); ++i) all.emplace_back((points_[i] - query).squaredNorm(), i);
  std::sort(all.begin(), all.end(), [&](const auto& a, const auto& b) {
    return neighbor_before(a.first, points_[a.second], a.second, b.first, points_[b.second], b.second);
  });
  k = std::min(k, all.size());
  std::vector<Neighbor> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({all[i].second, std::sqrt(all[i].first)});
  return out;
}

}  // namespace cgcn
