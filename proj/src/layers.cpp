#include "cgcn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgcn/errors.hpp"
#include "cgcn/kernels.hpp"

namespace cgcn::nn {

GroupMaps make_group_maps(std::size_t points, int K) {
  if (K < 3) throw ParameterError("ring convolution needs at least 3 kernels per ring");
  GroupMaps maps;
  maps.points = points;
  maps.K = K;
  const auto Ku = static_cast<std::size_t>(K);
  auto to_groups = std::make_shared<std::vector<std::uint32_t>>();
  to_groups->reserve(points * 4 * Ku);
  for (std::size_t i = 0; i < points; ++i) {
    for (int group = 0; group < 2; ++group) {
      const bool above = group == 0;
      for (int layer = 0; layer < 2; ++layer) {
        const int ring = layer == 1 ? kMiddleRing : (above ? kUpperRing : kLowerRing);
        for (int step = 0; step < K; ++step) {
          const auto kernel = i * 3 * Ku + static_cast<std::size_t>(ring) * Ku +
                              static_cast<std::size_t>(group_position(above, step, K));
          if (!above && layer == 1) maps.below_middle_rows.push_back(static_cast<std::uint32_t>(to_groups->size()));
          to_groups->push_back(static_cast<std::uint32_t>(kernel));
        }
      }
    }
  }

  auto to_kernels = std::make_shared<SparseRows>();
  to_kernels->input_rows = points * 4 * Ku;
  auto group_row = [&](std::size_t i, int group, int layer, int step) {
    return static_cast<std::uint32_t>(((i * 2 + static_cast<std::size_t>(group)) * 2 + static_cast<std::size_t>(layer)) * Ku +
                                      static_cast<std::size_t>(step));
  };
  for (std::size_t i = 0; i < points; ++i) {
    for (int ring = 0; ring < kRings; ++ring) {
      for (int j = 0; j < K; ++j) {
        const int below_step = (K - j) % K;  // group_position is its own inverse
        if (ring == kUpperRing) {
          to_kernels->add(group_row(i, 0, 0, j), 1.0);
        } else if (ring == kLowerRing) {
          to_kernels->add(group_row(i, 1, 0, below_step), 1.0);
        } else {
          to_kernels->add(group_row(i, 0, 1, j), 0.5);
          to_kernels->add(group_row(i, 1, 1, below_step), 0.5);
        }
        to_kernels->add_row();
      }
    }
  }
  maps.to_groups = std::move(to_groups);
  maps.to_kernels = std::move(to_kernels);
  return maps;
}

Var group_geometry(Graph& g, Var kernel_rows, const GroupMaps& maps, std::size_t ratio_channel) {
  const Var grouped = g.gather_rows(kernel_rows, maps.to_groups);
  const std::size_t cols = g.value(grouped).cols;
  if (ratio_channel >= cols) throw ParameterError("ratio channel out of range");
  Tensor flip(maps.group_rows(), cols, 1.0);
  Tensor shift(maps.group_rows(), cols, 0.0);
  for (auto r : maps.below_middle_rows) {
    flip(r, ratio_channel) = -1.0;
    shift(r, ratio_channel) = 1.0;
  }
  if (!g.requires_grad(grouped)) {
    // fold the fix into a single constant
    Tensor out = g.value(grouped);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = out.data[i] * flip.data[i] + shift.data[i];
    return g.constant(std::move(out));
  }
  return g.add(g.mul(grouped, g.constant(std::move(flip))), g.constant(std::move(shift)));
}

Var group_convolve(Graph& g, Var group_rows, Var weight, const GroupMaps& maps) {
  const Var conv = g.ring_conv(group_rows, weight, RingConvShape{2, static_cast<std::size_t>(maps.K)});
  return g.sparse_rows(conv, maps.to_kernels);
}

Var channelwise_convolve(Graph& g, Var group_rows, Var weight, const GroupMaps& maps) {
  return g.sparse_rows(g.matmul(group_rows, weight), maps.to_kernels);
}

Var kernel_aggregate(Graph& g, Var kernel_rows, std::size_t kernels_per_point) {
  const Var parts[] = {g.segment_sum(kernel_rows, kernels_per_point), g.segment_max(kernel_rows, kernels_per_point)};
  return g.concat_cols(parts);
}

std::shared_ptr<const SparseRows> global_context_weights(const std::vector<Vec3>& points, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ParameterError("global context bandwidth must be positive");
  const std::size_t n = points.size();
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const Vec3& p = points[a];
    const Vec3& q = points[b];
    if (p.x() != q.x()) return p.x() < q.x();
    if (p.y() != q.y()) return p.y() < q.y();
    return p.z() < q.z();
  });
  auto map = std::make_shared<SparseRows>();
  map->input_rows = n;
  map->index.reserve(n * n);
  map->weight.reserve(n * n);
  const double inv = 1.0 / (bandwidth * bandwidth);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      w[e] = std::exp(-(points[order[e]] - points[i]).squaredNorm() * inv);
      total += w[e];
    }
    for (std::size_t e = 0; e < n; ++e) map->add(order[e], w[e] / total);
    map->add_row();
  }
  return map;
}

Var global_context(Graph& g, Var features, const std::shared_ptr<const SparseRows>& weights) {
  return g.sparse_rows(features, weights);
}

}  // namespace cgcn::nn
