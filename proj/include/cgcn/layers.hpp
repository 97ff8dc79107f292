#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "cgcn/geometry.hpp"
#include "cgcn/graph.hpp"

namespace cgcn::nn {

enum class ConvMode { kCircular, kChannelwise };

/// Row bookkeeping between per-kernel rows, ordered (point, ring, position),
/// and sign-group rows, ordered (point, group, layer, step). Group 0 is
/// (upper, middle) walked in above order, group 1 is (lower, middle) walked in
/// below order, so each point contributes two 2 x K blocks.
struct GroupMaps {
  std::size_t points = 0;
  int K = 0;
  std::shared_ptr<const std::vector<std::uint32_t>> to_groups;
  /// Middle-ring outputs average the two groups; outer rings copy their group.
  std::shared_ptr<const SparseRows> to_kernels;
  /// Group rows holding a middle-ring kernel of the below group.
  std::vector<std::uint32_t> below_middle_rows;

  std::size_t kernel_rows() const { return points * 3 * static_cast<std::size_t>(K); }
  std::size_t group_rows() const { return points * 4 * static_cast<std::size_t>(K); }
};

GroupMaps make_group_maps(std::size_t points, int K);

/// Arranges per-kernel geometric channels (f1..f4) into group rows. The
/// middle ring's ratio channel is re-oriented for the below group (f4 -> 1 - f4).
Var group_geometry(Graph& g, Var kernel_rows, const GroupMaps& maps, std::size_t ratio_channel = 3);

/// Shared-weight circular convolution over both sign groups -> per-kernel rows x C_out.
Var group_convolve(Graph& g, Var group_rows, Var weight, const GroupMaps& maps);

/// Per-kernel linear map on the group rows (centre tap only) -> per-kernel rows x C_out.
Var channelwise_convolve(Graph& g, Var group_rows, Var weight, const GroupMaps& maps);

/// Channelwise sum and max over each point's kernels -> points x 2C.
Var kernel_aggregate(Graph& g, Var kernel_rows, std::size_t kernels_per_point);

/// Row-normalized exp(-‖x_j - x_i‖²/d²) over all j, summed in lexicographic
/// coordinate order of x_j so the result does not depend on input order.
std::shared_ptr<const SparseRows> global_context_weights(const std::vector<Vec3>& points, double bandwidth);

Var global_context(Graph& g, Var features, const std::shared_ptr<const SparseRows>& weights);

}  // namespace cgcn::nn
