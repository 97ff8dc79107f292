#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cgcn/kernels.hpp"
#include "cgcn/pointcloud.hpp"
#include "cgcn/spatial.hpp"

namespace cgcn {

inline constexpr int kGeometricChannels = 4;  // f1..f4

enum class BandwidthMode {
  kPerKernel,  // Gaussian bandwidth = the kernel's centre distance
  kGlobal,     // bandwidth = sigma for every kernel
};

struct FeatureOptions {
  std::size_t k = 10;
  BandwidthMode bandwidth = BandwidthMode::kPerKernel;
};

/// Normalized Gaussian weights of the neighbours of every (point, kernel) row.
/// Row r covers entries [offsets[r], offsets[r+1]).
struct KernelNeighborhoods {
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> index;
  std::vector<double> weight;
  std::vector<double> d_weight;  // ∂weight/∂σ of the row's point; only from project_features_scaled

  std::size_t rows() const { return offsets.size() - 1; }
};

/// Per-point (ring, position, channel) tensor. Channels 0..3 are f1..f4:
/// signed cosine to the normal, ‖x̂-x‖/σ, ‖x̂-x^k‖/σ and the adjacent-kernel
/// distance ratio along the kernel's group traversal (middle ring: above order).
struct KernelFeatureGrid {
  std::size_t points = 0;
  int K = 0;
  int channels = kGeometricChannels;
  std::vector<double> values;
  std::vector<Vec3> averaged;  // x̂ per (point, kernel)

  std::size_t kernels() const { return static_cast<std::size_t>(kRings * K); }
  std::size_t offset(std::size_t i, int ring, int pos, int c = 0) const {
    return ((i * kRings + static_cast<std::size_t>(ring)) * static_cast<std::size_t>(K) + static_cast<std::size_t>(pos)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  double at(std::size_t i, int ring, int pos, int c) const { return values[offset(i, ring, pos, c)]; }
};

/// exp(-‖x - kernel_point‖² / d²), unnormalized.
double gaussian_weight(const Vec3& x, const Vec3& kernel_point, double d);

/// Gaussian-weighted mean of `neighbors`; nullopt for an empty kernel.
std::optional<Vec3> weighted_average(const Vec3& kernel_point, std::span<const Vec3> neighbors, double d);

/// Everything that depends only on the cloud, shared by all scales.
struct FrameSet {
  const PointCloud* cloud = nullptr;
  const NeighborIndex* index = nullptr;
  std::vector<TangentBasis> bases;
  double azimuth = 0.0;  // extra in-plane rotation applied to every basis
};

FrameSet make_frames(const PointCloud& cloud, const NeighborIndex& index, AzimuthMode mode,
                     std::size_t reference_k = 16, double azimuth = 0.0);

/// Feature grid at one scale (layout.sigma). Optionally returns the neighbour weights.
KernelFeatureGrid project_features(const FrameSet& frames, const KernelLayout& layout, const FeatureOptions& options,
                                   KernelNeighborhoods* neighborhoods = nullptr);

/// One grid per sigma, in the given order.
std::vector<KernelFeatureGrid> multiscale_extract(const FrameSet& frames, int K, std::span<const double> sigmas,
                                                  const FeatureOptions& options);

/// Grid at a per-point scale together with d(value)/d(sigma_i). Neighbour sets
/// are fixed at the evaluated scale.
struct ScaledGrid {
  KernelFeatureGrid grid;
  std::vector<double> d_sigma;  // same layout as grid.values
  KernelNeighborhoods neighborhoods;
};

ScaledGrid project_features_scaled(const FrameSet& frames, int K, std::span<const double> sigma_per_point,
                                   const FeatureOptions& options);

/// Softmax-weighted scale Σ_s softmax(logits)_s σ_s.
double adapted_sigma(std::span<const double> logits, std::span<const double> sigmas);

/// ∂σ*/∂logits_s = p_s (σ_s - σ*).
std::vector<double> adapted_sigma_gradient(std::span<const double> logits, std::span<const double> sigmas);

}  // namespace cgcn
