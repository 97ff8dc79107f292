#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cgcn/features.hpp"
#include "cgcn/layers.hpp"
#include "cgcn/params.hpp"

namespace cgcn::nn {

enum class ScaleMode {
  kRecompute,  // re-extract features at the adapted per-point scale
  kBlend,      // softmax-blend the per-scale grids
};

struct EncoderConfig {
  int K = 6;
  double sigma = 0.2;
  std::vector<double> scales{0.1, 0.2, 0.3};
  std::size_t knn = 10;
  BandwidthMode bandwidth = BandwidthMode::kPerKernel;
  AzimuthMode azimuth = AzimuthMode::kLocal;
  std::size_t azimuth_k = 16;
  double azimuth_offset = 0.0;  // radians; test hook for basis rotations
  ConvMode conv = ConvMode::kCircular;
  std::vector<std::size_t> widths{32, 64, 64, 128};  // per-layer output width (2 x conv channels)
  std::size_t descriptor_dim = 256;
  bool hidden_layer = false;
  bool global_context = true;
  double global_bandwidth = 0.5;
  bool scale_adaptation = false;
  ScaleMode scale_mode = ScaleMode::kRecompute;
  std::size_t scale_hidden = 16;

  void validate() const;
};

/// Parameter-independent geometry of one cloud, computed once and reused.
struct PreparedCloud {
  std::shared_ptr<const PointCloud> cloud;
  std::shared_ptr<const NeighborIndex> index;
  FrameSet frames;
  GroupMaps maps;
  Tensor grid_rows;  // (N·3K) x 4 at config sigma
  std::shared_ptr<const SparseRows> neighbor_map;
  Tensor multiscale_groups;  // (N·4K) x 4S, sign-group arranged
  std::shared_ptr<const SparseRows> global_map;

  std::size_t size() const { return cloud->size(); }
};

PreparedCloud prepare_cloud(const PointCloud& cloud, const EncoderConfig& config);

/// KernelFeatureGrid values as (N·3K) x C rows.
Tensor grid_as_rows(const KernelFeatureGrid& grid);

/// Sparse (N·3K) x N map from kernel neighbourhoods.
std::shared_ptr<const SparseRows> neighborhood_map(const KernelNeighborhoods& hoods, std::size_t points);

struct EncoderOutput {
  Var descriptors;  // N x descriptor_dim
  Var sigma;        // N x 1 adapted scale (invalid unless scale adaptation is on)
};

/// Four kernel feature layers, shortcut concatenation, optional global context,
/// final linear map to descriptor_dim.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);

  const EncoderConfig& config() const { return config_; }
  void init_params(ParamStore& store, Rng& rng, const std::string& prefix = "enc") const;

  EncoderOutput forward(Graph& g, Parameters& params, const PreparedCloud& cloud,
                        const std::string& prefix = "enc") const;

  /// One feature layer on explicit inputs; `features` may be invalid for the first layer.
  Var feature_layer(Graph& g, Parameters& params, const std::string& name, Var features, Var geometry_groups,
                    const PreparedCloud& cloud) const;

  /// Forward pass without gradients.
  Tensor describe(const ParamStore& store, const PreparedCloud& cloud, const std::string& prefix = "enc") const;

  std::size_t conv_channels(std::size_t layer) const { return config_.widths[layer] / 2; }

 private:
  // Neighbour weights used to average point features into kernels. Under
  // recompute scale adaptation they depend on the per-point sigma.
  struct Averaging {
    std::shared_ptr<const SparseRows> map;
    std::shared_ptr<const std::vector<double>> d_weight;  // per map entry, null when constant
    Var sigma;
  };
  Var feature_layer_with_map(Graph& g, Parameters& params, const std::string& name, Var features,
                             Var geometry_groups, const PreparedCloud& cloud, const Averaging& averaging) const;
  Var geometry(Graph& g, Parameters& params, const PreparedCloud& cloud, const std::string& prefix,
               Var& sigma_out, Averaging& averaging) const;
  EncoderConfig config_;
};

}  // namespace cgcn::nn
