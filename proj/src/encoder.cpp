#include "cgcn/encoder.hpp"

#include <algorithm>

#include "cgcn/errors.hpp"

namespace cgcn::nn {

void EncoderConfig::validate() const {
  if (K < 4 || K > 8) throw ParameterError("kernels per ring must lie in [4, 8]");
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  if (knn < 1) throw ParameterError("knn must be at least 1");
  if (widths.size() != 4) throw ParameterError("encoder needs exactly four layer widths");
  for (auto w : widths) {
    if (w < 2 || w % 2 != 0) throw ParameterError("layer widths must be even and >= 2");
  }
  if (descriptor_dim < 1) throw ParameterError("descriptor dimension must be positive");
  if (!(global_bandwidth > 0.0)) throw ParameterError("global bandwidth must be positive");
  if (scale_adaptation) {
    if (scales.size() < 2) throw ParameterError("scale adaptation needs at least two scales");
    for (std::size_t s = 0; s < scales.size(); ++s) {
      if (!(scales[s] > 0.0) || (s > 0 && !(scales[s] > scales[s - 1]))) {
        throw ParameterError("scales must be positive and strictly increasing");
      }
    }
  }
}

Tensor grid_as_rows(const KernelFeatureGrid& grid) {
  return Tensor(grid.points * grid.kernels(), static_cast<std::size_t>(grid.channels), grid.values);
}

std::shared_ptr<const SparseRows> neighborhood_map(const KernelNeighborhoods& hoods, std::size_t points) {
  auto map = std::make_shared<SparseRows>();
  map->input_rows = points;
  map->offsets = hoods.offsets;
  map->index = hoods.index;
  map->weight = hoods.weight;
  return map;
}

PreparedCloud prepare_cloud(const PointCloud& input, const EncoderConfig& config) {
  config.validate();
  if (!input.has_normals()) throw ParameterError("encoder input needs normals");
  input.validate();
  PreparedCloud p;
  auto cloud = std::make_shared<PointCloud>(input);
  p.cloud = cloud;
  p.index = std::make_shared<NeighborIndex>(cloud->points);
  p.frames = make_frames(*p.cloud, *p.index, config.azimuth, config.azimuth_k, config.azimuth_offset);
  p.maps = make_group_maps(cloud->size(), config.K);

  const FeatureOptions options{config.knn, config.bandwidth};
  KernelNeighborhoods hoods;
  const auto grid = project_features(p.frames, build_layout(config.sigma, config.K), options, &hoods);
  p.grid_rows = grid_as_rows(grid);
  p.neighbor_map = neighborhood_map(hoods, cloud->size());

  if (config.scale_adaptation) {
    const auto grids = multiscale_extract(p.frames, config.K, config.scales, options);
    const std::size_t S = grids.size();
    const std::size_t ratio = 3;
    p.multiscale_groups = Tensor(p.maps.group_rows(), kGeometricChannels * S);
    for (std::size_t r = 0; r < p.maps.group_rows(); ++r) {
      const std::size_t src = (*p.maps.to_groups)[r];
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t c = 0; c < kGeometricChannels; ++c) {
          p.multiscale_groups(r, s * kGeometricChannels + c) = grids[s].values[src * kGeometricChannels + c];
        }
      }
    }
    for (auto r : p.maps.below_middle_rows) {
      for (std::size_t s = 0; s < S; ++s) {
        double& v = p.multiscale_groups(r, s * kGeometricChannels + ratio);
        v = 1.0 - v;
      }
    }
  }
  if (config.global_context) p.global_map = global_context_weights(cloud->points, config.global_bandwidth);
  return p;
}

Encoder::Encoder(EncoderConfig config) : config_(std::move(config)) { config_.validate(); }

void Encoder::init_params(ParamStore& store, Rng& rng, const std::string& prefix) const {
  std::size_t in_features = 0;
  std::size_t total = 0;
  // kernel_aggregate sums 3K kernel responses; count them in the fan-in so
  // activations keep their scale from layer to layer
  const std::size_t kernels = 3 * static_cast<std::size_t>(config_.K);
  for (std::size_t l = 0; l < config_.widths.size(); ++l) {
    const std::size_t cin = in_features + kGeometricChannels;
    const std::size_t cout = conv_channels(l);
    const std::string name = prefix + ".l" + std::to_string(l);
    if (config_.conv == ConvMode::kCircular) {
      store.create(name + ".conv", 9 * cin, cout, 9 * cin * kernels, rng);
    } else {
      store.create(name + ".conv", cin, cout, cin * kernels, rng);
    }
    if (config_.hidden_layer) store.create(name + ".hidden", cout, cout, cout, rng);
    in_features = config_.widths[l];
    total += config_.widths[l];
  }
  const std::size_t head_in = config_.global_context ? 2 * total : total;
  store.create(prefix + ".out.w", head_in, config_.descriptor_dim, head_in, rng);
  store.create_zero(prefix + ".out.b", 1, config_.descriptor_dim);
  if (config_.scale_adaptation) {
    const std::size_t S = config_.scales.size();
    const std::size_t in = kGeometricChannels * S;
    store.create(prefix + ".scale.w1", in, config_.scale_hidden, in, rng);
    store.create_zero(prefix + ".scale.b1", 1, config_.scale_hidden);
    store.create(prefix + ".scale.w2", config_.scale_hidden, S, config_.scale_hidden, rng);
    store.create_zero(prefix + ".scale.b2", 1, S);
  }
}

Var Encoder::geometry(Graph& g, Parameters& params, const PreparedCloud& cloud, const std::string& prefix,
                      Var& sigma_out, Averaging& averaging) const {
  averaging = Averaging{cloud.neighbor_map, nullptr, Var{}};
  if (!config_.scale_adaptation) return group_geometry(g, g.constant(cloud.grid_rows), cloud.maps);

  // Scale analysis: per-group-row MLP, mean over a point's group rows, softmax over scales.
  const std::size_t S = config_.scales.size();
  const std::size_t rows_per_point = 4 * static_cast<std::size_t>(config_.K);
  const Var ms = g.constant(cloud.multiscale_groups);
  const Var hidden = g.relu(g.add(g.matmul(ms, params(prefix + ".scale.w1")), params(prefix + ".scale.b1")));
  const Var pooled = g.segment_mean(hidden, rows_per_point);
  const Var logits = g.add(g.matmul(pooled, params(prefix + ".scale.w2")), params(prefix + ".scale.b2"));
  const Var weights = g.softmax_rows(logits);
  Tensor sig(S, 1);
  for (std::size_t s = 0; s < S; ++s) sig(s, 0) = config_.scales[s];
  sigma_out = g.matmul(weights, g.constant(std::move(sig)));

  const std::size_t n = cloud.size();
  const std::size_t kernels = 3 * static_cast<std::size_t>(config_.K);
  if (config_.scale_mode == ScaleMode::kRecompute) {
    const Tensor& sv = g.value(sigma_out);
    const FeatureOptions options{config_.knn, config_.bandwidth};
    auto scaled = std::make_shared<ScaledGrid>(project_features_scaled(cloud.frames, config_.K, sv.data, options));
    averaging.map = neighborhood_map(scaled->neighborhoods, n);
    averaging.d_weight = std::shared_ptr<const std::vector<double>>(scaled, &scaled->neighborhoods.d_weight);
    averaging.sigma = sigma_out;
    Tensor rows = grid_as_rows(scaled->grid);
    const Var sigma = sigma_out;
    const Var grid = g.custom(std::move(rows), {sigma}, [sigma, scaled, kernels](Graph& gg, std::uint32_t self) {
      const Tensor& G = gg.grad_of(self);
      Tensor ds(G.rows / kernels, 1);
      const std::size_t per_point = kernels * G.cols;
      for (std::size_t i = 0; i < ds.rows; ++i) {
        double acc = 0.0;
        for (std::size_t e = 0; e < per_point; ++e) acc += G.data[i * per_point + e] * scaled->d_sigma[i * per_point + e];
        ds(i, 0) = acc;
      }
      gg.accumulate(sigma, ds);
    });
    return group_geometry(g, grid, cloud.maps);
  }

  // Blend: per-point convex combination of the per-scale group tensors.
  auto expand = std::make_shared<std::vector<std::uint32_t>>(n * rows_per_point);
  for (std::size_t r = 0; r < expand->size(); ++r) (*expand)[r] = static_cast<std::uint32_t>(r / rows_per_point);
  const Var row_weights = g.gather_rows(weights, expand);
  const Var ones = g.constant(Tensor(1, kGeometricChannels, 1.0));
  Var blended;
  for (std::size_t s = 0; s < S; ++s) {
    const Var part = g.slice_cols(ms, s * kGeometricChannels, kGeometricChannels);
    const Var w = g.matmul(g.slice_cols(row_weights, s, 1), ones);
    const Var term = g.mul(part, w);
    blended = blended.valid() ? g.add(blended, term) : term;
  }
  return blended;
}

namespace {

// Zero-valued node whose backward adds the dependence of the averaging weights
// on each point's sigma: dσ_i += Σ_e (G_r · F_idx(e)) ∂w_e/∂σ_i over rows r of point i.
Var weight_sensitivity(Graph& g, Var features, const std::shared_ptr<const SparseRows>& map,
                       const std::shared_ptr<const std::vector<double>>& d_weight, Var sigma) {
  const std::size_t rows = map->rows(), cols = g.value(features).cols;
  const std::size_t points = g.value(sigma).rows;
  return g.custom(Tensor(rows, cols), {features, sigma}, [features, sigma, map, d_weight, points](Graph& gg, std::uint32_t self) {
    if (!gg.needs(sigma)) return;
    const Tensor& G = gg.grad_of(self);
    const Tensor& F = gg.value(features);
    const std::size_t per_point = map->rows() / points;
    Tensor ds(points, 1);
    for (std::size_t r = 0; r < map->rows(); ++r) {
      double acc = 0.0;
      for (std::size_t e = map->offsets[r]; e < map->offsets[r + 1]; ++e) {
        double dot = 0.0;
        for (std::size_t c = 0; c < F.cols; ++c) dot += G(r, c) * F(map->index[e], c);
        acc += dot * (*d_weight)[e];
      }
      ds(r / per_point, 0) += acc;
    }
    gg.accumulate(sigma, ds);
  });
}

}  // namespace

Var Encoder::feature_layer(Graph& g, Parameters& params, const std::string& name, Var features,
                           Var geometry_groups, const PreparedCloud& cloud) const {
  return feature_layer_with_map(g, params, name, features, geometry_groups, cloud, Averaging{cloud.neighbor_map, nullptr, Var{}});
}

Var Encoder::feature_layer_with_map(Graph& g, Parameters& params, const std::string& name, Var features,
                                    Var geometry_groups, const PreparedCloud& cloud,
                                    const Averaging& averaging) const {
  Var group_in = geometry_groups;
  if (features.valid()) {
    Var averaged = g.sparse_rows(features, averaging.map);
    if (averaging.d_weight) {
      averaged = g.add(averaged, weight_sensitivity(g, features, averaging.map, averaging.d_weight, averaging.sigma));
    }
    const Var grouped = g.gather_rows(averaged, cloud.maps.to_groups);
    const Var parts[] = {grouped, geometry_groups};
    group_in = g.concat_cols(parts);
  }
  const Var w = params(name + ".conv");
  Var kernels = config_.conv == ConvMode::kCircular ? group_convolve(g, group_in, w, cloud.maps)
                                                    : channelwise_convolve(g, group_in, w, cloud.maps);
  kernels = g.relu(kernels);
  if (config_.hidden_layer) kernels = g.relu(g.matmul(kernels, params(name + ".hidden")));
  return kernel_aggregate(g, kernels, 3 * static_cast<std::size_t>(config_.K));
}

EncoderOutput Encoder::forward(Graph& g, Parameters& params, const PreparedCloud& cloud,
                               const std::string& prefix) const {
  EncoderOutput out;
  Averaging averaging;
  const Var geo = geometry(g, params, cloud, prefix, out.sigma, averaging);
  std::vector<Var> stages;
  Var features;
  for (std::size_t l = 0; l < config_.widths.size(); ++l) {
    features = feature_layer_with_map(g, params, prefix + ".l" + std::to_string(l), features, geo, cloud, averaging);
    stages.push_back(features);
  }
  Var local = g.concat_cols(stages);
  if (config_.global_context) {
    const Var parts[] = {local, global_context(g, local, cloud.global_map)};
    local = g.concat_cols(parts);
  }
  out.descriptors = g.add(g.matmul(local, params(prefix + ".out.w")), params(prefix + ".out.b"));
  return out;
}

Tensor Encoder::describe(const ParamStore& store, const PreparedCloud& cloud, const std::string& prefix) const {
  Graph g;
  Parameters params(g, store, /*trainable=*/false);
  return g.value(forward(g, params, cloud, prefix).descriptors);
}

}  // namespace cgcn::nn
