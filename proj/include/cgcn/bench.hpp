#pragma once

#include <string>
#include <vector>

#include "cgcn/config.hpp"
#include "cgcn/params.hpp"

namespace cgcn {

struct BenchRow {
  std::string perturbation;
  double parameter = 0.0;  // angle cap, scale factor, noise sigma, ...
  double max_deviation = 0.0;
  double rms_deviation = 0.0;
  std::size_t compared = 0;  // descriptor entries compared
};

/// Descriptor deviation under each perturbation, over bench.clouds clouds of
/// the training families. Uses `params` when given, else a seeded random init.
std::vector<BenchRow> bench_invariance(const ExperimentConfig& config, const nn::ParamStore* params = nullptr);

/// f1..f4 deviation on a regular plane patch when midpoints are inserted
/// between row neighbours (density ×2), at fixed sigma. Interior points only.
BenchRow plane_density_row(const ExperimentConfig& config);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace cgcn
