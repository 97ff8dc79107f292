#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgcn/pointcloud.hpp"

namespace cgcn {

struct ExperimentConfig;

enum class Split { kTrain, kTest };

/// Files matching `pattern`, sorted. Wildcards (* and ?) are allowed only in
/// the last path component.
std::vector<std::string> expand_glob(const std::string& pattern);

struct Sample {
  PointCloud cloud;  // unit-sphere normalized, with normals
  std::string name;  // shape family or source file
  int label = -1;
};

struct RegistrationPair {
  PointCloud source;
  PointCloud target;  // rigidly moved and shuffled copy of source
  RigidTransform truth;
  std::string name;
};

/// Registration clouds of one split: synthetic families cycled in order, or
/// the split's file glob. Train and test use different seed streams.
std::vector<Sample> make_clouds(const ExperimentConfig& config, Split split);

std::vector<RegistrationPair> make_pairs(const ExperimentConfig& config, Split split);

/// Classification set: per class, `per_class` clouds labelled by class index.
/// `rotation_deg > 0` applies an independent random rotation to every cloud.
std::vector<Sample> make_labeled(const ExperimentConfig& config, Split split, double rotation_deg);

/// One file as a cloud of `points` samples (OFF meshes are sampled; XYZ rows are used as given).
PointCloud load_cloud_file(const std::string& path, std::size_t points, std::uint64_t seed);

}  // namespace cgcn
