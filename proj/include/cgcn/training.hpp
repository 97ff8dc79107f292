#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cgcn/config.hpp"
#include "cgcn/dataset.hpp"
#include "cgcn/encoder.hpp"
#include "cgcn/registration.hpp"

namespace cgcn {

/// Worker threads for batch-parallel work, from CGCN_WORKERS (default 1).
/// Results never depend on this value.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on `workers` threads. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct RegistrationEval {
  std::vector<RigidTransform> predictions;
  std::vector<RigidTransform> truths;
  reg::RegistrationMetrics metrics;
  std::size_t degenerate = 0;  // pairs whose forward pass had rank-deficient H
};

struct ClassificationEval {
  double accuracy = 0.0;
  std::vector<int> predictions;
};

/// Everything a report needs from one run.
struct RunState {
  ExperimentConfig config;
  std::string command;
  nn::ParamStore params;
  std::vector<double> epoch_losses;
  std::optional<RegistrationEval> baseline;  // untrained model
  std::optional<RegistrationEval> result;
  std::optional<RegistrationEval> icp;
  std::optional<double> baseline_accuracy;
  std::optional<double> accuracy_aligned;
  std::optional<double> accuracy_rotated;
  std::size_t degenerate_gradients = 0;
  std::size_t skipped_pairs = 0;
};

/// Fresh parameters for the task (registration: encoder only; classification: encoder + head).
nn::ParamStore init_model(const ExperimentConfig& config, Task task);

/// Predicted transform for one prepared pair; throws DegenerateGeometryError.
RigidTransform register_pair(const nn::Encoder& encoder, const nn::ParamStore& params,
                             const nn::PreparedCloud& source, const nn::PreparedCloud& target, double temperature);

RegistrationEval evaluate_registration(const ExperimentConfig& config, const nn::ParamStore& params,
                                       const std::vector<RegistrationPair>& pairs);
RegistrationEval evaluate_icp(const ExperimentConfig& config, const std::vector<RegistrationPair>& pairs);

/// Trains on the train split, evaluates model, untrained model and ICP on the test split.
RunState train_registration(const ExperimentConfig& config);

ClassificationEval evaluate_classification(const ExperimentConfig& config, const nn::ParamStore& params,
                                           const std::vector<Sample>& samples);

/// Trains on aligned clouds, evaluates on aligned and rotated test sets.
RunState train_classification(const ExperimentConfig& config);

}  // namespace cgcn
