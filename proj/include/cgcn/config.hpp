#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cgcn/encoder.hpp"
#include "cgcn/pointcloud.hpp"

namespace cgcn {

enum class Task { kRegister, kClassify, kExtract, kBench };
enum class NormalSource { kSource, kEstimated };

struct DataConfig {
  std::vector<ShapeSpec> train_shapes;
  std::vector<ShapeSpec> test_shapes;
  std::size_t points = 256;
  double noise = 0.0;
  std::size_t train_count = 24;
  std::size_t test_count = 16;
  std::string train_files;  // glob; replaces train_shapes when set
  std::string test_files;
  NormalSource normals = NormalSource::kSource;
  std::size_t normal_k = 16;
};

struct RegisterConfig {
  double max_angle = 45.0;
  double max_translation = 0.5;
  double temperature = 0.1;
  int icp_iterations = 50;
  double icp_tolerance = 1e-9;
};

struct TrainConfig {
  int epochs = 8;
  double learning_rate = 0.003;
  double momentum = 0.9;
  std::size_t batch = 4;
  double clip = 10.0;  // global gradient-norm cap; 0 disables
};

struct ClassifyConfig {
  std::vector<ShapeSpec> classes;
  std::size_t head_hidden = 128;
  double learning_rate = 0.0003;  // replaces train.learning_rate for this task
  std::size_t train_per_class = 8;
  std::size_t test_per_class = 8;
  double test_rotation = 180.0;  // max angle of the rotated test set
};

struct BenchConfig {
  std::size_t clouds = 4;
  std::size_t points = 256;
  double scale = 2.5;
  std::vector<double> noise_levels{0.0, 0.005, 0.01, 0.02};
};

struct ExperimentConfig {
  Task task = Task::kRegister;
  std::uint64_t seed = 1;
  std::string out = "out";
  DataConfig data;
  nn::EncoderConfig model;
  RegisterConfig reg;
  TrainConfig train;
  ClassifyConfig classify;
  BenchConfig bench;

  ExperimentConfig();
  void validate() const;
  /// Every field, for the report's config echo.
  nlohmann::ordered_json echo() const;
};

/// Grammar, one statement per line:
///   [section]          selects a section; keys before any header are top-level
///   key = value        value: number, true/false, bare word, "quoted", or a comma list
///   # comment          also allowed after a value
/// Keys are unique across sections, so a key may also appear outside its own
/// section. Unknown keys, values of the wrong type and duplicates are errors.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Renders a config back to the grammar above; parse_config(render_config(c)) == c.
std::string render_config(const ExperimentConfig& config);

/// Shortest text that reads back to the same double.
std::string format_number(double v);

std::string task_name(Task t);

}  // namespace cgcn
