#include "cgcn/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cgcn/config.hpp"
#include "cgcn/errors.hpp"
#include "cgcn/rng.hpp"

namespace cgcn {

namespace fs = std::filesystem;

namespace {

bool wildcard_match(const char* p, const char* s) {
  if (*p == '\0') return *s == '\0';
  if (*p == '*') return wildcard_match(p + 1, s) || (*s != '\0' && wildcard_match(p, s + 1));
  if (*s == '\0') return false;
  return (*p == '?' || *p == *s) && wildcard_match(p + 1, s + 1);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Normalized, with normals per config.
PointCloud finish(PointCloud cloud, const ExperimentConfig& config) {
  cloud = normalize_unit_sphere(cloud);
  if (config.data.normals == NormalSource::kEstimated || !cloud.has_normals()) {
    cloud = estimate_normals(cloud, std::min(config.data.normal_k, cloud.size()));
  }
  return cloud;
}

std::uint64_t split_seed(const ExperimentConfig& config, Split split) {
  return derive_seed(config.seed, split == Split::kTrain ? 11 : 12);
}

}  // namespace

std::vector<std::string> expand_glob(const std::string& pattern) {
  const fs::path p(pattern);
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  const std::string leaf = p.filename().string();
  if (dir.string().find_first_of("*?") != std::string::npos) {
    throw ConfigError("wildcards are only allowed in the file name: " + pattern);
  }
  std::vector<std::string> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && wildcard_match(leaf.c_str(), entry.path().filename().string().c_str())) {
      out.push_back(entry.path().string());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

PointCloud load_cloud_file(const std::string& path, std::size_t points, std::uint64_t seed) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".off" || ext == ".OFF") return sample_mesh(parse_off(read_file(path)), points, seed);
  if (ext == ".xyz" || ext == ".XYZ" || ext == ".txt") return parse_xyz(read_file(path));
  throw FormatError("unsupported point cloud file: " + path);
}

std::vector<Sample> make_clouds(const ExperimentConfig& config, Split split) {
  const std::uint64_t base = split_seed(config, split);
  const std::string& files = split == Split::kTrain ? config.data.train_files : config.data.test_files;
  const std::size_t count = split == Split::kTrain ? config.data.train_count : config.data.test_count;
  std::vector<Sample> out;
  if (!files.empty()) {
    const auto paths = expand_glob(files);
    if (paths.empty()) throw ConfigError("no files match '" + files + "'");
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const auto cloud = load_cloud_file(paths[i], config.data.points, derive_seed(base, i));
      out.push_back({finish(cloud, config), paths[i], -1});
    }
    return out;
  }
  const auto& shapes = split == Split::kTrain ? config.data.train_shapes : config.data.test_shapes;
  for (std::size_t i = 0; i < count; ++i) {
    const ShapeSpec& shape = shapes[i % shapes.size()];
    const auto cloud = gen_synthetic(shape, config.data.points, config.data.noise, derive_seed(base, i));
    out.push_back({finish(cloud, config), shape.name(), -1});
  }
  return out;
}

std::vector<RegistrationPair> make_pairs(const ExperimentConfig& config, Split split) {
  const auto clouds = make_clouds(config, split);
  const std::uint64_t base = derive_seed(split_seed(config, split), 1000);
  std::vector<RegistrationPair> pairs;
  pairs.reserve(clouds.size());
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    RegistrationPair p;
    p.source = clouds[i].cloud;
    p.name = clouds[i].name;
    p.truth = random_rotation(config.reg.max_angle, derive_seed(base, 2 * i), config.reg.max_translation);
    const PointCloud moved = apply_rigid(p.source, p.truth);
    std::vector<std::size_t> order(moved.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(base, 2 * i + 1));
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);
    for (auto j : order) {
      p.target.points.push_back(moved.points[j]);
      p.target.normals.push_back(moved.normals[j]);
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<Sample> make_labeled(const ExperimentConfig& config, Split split, double rotation_deg) {
  const std::uint64_t base = derive_seed(split_seed(config, split), 2000);
  const std::size_t per_class = split == Split::kTrain ? config.classify.train_per_class : config.classify.test_per_class;
  const auto& classes = config.classify.classes;
  std::vector<Sample> out;
  if (!config.data.train_files.empty() || !config.data.test_files.empty()) {
    // File datasets are labelled by the name of the directory holding each file.
    const std::string& files = split == Split::kTrain ? config.data.train_files : config.data.test_files;
    for (const auto& path : expand_glob(files)) {
      const std::string dir = fs::path(path).parent_path().filename().string();
      int label = -1;
      for (std::size_t c = 0; c < classes.size(); ++c) {
        if (classes[c].name() == dir) label = static_cast<int>(c);
      }
      if (label < 0) throw ConfigError("file " + path + " is not under a directory named after a class");
      out.push_back({finish(load_cloud_file(path, config.data.points, derive_seed(base, out.size())), config), path,
                     label});
    }
  } else {
    // interleave classes so batches mix labels
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t c = 0; c < classes.size(); ++c) {
        const std::uint64_t s = derive_seed(base, i * classes.size() + c);
        const auto cloud = gen_synthetic(classes[c], config.data.points, config.data.noise, s);
        out.push_back({finish(cloud, config), classes[c].name(), static_cast<int>(c)});
      }
    }
  }
  if (rotation_deg > 0.0) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].cloud = apply_rigid(out[i].cloud, random_rotation(rotation_deg, derive_seed(base ^ 0x5eed, i)));
    }
  }
  return out;
}

}  // namespace cgcn
