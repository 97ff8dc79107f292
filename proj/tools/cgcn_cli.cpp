// Command-line front end. Exit codes: 0 success, 1 configuration or usage
// error, 2 runtime or numerical error.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cgcn/bench.hpp"
#include "cgcn/config.hpp"
#include "cgcn/dataset.hpp"
#include "cgcn/errors.hpp"
#include "cgcn/report.hpp"
#include "cgcn/training.hpp"

namespace fs = std::filesystem;
using namespace cgcn;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::string input;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  c.validate();
  return c;
}

void append_le64(std::string& buf, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) buf += static_cast<char>((v >> (8 * b)) & 0xff);
}

void append_f64(std::string& buf, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  append_le64(buf, bits);
}

std::string grid_binary(const KernelFeatureGrid& g) {
  std::string buf = "CGCNGRID";
  append_le64(buf, g.points);
  append_le64(buf, static_cast<std::uint64_t>(kRings));
  append_le64(buf, static_cast<std::uint64_t>(g.K));
  append_le64(buf, static_cast<std::uint64_t>(g.channels));
  for (double v : g.values) append_f64(buf, v);
  return buf;
}

std::string descriptor_binary(const nn::Tensor& t) {
  std::string buf = "CGCNDESC";
  append_le64(buf, t.rows);
  append_le64(buf, t.cols);
  for (double v : t.data) append_f64(buf, v);
  return buf;
}

std::string checkpoint_path(const Options& o, const ExperimentConfig& c, const char* file) {
  return o.checkpoint.empty() ? (fs::path(c.out) / file).string() : o.checkpoint;
}

nn::ParamStore load_params(const std::string& path, const ExperimentConfig& c, Task task) {
  auto ckpt = nn::load_checkpoint(path);
  const auto expected = init_model(c, task);
  for (const auto& [name, t] : expected.tensors()) {
    if (!ckpt.params.contains(name) || !ckpt.params.at(name).same_shape(t)) {
      throw ConfigError("checkpoint " + path + " does not match the configured model (tensor " + name + ")");
    }
  }
  if (ckpt.params.tensors().size() != expected.tensors().size()) {
    throw ConfigError("checkpoint " + path + " holds tensors the configured model does not use");
  }
  return std::move(ckpt.params);
}

std::string save_params(const std::string& path, const nn::ParamStore& params, const ExperimentConfig& c,
                        const std::string& command) {
  nlohmann::ordered_json meta;
  meta["command"] = command;
  meta["config"] = c.echo();
  const std::string text = nn::serialize_checkpoint(params, meta.dump());
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_text_file(path, text);
  return git_blob_sha1(text);
}

void finish(const nlohmann::ordered_json& report, const ExperimentConfig& c, double seconds) {
  emit_report(report, c.out);
  nlohmann::ordered_json timing;
  timing["wall_clock_seconds"] = seconds;
  write_text_file((fs::path(c.out) / "timing.json").string(), timing.dump(2) + "\n");
  std::cout << render_summary(report);
}

void run_gen_data(const Options& o) {
  const auto c = load(o);
  nlohmann::ordered_json manifest;
  for (const auto split : {Split::kTrain, Split::kTest}) {
    const std::string name = split == Split::kTrain ? "train" : "test";
    const fs::path dir = fs::path(c.out) / name;
    fs::create_directories(dir);
    const auto pairs = make_pairs(c, split);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "pair_%04zu", i);
      write_text_file((dir / (std::string(stem) + "_source.xyz")).string(), write_xyz(pairs[i].source));
      write_text_file((dir / (std::string(stem) + "_target.xyz")).string(), write_xyz(pairs[i].target));
      nlohmann::ordered_json item;
      item["source"] = name + "/" + stem + "_source.xyz";
      item["target"] = name + "/" + stem + "_target.xyz";
      item["shape"] = pairs[i].name;
      for (int r = 0; r < 3; ++r) {
        item["rotation"].push_back({pairs[i].truth.R(r, 0), pairs[i].truth.R(r, 1), pairs[i].truth.R(r, 2)});
      }
      item["translation"] = {pairs[i].truth.t[0], pairs[i].truth.t[1], pairs[i].truth.t[2]};
      manifest[name].push_back(item);
    }
  }
  manifest["config"] = c.echo();
  write_text_file((fs::path(c.out) / "pairs.json").string(), manifest.dump(2) + "\n");
  std::cout << "wrote " << manifest["train"].size() << " train and " << manifest["test"].size() << " test pairs to "
            << c.out << "\n";
}

void run_extract(const Options& o) {
  const auto c = load(o);
  std::vector<Sample> samples;
  if (!o.input.empty()) {
    PointCloud cloud = load_cloud_file(o.input, c.data.points, c.seed);
    cloud = normalize_unit_sphere(cloud);
    if (c.data.normals == NormalSource::kEstimated || !cloud.has_normals()) {
      cloud = estimate_normals(cloud, std::min(c.data.normal_k, cloud.size()));
    }
    samples.push_back({cloud, o.input, -1});
  } else {
    samples = make_clouds(c, Split::kTrain);
  }
  std::optional<nn::ParamStore> params;
  if (!o.checkpoint.empty()) params = load_params(o.checkpoint, c, Task::kRegister);
  const nn::Encoder encoder(c.model);
  fs::create_directories(c.out);
  nlohmann::ordered_json listing;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto prepared = nn::prepare_cloud(samples[i].cloud, c.model);
    KernelFeatureGrid grid;
    grid.points = prepared.size();
    grid.K = c.model.K;
    grid.values = prepared.grid_rows.data;
    char stem[32];
    std::snprintf(stem, sizeof stem, "%04zu", i);
    nlohmann::ordered_json item;
    item["source"] = samples[i].name;
    item["grid"] = std::string("grid_") + stem + ".bin";
    write_text_file((fs::path(c.out) / item["grid"].get<std::string>()).string(), grid_binary(grid));
    if (params) {
      item["descriptors"] = std::string("descriptors_") + stem + ".bin";
      write_text_file((fs::path(c.out) / item["descriptors"].get<std::string>()).string(),
                      descriptor_binary(encoder.describe(*params, prepared)));
    }
    listing["clouds"].push_back(item);
  }
  listing["config"] = c.echo();
  write_text_file((fs::path(c.out) / "extract.json").string(), listing.dump(2) + "\n");
  std::cout << "extracted " << samples.size() << " kernel feature grids to " << c.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cylindrical-kernel point descriptors: registration, classification and invariance tools"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config file");
    sub->add_option("--seed", o.seed, "overrides the config seed");
    sub->add_option("--out", o.out, "output directory (overrides the config)");
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint to write (train) or read (eval, extract, bench)");
  };
  auto* gen = app.add_subcommand("gen-data", "write the synthetic registration pairs as XYZ files");
  auto* extract = app.add_subcommand("extract", "write kernel feature grids (and descriptors with --checkpoint)");
  extract->add_option("--input", o.input, "single OFF/XYZ file instead of the configured training split");
  auto* train_reg = app.add_subcommand("train-reg", "train the registration model and evaluate it");
  auto* eval_reg = app.add_subcommand("eval-reg", "evaluate a registration checkpoint and the ICP baseline");
  auto* train_cls = app.add_subcommand("train-cls", "train the classifier and evaluate aligned and rotated tests");
  auto* eval_cls = app.add_subcommand("eval-cls", "evaluate a classification checkpoint");
  auto* bench = app.add_subcommand("bench-invariance", "measure descriptor deviation under perturbations");
  auto* report = app.add_subcommand("report", "re-render summary and tables from <out>/report.json");
  for (auto* sub : {gen, extract, train_reg, eval_reg, train_cls, eval_cls, bench, report}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  try {
    if (gen->parsed()) {
      run_gen_data(o);
    } else if (extract->parsed()) {
      run_extract(o);
    } else if (train_reg->parsed()) {
      const auto c = load(o);
      const auto run = train_registration(c);
      const auto sha = save_params(checkpoint_path(o, c, "registration.ckpt"), run.params, c, "train-reg");
      finish(report_json(&run, nullptr, c, "train-reg", sha), c, elapsed());
    } else if (eval_reg->parsed()) {
      const auto c = load(o);
      if (o.checkpoint.empty()) throw ConfigError("eval-reg needs --checkpoint");
      RunState run;
      run.config = c;
      run.params = load_params(o.checkpoint, c, Task::kRegister);
      const auto test = make_pairs(c, Split::kTest);
      run.result = evaluate_registration(c, run.params, test);
      run.icp = evaluate_icp(c, test);
      std::ifstream f(o.checkpoint, std::ios::binary);
      const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      finish(report_json(&run, nullptr, c, "eval-reg", git_blob_sha1(text)), c, elapsed());
    } else if (train_cls->parsed()) {
      const auto c = load(o);
      const auto run = train_classification(c);
      const auto sha = save_params(checkpoint_path(o, c, "classification.ckpt"), run.params, c, "train-cls");
      finish(report_json(&run, nullptr, c, "train-cls", sha), c, elapsed());
    } else if (eval_cls->parsed()) {
      const auto c = load(o);
      if (o.checkpoint.empty()) throw ConfigError("eval-cls needs --checkpoint");
      RunState run;
      run.config = c;
      run.params = load_params(o.checkpoint, c, Task::kClassify);
      run.accuracy_aligned = evaluate_classification(c, run.params, make_labeled(c, Split::kTest, 0.0)).accuracy;
      run.accuracy_rotated =
          evaluate_classification(c, run.params, make_labeled(c, Split::kTest, c.classify.test_rotation)).accuracy;
      std::ifstream f(o.checkpoint, std::ios::binary);
      const std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      finish(report_json(&run, nullptr, c, "eval-cls", git_blob_sha1(text)), c, elapsed());
    } else if (bench->parsed()) {
      const auto c = load(o);
      std::optional<nn::ParamStore> params;
      std::string sha;
      if (!o.checkpoint.empty()) {
        params = load_params(o.checkpoint, c, Task::kRegister);
        std::ifstream f(o.checkpoint, std::ios::binary);
        sha = git_blob_sha1(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
      }
      const auto rows = bench_invariance(c, params ? &*params : nullptr);
      finish(report_json(nullptr, &rows, c, "bench-invariance", sha), c, elapsed());
    } else if (report->parsed()) {
      const auto c = load(o);
      const auto j = load_report((fs::path(c.out) / "report.json").string());
      emit_report(j, c.out);
      std::cout << render_summary(j);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
