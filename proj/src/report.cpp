#include "cgcn/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "cgcn/errors.hpp"

namespace cgcn {

namespace {

struct ReferenceRow {
  const char* method;
  double values[6];
  const char* categories;
};

// Published ModelNet40 numbers, kept for context only.
constexpr ReferenceRow kTableOne[] = {
    {"ICP", {892.601135, 29.876431, 23.626110, 0.086005, 0.293266, 0.251916}, "-"},
    {"Go-ICP", {192.258636, 13.865736, 2.914169, 0.000491, 0.022154, 0.006219}, "-"},
    {"FGR", {97.002747, 9.848997, 1.445460, 0.000182, 0.013503, 0.002231}, "-"},
    {"PointNetLK", {306.323975, 17.502113, 5.280545, 0.000784, 0.028007, 0.007203}, "20"},
    {"PointNetLK", {227.870331, 15.095374, 4.225304, 0.000487, 0.022065, 0.005404}, "40"},
    {"DCP-v2", {9.923701, 3.150190, 2.007210, 0.000025, 0.005039, 0.003703}, "20"},
    {"DCP-v2", {1.307329, 1.143385, 0.770573, 0.000003, 0.001786, 0.001195}, "40"},
    {"Our method", {0.017159, 0.130991, 0.064475, 0.000000, 0.000048, 0.000027}, "20"},
};

constexpr ReferenceRow kAblation[] = {
    {"conv=channelwise", {0.040420, 0.201046, 0.105576, 0.000000, 0.000149, 0.000094}, ""},
    {"conv=circular", {0.017159, 0.130991, 0.064475, 0.000000, 0.000048, 0.000027}, ""},
    {"knn=10", {0.017159, 0.130991, 0.064475, 0.000000, 0.000048, 0.000027}, ""},
    {"knn=2", {0.014517, 0.120486, 0.065029, 0.000000, 0.000037, 0.000025}, ""},
    {"global_context=false", {0.017159, 0.130991, 0.064475, 0.000000, 0.000048, 0.000027}, ""},
    {"global_context=true", {0.008142, 0.091766, 0.046526, 0.000000, 0.000047, 0.000027}, ""},
    {"scale_adaptation=false", {0.017159, 0.130991, 0.064475, 0.000000, 0.000048, 0.000027}, ""},
    {"scale_adaptation=true", {0.021910, 0.148021, 0.055841, 0.000000, 0.000039, 0.000025}, ""},
};

constexpr const char* kPaperNote = "paper-reported, not reproduced";

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

nlohmann::ordered_json eval_json(const RegistrationEval& e) {
  nlohmann::ordered_json j = metrics_json(e.metrics);
  j["pairs"] = e.predictions.size();
  j["degenerate_pairs"] = e.degenerate;
  return j;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

std::string table(const std::vector<std::pair<std::string, std::vector<std::string>>>& rows,
                  const std::string& first_header) {
  std::vector<std::string> header{first_header};
  for (const char* c : reg::RegistrationMetrics::kColumns) header.emplace_back(c);
  std::size_t w0 = first_header.size();
  for (const auto& r : rows) w0 = std::max(w0, r.first.size());
  std::string out = pad(header[0], w0 + 2);
  for (std::size_t c = 1; c < header.size(); ++c) out += pad(header[c], 14);
  out += "\n";
  for (const auto& [name, values] : rows) {
    out += pad(name, w0 + 2);
    for (const auto& v : values) out += pad(v, 14);
    out += "\n";
  }
  return out;
}

std::vector<std::string> metric_cells(const nlohmann::ordered_json& m) {
  std::vector<std::string> cells;
  for (const char* c : reg::RegistrationMetrics::kColumns) cells.push_back(fixed(m.at(c).get<double>()));
  return cells;
}

}  // namespace

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-1 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

nlohmann::ordered_json metrics_json(const reg::RegistrationMetrics& m) {
  nlohmann::ordered_json j;
  const auto v = m.values();
  for (std::size_t c = 0; c < v.size(); ++c) j[reg::RegistrationMetrics::kColumns[c]] = v[c];
  return j;
}

std::string metrics_csv(const reg::RegistrationMetrics& m) {
  std::string out;
  for (std::size_t c = 0; c < 6; ++c) out += std::string(c ? "," : "") + reg::RegistrationMetrics::kColumns[c];
  out += "\n";
  const auto v = m.values();
  for (std::size_t c = 0; c < 6; ++c) out += (c ? "," : "") + format_number(v[c]);
  return out + "\n";
}

nlohmann::ordered_json report_json(const RunState* run, const std::vector<BenchRow>* bench,
                                   const ExperimentConfig& config, const std::string& command,
                                   const std::string& checkpoint_sha1) {
  nlohmann::ordered_json j;
  j["format"] = "cgcn-report";
  j["version"] = 1;
  j["command"] = command;
  j["config"] = config.echo();
  if (run) {
    j["epoch_losses"] = run->epoch_losses;
    if (run->result) {
      nlohmann::ordered_json reg;
      reg["model"] = eval_json(*run->result);
      if (run->baseline) reg["untrained"] = eval_json(*run->baseline);
      if (run->icp) reg["icp"] = eval_json(*run->icp);
      j["registration"] = reg;
    }
    if (run->accuracy_aligned) {
      nlohmann::ordered_json cls;
      cls["overall_accuracy_aligned"] = *run->accuracy_aligned;
      if (run->accuracy_rotated) {
        cls["overall_accuracy_rotated"] = *run->accuracy_rotated;
        cls["rotation_drop"] = *run->accuracy_aligned - *run->accuracy_rotated;
      }
      if (run->baseline_accuracy) cls["untrained_accuracy"] = *run->baseline_accuracy;
      j["classification"] = cls;
    }
    j["degenerate_gradients"] = run->degenerate_gradients;
    j["skipped_samples"] = run->skipped_pairs;
  }
  if (bench) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : *bench) {
      rows.push_back({{"perturbation", r.perturbation},
                      {"parameter", r.parameter},
                      {"max_deviation", r.max_deviation},
                      {"rms_deviation", r.rms_deviation},
                      {"compared", r.compared}});
    }
    j["invariance"] = rows;
  }
  if (!checkpoint_sha1.empty()) j["checkpoint_sha1"] = checkpoint_sha1;

  nlohmann::ordered_json ref;
  ref["note"] = kPaperNote;
  for (const auto& r : kTableOne) {
    nlohmann::ordered_json row;
    row["method"] = r.method;
    for (std::size_t c = 0; c < 6; ++c) row[reg::RegistrationMetrics::kColumns[c]] = r.values[c];
    row["categories"] = r.categories;
    ref["registration"].push_back(row);
  }
  for (const auto& r : kAblation) {
    nlohmann::ordered_json row;
    row["setting"] = r.method;
    for (std::size_t c = 0; c < 6; ++c) row[reg::RegistrationMetrics::kColumns[c]] = r.values[c];
    ref["ablation"].push_back(row);
  }
  ref["classification_overall_accuracy"] = 92.2;
  j["paper_reference"] = ref;
  return j;
}

std::string render_summary(const nlohmann::ordered_json& report) {
  std::ostringstream os;
  os << "command: " << report.value("command", "") << "\n";
  const auto& cfg = report.at("config");
  if (cfg.contains("model")) {
    const auto& m = cfg.at("model");
    os << "settings: conv=" << m.value("conv", "") << " knn=" << cfg.at("kernel").value("knn", "")
       << " global_context=" << m.value("global_context", "") << " scale_adaptation=" << m.value("scale_adaptation", "")
       << " seed=" << cfg.value("seed", "") << "\n";
  }
  if (report.contains("epoch_losses")) {
    os << "\nepoch losses:\n";
    std::size_t e = 0;
    for (const auto& l : report.at("epoch_losses")) os << "  " << e++ << "  " << format_number(l.get<double>()) << "\n";
  }
  if (report.contains("registration")) {
    const auto& r = report.at("registration");
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    if (r.contains("icp")) rows.push_back({"ICP (identity init)", metric_cells(r.at("icp"))});
    if (r.contains("untrained")) rows.push_back({"untrained model", metric_cells(r.at("untrained"))});
    rows.push_back({"model", metric_cells(r.at("model"))});
    os << "\nregistration, held-out families:\n" << table(rows, "Method");
  }
  if (report.contains("classification")) {
    const auto& c = report.at("classification");
    os << "\nclassification overall accuracy:\n";
    for (const auto& [k, v] : c.items()) os << "  " << pad(k, 26) << fixed(v.get<double>(), 4) << "\n";
  }
  if (report.contains("invariance")) {
    os << "\ninvariance bench (descriptor deviation):\n";
    os << "  " << pad("perturbation", 28) << pad("parameter", 24) << pad("max", 24) << "rms\n";
    for (const auto& r : report.at("invariance")) {
      os << "  " << pad(r.at("perturbation").get<std::string>(), 28) << pad(format_number(r.at("parameter").get<double>()), 24)
         << pad(format_number(r.at("max_deviation").get<double>()), 24) << format_number(r.at("rms_deviation").get<double>()) << "\n";
    }
  }
  if (report.contains("checkpoint_sha1")) os << "\ncheckpoint sha1: " << report.at("checkpoint_sha1").get<std::string>() << "\n";
  if (report.contains("paper_reference")) {
    const auto& ref = report.at("paper_reference");
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
    for (const auto& r : ref.at("registration")) {
      rows.push_back({r.at("method").get<std::string>() + " (C=" + r.at("categories").get<std::string>() + ")",
                      metric_cells(r)});
    }
    os << "\nModelNet40 registration, " << ref.at("note").get<std::string>() << ":\n" << table(rows, "Method");
    rows.clear();
    for (const auto& r : ref.at("ablation")) rows.push_back({r.at("setting").get<std::string>(), metric_cells(r)});
    os << "\nablation study, " << ref.at("note").get<std::string>() << ":\n" << table(rows, "Setting");
  }
  return os.str();
}

void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("failed writing " + path);
}

void emit_report(const nlohmann::ordered_json& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir);
  const std::filesystem::path d(dir);
  write_text_file((d / "report.json").string(), report.dump(2) + "\n");
  write_text_file((d / "summary.txt").string(), render_summary(report));

  if (report.contains("registration")) {
    const auto& r = report.at("registration");
    reg::RegistrationMetrics m;
    const auto& model = r.at("model");
    m.r_mse = model.at("R-MSE");
    m.r_rmse = model.at("R-RMSE");
    m.r_mae = model.at("R-MAE");
    m.t_mse = model.at("T-MSE");
    m.t_rmse = model.at("T-RMSE");
    m.t_mae = model.at("T-MAE");
    write_text_file((d / "metrics.csv").string(), metrics_csv(m));

    std::string methods = "method";
    for (const char* c : reg::RegistrationMetrics::kColumns) methods += std::string(",") + c;
    methods += "\n";
    for (const char* name : {"model", "untrained", "icp"}) {
      if (!r.contains(name)) continue;
      methods += name;
      for (const char* c : reg::RegistrationMetrics::kColumns) methods += "," + format_number(r.at(name).at(c).get<double>());
      methods += "\n";
    }
    write_text_file((d / "methods.csv").string(), methods);
  }
  if (report.contains("epoch_losses")) {
    std::string losses = "epoch,loss\n";
    std::size_t e = 0;
    for (const auto& l : report.at("epoch_losses")) losses += std::to_string(e++) + "," + format_number(l.get<double>()) + "\n";
    write_text_file((d / "losses.csv").string(), losses);
  }
  if (report.contains("invariance")) {
    std::vector<BenchRow> rows;
    for (const auto& r : report.at("invariance")) {
      rows.push_back({r.at("perturbation"), r.at("parameter"), r.at("max_deviation"), r.at("rms_deviation"),
                      r.at("compared")});
    }
    write_text_file((d / "bench.csv").string(), bench_csv(rows));
  }
}

nlohmann::ordered_json load_report(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  try {
    auto j = nlohmann::ordered_json::parse(f);
    if (j.value("format", "") != "cgcn-report") throw FormatError(path + " is not a cgcn report");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace cgcn
