#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cgcn/bench.hpp"
#include "cgcn/training.hpp"

namespace cgcn {

/// SHA-1 of "blob <size>\0" + content, lowercase hex (the id git gives a file).
std::string git_blob_sha1(std::string_view content);

/// "R-MSE,R-RMSE,R-MAE,T-MSE,T-RMSE,T-MAE" header and one row.
std::string metrics_csv(const reg::RegistrationMetrics& m);

nlohmann::ordered_json metrics_json(const reg::RegistrationMetrics& m);

/// Machine-readable report. Holds nothing time- or host-dependent, so equal
/// (config, seed) give byte-identical files.
nlohmann::ordered_json report_json(const RunState* run, const std::vector<BenchRow>* bench,
                                   const ExperimentConfig& config, const std::string& command,
                                   const std::string& checkpoint_sha1);

/// Plain-text tables in the paper's layouts, rendered from a report.
std::string render_summary(const nlohmann::ordered_json& report);

/// Writes report.json, summary.txt and the CSV tables that apply into `dir`:
/// metrics.csv, methods.csv, losses.csv, bench.csv.
void emit_report(const nlohmann::ordered_json& report, const std::string& dir);

nlohmann::ordered_json load_report(const std::string& path);

void write_text_file(const std::string& path, std::string_view content);

}  // namespace cgcn
