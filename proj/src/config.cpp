#include "cgcn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

#include "cgcn/dataset.hpp"
#include "cgcn/errors.hpp"

namespace cgcn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// A raw value with its position, for error messages.
struct Raw {
  std::string key;
  std::string text;
  std::size_t line;

  [[noreturn]] void fail(const std::string& expected) const {
    throw ConfigError("key '" + key + "' expects " + expected + ", got " + text, line);
  }
};

bool is_quoted(const std::string& s) { return s.size() >= 2 && s.front() == '"' && s.back() == '"'; }

std::vector<std::string> split_list(const Raw& raw) {
  std::vector<std::string> items;
  std::string cur;
  int depth = 0;
  bool in_quote = false;
  for (char c : raw.text) {
    if (c == '"') in_quote = !in_quote;
    if (!in_quote && c == '(') ++depth;
    if (!in_quote && c == ')') --depth;
    if (!in_quote && depth == 0 && c == ',') {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  items.push_back(trim(cur));
  if (items.size() == 1 && items[0].empty()) return {};
  for (const auto& it : items) {
    if (it.empty()) raw.fail("a comma-separated list without empty items");
  }
  return items;
}

std::uint64_t as_uint(const Raw& raw, const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) raw.fail("an unsigned integer");
  return v;
}

int as_int(const Raw& raw, const std::string& s) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) raw.fail("an integer");
  return v;
}

double as_double(const Raw& raw, const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) raw.fail("a number");
  return v;
}

bool as_bool(const Raw& raw) {
  if (raw.text == "true") return true;
  if (raw.text == "false") return false;
  raw.fail("true or false");
}

std::string as_string(const Raw& raw) {
  if (is_quoted(raw.text)) return raw.text.substr(1, raw.text.size() - 2);
  return raw.text;
}

template <typename E>
E as_enum(const Raw& raw, std::initializer_list<std::pair<const char*, E>> choices) {
  const std::string word = as_string(raw);
  std::string names;
  for (const auto& [name, value] : choices) {
    if (word == name) return value;
    names += names.empty() ? name : std::string(" | ") + name;
  }
  raw.fail(names);
}

std::vector<ShapeSpec> as_shapes(const Raw& raw) {
  std::vector<ShapeSpec> out;
  for (const auto& item : split_list(raw)) {
    try {
      out.push_back(ShapeSpec::parse(item));
    } catch (const Error&) {
      raw.fail("a list of shape names");
    }
  }
  return out;
}

std::string join_shapes(const std::vector<ShapeSpec>& shapes) {
  std::string s;
  for (const auto& sh : shapes) s += (s.empty() ? "" : ", ") + sh.name();
  return s;
}

template <typename T>
std::string join_numbers(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_number(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

std::string str(const std::string& s) { return "\"" + s + "\""; }

struct Key {
  const char* section;
  const char* name;
  std::function<void(ExperimentConfig&, const Raw&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

using nn::ConvMode;
using nn::ScaleMode;

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"", "task",
       [](ExperimentConfig& c, const Raw& r) {
         c.task = as_enum<Task>(r, {{"register", Task::kRegister},
                                    {"classify", Task::kClassify},
                                    {"extract", Task::kExtract},
                                    {"bench", Task::kBench}});
       },
       [](const ExperimentConfig& c) { return task_name(c.task); }},
      {"", "seed", [](ExperimentConfig& c, const Raw& r) { c.seed = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      {"", "out", [](ExperimentConfig& c, const Raw& r) { c.out = as_string(r); },
       [](const ExperimentConfig& c) { return str(c.out); }},

      {"data", "train_shapes", [](ExperimentConfig& c, const Raw& r) { c.data.train_shapes = as_shapes(r); },
       [](const ExperimentConfig& c) { return join_shapes(c.data.train_shapes); }},
      {"data", "test_shapes", [](ExperimentConfig& c, const Raw& r) { c.data.test_shapes = as_shapes(r); },
       [](const ExperimentConfig& c) { return join_shapes(c.data.test_shapes); }},
      {"data", "points", [](ExperimentConfig& c, const Raw& r) { c.data.points = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.data.points); }},
      {"data", "noise", [](ExperimentConfig& c, const Raw& r) { c.data.noise = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.data.noise); }},
      {"data", "train_count", [](ExperimentConfig& c, const Raw& r) { c.data.train_count = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.data.train_count); }},
      {"data", "test_count", [](ExperimentConfig& c, const Raw& r) { c.data.test_count = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.data.test_count); }},
      {"data", "train_files", [](ExperimentConfig& c, const Raw& r) { c.data.train_files = as_string(r); },
       [](const ExperimentConfig& c) { return str(c.data.train_files); }},
      {"data", "test_files", [](ExperimentConfig& c, const Raw& r) { c.data.test_files = as_string(r); },
       [](const ExperimentConfig& c) { return str(c.data.test_files); }},
      {"data", "normals",
       [](ExperimentConfig& c, const Raw& r) {
         c.data.normals =
             as_enum<NormalSource>(r, {{"source", NormalSource::kSource}, {"estimated", NormalSource::kEstimated}});
       },
       [](const ExperimentConfig& c) {
         return std::string(c.data.normals == NormalSource::kSource ? "source" : "estimated");
       }},
      {"data", "normal_k", [](ExperimentConfig& c, const Raw& r) { c.data.normal_k = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.data.normal_k); }},

      {"kernel", "K", [](ExperimentConfig& c, const Raw& r) { c.model.K = as_int(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.model.K); }},
      {"kernel", "sigma", [](ExperimentConfig& c, const Raw& r) { c.model.sigma = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.model.sigma); }},
      {"kernel", "scales",
       [](ExperimentConfig& c, const Raw& r) {
         c.model.scales.clear();
         for (const auto& item : split_list(r)) c.model.scales.push_back(as_double(r, item));
       },
       [](const ExperimentConfig& c) { return join_numbers(c.model.scales); }},
      {"kernel", "knn", [](ExperimentConfig& c, const Raw& r) { c.model.knn = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.model.knn); }},
      {"kernel", "bandwidth",
       [](ExperimentConfig& c, const Raw& r) {
         c.model.bandwidth =
             as_enum<BandwidthMode>(r, {{"kernel", BandwidthMode::kPerKernel}, {"global", BandwidthMode::kGlobal}});
       },
       [](const ExperimentConfig& c) {
         return std::string(c.model.bandwidth == BandwidthMode::kPerKernel ? "kernel" : "global");
       }},
      {"kernel", "azimuth",
       [](ExperimentConfig& c, const Raw& r) {
         c.model.azimuth = as_enum<AzimuthMode>(r, {{"local", AzimuthMode::kLocal}, {"world", AzimuthMode::kWorld}});
       },
       [](const ExperimentConfig& c) {
         return std::string(c.model.azimuth == AzimuthMode::kLocal ? "local" : "world");
       }},
      {"kernel", "azimuth_k", [](ExperimentConfig& c, const Raw& r) { c.model.azimuth_k = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.model.azimuth_k); }},

      {"model", "conv",
       [](ExperimentConfig& c, const Raw& r) {
         c.model.conv = as_enum<ConvMode>(r, {{"circular", ConvMode::kCircular}, {"channelwise", ConvMode::kChannelwise}});
       },
       [](const ExperimentConfig& c) {
         return std::string(c.model.conv == ConvMode::kCircular ? "circular" : "channelwise");
       }},
      {"model", "widths",
       [](ExperimentConfig& c, const Raw& r) {
         c.model.widths.clear();
         for (const auto& item : split_list(r)) c.model.widths.push_back(as_uint(r, item));
       },
       [](const ExperimentConfig& c) { return join_numbers(c.model.widths); }},
      {"model", "descriptor_dim",
       [](ExperimentConfig& c, const Raw& r) { c.model.descriptor_dim = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.model.descriptor_dim); }},
      {"model", "hidden", [](ExperimentConfig& c, const Raw& r) { c.model.hidden_layer = as_bool(r); },
       [](const ExperimentConfig& c) { return std::string(c.model.hidden_layer ? "true" : "false"); }},
      {"model", "global_context", [](ExperimentConfig& c, const Raw& r) { c.model.global_context = as_bool(r); },
       [](const ExperimentConfig& c) { return std::string(c.model.global_context ? "true" : "false"); }},
      {"model", "global_bandwidth",
       [](ExperimentConfig& c, const Raw& r) { c.model.global_bandwidth = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.model.global_bandwidth); }},
      {"model", "scale_adaptation",
       [](ExperimentConfig& c, const Raw& r) { c.model.scale_adaptation = as_bool(r); },
       [](const ExperimentConfig& c) { return std::string(c.model.scale_adaptation ? "true" : "false"); }},
      {"model", "scale_mode",
       [](ExperimentConfig& c, const Raw& r) {
         c.model.scale_mode =
             as_enum<ScaleMode>(r, {{"recompute", ScaleMode::kRecompute}, {"blend", ScaleMode::kBlend}});
       },
       [](const ExperimentConfig& c) {
         return std::string(c.model.scale_mode == ScaleMode::kRecompute ? "recompute" : "blend");
       }},
      {"model", "scale_hidden", [](ExperimentConfig& c, const Raw& r) { c.model.scale_hidden = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.model.scale_hidden); }},

      {"register", "max_angle", [](ExperimentConfig& c, const Raw& r) { c.reg.max_angle = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.reg.max_angle); }},
      {"register", "max_translation",
       [](ExperimentConfig& c, const Raw& r) { c.reg.max_translation = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.reg.max_translation); }},
      {"register", "temperature",
       [](ExperimentConfig& c, const Raw& r) { c.reg.temperature = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.reg.temperature); }},
      {"register", "icp_iterations",
       [](ExperimentConfig& c, const Raw& r) { c.reg.icp_iterations = as_int(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.reg.icp_iterations); }},
      {"register", "icp_tolerance",
       [](ExperimentConfig& c, const Raw& r) { c.reg.icp_tolerance = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.reg.icp_tolerance); }},

      {"train", "epochs", [](ExperimentConfig& c, const Raw& r) { c.train.epochs = as_int(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.train.epochs); }},
      {"train", "learning_rate",
       [](ExperimentConfig& c, const Raw& r) { c.train.learning_rate = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.train.learning_rate); }},
      {"train", "momentum", [](ExperimentConfig& c, const Raw& r) { c.train.momentum = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.train.momentum); }},
      {"train", "batch", [](ExperimentConfig& c, const Raw& r) { c.train.batch = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.train.batch); }},
      {"train", "clip", [](ExperimentConfig& c, const Raw& r) { c.train.clip = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.train.clip); }},

      {"classify", "classes", [](ExperimentConfig& c, const Raw& r) { c.classify.classes = as_shapes(r); },
       [](const ExperimentConfig& c) { return join_shapes(c.classify.classes); }},
      {"classify", "head_hidden",
       [](ExperimentConfig& c, const Raw& r) { c.classify.head_hidden = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.classify.head_hidden); }},
      {"classify", "cls_learning_rate",
       [](ExperimentConfig& c, const Raw& r) { c.classify.learning_rate = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.classify.learning_rate); }},
      {"classify", "train_per_class",
       [](ExperimentConfig& c, const Raw& r) { c.classify.train_per_class = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.classify.train_per_class); }},
      {"classify", "test_per_class",
       [](ExperimentConfig& c, const Raw& r) { c.classify.test_per_class = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.classify.test_per_class); }},
      {"classify", "test_rotation",
       [](ExperimentConfig& c, const Raw& r) { c.classify.test_rotation = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.classify.test_rotation); }},

      {"bench", "clouds", [](ExperimentConfig& c, const Raw& r) { c.bench.clouds = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.bench.clouds); }},
      {"bench", "bench_points", [](ExperimentConfig& c, const Raw& r) { c.bench.points = as_uint(r, r.text); },
       [](const ExperimentConfig& c) { return std::to_string(c.bench.points); }},
      {"bench", "scale", [](ExperimentConfig& c, const Raw& r) { c.bench.scale = as_double(r, r.text); },
       [](const ExperimentConfig& c) { return format_number(c.bench.scale); }},
      {"bench", "noise_levels",
       [](ExperimentConfig& c, const Raw& r) {
         c.bench.noise_levels.clear();
         for (const auto& item : split_list(r)) c.bench.noise_levels.push_back(as_double(r, item));
       },
       [](const ExperimentConfig& c) { return join_numbers(c.bench.noise_levels); }},
  };
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string strip_comment(const std::string& line) {
  bool in_quote = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_quote = !in_quote;
    if (line[i] == '#' && !in_quote) return line.substr(0, i);
  }
  return line;
}

std::string resolve(const std::string& pattern, const std::filesystem::path& base) {
  if (pattern.empty()) return pattern;
  const std::filesystem::path p(pattern);
  if (p.is_absolute() || base.empty()) return pattern;
  return (base / p).lexically_normal().string();
}

}  // namespace

std::string task_name(Task t) {
  switch (t) {
    case Task::kRegister: return "register";
    case Task::kClassify: return "classify";
    case Task::kExtract: return "extract";
    case Task::kBench: return "bench";
  }
  return "register";
}

ExperimentConfig::ExperimentConfig() {
  data.train_shapes = {ShapeSpec::parse("sphere"), ShapeSpec::parse("cube"), ShapeSpec::parse("torus")};
  data.test_shapes = {ShapeSpec::parse("cylinder"), ShapeSpec::parse("composite(sphere,cylinder)")};
  classify.classes = {ShapeSpec::parse("sphere"), ShapeSpec::parse("cube"), ShapeSpec::parse("cylinder"),
                      ShapeSpec::parse("torus")};
}

void ExperimentConfig::validate() const {
  try {
    model.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (data.points < 8) throw ConfigError("points must be at least 8");
  if (data.train_files.empty() && data.train_shapes.empty()) throw ConfigError("no training shapes");
  if (data.test_files.empty() && data.test_shapes.empty()) throw ConfigError("no test shapes");
  if (data.normal_k < 3) throw ConfigError("normal_k must be at least 3");
  if (!(data.noise >= 0.0)) throw ConfigError("noise must be non-negative");
  if (!(reg.max_angle >= 0.0 && reg.max_angle <= 180.0)) throw ConfigError("max_angle must lie in [0, 180]");
  if (!(reg.max_translation >= 0.0)) throw ConfigError("max_translation must be non-negative");
  if (!(reg.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (reg.icp_iterations < 1) throw ConfigError("icp_iterations must be positive");
  if (train.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(train.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(train.momentum >= 0.0 && train.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (train.batch < 1) throw ConfigError("batch must be at least 1");
  if (!(train.clip >= 0.0)) throw ConfigError("clip must be non-negative");
  std::set<std::string> names;
  for (const auto& s : classify.classes) names.insert(s.name());
  if (names.size() < 2 || names.size() != classify.classes.size()) {
    throw ConfigError("classification needs at least two distinct classes");
  }
  if (classify.head_hidden < 1) throw ConfigError("head_hidden must be positive");
  if (!(classify.learning_rate > 0.0)) throw ConfigError("cls_learning_rate must be positive");
  if (bench.points < 16) throw ConfigError("bench_points must be at least 16");
  if (!(bench.scale > 0.0)) throw ConfigError("bench scale must be positive");
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  std::string section;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError("malformed section header", line_no);
      section = trim(std::string_view(body).substr(1, body.size() - 2));
      const bool known = std::any_of(keys().begin(), keys().end(), [&](const Key& k) { return section == k.section; });
      if (!known || section.empty()) throw ConfigError("unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
    const std::string name = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    const Key* key = find_key(name);
    if (!key) throw ConfigError("unknown key '" + name + "'", line_no);
    if (!section.empty() && section != key->section) {
      throw ConfigError("key '" + name + "' does not belong to section [" + section + "]", line_no);
    }
    if (!seen.insert(name).second) throw ConfigError("duplicate key '" + name + "'", line_no);
    if (value.empty()) throw ConfigError("key '" + name + "' has no value", line_no);
    if (value.front() == '"' && (value.size() < 2 || value.back() != '"')) {
      throw ConfigError("unterminated string for key '" + name + "'", line_no);
    }
    key->set(c, Raw{name, value, line_no});
    if (name == "train_files" || name == "test_files") {
      std::string& pattern = name == "train_files" ? c.data.train_files : c.data.test_files;
      pattern = resolve(pattern, base_dir);
      if (!pattern.empty() && expand_glob(pattern).empty()) {
        throw ConfigError("no files match '" + pattern + "'", line_no);
      }
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string render_config(const ExperimentConfig& c) {
  std::string out;
  std::string section = "";
  for (const auto& k : keys()) {
    if (section != k.section) {
      section = k.section;
      out += "\n[" + section + "]\n";
    }
    const std::string v = k.get(c);
    if (v.empty() || v == "\"\"") continue;  // empty lists and strings keep their defaults
    out += std::string(k.name) + " = " + v + "\n";
  }
  return out;
}

nlohmann::ordered_json ExperimentConfig::echo() const {
  nlohmann::ordered_json j;
  for (const auto& k : keys()) {
    std::string v = k.get(*this);
    if (is_quoted(v)) v = v.substr(1, v.size() - 2);
    if (std::string(k.section).empty()) {
      j[k.name] = v;
    } else {
      j[k.section][k.name] = v;
    }
  }
  return j;
}

std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace cgcn
