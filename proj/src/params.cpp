#include "cgcn/params.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cgcn/errors.hpp"

namespace cgcn::nn {

Tensor& ParamStore::create(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Tensor t(rows, cols);
  for (auto& x : t.data) x = rng.uniform(-bound, bound);
  return tensors_[name] = std::move(t);
}

Tensor& ParamStore::create_zero(const std::string& name, std::size_t rows, std::size_t cols) {
  return tensors_[name] = Tensor(rows, cols);
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

bool ParamStore::operator==(const ParamStore& o) const {
  if (tensors_.size() != o.tensors_.size()) return false;
  for (const auto& [name, t] : tensors_) {
    auto it = o.tensors_.find(name);
    if (it == o.tensors_.end() || !t.same_shape(it->second)) return false;
    if (std::memcmp(t.data.data(), it->second.data.data(), t.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

Var Parameters::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Var v = trainable_ ? graph_.variable(store_.at(name)) : graph_.constant(store_.at(name));
  bound_.emplace(name, v);
  return v;
}

Gradients Parameters::gradients() const {
  Gradients out;
  for (const auto& [name, v] : bound_) out.emplace(name, graph_.grad(v));
  return out;
}

void accumulate(Gradients& acc, const Gradients& g, double factor) {
  for (const auto& [name, t] : g) {
    auto it = acc.find(name);
    if (it == acc.end()) it = acc.emplace(name, Tensor(t.rows, t.cols)).first;
    for (std::size_t i = 0; i < t.size(); ++i) it->second.data[i] += factor * t.data[i];
  }
}

void SgdMomentum::step(ParamStore& params, const Gradients& grads) {
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, Tensor(g.rows, g.cols)).first;
    Tensor& v = it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v.data[i] = momentum_ * v.data[i] + g.data[i];
      p.data[i] -= lr_ * v.data[i];
    }
  }
}

namespace {

std::string to_hex(const std::vector<double>& values) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(values.size() * 16);
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {  // little-endian byte order
      const auto byte = static_cast<unsigned>((bits >> (8 * b)) & 0xffu);
      out += digits[byte >> 4];
      out += digits[byte & 0xf];
    }
  }
  return out;
}

std::vector<double> from_hex(const std::string& hex, std::size_t count) {
  if (hex.size() != count * 16) throw FormatError("checkpoint payload length does not match shape");
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<unsigned>(c - 'A' + 10);
    throw FormatError("invalid hex digit in checkpoint");
  };
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      const std::size_t at = i * 16 + static_cast<std::size_t>(b) * 2;
      const std::uint64_t byte = (nibble(hex[at]) << 4) | nibble(hex[at + 1]);
      bits |= byte << (8 * b);
    }
    std::memcpy(&out[i], &bits, sizeof bits);
  }
  return out;
}

}  // namespace

std::string serialize_checkpoint(const ParamStore& params, const std::string& metadata_json) {
  nlohmann::ordered_json doc;
  doc["format"] = "cgcn-checkpoint";
  doc["version"] = 1;
  doc["metadata"] = nlohmann::ordered_json::parse(metadata_json);
  auto& tensors = doc["tensors"] = nlohmann::ordered_json::array();
  for (const auto& [name, t] : params.tensors()) {
    tensors.push_back({{"name", name}, {"shape", {t.rows, t.cols}}, {"dtype", "f64le"}, {"data", to_hex(t.data)}});
  }
  return doc.dump(1) + "\n";
}

Checkpoint parse_checkpoint(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (doc.value("format", "") != "cgcn-checkpoint") throw FormatError("not a cgcn checkpoint");
  if (doc.value("version", 0) != 1) throw FormatError("unsupported checkpoint version");
  Checkpoint ck;
  ck.metadata_json = doc.contains("metadata") ? doc["metadata"].dump() : "{}";
  for (const auto& entry : doc.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto rows = entry.at("shape").at(0).get<std::size_t>();
    const auto cols = entry.at("shape").at(1).get<std::size_t>();
    if (entry.value("dtype", "f64le") != "f64le") throw FormatError("unsupported tensor dtype");
    ck.params.create_zero(name, rows, cols).data = from_hex(entry.at("data").get<std::string>(), rows * cols);
  }
  return ck;
}

void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& metadata_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out << serialize_checkpoint(params, metadata_json);
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace cgcn::nn
