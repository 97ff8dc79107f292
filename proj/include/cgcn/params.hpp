#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cgcn/graph.hpp"
#include "cgcn/rng.hpp"

namespace cgcn::nn {

/// Named trainable tensors, iterated in name order.
class ParamStore {
 public:
  /// Uniform in ±1/√fan_in. Replaces an existing entry of the same name.
  Tensor& create(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng);
  Tensor& create_zero(const std::string& name, std::size_t rows, std::size_t cols);

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  std::map<std::string, Tensor>& tensors() { return tensors_; }
  std::size_t parameter_count() const;

  bool operator==(const ParamStore& o) const;

 private:
  std::map<std::string, Tensor> tensors_;
};

using Gradients = std::map<std::string, Tensor>;

/// Binds a store into one Graph; each name becomes a single variable node.
class Parameters {
 public:
  /// `trainable = false` binds constants, for inference without a backward pass.
  Parameters(Graph& graph, const ParamStore& store, bool trainable = true)
      : graph_(graph), store_(store), trainable_(trainable) {}

  Var operator()(const std::string& name);
  /// Gradients of everything bound so far (after graph.backward).
  Gradients gradients() const;

 private:
  Graph& graph_;
  const ParamStore& store_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

/// acc += g, treating missing names as zero.
void accumulate(Gradients& acc, const Gradients& g, double factor = 1.0);

/// Stochastic gradient descent with heavy-ball momentum: v = μv + g; p -= lr·v.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}
  void step(ParamStore& params, const Gradients& grads);

 private:
  double lr_;
  double momentum_;
  std::map<std::string, Tensor> velocity_;
};

/// Structured-text checkpoint (JSON): tensor name -> shape + little-endian
/// IEEE-754 binary64 payload in lowercase hex. Round trip is bit-exact.
std::string serialize_checkpoint(const ParamStore& params, const std::string& metadata_json = "{}");

struct Checkpoint {
  ParamStore params;
  std::string metadata_json;
};
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const std::string& path, const ParamStore& params, const std::string& metadata_json = "{}");
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cgcn::nn
