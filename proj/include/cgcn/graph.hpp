#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cgcn/tensor.hpp"

namespace cgcn::nn {

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Row-wise weighted gather: out[r] = Σ_e weight[e] · in[index[e]] over e in [offsets[r], offsets[r+1]).
/// Entries are summed in stored order.
struct SparseRows {
  std::size_t input_rows = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> index;
  std::vector<double> weight;

  std::size_t rows() const { return offsets.size() - 1; }
  void add_row() { offsets.push_back(index.size()); }
  void add(std::uint32_t i, double w) {
    index.push_back(i);
    weight.push_back(w);
  }
};

/// 2-D circular convolution geometry: rows of the input are laid out as
/// (block, layer, position); positions wrap, layers replicate at the border.
struct RingConvShape {
  std::size_t layers = 2;
  std::size_t positions = 6;
};

/// Append-only reverse-mode tape over dense tensors.
///
/// Nodes are created by the primitive methods; `backward` seeds a 1x1 node
/// with gradient 1 and walks the tape in reverse. A node needs a gradient iff
/// one of its inputs does, so constant subgraphs cost nothing in backward.
/// Single-threaded by contract.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::uint32_t self)>;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward pass (zeros if the node was not reached).
  const Tensor& grad(Var v);
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var scalar);

  // Elementwise; `b` may also be a 1 x cols row broadcast over the rows of `a`.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var maximum(Var a, Var b);
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  Var gather_rows(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index);
  Var sparse_rows(Var a, std::shared_ptr<const SparseRows> map);

  /// Reductions over consecutive groups of `group` rows -> (rows/group) x cols.
  Var segment_sum(Var a, std::size_t group);
  Var segment_mean(Var a, std::size_t group);
  Var segment_max(Var a, std::size_t group);
  Var sum(Var a);   // 1x1
  Var mean(Var a);  // 1x1

  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);

  /// Circular 3x3 convolution; `w` is (9·C_in) x C_out with tap (dl+1)*3 + (dp+1).
  Var ring_conv(Var x, Var w, RingConvShape shape);

  /// Escape hatch for fused operations: `backward_fn` reads the node's gradient
  /// via `grad_of(self)` and accumulates into inputs with `accumulate`.
  Var custom(Tensor value, std::vector<Var> inputs, BackwardFn backward_fn);

  Tensor& grad_of(std::uint32_t id);
  void accumulate(Var v, const Tensor& g);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn);
  bool any_requires(std::initializer_list<Var> vs) const;

  std::vector<Node> nodes_;
};

/// Dense product into `out` (overwritten): out = a·b. Fixed summation order per element.
void matmul_into(const Tensor& a, const Tensor& b, Tensor& out);

}  // namespace cgcn::nn
