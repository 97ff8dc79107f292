#include "cgcn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cgcn/errors.hpp"

namespace cgcn::nn {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ParameterError(what);
}

bool broadcasts(const Tensor& a, const Tensor& b) { return b.rows == 1 && b.cols == a.cols && a.rows != 1; }

// Wider-vector clones of the hot kernels. Only element-wise products and sums
// are vectorized, so every clone gives the same bits. Exceptions do not
// propagate out of a clone, so cloned kernels must not throw.
#if defined(__x86_64__) && defined(__GNUC__) && !defined(__clang__)
#define CGCN_SIMD_CLONES __attribute__((target_clones("avx512f", "avx2", "default")))
#else
#define CGCN_SIMD_CLONES
#endif

// out row r += w_e * in row index_e over the entries of r, or the transpose
// (in row r scattered into out rows index_e).
CGCN_SIMD_CLONES void sparse_apply(const SparseRows& map, const double* in, double* out, std::size_t C,
                                   bool transpose) {
  for (std::size_t r = 0; r < map.rows(); ++r) {
    for (std::size_t e = map.offsets[r]; e < map.offsets[r + 1]; ++e) {
      const double w = map.weight[e];
      const double* __restrict s = transpose ? in + r * C : in + map.index[e] * C;
      double* __restrict o = transpose ? out + map.index[e] * C : out + r * C;
      for (std::size_t c = 0; c < C; ++c) o[c] += w * s[c];
    }
  }
}

}  // namespace

void matmul_into(const Tensor& a, const Tensor& b, Tensor& out) {
  require(a.cols == b.rows, "matmul: inner dimensions differ");
  out = Tensor(a.rows, b.cols);
  const std::size_t m = b.cols;
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* o = out.data.data() + i * m;
    const double* ar = a.data.data() + i * a.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double s = ar[k];
      if (s == 0.0) continue;
      const double* br = b.data.data() + k * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += s * br[j];
    }
  }
}

Var Graph::push(Tensor value, bool requires_grad, BackwardFn fn) {
  if (nodes_.size() >= UINT32_MAX - 1) throw NumericalError("graph too large");
  nodes_.push_back({std::move(value), Tensor{}, requires_grad, requires_grad ? std::move(fn) : BackwardFn{}});
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

bool Graph::any_requires(std::initializer_list<Var> vs) const {
  for (auto v : vs) {
    if (nodes_[v.id].requires_grad) return true;
  }
  return false;
}

Var Graph::constant(Tensor value) { return push(std::move(value), false, {}); }
Var Graph::variable(Tensor value) { return push(std::move(value), true, {}); }

Tensor& Graph::grad_of(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_of(v.id); }

void Graph::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  auto& dst = grad_of(v.id);
  for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
}

void Graph::backward(Var out) {
  require(value(out).size() == 1, "backward needs a scalar output");
  for (auto& n : nodes_) n.grad = Tensor{};
  grad_of(out.id).data[0] = 1.0;
  for (std::uint32_t id = out.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, id);
  }
}

Var Graph::custom(Tensor value, std::vector<Var> inputs, BackwardFn backward_fn) {
  bool req = false;
  for (auto v : inputs) req = req || nodes_[v.id].requires_grad;
  return push(std::move(value), req, std::move(backward_fn));
}

Var Graph::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const bool bc = broadcasts(A, B);
  require(bc || A.same_shape(B), "add: shape mismatch");
  Tensor out = A;
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += bc ? B(0, c) : B(r, c);
  }
  return push(std::move(out), any_requires({a, b}), [a, b, bc](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    g.accumulate(a, G);
    if (!g.needs(b)) return;
    if (!bc) {
      g.accumulate(b, G);
      return;
    }
    Tensor db(1, G.cols);
    for (std::size_t r = 0; r < G.rows; ++r) {
      for (std::size_t c = 0; c < G.cols; ++c) db(0, c) += G(r, c);
    }
    g.accumulate(b, db);
  });
}

Var Graph::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var Graph::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  const bool bc = broadcasts(A, B);
  require(bc || A.same_shape(B), "mul: shape mismatch");
  Tensor out = A;
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) *= bc ? B(0, c) : B(r, c);
  }
  return push(std::move(out), any_requires({a, b}), [a, b, bc](Graph& g, std::uint32_t self) {
    const Tensor G = g.grad_of(self);
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (g.needs(a)) {
      Tensor da(G.rows, G.cols);
      for (std::size_t r = 0; r < G.rows; ++r) {
        for (std::size_t c = 0; c < G.cols; ++c) da(r, c) = G(r, c) * (bc ? B(0, c) : B(r, c));
      }
      g.accumulate(a, da);
    }
    if (g.needs(b)) {
      Tensor db(B.rows, B.cols);
      for (std::size_t r = 0; r < G.rows; ++r) {
        for (std::size_t c = 0; c < G.cols; ++c) db(bc ? 0 : r, c) += G(r, c) * A(r, c);
      }
      g.accumulate(b, db);
    }
  });
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (auto& x : out.data) x *= s;
  return push(std::move(out), any_requires({a}), [a, s](Graph& g, std::uint32_t self) {
    Tensor d = g.grad_of(self);
    for (auto& x : d.data) x *= s;
    g.accumulate(a, d);
  });
}

Var Graph::maximum(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  require(A.same_shape(B), "maximum: shape mismatch");
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::max(A.data[i], B.data[i]);
  return push(std::move(out), any_requires({a, b}), [a, b](Graph& g, std::uint32_t self) {
    const Tensor G = g.grad_of(self);
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    Tensor da(G.rows, G.cols), db(G.rows, G.cols);
    // ties route the gradient to the first argument
    for (std::size_t i = 0; i < G.size(); ++i) (A.data[i] >= B.data[i] ? da : db).data[i] = G.data[i];
    g.accumulate(a, da);
    g.accumulate(b, db);
  });
}

Var Graph::relu(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data) x = x > 0.0 ? x : 0.0;
  return push(std::move(out), any_requires({a}), [a](Graph& g, std::uint32_t self) {
    Tensor d = g.grad_of(self);
    const Tensor& A = g.value(a);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!(A.data[i] > 0.0)) d.data[i] = 0.0;
    }
    g.accumulate(a, d);
  });
}

Var Graph::exp(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data) x = std::exp(x);
  return push(std::move(out), any_requires({a}), [a](Graph& g, std::uint32_t self) {
    Tensor d = g.grad_of(self);
    const Tensor& Y = g.value(Var{self});
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] *= Y.data[i];
    g.accumulate(a, d);
  });
}

Var Graph::log(Var a) {
  Tensor out = value(a);
  for (auto& x : out.data) x = std::log(x);
  return push(std::move(out), any_requires({a}), [a](Graph& g, std::uint32_t self) {
    Tensor d = g.grad_of(self);
    const Tensor& A = g.value(a);
    for (std::size_t i = 0; i < d.size(); ++i) d.data[i] /= A.data[i];
    g.accumulate(a, d);
  });
}

Var Graph::matmul(Var a, Var b) {
  Tensor out;
  matmul_into(value(a), value(b), out);
  return push(std::move(out), any_requires({a, b}), [a, b](Graph& g, std::uint32_t self) {
    const Tensor G = g.grad_of(self);
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (g.needs(a)) {
      Tensor da(A.rows, A.cols);
      for (std::size_t i = 0; i < A.rows; ++i) {
        const double* gr = G.data.data() + i * G.cols;
        for (std::size_t k = 0; k < A.cols; ++k) {
          const double* br = B.data.data() + k * B.cols;
          double s = 0.0;
          for (std::size_t j = 0; j < B.cols; ++j) s += gr[j] * br[j];
          da(i, k) = s;
        }
      }
      g.accumulate(a, da);
    }
    if (g.needs(b)) {
      Tensor db(B.rows, B.cols);
      for (std::size_t i = 0; i < A.rows; ++i) {
        const double* gr = G.data.data() + i * G.cols;
        for (std::size_t k = 0; k < A.cols; ++k) {
          const double s = A(i, k);
          if (s == 0.0) continue;
          double* dr = db.data.data() + k * db.cols;
          for (std::size_t j = 0; j < B.cols; ++j) dr[j] += s * gr[j];
        }
      }
      g.accumulate(b, db);
    }
  });
}

Var Graph::transpose(Var a) {
  const Tensor& A = value(a);
  Tensor out(A.cols, A.rows);
  for (std::size_t r = 0; r < A.rows; ++r) {
    for (std::size_t c = 0; c < A.cols; ++c) out(c, r) = A(r, c);
  }
  return push(std::move(out), any_requires({a}), [a](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    Tensor d(G.cols, G.rows);
    for (std::size_t r = 0; r < G.rows; ++r) {
      for (std::size_t c = 0; c < G.cols; ++c) d(c, r) = G(r, c);
    }
    g.accumulate(a, d);
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows;
  std::size_t cols = 0;
  bool req = false;
  for (auto p : parts) {
    require(value(p).rows == rows, "concat_cols: row mismatch");
    cols += value(p).cols;
    req = req || needs(p);
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (auto p : parts) {
    const Tensor& P = value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy(P.row(r).begin(), P.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    off += P.cols;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(out), req, [inputs](Graph& g, std::uint32_t self) {
    const Tensor G = g.grad_of(self);
    std::size_t off = 0;
    for (auto p : inputs) {
      const std::size_t c = g.value(p).cols;
      if (g.needs(p)) {
        Tensor d(G.rows, c);
        for (std::size_t r = 0; r < G.rows; ++r) {
          std::copy_n(G.row(r).begin() + static_cast<std::ptrdiff_t>(off), c, d.row(r).begin());
        }
        g.accumulate(p, d);
      }
      off += c;
    }
  });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = value(a);
  require(begin + count <= A.rows, "slice_rows: out of range");
  Tensor out(count, A.cols);
  std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(begin * A.cols), count * A.cols, out.data.begin());
  return push(std::move(out), any_requires({a}), [a, begin](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    Tensor& D = g.grad_of(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) D.data[begin * G.cols + i] += G.data[i];
  });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = value(a);
  require(begin + count <= A.cols, "slice_cols: out of range");
  Tensor out(A.rows, count);
  for (std::size_t r = 0; r < A.rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = A(r, begin + c);
  }
  return push(std::move(out), any_requires({a}), [a, begin](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    Tensor& D = g.grad_of(a.id);
    for (std::size_t r = 0; r < G.rows; ++r) {
      for (std::size_t c = 0; c < G.cols; ++c) D(r, begin + c) += G(r, c);
    }
  });
}

Var Graph::gather_rows(Var a, std::shared_ptr<const std::vector<std::uint32_t>> index) {
  const Tensor& A = value(a);
  Tensor out(index->size(), A.cols);
  for (std::size_t r = 0; r < index->size(); ++r) {
    require((*index)[r] < A.rows, "gather_rows: index out of range");
    std::copy(A.row((*index)[r]).begin(), A.row((*index)[r]).end(), out.row(r).begin());
  }
  return push(std::move(out), any_requires({a}), [a, index](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    Tensor& D = g.grad_of(a.id);
    for (std::size_t r = 0; r < index->size(); ++r) {
      double* d = D.data.data() + (*index)[r] * G.cols;
      const double* s = G.data.data() + r * G.cols;
      for (std::size_t c = 0; c < G.cols; ++c) d[c] += s[c];
    }
  });
}

Var Graph::sparse_rows(Var a, std::shared_ptr<const SparseRows> map) {
  const Tensor& A = value(a);
  require(map->input_rows == A.rows, "sparse_rows: input row count mismatch");
  Tensor out(map->rows(), A.cols);
  const std::size_t C = A.cols;
  sparse_apply(*map, A.data.data(), out.data.data(), C, false);
  return push(std::move(out), any_requires({a}), [a, map](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    Tensor& D = g.grad_of(a.id);
    sparse_apply(*map, G.data.data(), D.data.data(), G.cols, true);
  });
}

Var Graph::segment_sum(Var a, std::size_t group) {
  const Tensor& A = value(a);
  require(group > 0 && A.rows % group == 0, "segment_sum: rows not divisible by group");
  Tensor out(A.rows / group, A.cols);
  for (std::size_t r = 0; r < A.rows; ++r) {
    double* o = out.data.data() + (r / group) * A.cols;
    const double* s = A.data.data() + r * A.cols;
    for (std::size_t c = 0; c < A.cols; ++c) o[c] += s[c];
  }
  return push(std::move(out), any_requires({a}), [a, group](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    Tensor& D = g.grad_of(a.id);
    for (std::size_t r = 0; r < D.rows; ++r) {
      for (std::size_t c = 0; c < D.cols; ++c) D(r, c) += G(r / group, c);
    }
  });
}

Var Graph::segment_mean(Var a, std::size_t group) {
  return scale(segment_sum(a, group), 1.0 / static_cast<double>(group));
}

Var Graph::segment_max(Var a, std::size_t group) {
  const Tensor& A = value(a);
  require(group > 0 && A.rows % group == 0, "segment_max: rows not divisible by group");
  const std::size_t segs = A.rows / group;
  Tensor out(segs, A.cols, -std::numeric_limits<double>::infinity());
  auto arg = std::make_shared<std::vector<std::uint32_t>>(segs * A.cols, 0);
  for (std::size_t r = 0; r < A.rows; ++r) {
    const std::size_t s = r / group;
    for (std::size_t c = 0; c < A.cols; ++c) {
      if (A(r, c) > out(s, c)) {
        out(s, c) = A(r, c);
        (*arg)[s * A.cols + c] = static_cast<std::uint32_t>(r);
      }
    }
  }
  return push(std::move(out), any_requires({a}), [a, arg](Graph& g, std::uint32_t self) {
    const Tensor& G = g.grad_of(self);
    Tensor& D = g.grad_of(a.id);
    for (std::size_t s = 0; s < G.rows; ++s) {
      for (std::size_t c = 0; c < G.cols; ++c) D((*arg)[s * G.cols + c], c) += G(s, c);
    }
  });
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (double x : value(a).data) s += x;
  return push(Tensor::scalar(s), any_requires({a}), [a](Graph& g, std::uint32_t self) {
    const double G = g.grad_of(self).data[0];
    Tensor& D = g.grad_of(a.id);
    for (auto& x : D.data) x += G;
  });
}

Var Graph::mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).size())); }

Var Graph::softmax_rows(Var a) {
  Tensor out = value(a);
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto row = out.row(r);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& x : row) {
      x = std::exp(x - top);
      total += x;
    }
    for (auto& x : row) x /= total;
  }
  return push(std::move(out), any_requires({a}), [a](Graph& g, std::uint32_t self) {
    const Tensor& Y = g.value(Var{self});
    Tensor d = g.grad_of(self);
    for (std::size_t r = 0; r < d.rows; ++r) {
      double dotp = 0.0;
      for (std::size_t c = 0; c < d.cols; ++c) dotp += d(r, c) * Y(r, c);
      for (std::size_t c = 0; c < d.cols; ++c) d(r, c) = Y(r, c) * (d(r, c) - dotp);
    }
    g.accumulate(a, d);
  });
}

Var Graph::log_softmax_rows(Var a) {
  Tensor out = value(a);
  for (std::size_t r = 0; r < out.rows; ++r) {
    auto row = out.row(r);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double x : row) total += std::exp(x - top);
    const double lse = top + std::log(total);
    for (auto& x : row) x -= lse;
  }
  return push(std::move(out), any_requires({a}), [a](Graph& g, std::uint32_t self) {
    const Tensor& Y = g.value(Var{self});
    Tensor d = g.grad_of(self);
    for (std::size_t r = 0; r < d.rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < d.cols; ++c) total += d(r, c);
      for (std::size_t c = 0; c < d.cols; ++c) d(r, c) -= std::exp(Y(r, c)) * total;
    }
    g.accumulate(a, d);
  });
}

namespace {

// Source row of tap (dl, dp) for output row r.
inline std::size_t ring_source(std::size_t r, int dl, int dp, const RingConvShape& s) {
  const std::size_t P = s.positions, L = s.layers;
  const std::size_t p = r % P;
  const std::size_t l = (r / P) % L;
  const std::size_t block = r / (P * L);
  const long ls = std::clamp<long>(static_cast<long>(l) + dl, 0, static_cast<long>(L) - 1);
  const std::size_t ps = (p + P - 1 + static_cast<std::size_t>(dp + 1)) % P;
  return (block * L + static_cast<std::size_t>(ls)) * P + ps;
}

}  // namespace

namespace {

constexpr std::size_t kRingBlock = 8;

// Row blocks share each weight row while it is in cache; every output still
// sums its taps dl, dp, then channel, in order.
CGCN_SIMD_CLONES void ring_forward(const double* X, const double* W, double* out, std::size_t rows,
                                   std::size_t cin, std::size_t cout, RingConvShape shape) {
  const double* xs[kRingBlock];
  for (std::size_t r0 = 0; r0 < rows; r0 += kRingBlock) {
    const std::size_t nb = std::min(kRingBlock, rows - r0);
    for (std::size_t tap = 0; tap < 9; ++tap) {
      const int dl = static_cast<int>(tap / 3) - 1, dp = static_cast<int>(tap % 3) - 1;
      for (std::size_t b = 0; b < nb; ++b) xs[b] = X + ring_source(r0 + b, dl, dp, shape) * cin;
      const double* wt = W + tap * cin * cout;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* __restrict wr = wt + c * cout;
        for (std::size_t b = 0; b < nb; ++b) {
          const double s = xs[b][c];
          double* __restrict o = out + (r0 + b) * cout;
          for (std::size_t j = 0; j < cout; ++j) o[j] += s * wr[j];
        }
      }
    }
  }
}

CGCN_SIMD_CLONES void ring_backward_x(const double* G, const double* W, double* dx, std::size_t rows,
                                      std::size_t cin, std::size_t cout, RingConvShape shape) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* __restrict gr = G + r * cout;
    for (std::size_t tap = 0; tap < 9; ++tap) {
      const int dl = static_cast<int>(tap / 3) - 1, dp = static_cast<int>(tap % 3) - 1;
      double* d = dx + ring_source(r, dl, dp, shape) * cin;
      const double* wt = W + tap * cin * cout;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* __restrict wr = wt + c * cout;
        double acc = 0.0;
        for (std::size_t j = 0; j < cout; ++j) acc += gr[j] * wr[j];
        d[c] += acc;
      }
    }
  }
}

// Each weight gradient entry sums its rows in ascending order.
CGCN_SIMD_CLONES void ring_backward_w(const double* G, const double* X, double* dw, std::size_t rows,
                                      std::size_t cin, std::size_t cout, RingConvShape shape) {
  const double* xs[kRingBlock];
  for (std::size_t r0 = 0; r0 < rows; r0 += kRingBlock) {
    const std::size_t nb = std::min(kRingBlock, rows - r0);
    for (std::size_t tap = 0; tap < 9; ++tap) {
      const int dl = static_cast<int>(tap / 3) - 1, dp = static_cast<int>(tap % 3) - 1;
      for (std::size_t b = 0; b < nb; ++b) xs[b] = X + ring_source(r0 + b, dl, dp, shape) * cin;
      for (std::size_t c = 0; c < cin; ++c) {
        double* __restrict dr = dw + (tap * cin + c) * cout;
        for (std::size_t b = 0; b < nb; ++b) {
          const double v = xs[b][c];
          const double* __restrict gr = G + (r0 + b) * cout;
          for (std::size_t j = 0; j < cout; ++j) dr[j] += v * gr[j];
        }
      }
    }
  }
}

}  // namespace

Var Graph::ring_conv(Var x, Var w, RingConvShape shape) {
  const Tensor& X = value(x);
  const Tensor& W = value(w);
  if (shape.positions < 3) throw ParameterError("ring convolution needs at least 3 positions");
  require(shape.layers >= 1 && X.rows % (shape.layers * shape.positions) == 0, "ring_conv: rows do not match shape");
  require(W.rows == 9 * X.cols, "ring_conv: weight must have 9*C_in rows");
  const std::size_t cin = X.cols, cout = W.cols;
  Tensor out(X.rows, cout);
  ring_forward(X.data.data(), W.data.data(), out.data.data(), X.rows, cin, cout, shape);
  return push(std::move(out), any_requires({x, w}), [x, w, shape](Graph& g, std::uint32_t self) {
    const Tensor G = g.grad_of(self);
    const Tensor& X = g.value(x);
    const Tensor& W = g.value(w);
    const std::size_t cin = X.cols, cout = W.cols;
    if (g.needs(x)) {
      Tensor dx(X.rows, cin);
      ring_backward_x(G.data.data(), W.data.data(), dx.data.data(), X.rows, cin, cout, shape);
      g.accumulate(x, dx);
    }
    if (g.needs(w)) {
      Tensor dw(W.rows, cout);
      ring_backward_w(G.data.data(), X.data.data(), dw.data.data(), X.rows, cin, cout, shape);
      g.accumulate(w, dw);
    }
  });
}

}  // namespace cgcn::nn
