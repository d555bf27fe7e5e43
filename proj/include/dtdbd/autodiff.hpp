#pragma once

// Reverse-mode differentiation over dense Tensors.
//
// A Var is a handle to a node in an acyclic computation graph. Leaves are
// either named parameters (gradients are reported for them) or constants.
// Interior nodes record their parents and a closure that pushes the node's
// gradient into the parents. Nodes that do not depend on any parameter keep
// no parents, so constant subgraphs (frozen teachers) cost a forward pass only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dtdbd/tensor.hpp"

namespace dtdbd::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool grad_ready = false;
  bool requires_grad = false;
  const char* op = "const";
  std::string param;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (!grad_ready) {
      grad = Tensor(value.shape(), 0.0);
      grad_ready = true;
    }
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return Var(std::move(n));
  }

  static Var param(std::string name, Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->op = "param";
    n->param = std::move(name);
    return Var(std::move(n));
  }

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }
  double item() const { return node_->value.item(); }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Var make(const char* op, Tensor value, std::vector<Var> inputs,
                std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& v : inputs)
    if (v.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (auto& v : inputs) n->parents.push_back(v.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void require_rank(const Var& a, std::size_t r, const char* op) {
  if (a.value().rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make("add", std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make("sub", std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make("mul", std::move(out), {a, b}, [](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  return detail::make("scale", std::move(out), {a}, [c](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * n.grad[i];
  });
}

inline Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return detail::make("relu", std::move(out), {a}, [](Node& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.value[i] > 0.0) g[i] += n.grad[i];
  });
}

/// Natural log; inputs must be strictly positive.
inline Var log(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) {
    if (!(v > 0.0)) throw ContractError("log: non-positive input");
    v = std::log(v);
  }
  return detail::make("log", std::move(out), {a}, [](Node& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / p.value[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make("sum", Tensor::scalar(s), {a}, [](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    const double up = n.grad[0];
    for (auto& v : g.data()) v += up;
  });
}

inline Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make("mean", Tensor::scalar(s * inv), {a}, [inv](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    const double up = n.grad[0] * inv;
    for (auto& v : g.data()) v += up;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [M,K] x [K,N] -> [M,N]
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Tensor out({m, nn}, 0.0);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      if (x == 0.0) continue;
      const double* brow = &bv[p * nn];
      double* orow = &out[i * nn];
      for (std::size_t j = 0; j < nn; ++j) orow[j] += x * brow[j];
    }
  return detail::make("matmul", std::move(out), {a, b}, [m, k, nn](Node& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    const auto& g = n.grad;
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < nn; ++j) acc += g[i * nn + j] * pb.value[p * nn + j];
          ga[i * k + p] += acc;
        }
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double x = pa.value[i * k + p];
          if (x == 0.0) continue;
          for (std::size_t j = 0; j < nn; ++j) gb[p * nn + j] += x * g[i * nn + j];
        }
    }
  });
}

/// Adds a length-C bias to every row of an [..., C] tensor.
inline Var add_bias(const Var& x, const Var& bias) {
  detail::require_rank(bias, 1, "add_bias");
  const std::size_t c = bias.dim(0);
  if (x.shape().back() != c)
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                     shape_str(x.shape()));
  Tensor out = x.value();
  const std::size_t rows = out.size() / c;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bias.value()[j];
  return detail::make("add_bias", std::move(out), {x, bias}, [rows, c](Node& n) {
    if (n.parents[0]->requires_grad) {
      auto& g = n.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.parents[1]->requires_grad) {
      auto& g = n.parents[1]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += n.grad[r * c + j];
    }
  });
}

/// Valid 1-D convolution over time.
/// x: [B, L, E]; weight: [k*E, C] with row index (offset*E + e); bias: [C].
/// Returns [B, L-k+1, C].
inline Var conv1d(const Var& x, const Var& weight, const Var& bias) {
  detail::require_rank(x, 3, "conv1d");
  detail::require_rank(weight, 2, "conv1d");
  detail::require_rank(bias, 1, "conv1d");
  const std::size_t batch = x.dim(0), len = x.dim(1), emb = x.dim(2);
  const std::size_t ch = weight.dim(1);
  if (weight.dim(0) % emb != 0 || bias.dim(0) != ch)
    throw ShapeError("conv1d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  const std::size_t width = weight.dim(0) / emb;
  if (len < width)
    throw ShapeError("conv1d: sequence length " + std::to_string(len) + " shorter than kernel " +
                     std::to_string(width));
  const std::size_t steps = len - width + 1;
  const std::size_t span_len = width * emb;
  Tensor out({batch, steps, ch}, 0.0);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const auto& bv = bias.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t) {
      double* o = &out[(b * steps + t) * ch];
      for (std::size_t c = 0; c < ch; ++c) o[c] = bv[c];
      const double* window = &xv[(b * len + t) * emb];
      for (std::size_t r = 0; r < span_len; ++r) {
        const double xr = window[r];
        if (xr == 0.0) continue;
        const double* wrow = &wv[r * ch];
        for (std::size_t c = 0; c < ch; ++c) o[c] += xr * wrow[c];
      }
    }
  return detail::make(
      "conv1d", std::move(out), {x, weight, bias},
      [batch, len, emb, ch, steps, span_len](Node& n) {
        auto& px = *n.parents[0];
        auto& pw = *n.parents[1];
        auto& pb = *n.parents[2];
        const auto& g = n.grad;
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (std::size_t i = 0; i < batch * steps; ++i)
            for (std::size_t c = 0; c < ch; ++c) gb[c] += g[i * ch + c];
        }
        if (pw.requires_grad) {
          auto& gw = pw.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t t = 0; t < steps; ++t) {
              const double* gi = &g[(b * steps + t) * ch];
              const double* window = &px.value[(b * len + t) * emb];
              for (std::size_t r = 0; r < span_len; ++r) {
                const double xr = window[r];
                if (xr == 0.0) continue;
                double* gwr = &gw[r * ch];
                for (std::size_t c = 0; c < ch; ++c) gwr[c] += xr * gi[c];
              }
            }
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t t = 0; t < steps; ++t) {
              const double* gi = &g[(b * steps + t) * ch];
              double* window = &gx[(b * len + t) * emb];
              for (std::size_t r = 0; r < span_len; ++r) {
                const double* wrow = &pw.value[r * ch];
                double acc = 0.0;
                for (std::size_t c = 0; c < ch; ++c) acc += wrow[c] * gi[c];
                window[r] += acc;
              }
            }
        }
      });
}

/// [B, T, C] -> [B, C], maximum over T. Ties resolve to the earliest step.
inline Var max_over_time(const Var& x) {
  detail::require_rank(x, 3, "max_over_time");
  const std::size_t batch = x.dim(0), steps = x.dim(1), ch = x.dim(2);
  Tensor out({batch, ch}, 0.0);
  std::vector<std::size_t> arg(batch * ch, 0);
  const auto& xv = x.value();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      double best = xv[(b * steps) * ch + c];
      std::size_t bi = 0;
      for (std::size_t t = 1; t < steps; ++t) {
        const double v = xv[(b * steps + t) * ch + c];
        if (v > best) {
          best = v;
          bi = t;
        }
      }
      out[b * ch + c] = best;
      arg[b * ch + c] = bi;
    }
  return detail::make("max_over_time", std::move(out), {x},
                      [batch, steps, ch, arg = std::move(arg)](Node& n) {
                        auto& g = n.parents[0]->grad_buffer();
                        for (std::size_t b = 0; b < batch; ++b)
                          for (std::size_t c = 0; c < ch; ++c)
                            g[(b * steps + arg[b * ch + c]) * ch + c] += n.grad[b * ch + c];
                      });
}

/// Concatenates [B, C_i] blocks along columns.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor out({rows, total}, 0.0);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&v[r * widths[k]], widths[k], &out[r * total + off]);
    off += widths[k];
  }
  return detail::make("concat_cols", std::move(out), parts,
                      [rows, total, widths = std::move(widths)](Node& n) {
                        std::size_t off = 0;
                        for (std::size_t k = 0; k < n.parents.size(); ++k) {
                          auto& p = *n.parents[k];
                          if (p.requires_grad) {
                            auto& g = p.grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r)
                              for (std::size_t j = 0; j < widths[k]; ++j)
                                g[r * widths[k] + j] += n.grad[r * total + off + j];
                          }
                          off += widths[k];
                        }
                      });
}

// ---------------------------------------------------------------------------
// Softmax family (row-wise over rank-2 tensors, max-shifted)

inline Tensor softmax_rows(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("softmax_rows: expected rank 2, got " + shape_str(m.shape()));
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out(m.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &m[r * cols];
    double* o = &out[r * cols];
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
  }
  return out;
}

inline Tensor log_softmax_rows(const Tensor& m) {
  if (m.rank() != 2)
    throw ShapeError("log_softmax_rows: expected rank 2, got " + shape_str(m.shape()));
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  Tensor out(m.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = &m[r * cols];
    double* o = &out[r * cols];
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  return out;
}

inline Var softmax_rows(const Var& x) {
  detail::require_rank(x, 2, "softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = softmax_rows(x.value());
  return detail::make("softmax_rows", std::move(out), {x}, [rows, cols](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &n.value[r * cols];
      const double* up = &n.grad[r * cols];
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += up[c] * y[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (up[c] - dot);
    }
  });
}

inline Var log_softmax_rows(const Var& x) {
  detail::require_rank(x, 2, "log_softmax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = log_softmax_rows(x.value());
  return detail::make("log_softmax_rows", std::move(out), {x}, [rows, cols](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* ls = &n.value[r * cols];
      const double* up = &n.grad[r * cols];
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += up[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += up[c] - std::exp(ls[c]) * total;
    }
  });
}

// ---------------------------------------------------------------------------
// Structural

/// [B, F] -> [B, B] with entry (i, j) = ||f_i - f_j||^2. Diagonal is exactly 0.
inline Var sq_dist_matrix(const Var& f) {
  detail::require_rank(f, 2, "sq_dist_matrix");
  const std::size_t b = f.dim(0), d = f.dim(1);
  Tensor out({b, b}, 0.0);
  const auto& fv = f.value();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = fv[i * d + k] - fv[j * d + k];
        s += diff * diff;
      }
      out[i * b + j] = s;
      out[j * b + i] = s;
    }
  return detail::make("sq_dist_matrix", std::move(out), {f}, [b, d](Node& n) {
    auto& p = *n.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = i + 1; j < b; ++j) {
        const double w = 2.0 * (n.grad[i * b + j] + n.grad[j * b + i]);
        if (w == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = p.value[i * d + k] - p.value[j * d + k];
          g[i * d + k] += w * diff;
          g[j * d + k] -= w * diff;
        }
      }
  });
}

/// Identity forward; multiplies the incoming gradient by -lambda.
inline Var grad_reverse(const Var& x, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("grad_reverse: lambda must be non-negative");
  return detail::make("grad_reverse", x.value(), {x}, [lambda](Node& n) {
    auto& g = n.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= lambda * n.grad[i];
  });
}

/// Same value, cut from the graph.
inline Var detach(const Var& x) { return Var::constant(x.value()); }

// ---------------------------------------------------------------------------
// Backward

using Gradients = std::map<std::string, Tensor>;

/// Reverse-mode sweep from a scalar loss. Returns the gradient of every
/// named parameter leaf reachable through differentiable paths; a parameter
/// bound more than once has its contributions summed.
inline Gradients backward(const Var& loss) {
  if (!loss.node()) throw ContractError("backward: empty loss");
  if (!loss.value().is_scalar())
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  Gradients grads;
  if (!loss.requires_grad()) return grads;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->grad_ready = false;
  loss.node()->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad_ready) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->param.empty()) continue;
    Tensor g = n->grad_ready ? n->grad : Tensor(n->value.shape(), 0.0);
    auto [pos, inserted] = grads.try_emplace(n->param, g);
    if (!inserted)
      for (std::size_t i = 0; i < g.size(); ++i) pos->second[i] += g[i];
  }
  return grads;
}

/// Central-difference gradient of a scalar function; the oracle used to check
/// backward().
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-6) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor g(x.shape(), 0.0);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace dtdbd::ad
