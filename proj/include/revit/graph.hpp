#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "revit/tensor.hpp"

namespace revit {

// Reverse-mode tape. Nodes are appended in evaluation order, which is by
// construction a topological order; backward() walks it in reverse.
//
// The op catalog is exactly what the transformer, the training loss and
// the attack losses need. No broadcasting engine: each op has one fixed
// shape rule.
class Graph {
 public:
  using NodeId = int;

  enum class Op {
    kLeaf,
    kMatMul,          // [m,k] x [k,n] -> [m,n]
    kBmm,             // [g,m,k] x [g,k,n] -> [g,m,n]
    kBmmNT,           // [g,m,k] x [g,n,k] -> [g,m,n]  (A * B^T per group)
    kAdd,             // same shape
    kAddRowVec,       // [rows,n] + [n]
    kScale,           // x * c
    kGelu,
    kRelu,
    kLayerNormRows,   // (x[rows,n], gamma[n], beta[n])
    kSoftmaxRows,     // softmax over last dim
    kCrossEntropyMean,// logits[b,l] + labels -> [1]
    kNegLogPick,      // p[1,l] -> [1], -log(p[label])
    kMeanAll,         // -> [1]
    kSumAll,          // -> [1]
    kGather,          // out[t] = in[idx[t]]
    kPrependClsRows,  // (x[b*np,d], cls[1,d]) -> [b*(np+1),d]
    kAddPosRows,      // x[b*t,d] + pos[t,d] tiled over b
    kTakeStrideRows,  // rows 0, t, 2t, ... -> [b,d]
  };

  NodeId leaf(Tensor v) { return push(Op::kLeaf, {}, std::move(v)); }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
      throw ConfigError("matmul: incompatible shapes " + shape_str(ta.shape) +
                        " x " + shape_str(tb.shape));
    Tensor out({ta.dim(0), tb.dim(1)});
    kernels::matmul(ta.data.data(), tb.data.data(), out.data.data(), ta.dim(0),
                    ta.dim(1), tb.dim(1));
    return push(Op::kMatMul, {a, b}, std::move(out));
  }

  NodeId bmm(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(0) != tb.dim(0) ||
        ta.dim(2) != tb.dim(1))
      throw ConfigError("bmm: incompatible shapes");
    const int g = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n = tb.dim(2);
    Tensor out({g, m, n});
    for (int i = 0; i < g; ++i)
      kernels::matmul(ta.data.data() + std::size_t(i) * m * k,
                      tb.data.data() + std::size_t(i) * k * n,
                      out.data.data() + std::size_t(i) * m * n, m, k, n);
    return push(Op::kBmm, {a, b}, std::move(out));
  }

  NodeId bmm_nt(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(0) != tb.dim(0) ||
        ta.dim(2) != tb.dim(2))
      throw ConfigError("bmm_nt: incompatible shapes");
    const int g = ta.dim(0), m = ta.dim(1), k = ta.dim(2), n = tb.dim(1);
    Tensor out({g, m, n});
    for (int i = 0; i < g; ++i) {
      double* c = out.data.data() + std::size_t(i) * m * n;
      std::fill(c, c + std::size_t(m) * n, 0.0);
      kernels::matmul_nt_acc(ta.data.data() + std::size_t(i) * m * k,
                             tb.data.data() + std::size_t(i) * n * k, c, m, k,
                             n);
    }
    return push(Op::kBmmNT, {a, b}, std::move(out));
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) throw ConfigError("add: shape mismatch");
    Tensor out = ta;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
    return push(Op::kAdd, {a, b}, std::move(out));
  }

  NodeId add_row_vec(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    const int n = ta.dim(ta.rank() - 1);
    if (tb.rank() != 1 || tb.dim(0) != n)
      throw ConfigError("add_row_vec: shape mismatch");
    Tensor out = ta;
    const std::size_t rows = out.numel() / n;
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < n; ++j) out[r * n + j] += tb[j];
    return push(Op::kAddRowVec, {a, b}, std::move(out));
  }

  NodeId scale(NodeId a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v *= c;
    NodeId id = push(Op::kScale, {a}, std::move(out));
    nodes_[id].f0 = c;
    return id;
  }

  NodeId gelu(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = kernels::gelu(v);
    return push(Op::kGelu, {a}, std::move(out));
  }

  NodeId relu(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::max(v, 0.0);
    return push(Op::kRelu, {a}, std::move(out));
  }

  NodeId layernorm_rows(NodeId x, NodeId gamma, NodeId beta,
                        double eps = 1e-5) {
    const Tensor& tx = value(x);
    const int n = tx.dim(tx.rank() - 1);
    if (value(gamma).numel() != std::size_t(n) ||
        value(beta).numel() != std::size_t(n))
      throw ConfigError("layernorm: gamma/beta size mismatch");
    const std::size_t rows = tx.numel() / n;
    Tensor out(tx.shape);
    Tensor aux({static_cast<int>(rows), n + 1});  // xhat rows + inv sigma
    // aux layout: per row, n values of xhat then 1/sigma
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = tx.data.data() + r * n;
      double mean = 0.0;
      for (int j = 0; j < n; ++j) mean += xr[j];
      mean /= n;
      double var = 0.0;
      for (int j = 0; j < n; ++j) {
        const double d = xr[j] - mean;
        var += d * d;
      }
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int j = 0; j < n; ++j) {
        const double h = (xr[j] - mean) * inv;
        aux[r * (n + 1) + j] = h;
        out[r * n + j] = h * value(gamma)[j] + value(beta)[j];
      }
      aux[r * (n + 1) + n] = inv;
    }
    NodeId id = push(Op::kLayerNormRows, {x, gamma, beta}, std::move(out));
    nodes_[id].aux = std::move(aux);
    nodes_[id].f0 = eps;
    return id;
  }

  NodeId softmax_rows(NodeId a) {
    const Tensor& ta = value(a);
    const int n = ta.dim(ta.rank() - 1);
    Tensor out(ta.shape);
    kernels::softmax_rows(ta.data.data(), out.data.data(), ta.numel() / n, n);
    return push(Op::kSoftmaxRows, {a}, std::move(out));
  }

  NodeId cross_entropy_mean(NodeId logits, std::vector<int> labels) {
    const Tensor& tl = value(logits);
    if (tl.rank() != 2) throw ConfigError("cross_entropy_mean: rank-2 logits expected");
    const int b = tl.dim(0), l = tl.dim(1);
    if (static_cast<int>(labels.size()) != b)
      throw ConfigError("cross_entropy_mean: label count mismatch");
    for (int y : labels)
      if (y < 0 || y >= l) throw ConfigError("label out of range");
    Tensor probs({b, l});
    kernels::softmax_rows(tl.data.data(), probs.data.data(), b, l);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
      // -log softmax via the stabilized form to avoid log(0)
      const double* row = tl.data.data() + std::size_t(i) * l;
      double mx = row[0];
      for (int j = 1; j < l; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int j = 0; j < l; ++j) sum += std::exp(row[j] - mx);
      loss += std::log(sum) - (row[labels[std::size_t(i)]] - mx);
    }
    Tensor out({1});
    out[0] = loss / b;
    NodeId id = push(Op::kCrossEntropyMean, {logits}, std::move(out));
    nodes_[id].aux = std::move(probs);
    nodes_[id].labels =
        std::make_shared<const std::vector<int>>(std::move(labels));
    return id;
  }

  NodeId neg_log_pick(NodeId p, int label) {
    const Tensor& tp = value(p);
    if (label < 0 || static_cast<std::size_t>(label) >= tp.numel())
      throw ConfigError("label out of range");
    Tensor out({1});
    out[0] = -std::log(tp[static_cast<std::size_t>(label)]);
    NodeId id = push(Op::kNegLogPick, {p}, std::move(out));
    nodes_[id].i0 = label;
    return id;
  }

  NodeId mean_all(NodeId a) {
    Tensor out({1});
    const Tensor& ta = value(a);
    double s = 0.0;
    for (double v : ta.data) s += v;
    out[0] = s / static_cast<double>(ta.numel());
    return push(Op::kMeanAll, {a}, std::move(out));
  }

  NodeId sum_all(NodeId a) {
    Tensor out({1});
    double s = 0.0;
    for (double v : value(a).data) s += v;
    out[0] = s;
    return push(Op::kSumAll, {a}, std::move(out));
  }

  NodeId gather(NodeId a, std::shared_ptr<const std::vector<int>> idx,
                std::vector<int> out_shape) {
    const Tensor& ta = value(a);
    Tensor out(std::move(out_shape));
    if (out.numel() != idx->size())
      throw ConfigError("gather: index / shape mismatch");
    for (std::size_t t = 0; t < out.numel(); ++t) {
      const int src = (*idx)[t];
      if (src < 0 || static_cast<std::size_t>(src) >= ta.numel())
        throw ConfigError("gather: index out of range");
      out[t] = ta[static_cast<std::size_t>(src)];
    }
    NodeId id = push(Op::kGather, {a}, std::move(out));
    nodes_[id].idx = std::move(idx);
    return id;
  }

  NodeId prepend_cls_rows(NodeId x, NodeId cls, int batch) {
    const Tensor& tx = value(x);
    const Tensor& tc = value(cls);
    const int d = tx.dim(1);
    if (tc.rank() != 2 || tc.dim(0) != 1 || tc.dim(1) != d ||
        tx.dim(0) % batch != 0)
      throw ConfigError("prepend_cls_rows: shape mismatch");
    const int np = tx.dim(0) / batch;
    Tensor out({batch * (np + 1), d});
    for (int b = 0; b < batch; ++b) {
      double* dst = out.data.data() + std::size_t(b) * (np + 1) * d;
      std::copy(tc.data.begin(), tc.data.end(), dst);
      std::copy(tx.data.begin() + std::size_t(b) * np * d,
                tx.data.begin() + std::size_t(b + 1) * np * d, dst + d);
    }
    NodeId id = push(Op::kPrependClsRows, {x, cls}, std::move(out));
    nodes_[id].i0 = batch;
    return id;
  }

  NodeId add_pos_rows(NodeId x, NodeId pos) {
    const Tensor& tx = value(x);
    const Tensor& tp = value(pos);
    const int t = tp.dim(0), d = tp.dim(1);
    if (tx.dim(1) != d || tx.dim(0) % t != 0)
      throw ConfigError("add_pos_rows: shape mismatch");
    Tensor out = tx;
    const int b = tx.dim(0) / t;
    for (int i = 0; i < b; ++i)
      for (std::size_t j = 0; j < tp.numel(); ++j)
        out[std::size_t(i) * t * d + j] += tp[j];
    return push(Op::kAddPosRows, {x, pos}, std::move(out));
  }

  NodeId take_stride_rows(NodeId x, int stride) {
    const Tensor& tx = value(x);
    const int d = tx.dim(1);
    if (tx.dim(0) % stride != 0)
      throw ConfigError("take_stride_rows: shape mismatch");
    const int b = tx.dim(0) / stride;
    Tensor out({b, d});
    for (int i = 0; i < b; ++i)
      std::copy(tx.data.begin() + std::size_t(i) * stride * d,
                tx.data.begin() + std::size_t(i) * stride * d + d,
                out.data.begin() + std::size_t(i) * d);
    NodeId id = push(Op::kTakeStrideRows, {x}, std::move(out));
    nodes_[id].i0 = stride;
    return id;
  }

  const Tensor& value(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }
  const Tensor& grad(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
  }
  bool is_leaf(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].op == Op::kLeaf;
  }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Reverse sweep from a scalar output. Grad buffers are (re)zeroed, the
  // output is seeded with 1.
  void backward(NodeId output) {
    if (value(output).numel() != 1)
      throw ConfigError("backward: output must be scalar");
    for (Node& n : nodes_) {
      n.grad.shape = n.value.shape;
      n.grad.data.assign(n.value.numel(), 0.0);
    }
    nodes_[static_cast<std::size_t>(output)].grad[0] = 1.0;
    for (int id = output; id >= 0; --id) backprop_node(id);
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    Tensor aux;  // op scratch kept for backward (xhat, softmax of logits)
    std::shared_ptr<const std::vector<int>> idx;
    std::shared_ptr<const std::vector<int>> labels;
    int i0 = 0;
    double f0 = 0.0;
  };

  NodeId push(Op op, std::vector<NodeId> inputs, Tensor value) {
    for (NodeId in : inputs)
      if (in < 0 || in >= size())
        throw ConfigError("graph: input node out of range");
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  Tensor& grad_mut(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }

  void backprop_node(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
        kernels::matmul_nt_acc(g.data.data(), b.data.data(),
                               grad_mut(n.inputs[0]).data.data(), m, nn, k);
        kernels::matmul_tn_acc(a.data.data(), g.data.data(),
                               grad_mut(n.inputs[1]).data.data(), k, m, nn);
        break;
      }
      case Op::kBmm: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        const int gg = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(2);
        for (int i = 0; i < gg; ++i) {
          kernels::matmul_nt_acc(
              g.data.data() + std::size_t(i) * m * nn,
              b.data.data() + std::size_t(i) * k * nn,
              grad_mut(n.inputs[0]).data.data() + std::size_t(i) * m * k, m,
              nn, k);
          kernels::matmul_tn_acc(
              a.data.data() + std::size_t(i) * m * k,
              g.data.data() + std::size_t(i) * m * nn,
              grad_mut(n.inputs[1]).data.data() + std::size_t(i) * k * nn, k,
              m, nn);
        }
        break;
      }
      case Op::kBmmNT: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        const int gg = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(1);
        for (int i = 0; i < gg; ++i) {
          // dA += dC * B ; dB += dC^T * A
          kernels::matmul_acc(
              g.data.data() + std::size_t(i) * m * nn,
              b.data.data() + std::size_t(i) * nn * k,
              grad_mut(n.inputs[0]).data.data() + std::size_t(i) * m * k, m,
              nn, k);
          kernels::matmul_tn_acc(
              g.data.data() + std::size_t(i) * m * nn,
              a.data.data() + std::size_t(i) * m * k,
              grad_mut(n.inputs[1]).data.data() + std::size_t(i) * nn * k, nn,
              m, k);
        }
        break;
      }
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s) {
          Tensor& d = grad_mut(n.inputs[std::size_t(s)]);
          for (std::size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
        }
        break;
      }
      case Op::kAddRowVec: {
        Tensor& da = grad_mut(n.inputs[0]);
        Tensor& db = grad_mut(n.inputs[1]);
        const int nn = static_cast<int>(db.numel());
        const std::size_t rows = g.numel() / nn;
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] += g[i];
        for (std::size_t r = 0; r < rows; ++r)
          for (int j = 0; j < nn; ++j) db[std::size_t(j)] += g[r * nn + j];
        break;
      }
      case Op::kScale: {
        Tensor& da = grad_mut(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i) da[i] += n.f0 * g[i];
        break;
      }
      case Op::kGelu: {
        const Tensor& x = value(n.inputs[0]);
        Tensor& dx = grad_mut(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          dx[i] += kernels::gelu_grad(x[i]) * g[i];
        break;
      }
      case Op::kRelu: {
        const Tensor& x = value(n.inputs[0]);
        Tensor& dx = grad_mut(n.inputs[0]);
        for (std::size_t i = 0; i < g.numel(); ++i)
          dx[i] += (x[i] > 0.0 ? g[i] : 0.0);
        break;
      }
      case Op::kLayerNormRows: {
        const Tensor& x = value(n.inputs[0]);
        const Tensor& gamma = value(n.inputs[1]);
        const int nn = x.dim(x.rank() - 1);
        const std::size_t rows = x.numel() / nn;
        Tensor& dx = grad_mut(n.inputs[0]);
        Tensor& dgamma = grad_mut(n.inputs[1]);
        Tensor& dbeta = grad_mut(n.inputs[2]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xhat = n.aux.data.data() + r * (nn + 1);
          const double inv = xhat[nn];
          const double* gr = g.data.data() + r * nn;
          double mean_gdy = 0.0, mean_gdy_xhat = 0.0;
          for (int j = 0; j < nn; ++j) {
            const double gdy = gr[j] * gamma[std::size_t(j)];
            mean_gdy += gdy;
            mean_gdy_xhat += gdy * xhat[j];
          }
          mean_gdy /= nn;
          mean_gdy_xhat /= nn;
          for (int j = 0; j < nn; ++j) {
            const double gdy = gr[j] * gamma[std::size_t(j)];
            dx[r * nn + j] +=
                inv * (gdy - mean_gdy - xhat[j] * mean_gdy_xhat);
            dgamma[std::size_t(j)] += gr[j] * xhat[j];
            dbeta[std::size_t(j)] += gr[j];
          }
        }
        break;
      }
      case Op::kSoftmaxRows: {
        const Tensor& s = n.value;
        const int nn = s.dim(s.rank() - 1);
        const std::size_t rows = s.numel() / nn;
        Tensor& dx = grad_mut(n.inputs[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* sr = s.data.data() + r * nn;
          const double* gr = g.data.data() + r * nn;
          double dot = 0.0;
          for (int j = 0; j < nn; ++j) dot += gr[j] * sr[j];
          for (int j = 0; j < nn; ++j)
            dx[r * nn + j] += sr[j] * (gr[j] - dot);
        }
        break;
      }
      case Op::kCrossEntropyMean: {
        const Tensor& probs = n.aux;
        const std::vector<int>& labels = *n.labels;
        const int b = probs.dim(0), l = probs.dim(1);
        Tensor& dl = grad_mut(n.inputs[0]);
        const double scale = g[0] / b;
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < l; ++j)
            dl[std::size_t(i) * l + j] +=
                scale * (probs[std::size_t(i) * l + j] -
                         (j == labels[std::size_t(i)] ? 1.0 : 0.0));
        break;
      }
      case Op::kNegLogPick: {
        const Tensor& p = value(n.inputs[0]);
        Tensor& dp = grad_mut(n.inputs[0]);
        dp[static_cast<std::size_t>(n.i0)] +=
            -g[0] / p[static_cast<std::size_t>(n.i0)];
        break;
      }
      case Op::kMeanAll: {
        Tensor& dx = grad_mut(n.inputs[0]);
        const double s = g[0] / static_cast<double>(dx.numel());
        for (double& v : dx.data) v += s;
        break;
      }
      case Op::kSumAll: {
        Tensor& dx = grad_mut(n.inputs[0]);
        for (double& v : dx.data) v += g[0];
        break;
      }
      case Op::kGather: {
        Tensor& dx = grad_mut(n.inputs[0]);
        const std::vector<int>& idx = *n.idx;
        for (std::size_t t = 0; t < g.numel(); ++t)
          dx[static_cast<std::size_t>(idx[t])] += g[t];
        break;
      }
      case Op::kPrependClsRows: {
        const Tensor& x = value(n.inputs[0]);
        const int batch = n.i0;
        const int d = x.dim(1);
        const int np = x.dim(0) / batch;
        Tensor& dx = grad_mut(n.inputs[0]);
        Tensor& dcls = grad_mut(n.inputs[1]);
        for (int b = 0; b < batch; ++b) {
          const double* src = g.data.data() + std::size_t(b) * (np + 1) * d;
          for (int j = 0; j < d; ++j) dcls[std::size_t(j)] += src[j];
          for (std::size_t i = 0; i < std::size_t(np) * d; ++i)
            dx[std::size_t(b) * np * d + i] += src[d + i];
        }
        break;
      }
      case Op::kAddPosRows: {
        const Tensor& pos = value(n.inputs[1]);
        Tensor& dx = grad_mut(n.inputs[0]);
        Tensor& dpos = grad_mut(n.inputs[1]);
        const std::size_t tp = pos.numel();
        const int b = static_cast<int>(g.numel() / tp);
        for (std::size_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
        for (int i = 0; i < b; ++i)
          for (std::size_t j = 0; j < tp; ++j)
            dpos[j] += g[std::size_t(i) * tp + j];
        break;
      }
      case Op::kTakeStrideRows: {
        const Tensor& x = value(n.inputs[0]);
        const int stride = n.i0;
        const int d = x.dim(1);
        const int b = x.dim(0) / stride;
        Tensor& dx = grad_mut(n.inputs[0]);
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < d; ++j)
            dx[std::size_t(i) * stride * d + j] += g[std::size_t(i) * d + j];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

// dOutput/dLeaf for each requested leaf. Output must be scalar.
inline std::vector<Tensor> gradient_of(Graph& graph, Graph::NodeId output,
                                       std::span<const Graph::NodeId> wrt) {
  if (graph.value(output).numel() != 1)
    throw ConfigError("gradient_of: output must be scalar");
  for (Graph::NodeId id : wrt)
    if (!graph.is_leaf(id))
      throw ConfigError("gradient_of: wrt nodes must be leaves");
  graph.backward(output);
  std::vector<Tensor> grads;
  grads.reserve(wrt.size());
  for (Graph::NodeId id : wrt) grads.push_back(graph.grad(id));
  return grads;
}

// ---------------------------------------------------------------------------
// Eager single-vector ops (the non-graph entry points).
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& logits) {
  if (logits.numel() == 0) throw ConfigError("empty logits");
  if (logits.rank() != 1) throw ConfigError("softmax: rank-1 tensor expected");
  Tensor out(logits.shape);
  kernels::softmax_rows(logits.data.data(), out.data.data(), 1,
                        static_cast<int>(logits.numel()));
  return out;
}

// -log(softmax(logits)[label]), stabilized.
inline double cross_entropy_loss(const Tensor& logits, int label) {
  if (logits.numel() == 0) throw ConfigError("empty logits");
  if (logits.rank() != 1)
    throw ConfigError("cross_entropy_loss: rank-1 tensor expected");
  if (label < 0 || static_cast<std::size_t>(label) >= logits.numel())
    throw ConfigError("label out of range");
  const int l = static_cast<int>(logits.numel());
  double mx = logits[0];
  for (int j = 1; j < l; ++j) mx = std::max(mx, logits[std::size_t(j)]);
  double sum = 0.0;
  for (int j = 0; j < l; ++j) sum += std::exp(logits[std::size_t(j)] - mx);
  return std::log(sum) - (logits[static_cast<std::size_t>(label)] - mx);
}

}  // namespace revit
