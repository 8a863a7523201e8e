#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "revit/graph.hpp"
#include "revit/image.hpp"
#include "revit/rng.hpp"
#include "revit/tensor.hpp"

namespace revit {

enum class Nonlinearity { kGelu, kRelu };

inline const char* to_string(Nonlinearity n) {
  return n == Nonlinearity::kGelu ? "gelu" : "relu";
}

inline Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "gelu") return Nonlinearity::kGelu;
  if (s == "relu") return Nonlinearity::kRelu;
  throw ConfigError("unknown nonlinearity: " + s);
}

struct VitConfig {
  int image_size = 16;
  int patch_size = 4;
  int channels = 3;
  int embed_dim = 32;
  int depth = 2;
  int heads = 4;
  int mlp_ratio = 2;
  int num_classes = 10;
  Nonlinearity nonlinearity = Nonlinearity::kGelu;

  int patches_per_side() const { return image_size / patch_size; }
  int num_patches() const { return patches_per_side() * patches_per_side(); }
  int tokens() const { return num_patches() + 1; }
  int head_dim() const { return embed_dim / heads; }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int mlp_dim() const { return embed_dim * mlp_ratio; }
  int pixels() const { return image_size * image_size * channels; }

  void validate() const {
    if (image_size < 1 || patch_size < 1 || channels < 1 || embed_dim < 1 ||
        depth < 1 || heads < 1 || mlp_ratio < 1 || num_classes < 2)
      throw ConfigError("vit config: all dimensions must be positive");
    if (image_size % patch_size != 0)
      throw ConfigError("vit config: image_size must be divisible by patch_size");
    if (embed_dim % heads != 0)
      throw ConfigError("vit config: embed_dim must be divisible by heads");
  }

  bool operator==(const VitConfig&) const = default;
};

struct ModelParams {
  VitConfig config;
  int key_id = 0;

  Tensor patch_w, patch_b;  // [patch_dim, D], [D]
  Tensor cls;               // [1, D]
  Tensor pos;               // [tokens, D]
  struct Block {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
  };
  std::vector<Block> blocks;
  Tensor lnf_g, lnf_b;
  Tensor head_w, head_b;  // [D, L], [L]
};

// Fixed iteration order over (name, tensor). Checkpoints, the optimizer
// state and the gradient container all rely on this order.
template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("patch_w", p.patch_w);
  fn("patch_b", p.patch_b);
  fn("cls", p.cls);
  fn("pos", p.pos);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    fn(pre + "ln1_g", blk.ln1_g);
    fn(pre + "ln1_b", blk.ln1_b);
    fn(pre + "wq", blk.wq);
    fn(pre + "bq", blk.bq);
    fn(pre + "wk", blk.wk);
    fn(pre + "bk", blk.bk);
    fn(pre + "wv", blk.wv);
    fn(pre + "bv", blk.bv);
    fn(pre + "wo", blk.wo);
    fn(pre + "bo", blk.bo);
    fn(pre + "ln2_g", blk.ln2_g);
    fn(pre + "ln2_b", blk.ln2_b);
    fn(pre + "w1", blk.w1);
    fn(pre + "b1", blk.b1);
    fn(pre + "w2", blk.w2);
    fn(pre + "b2", blk.b2);
  }
  fn("lnf_g", p.lnf_g);
  fn("lnf_b", p.lnf_b);
  fn("head_w", p.head_w);
  fn("head_b", p.head_b);
}

inline std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  visit_params(p, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

// Zero-filled parameter container with the shapes implied by the config.
inline ModelParams zero_params(const VitConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  const int d = cfg.embed_dim;
  p.patch_w = Tensor({cfg.patch_dim(), d});
  p.patch_b = Tensor({d});
  p.cls = Tensor({1, d});
  p.pos = Tensor({cfg.tokens(), d});
  p.blocks.resize(static_cast<std::size_t>(cfg.depth));
  for (auto& blk : p.blocks) {
    blk.ln1_g = Tensor({d});
    blk.ln1_b = Tensor({d});
    blk.wq = Tensor({d, d});
    blk.bq = Tensor({d});
    blk.wk = Tensor({d, d});
    blk.bk = Tensor({d});
    blk.wv = Tensor({d, d});
    blk.bv = Tensor({d});
    blk.wo = Tensor({d, d});
    blk.bo = Tensor({d});
    blk.ln2_g = Tensor({d});
    blk.ln2_b = Tensor({d});
    blk.w1 = Tensor({d, cfg.mlp_dim()});
    blk.b1 = Tensor({cfg.mlp_dim()});
    blk.w2 = Tensor({cfg.mlp_dim(), d});
    blk.b2 = Tensor({d});
  }
  p.lnf_g = Tensor({d});
  p.lnf_b = Tensor({d});
  p.head_w = Tensor({d, cfg.num_classes});
  p.head_b = Tensor({cfg.num_classes});
  return p;
}

// Weights (and the position/class embeddings) get normal(0, 0.02)
// truncated at 2 sigma, biases and norm offsets zero, norm scales one.
// Each tensor draws from its own labeled stream, so the layout of one
// tensor never shifts another's values.
inline ModelParams init_params(const VitConfig& cfg, std::uint64_t seed) {
  ModelParams p = zero_params(cfg);
  visit_params(p, [&](const std::string& name, Tensor& t) {
    const std::size_t dot = name.rfind('.');
    const std::string leaf =
        dot == std::string::npos ? name : name.substr(dot + 1);
    const bool is_norm_scale = leaf.ends_with("_g");
    const bool is_bias = leaf.ends_with("_b") || leaf[0] == 'b';
    if (is_norm_scale) {
      for (double& v : t.data) v = 1.0;
    } else if (is_bias) {
      // already zero
    } else {
      SplitMix64 rng = derive_stream(seed, "init/" + name);
      for (double& v : t.data) v = 0.02 * rng.truncated_normal(2.0);
    }
  });
  return p;
}

// --------------------------------------------------------------------------
// Index maps shared by both forward backends. Patchify turns the flat
// (b, y, x, c) channel-fastest batch into [b * num_patches, patch_dim]
// rows whose within-patch order matches the encryption's block flatten,
// so block size M = patch size P lines the two up exactly.
// --------------------------------------------------------------------------
struct VitPlan {
  int batch = 0;
  std::shared_ptr<const std::vector<int>> patchify;
  std::shared_ptr<const std::vector<int>> split_heads;
  std::shared_ptr<const std::vector<int>> merge_heads;
};

inline VitPlan build_vit_plan(const VitConfig& cfg, int batch) {
  VitPlan plan;
  plan.batch = batch;
  const int ps = cfg.patch_size, c = cfg.channels, w = cfg.image_size;
  const int side = cfg.patches_per_side(), np = cfg.num_patches();
  const int pd = cfg.patch_dim();

  auto patchify = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(batch) * np * pd);
  for (int b = 0; b < batch; ++b)
    for (int gy = 0; gy < side; ++gy)
      for (int gx = 0; gx < side; ++gx) {
        const std::size_t row = static_cast<std::size_t>(b) * np +
                                static_cast<std::size_t>(gy) * side + gx;
        for (int py = 0; py < ps; ++py)
          for (int px = 0; px < ps; ++px)
            for (int ch = 0; ch < c; ++ch) {
              const std::size_t col =
                  (static_cast<std::size_t>(py) * ps + px) * c + ch;
              const std::size_t src =
                  ((static_cast<std::size_t>(b) * w + gy * ps + py) * w +
                   gx * ps + px) * c + ch;
              (*patchify)[row * pd + col] = static_cast<int>(src);
            }
      }
  plan.patchify = std::move(patchify);

  const int t = cfg.tokens(), h = cfg.heads, dh = cfg.head_dim(),
            d = cfg.embed_dim;
  auto split = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(batch) * h * t * dh);
  auto merge = std::make_shared<std::vector<int>>(
      static_cast<std::size_t>(batch) * t * d);
  for (int b = 0; b < batch; ++b)
    for (int hh = 0; hh < h; ++hh)
      for (int tt = 0; tt < t; ++tt)
        for (int dd = 0; dd < dh; ++dd) {
          const std::size_t split_pos =
              ((static_cast<std::size_t>(b) * h + hh) * t + tt) * dh + dd;
          const std::size_t flat_pos =
              (static_cast<std::size_t>(b) * t + tt) * d + hh * dh + dd;
          (*split)[split_pos] = static_cast<int>(flat_pos);
          (*merge)[flat_pos] = static_cast<int>(split_pos);
        }
  plan.split_heads = std::move(split);
  plan.merge_heads = std::move(merge);
  return plan;
}

// --------------------------------------------------------------------------
// Backends. EvalBackend runs the kernels eagerly and owns its result
// pool; TapeBackend records the same pipeline onto a Graph for backward.
// --------------------------------------------------------------------------
class EvalBackend {
 public:
  using Ref = const Tensor*;

  Ref hold(Tensor t) {
    pool_.push_back(std::move(t));
    return &pool_.back();
  }
  Ref wrap(const Tensor& t) { return &t; }

  Ref gather(Ref a, const std::shared_ptr<const std::vector<int>>& idx,
             std::vector<int> out_shape) {
    Tensor out(std::move(out_shape));
    for (std::size_t i = 0; i < out.numel(); ++i)
      out[i] = (*a)[static_cast<std::size_t>((*idx)[i])];
    return hold(std::move(out));
  }
  Ref matmul(Ref a, Ref b) {
    Tensor out({a->dim(0), b->dim(1)});
    kernels::matmul(a->data.data(), b->data.data(), out.data.data(),
                    a->dim(0), a->dim(1), b->dim(1));
    return hold(std::move(out));
  }
  Ref bmm(Ref a, Ref b) {
    const int g = a->dim(0), m = a->dim(1), k = a->dim(2), n = b->dim(2);
    Tensor out({g, m, n});
    for (int i = 0; i < g; ++i)
      kernels::matmul(a->data.data() + std::size_t(i) * m * k,
                      b->data.data() + std::size_t(i) * k * n,
                      out.data.data() + std::size_t(i) * m * n, m, k, n);
    return hold(std::move(out));
  }
  Ref bmm_nt(Ref a, Ref b) {
    const int g = a->dim(0), m = a->dim(1), k = a->dim(2), n = b->dim(1);
    Tensor out({g, m, n});
    for (int i = 0; i < g; ++i)
      kernels::matmul_nt_acc(a->data.data() + std::size_t(i) * m * k,
                             b->data.data() + std::size_t(i) * n * k,
                             out.data.data() + std::size_t(i) * m * n, m, k,
                             n);
    return hold(std::move(out));
  }
  Ref add(Ref a, Ref b) {
    Tensor out = *a;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += (*b)[i];
    return hold(std::move(out));
  }
  Ref add_row_vec(Ref a, Ref b) {
    Tensor out = *a;
    const int n = static_cast<int>(b->numel());
    const std::size_t rows = out.numel() / n;
    for (std::size_t r = 0; r < rows; ++r)
      for (int j = 0; j < n; ++j) out[r * n + j] += (*b)[std::size_t(j)];
    return hold(std::move(out));
  }
  Ref scale(Ref a, double c) {
    Tensor out = *a;
    for (double& v : out.data) v *= c;
    return hold(std::move(out));
  }
  Ref nonlin(Ref a, Nonlinearity kind) {
    Tensor out = *a;
    if (kind == Nonlinearity::kGelu)
      for (double& v : out.data) v = kernels::gelu(v);
    else
      for (double& v : out.data) v = std::max(v, 0.0);
    return hold(std::move(out));
  }
  Ref layernorm_rows(Ref x, Ref g, Ref b) {
    const int n = x->dim(x->rank() - 1);
    Tensor out(x->shape);
    kernels::layernorm_rows(x->data.data(), g->data.data(), b->data.data(),
                            out.data.data(), nullptr, x->numel() / n, n,
                            1e-5);
    return hold(std::move(out));
  }
  Ref softmax_rows(Ref a) {
    const int n = a->dim(a->rank() - 1);
    Tensor out(a->shape);
    kernels::softmax_rows(a->data.data(), out.data.data(), a->numel() / n, n);
    return hold(std::move(out));
  }
  Ref prepend_cls_rows(Ref x, Ref cls, int batch) {
    const int d = x->dim(1);
    const int np = x->dim(0) / batch;
    Tensor out({batch * (np + 1), d});
    for (int b = 0; b < batch; ++b) {
      double* dst = out.data.data() + std::size_t(b) * (np + 1) * d;
      std::copy(cls->data.begin(), cls->data.end(), dst);
      std::copy(x->data.begin() + std::size_t(b) * np * d,
                x->data.begin() + std::size_t(b + 1) * np * d, dst + d);
    }
    return hold(std::move(out));
  }
  Ref add_pos_rows(Ref x, Ref pos) {
    Tensor out = *x;
    const std::size_t tp = pos->numel();
    const int b = static_cast<int>(out.numel() / tp);
    for (int i = 0; i < b; ++i)
      for (std::size_t j = 0; j < tp; ++j)
        out[std::size_t(i) * tp + j] += (*pos)[j];
    return hold(std::move(out));
  }
  Ref take_stride_rows(Ref x, int stride) {
    const int d = x->dim(1);
    const int b = x->dim(0) / stride;
    Tensor out({b, d});
    for (int i = 0; i < b; ++i)
      std::copy(x->data.begin() + std::size_t(i) * stride * d,
                x->data.begin() + std::size_t(i) * stride * d + d,
                out.data.begin() + std::size_t(i) * d);
    return hold(std::move(out));
  }

 private:
  std::deque<Tensor> pool_;
};

class TapeBackend {
 public:
  using Ref = Graph::NodeId;

  explicit TapeBackend(Graph& g) : g_(g) {}

  Ref wrap(const Tensor& t) { return g_.leaf(t); }

  Ref gather(Ref a, std::shared_ptr<const std::vector<int>> idx,
             std::vector<int> out_shape) {
    return g_.gather(a, std::move(idx), std::move(out_shape));
  }
  Ref matmul(Ref a, Ref b) { return g_.matmul(a, b); }
  Ref bmm(Ref a, Ref b) { return g_.bmm(a, b); }
  Ref bmm_nt(Ref a, Ref b) { return g_.bmm_nt(a, b); }
  Ref add(Ref a, Ref b) { return g_.add(a, b); }
  Ref add_row_vec(Ref a, Ref b) { return g_.add_row_vec(a, b); }
  Ref scale(Ref a, double c) { return g_.scale(a, c); }
  Ref nonlin(Ref a, Nonlinearity kind) {
    return kind == Nonlinearity::kGelu ? g_.gelu(a) : g_.relu(a);
  }
  Ref layernorm_rows(Ref x, Ref g, Ref b) { return g_.layernorm_rows(x, g, b); }
  Ref softmax_rows(Ref a) { return g_.softmax_rows(a); }
  Ref prepend_cls_rows(Ref x, Ref cls, int batch) {
    return g_.prepend_cls_rows(x, cls, batch);
  }
  Ref add_pos_rows(Ref x, Ref pos) { return g_.add_pos_rows(x, pos); }
  Ref take_stride_rows(Ref x, int stride) {
    return g_.take_stride_rows(x, stride);
  }

  Graph& graph() { return g_; }

 private:
  Graph& g_;
};

template <typename Ref>
struct VitRefs {
  Ref patch_w, patch_b, cls, pos;
  struct Block {
    Ref ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1,
        w2, b2;
  };
  std::vector<Block> blocks;
  Ref lnf_g, lnf_b, head_w, head_b;
};

template <typename Backend>
VitRefs<typename Backend::Ref> make_refs(Backend& be, const ModelParams& p) {
  VitRefs<typename Backend::Ref> r;
  r.patch_w = be.wrap(p.patch_w);
  r.patch_b = be.wrap(p.patch_b);
  r.cls = be.wrap(p.cls);
  r.pos = be.wrap(p.pos);
  for (const auto& blk : p.blocks) {
    typename VitRefs<typename Backend::Ref>::Block b;
    b.ln1_g = be.wrap(blk.ln1_g);
    b.ln1_b = be.wrap(blk.ln1_b);
    b.wq = be.wrap(blk.wq);
    b.bq = be.wrap(blk.bq);
    b.wk = be.wrap(blk.wk);
    b.bk = be.wrap(blk.bk);
    b.wv = be.wrap(blk.wv);
    b.bv = be.wrap(blk.bv);
    b.wo = be.wrap(blk.wo);
    b.bo = be.wrap(blk.bo);
    b.ln2_g = be.wrap(blk.ln2_g);
    b.ln2_b = be.wrap(blk.ln2_b);
    b.w1 = be.wrap(blk.w1);
    b.b1 = be.wrap(blk.b1);
    b.w2 = be.wrap(blk.w2);
    b.b2 = be.wrap(blk.b2);
    r.blocks.push_back(b);
  }
  r.lnf_g = be.wrap(p.lnf_g);
  r.lnf_b = be.wrap(p.lnf_b);
  r.head_w = be.wrap(p.head_w);
  r.head_b = be.wrap(p.head_b);
  return r;
}

// The full pipeline: patchify -> linear embed -> class token -> position
// embeddings -> depth x (pre-norm attention block) -> final norm ->
// class-token head. `input` is the flat [batch, pixels] batch.
template <typename Backend>
typename Backend::Ref vit_forward(Backend& be,
                                  const VitRefs<typename Backend::Ref>& p,
                                  typename Backend::Ref input,
                                  const VitConfig& cfg, const VitPlan& plan) {
  using Ref = typename Backend::Ref;
  const int batch = plan.batch;
  const int np = cfg.num_patches(), t = cfg.tokens(), d = cfg.embed_dim;
  const int heads = cfg.heads, dh = cfg.head_dim();

  Ref patches = be.gather(input, plan.patchify, {batch * np, cfg.patch_dim()});
  Ref emb = be.add_row_vec(be.matmul(patches, p.patch_w), p.patch_b);
  Ref tok = be.add_pos_rows(be.prepend_cls_rows(emb, p.cls, batch), p.pos);

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& blk : p.blocks) {
    Ref h = be.layernorm_rows(tok, blk.ln1_g, blk.ln1_b);
    Ref q = be.add_row_vec(be.matmul(h, blk.wq), blk.bq);
    Ref k = be.add_row_vec(be.matmul(h, blk.wk), blk.bk);
    Ref v = be.add_row_vec(be.matmul(h, blk.wv), blk.bv);
    Ref qh = be.gather(q, plan.split_heads, {batch * heads, t, dh});
    Ref kh = be.gather(k, plan.split_heads, {batch * heads, t, dh});
    Ref vh = be.gather(v, plan.split_heads, {batch * heads, t, dh});
    Ref attn = be.softmax_rows(be.scale(be.bmm_nt(qh, kh), inv_sqrt_dh));
    Ref ctx = be.bmm(attn, vh);
    Ref merged = be.gather(ctx, plan.merge_heads, {batch * t, d});
    Ref attn_out = be.add_row_vec(be.matmul(merged, blk.wo), blk.bo);
    tok = be.add(tok, attn_out);

    Ref h2 = be.layernorm_rows(tok, blk.ln2_g, blk.ln2_b);
    Ref m1 = be.nonlin(be.add_row_vec(be.matmul(h2, blk.w1), blk.b1),
                       cfg.nonlinearity);
    Ref m2 = be.add_row_vec(be.matmul(m1, blk.w2), blk.b2);
    tok = be.add(tok, m2);
  }

  Ref final_tok = be.layernorm_rows(tok, p.lnf_g, p.lnf_b);
  Ref cls_rows = be.take_stride_rows(final_tok, t);
  return be.add_row_vec(be.matmul(cls_rows, p.head_w), p.head_b);
}

// --------------------------------------------------------------------------
// Eager entry points.
// --------------------------------------------------------------------------

inline Tensor batch_to_tensor(std::span<const ImageTensor> batch,
                              const VitConfig& cfg) {
  if (batch.empty()) throw ConfigError("forward: empty batch");
  Tensor out({static_cast<int>(batch.size()), cfg.pixels()});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ImageTensor& img = batch[b];
    if (img.height != cfg.image_size || img.width != cfg.image_size ||
        img.channels != cfg.channels)
      throw ConfigError("forward: image dims do not match config");
    std::copy(img.values.begin(), img.values.end(),
              out.data.begin() + b * img.values.size());
  }
  return out;
}

// logits [batch, num_classes]
inline Tensor forward(const ModelParams& params, const Tensor& flat_batch,
                      const VitPlan* plan = nullptr) {
  if (flat_batch.rank() != 2 ||
      flat_batch.dim(1) != params.config.pixels())
    throw ConfigError("forward: batch shape mismatch");
  EvalBackend be;
  VitPlan local;
  if (!plan || plan->batch != flat_batch.dim(0)) {
    local = build_vit_plan(params.config, flat_batch.dim(0));
    plan = &local;
  }
  auto refs = make_refs(be, params);
  const Tensor* out =
      vit_forward(be, refs, be.wrap(flat_batch), params.config, *plan);
  return *out;
}

inline Tensor forward(const ModelParams& params,
                      std::span<const ImageTensor> batch) {
  return forward(params, batch_to_tensor(batch, params.config));
}

// Mean cross-entropy over the batch plus dLoss/dParam for every tensor,
// all through the reverse-mode graph.
inline std::pair<double, ModelParams> loss_and_grads(
    const ModelParams& params, const Tensor& flat_batch,
    const std::vector<int>& labels, const VitPlan* plan = nullptr) {
  if (flat_batch.dim(0) != static_cast<int>(labels.size()))
    throw ConfigError("loss_and_grads: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= params.config.num_classes)
      throw ConfigError("label out of range");

  Graph graph;
  TapeBackend be(graph);
  VitPlan local;
  if (!plan || plan->batch != flat_batch.dim(0)) {
    local = build_vit_plan(params.config, flat_batch.dim(0));
    plan = &local;
  }
  auto refs = make_refs(be, params);
  const Graph::NodeId input = graph.leaf(flat_batch);
  const Graph::NodeId logits =
      vit_forward(be, refs, input, params.config, *plan);
  const Graph::NodeId loss = graph.cross_entropy_mean(logits, labels);
  graph.backward(loss);

  ModelParams grads = zero_params(params.config);
  grads.key_id = params.key_id;
  // Leaves were created by make_refs in visit order, starting at node 0.
  std::vector<Graph::NodeId> leaf_ids;
  {
    Graph::NodeId next = 0;
    visit_params(grads, [&](const std::string&, Tensor&) {
      leaf_ids.push_back(next++);
    });
  }
  std::size_t i = 0;
  visit_params(grads, [&](const std::string&, Tensor& t) {
    t = graph.grad(leaf_ids[i++]);
  });
  return {graph.value(loss)[0], std::move(grads)};
}

inline std::pair<double, ModelParams> loss_and_grads(
    const ModelParams& params, std::span<const ImageTensor> batch,
    const std::vector<int>& labels) {
  return loss_and_grads(params, batch_to_tensor(batch, params.config), labels);
}

}  // namespace revit
