#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "revit/ensemble.hpp"
#include "revit/graph.hpp"
#include "revit/trainer.hpp"

namespace revit {

enum class AttackKind { kApgdCe, kSquare };

inline const char* to_string(AttackKind k) {
  return k == AttackKind::kApgdCe ? "apgd_ce" : "square";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "apgd_ce") return AttackKind::kApgdCe;
  if (s == "square") return AttackKind::kSquare;
  throw ConfigError("unknown attack kind: " + s);
}

struct AttackSpec {
  AttackKind kind = AttackKind::kApgdCe;
  double epsilon = 8.0 / 255.0;
  int iterations = 50;     // APGD-ce
  int query_budget = 1000; // Square
  int restarts = 1;        // APGD-ce; restart 1 starts at x, later ones at
                           // a random point in the ball
  std::uint64_t seed = 0;
  std::vector<int> leaked_key_ids;

  void validate() const {
    if (epsilon < 0.0 || epsilon > 1.0)
      throw ConfigError("attack: epsilon must lie in [0,1]");
    if (kind == AttackKind::kApgdCe && iterations < 1)
      throw ConfigError("attack: iterations must be >= 1");
    if (kind == AttackKind::kSquare && query_budget < 0)
      throw ConfigError("attack: query budget must be >= 0");
    if (restarts < 1) throw ConfigError("attack: restarts must be >= 1");
  }
};

struct AdversarialBatch {
  std::vector<ImageTensor> originals;
  std::vector<ImageTensor> adversarials;
  std::vector<int> labels;
  std::vector<int> query_counts;
  std::vector<char> attacked;       // false where the clean gate skipped
  std::vector<char> success_flags;  // judged at attack time

  std::size_t size() const { return originals.size(); }

  // Ball and range feasibility for every example, attacked or not.
  void validate(double epsilon) const {
    if (originals.size() != adversarials.size() ||
        originals.size() != labels.size())
      throw DataError("adversarial batch: ragged fields");
    for (std::size_t i = 0; i < originals.size(); ++i) {
      if (linf_distance(originals[i], adversarials[i]) > epsilon + 1e-12)
        throw NumericalError("adversarial example " + std::to_string(i) +
                             " leaves the epsilon ball");
      if (!adversarials[i].in_unit_range())
        throw NumericalError("adversarial example " + std::to_string(i) +
                             " leaves [0,1]");
    }
  }
};

// p_true - max_{k != true} p_k; negative means misclassified.
inline double margin_loss(const Tensor& probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.numel())
    throw ConfigError("margin_loss: label out of range");
  double other = -1e300;
  for (std::size_t j = 0; j < probs.numel(); ++j)
    if (static_cast<int>(j) != label) other = std::max(other, probs[j]);
  return probs[static_cast<std::size_t>(label)] - other;
}

// --------------------------------------------------------------------------
// Gradient oracle for the fixed-mode ensemble: cross-entropy of the
// averaged output, differentiated through each member's encryption (a
// gather, hence linear) and the full transformer.
// --------------------------------------------------------------------------
class EnsembleGradOracle {
 public:
  EnsembleGradOracle(const EnsembleSpec& spec) : spec_(spec) {
    spec.validate();
    if (spec.mode != EnsembleMode::kFixed)
      throw ConfigError("gradient oracle requires a fixed-mode ensemble");
    const VitConfig& cfg = spec.members.front().params.config;
    plan_ = build_vit_plan(cfg, 1);
    for (const EnsembleMember& m : spec.members)
      enc_maps_.push_back(std::make_shared<const std::vector<int>>(
          detail::encryption_index_map(m.key, cfg.image_size,
                                       cfg.image_size)));
  }

  struct Result {
    double loss;
    std::vector<double> grad;  // dLoss/dPixel, flat image layout
  };

  Result operator()(const ImageTensor& image, int label) const {
    const VitConfig& cfg = spec_.members.front().params.config;
    Graph graph;
    TapeBackend be(graph);
    Tensor flat({1, cfg.pixels()});
    std::copy(image.values.begin(), image.values.end(), flat.data.begin());
    const Graph::NodeId x = graph.leaf(std::move(flat));

    const double inv_n = 1.0 / static_cast<double>(spec_.members.size());
    Graph::NodeId acc = -1;
    for (std::size_t m = 0; m < spec_.members.size(); ++m) {
      const Graph::NodeId enc = graph.gather(x, enc_maps_[m], {1, cfg.pixels()});
      auto refs = make_refs(be, spec_.members[m].params);
      Graph::NodeId logits = vit_forward(be, refs, enc, cfg, plan_);
      Graph::NodeId term = spec_.average == AverageKind::kProbs
                               ? graph.softmax_rows(logits)
                               : logits;
      acc = (acc < 0) ? term : graph.add(acc, term);
    }
    acc = graph.scale(acc, inv_n);
    const Graph::NodeId loss =
        spec_.average == AverageKind::kProbs
            ? graph.neg_log_pick(acc, label)
            : graph.cross_entropy_mean(acc, {label});
    graph.backward(loss);
    Result r;
    r.loss = graph.value(loss)[0];
    r.grad = graph.grad(x).data;
    return r;
  }

 private:
  const EnsembleSpec& spec_;
  VitPlan plan_;
  std::vector<std::shared_ptr<const std::vector<int>>> enc_maps_;
};

// --------------------------------------------------------------------------
// APGD-ce: projected gradient ascent on the cross-entropy with momentum
// 0.75, a fixed checkpoint schedule, and step halving with restart from
// the best iterate. Returns the iterate with maximal loss.
// --------------------------------------------------------------------------

struct ApgdTrace {
  std::vector<double> losses;  // every evaluated iterate
  double best_loss = -1e300;
};

namespace detail {

inline std::vector<int> apgd_checkpoints(int iterations) {
  std::vector<int> w;
  double p_prev = 0.0, p_cur = 0.22;
  while (true) {
    const int k = static_cast<int>(std::ceil(p_cur * iterations));
    if (k >= iterations) break;
    if (w.empty() || k > w.back()) w.push_back(k);
    const double p_next = p_cur + std::max(p_cur - p_prev - 0.03, 0.06);
    p_prev = p_cur;
    p_cur = p_next;
  }
  return w;
}

using LossGradFn =
    std::function<EnsembleGradOracle::Result(const ImageTensor&, int)>;

inline ImageTensor apgd_single_run(const LossGradFn& f, const ImageTensor& x,
                                   const ImageTensor& x_init, int label,
                                   double eps, int iterations,
                                   ApgdTrace* trace) {
  const std::size_t n = x.values.size();
  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::max(0.0, x.values[i] - eps);
    hi[i] = std::min(1.0, x.values[i] + eps);
  }
  auto project = [&](ImageTensor& img) {
    for (std::size_t i = 0; i < n; ++i)
      img.values[i] = std::min(hi[i], std::max(lo[i], img.values[i]));
  };

  ImageTensor cur = x_init;
  project(cur);
  ImageTensor prev = cur;

  auto eval = f(cur, label);
  if (!std::isfinite(eval.loss))
    throw NumericalError("NaN loss inside APGD");
  if (trace) trace->losses.push_back(eval.loss);

  ImageTensor best = cur;
  double best_loss = eval.loss;
  std::vector<double> best_grad = eval.grad;

  double step = 2.0 * eps;
  const std::vector<int> checkpoints = apgd_checkpoints(iterations);
  std::size_t next_ckpt = 0;
  int improvements = 0;
  int last_ckpt = 0;
  double ckpt_step = step;
  double ckpt_best = best_loss;

  for (int k = 1; k <= iterations; ++k) {
    ImageTensor z = cur;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = eval.grad[i];
      z.values[i] += step * ((g > 0.0) - (g < 0.0));
    }
    project(z);

    ImageTensor next = cur;
    if (k == 1) {
      next = z;
    } else {
      for (std::size_t i = 0; i < n; ++i)
        next.values[i] = cur.values[i] +
                         0.75 * (z.values[i] - cur.values[i]) +
                         0.25 * (cur.values[i] - prev.values[i]);
      project(next);
    }

    const double prev_loss = eval.loss;
    eval = f(next, label);
    if (!std::isfinite(eval.loss))
      throw NumericalError("NaN loss inside APGD");
    if (trace) trace->losses.push_back(eval.loss);
    if (eval.loss > prev_loss) ++improvements;
    if (eval.loss > best_loss) {
      best_loss = eval.loss;
      best = next;
      best_grad = eval.grad;
    }
    prev = cur;
    cur = next;

    if (next_ckpt < checkpoints.size() && k == checkpoints[next_ckpt]) {
      const int interval = k - last_ckpt;
      const bool too_few = improvements < 0.75 * interval;
      const bool stalled = (step == ckpt_step) && (best_loss == ckpt_best);
      if (too_few || stalled) {
        step *= 0.5;
        cur = best;
        prev = best;
        eval.loss = best_loss;
        eval.grad = best_grad;
      }
      improvements = 0;
      last_ckpt = k;
      ckpt_step = step;
      ckpt_best = best_loss;
      ++next_ckpt;
    }
  }
  if (trace) trace->best_loss = std::max(trace->best_loss, best_loss);
  return best;
}

}  // namespace detail

inline ImageTensor apgd_ce(const EnsembleSpec& surrogate,
                           const ImageTensor& x, int label, double eps,
                           int iterations, std::uint64_t seed,
                           int restarts = 1, ApgdTrace* trace = nullptr) {
  if (eps < 0.0) throw ConfigError("apgd_ce: epsilon must be >= 0");
  if (iterations < 1) throw ConfigError("apgd_ce: iterations must be >= 1");
  if (eps == 0.0) return x;

  EnsembleGradOracle oracle(surrogate);
  detail::LossGradFn f = [&](const ImageTensor& img, int y) {
    return oracle(img, y);
  };

  SplitMix64 rng = derive_stream(seed, "apgd_restarts");
  ImageTensor best = x;
  double best_loss = -1e300;
  for (int r = 0; r < restarts; ++r) {
    ImageTensor init = x;
    if (r > 0)
      for (double& v : init.values)
        v += eps * (2.0 * rng.uniform01() - 1.0);
    ApgdTrace local;
    ImageTensor cand = detail::apgd_single_run(f, x, init, label, eps,
                                               iterations, &local);
    if (trace) {
      trace->losses.insert(trace->losses.end(), local.losses.begin(),
                           local.losses.end());
      trace->best_loss = std::max(trace->best_loss, local.best_loss);
    }
    if (local.best_loss > best_loss) {
      best_loss = local.best_loss;
      best = cand;
    }
  }
  return best;
}

// --------------------------------------------------------------------------
// Square attack: query-only random search with square-shaped +-eps
// proposals, accepting exactly the margin-decreasing ones.
// --------------------------------------------------------------------------

using QueryOracle = std::function<Tensor(const ImageTensor&)>;

struct SquareTrace {
  int queries = 0;
  std::vector<double> accepted_margins;
};

namespace detail {

inline int square_side(double consumed, int height, int width) {
  static constexpr double kThresholds[] = {0.05, 0.2, 0.5, 0.8, 0.95};
  double p = 0.8;
  for (double t : kThresholds)
    if (consumed >= t) p *= 0.5;
  const int h = static_cast<int>(
      std::lround(std::sqrt(p * height * width)));
  return std::max(1, std::min(h, std::min(height, width)));
}

}  // namespace detail

inline ImageTensor square_attack(const QueryOracle& oracle,
                                 const ImageTensor& x, int label, double eps,
                                 int query_budget, SplitMix64& rng,
                                 SquareTrace* trace = nullptr) {
  if (eps < 0.0) throw ConfigError("square_attack: epsilon must be >= 0");
  if (query_budget <= 0 || eps == 0.0) {
    if (trace) trace->queries = 0;
    return x;
  }
  const int h = x.height, w = x.width, c = x.channels;

  auto clipped = [&](const std::vector<double>& delta) {
    ImageTensor out(h, w, c);
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values[i] =
          std::min(1.0, std::max(0.0, x.values[i] + delta[i]));
    return out;
  };

  // init: full-eps vertical stripes, sign drawn per (column, channel)
  std::vector<double> best_delta(x.values.size());
  for (int col = 0; col < w; ++col)
    for (int ch = 0; ch < c; ++ch) {
      const double sign = rng.bounded(2) == 1 ? eps : -eps;
      for (int row = 0; row < h; ++row)
        best_delta[(static_cast<std::size_t>(row) * w + col) * c + ch] = sign;
    }

  int queries = 0;
  ImageTensor best_img = clipped(best_delta);
  double best_margin = margin_loss(oracle(best_img), label);
  ++queries;
  if (trace) trace->accepted_margins.push_back(best_margin);

  while (queries < query_budget && best_margin >= 0.0) {
    const double consumed =
        static_cast<double>(queries) / static_cast<double>(query_budget);
    const int side = detail::square_side(consumed, h, w);
    const int row0 = static_cast<int>(rng.bounded(h - side + 1));
    const int col0 = static_cast<int>(rng.bounded(w - side + 1));

    std::vector<double> cand = best_delta;
    for (int ch = 0; ch < c; ++ch) {
      const double sign = rng.bounded(2) == 1 ? eps : -eps;
      for (int dy = 0; dy < side; ++dy)
        for (int dx = 0; dx < side; ++dx)
          cand[(static_cast<std::size_t>(row0 + dy) * w + col0 + dx) * c +
               ch] = sign;
    }

    ImageTensor cand_img = clipped(cand);
    const double m = margin_loss(oracle(cand_img), label);
    ++queries;
    if (m < best_margin) {
      best_margin = m;
      best_delta = std::move(cand);
      best_img = std::move(cand_img);
      if (trace) trace->accepted_margins.push_back(best_margin);
    }
  }
  if (trace) trace->queries = queries;
  return best_img;
}

inline ImageTensor square_attack(const QueryOracle& oracle,
                                 const ImageTensor& x, int label, double eps,
                                 int query_budget, std::uint64_t seed,
                                 SquareTrace* trace = nullptr) {
  SplitMix64 rng = derive_stream(seed, "square");
  return square_attack(oracle, x, label, eps, query_budget, rng, trace);
}

// --------------------------------------------------------------------------
// Leaked-key surrogate: the attacker keeps every leaked (params, key)
// pair of the defender and fills the remaining slots with sub-models it
// trains itself under fresh keys. Attacker key ids continue after the
// defender's so membership is visible from ids alone.
// --------------------------------------------------------------------------
inline EnsembleSpec build_surrogate(const EnsembleSpec& defender,
                                    const std::set<int>& leaked_ids,
                                    std::uint64_t attacker_seed,
                                    const VitConfig& cfg,
                                    const TrainConfig& tc,
                                    const LabeledDataset& train_data,
                                    std::ostream* log = nullptr) {
  defender.validate();
  for (int id : leaked_ids) {
    bool found = false;
    for (const EnsembleMember& m : defender.members)
      if (m.key.id == id) found = true;
    if (!found)
      throw ConfigError("build_surrogate: leaked id " + std::to_string(id) +
                        " not found in defender");
  }

  int next_id = 0;
  for (const EnsembleMember& m : defender.members)
    next_id = std::max(next_id, m.key.id);

  EnsembleSpec surrogate;
  surrogate.mode = EnsembleMode::kFixed;
  surrogate.average = defender.average;
  surrogate.rng_label = "surrogate";
  const ShuffleUnit unit = defender.members.front().key.unit;
  for (const EnsembleMember& m : defender.members) {
    if (leaked_ids.count(m.key.id)) {
      surrogate.members.push_back(m);
      continue;
    }
    ++next_id;
    const ShuffleKey key = make_key(
        next_id, derive_seed(attacker_seed, "key/" + std::to_string(next_id)),
        m.key.block_size, m.key.channels, unit);
    TrainConfig attacker_tc = tc;
    attacker_tc.seed =
        derive_seed(attacker_seed, "train/key=" + std::to_string(next_id));
    if (log)
      *log << "[surrogate] training attacker sub-model with key "
           << next_id << "\n";
    ModelParams params = train_submodel(cfg, attacker_tc, key, train_data);
    surrogate.members.push_back({std::move(params), key});
  }
  return surrogate;
}

// --------------------------------------------------------------------------
// ASR over the correctly-classified-clean subset. In random mode the
// clean and adversarial judgments each consume one fresh subset draw
// (or a majority over judge_draws).
// --------------------------------------------------------------------------
inline double compute_asr(const EnsembleSpec& defense,
                          const AdversarialBatch& batch, SplitMix64& rng,
                          int judge_draws = 1) {
  if (batch.size() == 0) throw ConfigError("compute_asr: empty batch");
  int correct = 0, flipped = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int clean =
        classify_with_draws(defense, batch.originals[i], rng, judge_draws);
    if (clean != batch.labels[i]) continue;
    ++correct;
    const int adv =
        classify_with_draws(defense, batch.adversarials[i], rng, judge_draws);
    if (adv != batch.labels[i]) ++flipped;
  }
  if (correct == 0) throw DataError("no correctly classified examples");
  return 100.0 * static_cast<double>(flipped) / static_cast<double>(correct);
}

}  // namespace revit
