#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "revit/dataset.hpp"
#include "revit/shuffle.hpp"
#include "revit/vit.hpp"

namespace revit {

enum class OptimizerKind { kAdam, kSgd };

inline const char* to_string(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer: " + s);
}

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 1;

  void validate() const {
    if (learning_rate <= 0.0)
      throw ConfigError("train config: learning_rate must be positive");
    if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
    if (batch_size < 1)
      throw ConfigError("train config: batch_size must be >= 1");
  }
};

struct TrainStats {
  std::vector<double> step_losses;
};

namespace detail {

inline Tensor encrypted_flat_batch(const LabeledDataset& data,
                                   const std::vector<int>& indices,
                                   std::size_t begin, std::size_t end,
                                   const ShuffleKey& key,
                                   const VitConfig& cfg) {
  Tensor out({static_cast<int>(end - begin), cfg.pixels()});
  for (std::size_t i = begin; i < end; ++i) {
    const ImageTensor enc =
        encrypt_image(data.images[std::size_t(indices[i])], key);
    std::copy(enc.values.begin(), enc.values.end(),
              out.data.begin() + (i - begin) * enc.values.size());
  }
  return out;
}

inline void check_data_compat(const LabeledDataset& data,
                              const VitConfig& cfg, const ShuffleKey& key) {
  if (data.images.empty()) throw DataError("empty dataset");
  data.validate();
  const ImageTensor& img = data.images.front();
  if (img.height != cfg.image_size || img.width != cfg.image_size ||
      img.channels != cfg.channels)
    throw ConfigError("dataset dims do not match model config");
  if (data.num_classes > cfg.num_classes)
    throw ConfigError("dataset has more classes than the model head");
  if (img.channels != key.channels ||
      img.height % key.block_size != 0 || img.width % key.block_size != 0)
    throw ConfigError("dataset dims do not match key");
}

}  // namespace detail

// Adam with the standard decay constants; m/v live in ModelParams-shaped
// containers so the update is one uniform sweep.
class AdamState {
 public:
  AdamState(const VitConfig& cfg, double lr)
      : lr_(lr), m_(zero_params(cfg)), v_(zero_params(cfg)) {}

  void step(ModelParams& params, const ModelParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    auto mi = collect(m_);
    auto vi = collect(v_);
    auto gi = collect(const_cast<ModelParams&>(grads));
    auto pi = collect(params);
    for (std::size_t k = 0; k < pi.size(); ++k) {
      Tensor& p = *pi[k];
      Tensor& m = *mi[k];
      Tensor& v = *vi[k];
      const Tensor& g = *gi[k];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  static std::vector<Tensor*> collect(ModelParams& p) {
    std::vector<Tensor*> out;
    visit_params(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
  }

  double lr_;
  int t_ = 0;
  ModelParams m_, v_;
};

// Trains one sub-model on images encrypted with `key`. Deterministic in
// every input; epoch shuffles come from per-epoch labeled streams so the
// data order never interacts with any other random choice.
inline ModelParams train_submodel(const VitConfig& cfg, const TrainConfig& tc,
                                  const ShuffleKey& key,
                                  const LabeledDataset& data,
                                  TrainStats* stats = nullptr) {
  cfg.validate();
  tc.validate();
  detail::check_data_compat(data, cfg, key);

  ModelParams params = init_params(cfg, tc.seed);
  params.key_id = key.id;
  if (tc.epochs == 0) return params;

  AdamState adam(cfg, tc.learning_rate);
  const std::size_t n = data.images.size();
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

  int step_index = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    SplitMix64 rng =
        derive_stream(tc.seed, "shuffle/epoch=" + std::to_string(epoch));
    fisher_yates(rng, order);
    for (std::size_t begin = 0; begin < n;
         begin += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end =
          std::min(n, begin + static_cast<std::size_t>(tc.batch_size));
      Tensor batch =
          detail::encrypted_flat_batch(data, order, begin, end, key, cfg);
      std::vector<int> labels;
      for (std::size_t i = begin; i < end; ++i)
        labels.push_back(data.labels[std::size_t(order[i])]);

      auto [loss, grads] = loss_and_grads(params, batch, labels);
      if (!std::isfinite(loss))
        throw NumericalError("NaN loss at training step " +
                             std::to_string(step_index) + " (key " +
                             std::to_string(key.id) + ")");
      if (tc.optimizer == OptimizerKind::kAdam) {
        adam.step(params, grads);
      } else {
        std::vector<Tensor*> pt, gt;
        visit_params(params,
                     [&](const std::string&, Tensor& t) { pt.push_back(&t); });
        visit_params(grads,
                     [&](const std::string&, Tensor& t) { gt.push_back(&t); });
        for (std::size_t k = 0; k < pt.size(); ++k)
          for (std::size_t i = 0; i < pt[k]->numel(); ++i)
            (*pt[k])[i] -= tc.learning_rate * (*gt[k])[i];
      }
      if (stats) stats->step_losses.push_back(loss);
      ++step_index;
    }
  }
  return params;
}

// Fraction of images whose argmax logit, after encrypting with `key`,
// equals the label. Ties break toward the lowest class index.
inline double evaluate_accuracy(const ModelParams& params,
                                const ShuffleKey& key,
                                const LabeledDataset& data) {
  detail::check_data_compat(data, params.config, key);
  const VitConfig& cfg = params.config;
  const std::size_t n = data.images.size();
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);

  std::size_t correct = 0;
  constexpr std::size_t kEvalBatch = 64;
  for (std::size_t begin = 0; begin < n; begin += kEvalBatch) {
    const std::size_t end = std::min(n, begin + kEvalBatch);
    Tensor batch =
        detail::encrypted_flat_batch(data, order, begin, end, key, cfg);
    Tensor logits = forward(params, batch);
    const int l = cfg.num_classes;
    for (std::size_t r = 0; r < end - begin; ++r) {
      int best = 0;
      for (int j = 1; j < l; ++j)
        if (logits[r * l + j] > logits[r * l + best]) best = j;
      if (best == data.labels[begin + r]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace revit
