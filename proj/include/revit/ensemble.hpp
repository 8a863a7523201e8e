#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "revit/rng.hpp"
#include "revit/shuffle.hpp"
#include "revit/vit.hpp"

namespace revit {

enum class EnsembleMode { kFixed, kRandom };

inline const char* to_string(EnsembleMode m) {
  return m == EnsembleMode::kFixed ? "fixed" : "random";
}

inline EnsembleMode ensemble_mode_from_string(const std::string& s) {
  if (s == "fixed") return EnsembleMode::kFixed;
  if (s == "random") return EnsembleMode::kRandom;
  throw ConfigError("unknown ensemble mode: " + s);
}

enum class AverageKind { kProbs, kLogits };

inline const char* to_string(AverageKind a) {
  return a == AverageKind::kProbs ? "probs" : "logits";
}

inline AverageKind average_kind_from_string(const std::string& s) {
  if (s == "probs") return AverageKind::kProbs;
  if (s == "logits") return AverageKind::kLogits;
  throw ConfigError("unknown average kind: " + s);
}

struct EnsembleMember {
  ModelParams params;
  ShuffleKey key;
};

struct EnsembleSpec {
  std::vector<EnsembleMember> members;
  EnsembleMode mode = EnsembleMode::kFixed;
  int subset_size = 0;  // used in random mode
  AverageKind average = AverageKind::kProbs;
  std::string rng_label = "ensemble";

  int size() const { return static_cast<int>(members.size()); }

  void validate() const {
    if (members.empty()) throw ConfigError("ensemble: no members");
    for (const EnsembleMember& m : members) {
      if (m.params.key_id != m.key.id)
        throw ConfigError("ensemble: member params trained under key " +
                          std::to_string(m.params.key_id) +
                          " but paired with key " + std::to_string(m.key.id));
      for (const EnsembleMember& o : members)
        if (&m != &o && m.key.id == o.key.id)
          throw ConfigError("ensemble: duplicate key id " +
                            std::to_string(m.key.id));
    }
    if (mode == EnsembleMode::kRandom &&
        (subset_size < 3 || subset_size > size()))
      throw ConfigError("ensemble: random mode requires 3 <= S <= N");
  }
};

// Uniform draw of s distinct indices from [0, n), returned sorted.
// A partial Fisher-Yates gives every s-subset equal probability.
inline std::vector<int> draw_subset(int n, int s, SplitMix64& rng) {
  if (s < 1 || s > n) throw ConfigError("draw_subset: need 1 <= s <= n");
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[std::size_t(i)] = i;
  for (int i = 0; i < s; ++i) {
    const int j =
        i + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[std::size_t(i)], pool[std::size_t(j)]);
  }
  pool.resize(static_cast<std::size_t>(s));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// One member's probability vector on its own encryption of the image.
inline Tensor member_probs(const EnsembleMember& m, const ImageTensor& image) {
  const ImageTensor enc = encrypt_image(image, m.key);
  Tensor flat({1, m.params.config.pixels()});
  std::copy(enc.values.begin(), enc.values.end(), flat.data.begin());
  Tensor logits = forward(m.params, flat);
  Tensor row({logits.dim(1)});
  std::copy(logits.data.begin(), logits.data.end(), row.data.begin());
  return softmax(row);
}

inline Tensor member_logits(const EnsembleMember& m,
                            const ImageTensor& image) {
  const ImageTensor enc = encrypt_image(image, m.key);
  Tensor flat({1, m.params.config.pixels()});
  std::copy(enc.values.begin(), enc.values.end(), flat.data.begin());
  Tensor logits = forward(m.params, flat);
  Tensor row({logits.dim(1)});
  std::copy(logits.data.begin(), logits.data.end(), row.data.begin());
  return row;
}

// Average over an explicit member subset.
inline Tensor ensemble_predict_subset(const EnsembleSpec& spec,
                                      const ImageTensor& image,
                                      std::span<const int> subset) {
  if (subset.empty()) throw ConfigError("ensemble: empty subset");
  const int l = spec.members.front().params.config.num_classes;
  Tensor acc({l});
  for (int idx : subset) {
    const EnsembleMember& m = spec.members[static_cast<std::size_t>(idx)];
    const Tensor out = spec.average == AverageKind::kProbs
                           ? member_probs(m, image)
                           : member_logits(m, image);
    for (int j = 0; j < l; ++j) acc[std::size_t(j)] += out[std::size_t(j)];
  }
  for (double& v : acc.data) v /= static_cast<double>(subset.size());
  if (spec.average == AverageKind::kLogits) return softmax(acc);
  return acc;
}

// One ensemble query. Fixed mode averages all members; random mode draws
// a fresh S-subset from `rng` on every call, which is the defense's whole
// mechanism against query-based attacks.
inline Tensor ensemble_predict(const EnsembleSpec& spec,
                               const ImageTensor& image, SplitMix64& rng) {
  spec.validate();
  std::vector<int> subset;
  if (spec.mode == EnsembleMode::kFixed) {
    subset.resize(spec.members.size());
    for (std::size_t i = 0; i < subset.size(); ++i)
      subset[i] = static_cast<int>(i);
  } else {
    subset = draw_subset(spec.size(), spec.subset_size, rng);
  }
  return ensemble_predict_subset(spec, image, subset);
}

// Argmax with ties toward the lowest class index.
inline int classify(const Tensor& probs) {
  if (probs.numel() == 0) throw ConfigError("classify: empty vector");
  int best = 0;
  for (std::size_t j = 1; j < probs.numel(); ++j)
    if (probs[j] > probs[std::size_t(best)]) best = static_cast<int>(j);
  return best;
}

// Majority over `draws` fresh predictions (ties toward the lowest class);
// draws = 1 is the default single post-attack query.
inline int classify_with_draws(const EnsembleSpec& spec,
                               const ImageTensor& image, SplitMix64& rng,
                               int draws) {
  if (draws < 1) throw ConfigError("classify_with_draws: draws must be >= 1");
  if (draws == 1) return classify(ensemble_predict(spec, image, rng));
  const int l = spec.members.front().params.config.num_classes;
  std::vector<int> votes(static_cast<std::size_t>(l), 0);
  for (int i = 0; i < draws; ++i)
    ++votes[static_cast<std::size_t>(
        classify(ensemble_predict(spec, image, rng)))];
  int best = 0;
  for (int j = 1; j < l; ++j)
    if (votes[std::size_t(j)] > votes[std::size_t(best)]) best = j;
  return best;
}

}  // namespace revit
