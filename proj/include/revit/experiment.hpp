#pragma once

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "revit/attacks.hpp"
#include "revit/checkpoint.hpp"
#include "revit/dataset.hpp"
#include "revit/ensemble.hpp"
#include "revit/report.hpp"
#include "revit/trainer.hpp"

namespace revit {

struct DatasetSpec {
  enum class Kind { kSynthetic, kFile };
  Kind kind = Kind::kSynthetic;
  // synthetic
  int classes = 10;
  int image_size = 16;
  int channels = 3;
  int per_class_train = 100;
  int per_class_test = 40;
  // file
  std::string train_path;
  std::string test_path;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  DatasetSpec dataset;
  VitConfig model;
  TrainConfig train;
  int n_models = 4;
  std::vector<int> subset_sizes = {3, 4};
  std::vector<EnsembleMode> modes = {EnsembleMode::kFixed,
                                     EnsembleMode::kRandom};
  AverageKind average = AverageKind::kProbs;
  ShuffleUnit shuffle_unit = ShuffleUnit::kScalar;
  int judge_draws = 1;
  std::vector<AttackSpec> attacks = {
      {AttackKind::kApgdCe, 8.0 / 255.0, 50, 1000, 1, 0, {}},
      {AttackKind::kSquare, 8.0 / 255.0, 50, 1000, 1, 0, {}}};
  std::vector<int> leaked_counts = {4, 2, 1, 0};
  int eval_count = 200;
  std::string output_dir = "out";

  void validate() const {
    model.validate();
    train.validate();
    if (n_models < 1) throw ConfigError("config: n_models must be >= 1");
    if (eval_count < 1) throw ConfigError("config: eval_count must be >= 1");
    if (judge_draws < 1) throw ConfigError("config: judge_draws must be >= 1");
    for (int k : leaked_counts)
      if (k < 0 || k > n_models)
        throw ConfigError("config: leaked count out of range");
    for (int s : subset_sizes)
      if (s < 3 || s > n_models)
        throw ConfigError("config: subset sizes must satisfy 3 <= S <= N");
    for (const AttackSpec& a : attacks) a.validate();
    if (modes.empty()) throw ConfigError("config: no ensemble modes");
  }
};

// --------------------------------------------------------------------------
// Strict JSON config. Unknown fields anywhere are an error; omitted
// blocks fall back to the desk defaults above.
// --------------------------------------------------------------------------
namespace detail {

inline void check_fields(const nlohmann::json& j,
                         std::initializer_list<const char*> known,
                         const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) ok = true;
    if (!ok)
      throw ConfigError(ctx + ": unknown field \"" + it.key() + "\"");
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config field \"") + key +
                        "\": " + e.what());
    }
  }
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  detail::check_fields(j,
                       {"master_seed", "dataset", "model", "train", "ensemble",
                        "shuffle_unit", "attacks", "leaked_counts",
                        "eval_count", "output_dir"},
                       "config");
  ExperimentConfig cfg;
  detail::maybe(j, "master_seed", cfg.master_seed);
  detail::maybe(j, "eval_count", cfg.eval_count);
  detail::maybe(j, "output_dir", cfg.output_dir);
  detail::maybe(j, "leaked_counts", cfg.leaked_counts);
  if (j.contains("shuffle_unit"))
    cfg.shuffle_unit =
        shuffle_unit_from_string(j.at("shuffle_unit").get<std::string>());

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_fields(d,
                         {"kind", "classes", "image_size", "channels",
                          "per_class_train", "per_class_test", "train_path",
                          "test_path"},
                         "config.dataset");
    std::string kind = "synthetic";
    detail::maybe(d, "kind", kind);
    if (kind == "synthetic") {
      cfg.dataset.kind = DatasetSpec::Kind::kSynthetic;
      detail::maybe(d, "classes", cfg.dataset.classes);
      detail::maybe(d, "image_size", cfg.dataset.image_size);
      detail::maybe(d, "channels", cfg.dataset.channels);
      detail::maybe(d, "per_class_train", cfg.dataset.per_class_train);
      detail::maybe(d, "per_class_test", cfg.dataset.per_class_test);
    } else if (kind == "file") {
      cfg.dataset.kind = DatasetSpec::Kind::kFile;
      detail::maybe(d, "train_path", cfg.dataset.train_path);
      detail::maybe(d, "test_path", cfg.dataset.test_path);
      if (cfg.dataset.train_path.empty() || cfg.dataset.test_path.empty())
        throw ConfigError("config.dataset: file kind needs train_path and test_path");
    } else {
      throw ConfigError("config.dataset: unknown kind \"" + kind + "\"");
    }
  }

  if (j.contains("model")) cfg.model = vit_config_from_json(j.at("model"), true);

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_fields(
        t, {"learning_rate", "epochs", "batch_size", "optimizer"},
        "config.train");
    detail::maybe(t, "learning_rate", cfg.train.learning_rate);
    detail::maybe(t, "epochs", cfg.train.epochs);
    detail::maybe(t, "batch_size", cfg.train.batch_size);
    if (t.contains("optimizer"))
      cfg.train.optimizer =
          optimizer_from_string(t.at("optimizer").get<std::string>());
  }

  if (j.contains("ensemble")) {
    const auto& e = j.at("ensemble");
    detail::check_fields(
        e, {"n_models", "subset_sizes", "modes", "average", "judge_draws"},
        "config.ensemble");
    detail::maybe(e, "n_models", cfg.n_models);
    detail::maybe(e, "subset_sizes", cfg.subset_sizes);
    detail::maybe(e, "judge_draws", cfg.judge_draws);
    if (e.contains("modes")) {
      cfg.modes.clear();
      for (const auto& m : e.at("modes"))
        cfg.modes.push_back(ensemble_mode_from_string(m.get<std::string>()));
    }
    if (e.contains("average"))
      cfg.average = average_kind_from_string(e.at("average").get<std::string>());
  }

  if (j.contains("attacks")) {
    cfg.attacks.clear();
    for (const auto& a : j.at("attacks")) {
      detail::check_fields(
          a, {"kind", "epsilon", "iterations", "queries", "restarts"},
          "config.attacks[]");
      AttackSpec spec;
      spec.kind = attack_kind_from_string(a.at("kind").get<std::string>());
      detail::maybe(a, "epsilon", spec.epsilon);
      detail::maybe(a, "iterations", spec.iterations);
      detail::maybe(a, "queries", spec.query_budget);
      detail::maybe(a, "restarts", spec.restarts);
      cfg.attacks.push_back(spec);
    }
  }

  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  return experiment_config_from_json(j);
}

inline nlohmann::ordered_json experiment_config_to_json(
    const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["master_seed"] = cfg.master_seed;
  nlohmann::ordered_json d;
  if (cfg.dataset.kind == DatasetSpec::Kind::kSynthetic) {
    d["kind"] = "synthetic";
    d["classes"] = cfg.dataset.classes;
    d["image_size"] = cfg.dataset.image_size;
    d["channels"] = cfg.dataset.channels;
    d["per_class_train"] = cfg.dataset.per_class_train;
    d["per_class_test"] = cfg.dataset.per_class_test;
  } else {
    d["kind"] = "file";
    d["train_path"] = cfg.dataset.train_path;
    d["test_path"] = cfg.dataset.test_path;
  }
  j["dataset"] = std::move(d);
  j["model"] = vit_config_to_json(cfg.model);
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"optimizer", to_string(cfg.train.optimizer)}};
  j["ensemble"] = nlohmann::ordered_json::object();
  j["ensemble"]["n_models"] = cfg.n_models;
  j["ensemble"]["subset_sizes"] = cfg.subset_sizes;
  {
    nlohmann::ordered_json modes = nlohmann::ordered_json::array();
    for (EnsembleMode m : cfg.modes) modes.push_back(to_string(m));
    j["ensemble"]["modes"] = std::move(modes);
  }
  j["ensemble"]["average"] = to_string(cfg.average);
  j["ensemble"]["judge_draws"] = cfg.judge_draws;
  j["shuffle_unit"] = to_string(cfg.shuffle_unit);
  j["attacks"] = nlohmann::ordered_json::array();
  for (const AttackSpec& a : cfg.attacks) {
    nlohmann::ordered_json ja;
    ja["kind"] = to_string(a.kind);
    ja["epsilon"] = a.epsilon;
    if (a.kind == AttackKind::kApgdCe) {
      ja["iterations"] = a.iterations;
      ja["restarts"] = a.restarts;
    } else {
      ja["queries"] = a.query_budget;
    }
    j["attacks"].push_back(std::move(ja));
  }
  j["leaked_counts"] = cfg.leaked_counts;
  j["eval_count"] = cfg.eval_count;
  j["output_dir"] = cfg.output_dir;
  return j;
}

// --------------------------------------------------------------------------
// Pipeline stages.
// --------------------------------------------------------------------------

struct TrainedDefense {
  std::vector<ShuffleKey> keys;
  std::vector<ModelParams> models;
  LabeledDataset train_data;
  LabeledDataset test_data;
};

inline std::pair<LabeledDataset, LabeledDataset> load_or_synth_dataset(
    const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == DatasetSpec::Kind::kSynthetic) {
    return synth_dataset(cfg.dataset.classes, cfg.dataset.image_size,
                         cfg.dataset.channels, cfg.dataset.per_class_train,
                         cfg.dataset.per_class_test,
                         derive_seed(cfg.master_seed, "dataset"));
  }
  LabeledDataset train = load_dataset(cfg.dataset.train_path);
  LabeledDataset test = load_dataset(cfg.dataset.test_path);
  train.split = "train";
  test.split = "test";
  return {std::move(train), std::move(test)};
}

// keygen + N sub-model trainings, everything derived from master_seed.
inline TrainedDefense prepare_defense(const ExperimentConfig& cfg,
                                      std::ostream* log = &std::cerr) {
  cfg.validate();
  TrainedDefense d;
  auto [train, test] = load_or_synth_dataset(cfg);
  d.train_data = std::move(train);
  d.test_data = std::move(test);
  d.keys = generate_keys(cfg.master_seed, cfg.n_models, cfg.model.patch_size,
                         cfg.model.channels, cfg.shuffle_unit);
  for (const ShuffleKey& key : d.keys) {
    TrainConfig tc = cfg.train;
    tc.seed =
        derive_seed(cfg.master_seed, "train/key=" + std::to_string(key.id));
    if (log)
      *log << "[train] sub-model under key " << key.id << " (epochs "
           << tc.epochs << ")\n";
    d.models.push_back(train_submodel(cfg.model, tc, key, d.train_data));
  }
  return d;
}

namespace detail {

struct ModeCombo {
  EnsembleMode mode;
  int s;
};

inline std::vector<ModeCombo> mode_combos(const ExperimentConfig& cfg) {
  std::vector<ModeCombo> combos;
  for (EnsembleMode m : cfg.modes) {
    if (m == EnsembleMode::kFixed) {
      combos.push_back({m, cfg.n_models});
    } else {
      for (int s : cfg.subset_sizes) combos.push_back({m, s});
    }
  }
  return combos;
}

inline std::string combo_label(const ModeCombo& c) {
  return std::string("mode=") + to_string(c.mode) + "/s=" + std::to_string(c.s);
}

}  // namespace detail

// Clean accuracy and ASR rows for every (mode, S, attack, leaked) cell of
// the configured sweep. Every random draw flows from a labeled stream, so
// rerunning with the same master seed reproduces the report byte for byte.
inline AsrReport evaluate_defense(const ExperimentConfig& cfg,
                                  const TrainedDefense& defense,
                                  std::ostream* log = &std::cerr) {
  cfg.validate();
  const std::uint64_t master = cfg.master_seed;

  // evaluation subset = leading slice of the (already shuffled) test split
  LabeledDataset eval;
  eval.num_classes = defense.test_data.num_classes;
  eval.split = "eval";
  const std::size_t n_eval = std::min<std::size_t>(
      static_cast<std::size_t>(cfg.eval_count), defense.test_data.size());
  for (std::size_t i = 0; i < n_eval; ++i) {
    eval.images.push_back(defense.test_data.images[i]);
    eval.labels.push_back(defense.test_data.labels[i]);
  }
  if (eval.images.empty()) throw DataError("empty evaluation subset");

  std::vector<EnsembleMember> members;
  for (std::size_t i = 0; i < defense.models.size(); ++i)
    members.push_back({defense.models[i], defense.keys[i]});

  auto make_spec = [&](const detail::ModeCombo& c) {
    EnsembleSpec spec;
    spec.members = members;
    spec.mode = c.mode;
    spec.subset_size = c.s;
    spec.average = cfg.average;
    spec.rng_label = detail::combo_label(c);
    spec.validate();
    return spec;
  };

  AsrReport report;
  const std::vector<detail::ModeCombo> combos = detail::mode_combos(cfg);

  // clean rows, one per combo
  std::map<std::string, double> clean_pct;
  for (const detail::ModeCombo& combo : combos) {
    const EnsembleSpec spec = make_spec(combo);
    SplitMix64 rng = derive_stream(master, "clean/" + detail::combo_label(combo));
    int correct = 0;
    for (std::size_t i = 0; i < eval.size(); ++i)
      if (classify_with_draws(spec, eval.images[i], rng, cfg.judge_draws) ==
          eval.labels[i])
        ++correct;
    const double pct = 100.0 * correct / static_cast<double>(eval.size());
    clean_pct[detail::combo_label(combo)] = pct;
    if (log)
      *log << "[clean] " << detail::combo_label(combo) << " accuracy " << pct
           << "%\n";
    report.rows.push_back({to_string(combo.mode), "none", 0, combo.s, 0.0,
                           pct, static_cast<int>(eval.size()), master});
  }

  // surrogates and per-image AE caches are shared across combos
  std::map<int, EnsembleSpec> surrogate_cache;
  auto surrogate_for = [&](int leaked_count) -> const EnsembleSpec& {
    auto it = surrogate_cache.find(leaked_count);
    if (it != surrogate_cache.end()) return it->second;
    std::set<int> leaked_ids;
    for (int id = 1; id <= leaked_count; ++id) leaked_ids.insert(id);
    EnsembleSpec defender;
    defender.members = members;
    defender.mode = EnsembleMode::kFixed;
    defender.average = cfg.average;
    if (log)
      *log << "[surrogate] building for " << leaked_count << " leaked keys\n";
    EnsembleSpec s = build_surrogate(
        defender, leaked_ids,
        derive_seed(master, "attacker/leaked=" + std::to_string(leaked_count)),
        cfg.model, cfg.train, defense.train_data, log);
    return surrogate_cache.emplace(leaked_count, std::move(s)).first->second;
  };

  for (std::size_t ai = 0; ai < cfg.attacks.size(); ++ai) {
    const AttackSpec& attack = cfg.attacks[ai];
    if (attack.kind == AttackKind::kApgdCe) {
      for (int leaked : cfg.leaked_counts) {
        const EnsembleSpec& surrogate = surrogate_for(leaked);
        std::vector<std::optional<ImageTensor>> ae_cache(eval.size());
        auto adversarial_for = [&](std::size_t i) -> const ImageTensor& {
          if (!ae_cache[i]) {
            const std::uint64_t seed = derive_seed(
                master, "apgd/leaked=" + std::to_string(leaked) +
                            "/img=" + std::to_string(i));
            ae_cache[i] =
                apgd_ce(surrogate, eval.images[i], eval.labels[i],
                        attack.epsilon, attack.iterations, seed,
                        attack.restarts);
          }
          return *ae_cache[i];
        };

        for (const detail::ModeCombo& combo : combos) {
          const EnsembleSpec spec = make_spec(combo);
          const std::string cell = "apgd/leaked=" + std::to_string(leaked) +
                                   "/" + detail::combo_label(combo);
          SplitMix64 gate = derive_stream(master, "gate/" + cell);
          AdversarialBatch batch;
          for (std::size_t i = 0; i < eval.size(); ++i) {
            batch.originals.push_back(eval.images[i]);
            batch.labels.push_back(eval.labels[i]);
            const bool correct =
                classify_with_draws(spec, eval.images[i], gate,
                                    cfg.judge_draws) == eval.labels[i];
            batch.attacked.push_back(correct);
            if (correct) {
              batch.adversarials.push_back(adversarial_for(i));
              batch.query_counts.push_back(
                  (attack.iterations + 1) * attack.restarts);
              batch.success_flags.push_back(
                  classify_with_draws(spec, batch.adversarials.back(), gate,
                                      cfg.judge_draws) != eval.labels[i]);
            } else {
              batch.adversarials.push_back(eval.images[i]);
              batch.query_counts.push_back(0);
              batch.success_flags.push_back(false);
            }
          }
          batch.validate(attack.epsilon);
          SplitMix64 judge = derive_stream(master, "judge/" + cell);
          const double asr =
              compute_asr(spec, batch, judge, cfg.judge_draws);
          if (log) *log << "[asr] " << cell << " -> " << asr << "%\n";
          report.rows.push_back({to_string(combo.mode), "apgd_ce", leaked,
                                 combo.s, asr,
                                 clean_pct[detail::combo_label(combo)],
                                 static_cast<int>(eval.size()), master});
        }
      }
    } else {
      for (const detail::ModeCombo& combo : combos) {
        const EnsembleSpec spec = make_spec(combo);
        const std::string cell =
            std::string("square/") + detail::combo_label(combo);
        SplitMix64 gate = derive_stream(master, "gate/" + cell);
        AdversarialBatch batch;
        for (std::size_t i = 0; i < eval.size(); ++i) {
          batch.originals.push_back(eval.images[i]);
          batch.labels.push_back(eval.labels[i]);
          const bool correct =
              classify_with_draws(spec, eval.images[i], gate,
                                  cfg.judge_draws) == eval.labels[i];
          batch.attacked.push_back(correct);
          if (!correct) {
            batch.adversarials.push_back(eval.images[i]);
            batch.query_counts.push_back(0);
            batch.success_flags.push_back(false);
            continue;
          }
          SplitMix64 oracle_rng = derive_stream(
              master, "square_oracle/" + detail::combo_label(combo) +
                          "/img=" + std::to_string(i));
          QueryOracle oracle = [&](const ImageTensor& img) {
            return ensemble_predict(spec, img, oracle_rng);
          };
          SplitMix64 attack_rng = derive_stream(
              master, "square/" + detail::combo_label(combo) +
                          "/img=" + std::to_string(i));
          SquareTrace tr;
          batch.adversarials.push_back(
              square_attack(oracle, eval.images[i], eval.labels[i],
                            attack.epsilon, attack.query_budget, attack_rng,
                            &tr));
          batch.query_counts.push_back(tr.queries);
          batch.success_flags.push_back(!tr.accepted_margins.empty() &&
                                        tr.accepted_margins.back() < 0.0);
        }
        batch.validate(attack.epsilon);
        SplitMix64 judge = derive_stream(master, "judge/" + cell);
        const double asr = compute_asr(spec, batch, judge, cfg.judge_draws);
        if (log) *log << "[asr] " << cell << " -> " << asr << "%\n";
        report.rows.push_back({to_string(combo.mode), "square", 0, combo.s,
                               asr, clean_pct[detail::combo_label(combo)],
                               static_cast<int>(eval.size()), master});
      }
    }
  }

  report.sort_rows();
  report.provenance = nlohmann::ordered_json::object();
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(
                    fnv1a64(experiment_config_to_json(cfg).dump())));
  report.provenance["config_hash"] = hash;
  report.provenance["report_version"] = 1;
  report.provenance["artifact_version"] = kArtifactVersion;
  return report;
}

inline AsrReport run_experiment(const ExperimentConfig& cfg,
                                std::ostream* log = &std::cerr) {
  const TrainedDefense defense = prepare_defense(cfg, log);
  return evaluate_defense(cfg, defense, log);
}

}  // namespace revit
