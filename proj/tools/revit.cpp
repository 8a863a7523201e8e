// Command-line surface for the random-ensemble workbench: key generation,
// synthetic dataset management, sub-model training, attack evaluation and
// the full pipeline. Logs go to stderr, results to files/stdout.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "revit/checkpoint.hpp"
#include "revit/dataset.hpp"
#include "revit/experiment.hpp"
#include "revit/report.hpp"
#include "revit/shuffle.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string config_path;
  std::string out_dir = "out";
  std::string format = "json";
};

revit::ExperimentConfig load_config(const GlobalOpts& g) {
  revit::ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = revit::load_experiment_config(g.config_path);
  if (g.seed_set) cfg.master_seed = g.seed;
  return cfg;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw revit::IoError("cannot create directory: " + dir);
}

void write_reports(const revit::AsrReport& report, const GlobalOpts& g) {
  ensure_dir(g.out_dir);
  if (g.format == "json" || g.format == "both")
    revit::emit_report(report, "json", g.out_dir + "/report.json");
  if (g.format == "csv" || g.format == "both")
    revit::emit_report(report, "csv", g.out_dir + "/report.csv");
  std::cout << revit::report_to_csv(report);
}

void save_defense(const revit::ExperimentConfig& cfg,
                  const revit::TrainedDefense& defense,
                  const std::string& dir) {
  ensure_dir(dir);
  revit::save_key_file(defense.keys, dir + "/keys.json");
  for (std::size_t i = 0; i < defense.models.size(); ++i)
    revit::save_checkpoint(defense.models[i],
                           dir + "/model_" +
                               std::to_string(defense.keys[i].id) + ".ckpt");
  std::ofstream cfg_out(dir + "/config.json", std::ios::binary);
  if (!cfg_out) throw revit::IoError("cannot write config copy");
  cfg_out << revit::experiment_config_to_json(cfg).dump(2) << "\n";
}

revit::TrainedDefense load_defense(const revit::ExperimentConfig& cfg,
                                   const std::string& dir) {
  revit::TrainedDefense d;
  d.keys = revit::load_key_file(dir + "/keys.json");
  for (const revit::ShuffleKey& key : d.keys) {
    revit::ModelParams params = revit::load_checkpoint(
        dir + "/model_" + std::to_string(key.id) + ".ckpt");
    if (params.key_id != key.id)
      throw revit::DataError("checkpoint key id does not match key file");
    d.models.push_back(std::move(params));
  }
  auto [train, test] = revit::load_or_synth_dataset(cfg);
  d.train_data = std::move(train);
  d.test_data = std::move(test);
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"random ensemble of encrypted ViT classifiers - workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--seed", g.seed, "master seed (overrides config)")
      ->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--config", g.config_path, "experiment config JSON");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--format", g.format, "report format: csv|json|both")
      ->check(CLI::IsMember({"csv", "json", "both"}));

  // keygen
  auto* keygen = app.add_subcommand("keygen", "generate a key file");
  int kg_n = 4, kg_block = 4, kg_channels = 3;
  std::string kg_unit = "scalar";
  keygen->add_option("--n", kg_n, "number of keys");
  keygen->add_option("--block-size", kg_block, "block size M");
  keygen->add_option("--channels", kg_channels, "image channels");
  keygen->add_option("--unit", kg_unit, "shuffle unit: scalar|pixel")
      ->check(CLI::IsMember({"scalar", "pixel"}));
  keygen->callback([&]() {
    const std::uint64_t seed = g.seed_set ? g.seed : 1;
    auto keys = revit::generate_keys(seed, kg_n, kg_block, kg_channels,
                                     revit::shuffle_unit_from_string(kg_unit));
    ensure_dir(g.out_dir);
    revit::save_key_file(keys, g.out_dir + "/keys.json");
    std::cerr << "[keygen] wrote " << keys.size() << " keys to " << g.out_dir
              << "/keys.json\n";
  });

  // dataset synth / inspect
  auto* dataset = app.add_subcommand("dataset", "dataset utilities");
  dataset->require_subcommand(1);
  auto* synth = dataset->add_subcommand("synth", "write synthetic splits");
  int sy_classes = 10, sy_size = 16, sy_channels = 3, sy_train = 100,
      sy_test = 40;
  synth->add_option("--classes", sy_classes, "number of classes");
  synth->add_option("--size", sy_size, "image height/width");
  synth->add_option("--channels", sy_channels, "channels");
  synth->add_option("--per-class-train", sy_train, "train images per class");
  synth->add_option("--per-class-test", sy_test, "test images per class");
  synth->callback([&]() {
    const std::uint64_t seed = g.seed_set ? g.seed : 1;
    auto [train, test] = revit::synth_dataset(sy_classes, sy_size, sy_channels,
                                              sy_train, sy_test, seed);
    ensure_dir(g.out_dir);
    revit::save_dataset(train, g.out_dir + "/train.bin");
    revit::save_dataset(test, g.out_dir + "/test.bin");
    std::cerr << "[dataset] wrote " << train.size() << " train / "
              << test.size() << " test images to " << g.out_dir << "\n";
  });
  auto* inspect = dataset->add_subcommand("inspect", "print dataset summary");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "dataset file")->required();
  inspect->callback([&]() {
    const revit::LabeledDataset ds = revit::load_dataset(inspect_path);
    const revit::ImageTensor& first = ds.images.front();
    std::cout << "count " << ds.size() << "\n"
              << "dims " << first.height << "x" << first.width << "x"
              << first.channels << "\n"
              << "classes " << ds.num_classes << "\n";
    std::vector<int> hist(static_cast<std::size_t>(ds.num_classes), 0);
    for (int y : ds.labels) ++hist[static_cast<std::size_t>(y)];
    for (int k = 0; k < ds.num_classes; ++k)
      std::cout << "class " << k << ": " << hist[std::size_t(k)] << "\n";
  });

  // train
  auto* train_cmd =
      app.add_subcommand("train", "train the defender's sub-models");
  train_cmd->callback([&]() {
    const revit::ExperimentConfig cfg = load_config(g);
    const revit::TrainedDefense defense = revit::prepare_defense(cfg);
    save_defense(cfg, defense, g.out_dir);
    std::cerr << "[train] wrote keys and " << defense.models.size()
              << " checkpoints to " << g.out_dir << "\n";
  });

  // attack
  auto* attack_cmd = app.add_subcommand(
      "attack", "evaluate attacks against previously trained sub-models");
  std::string models_dir;
  attack_cmd->add_option("--models", models_dir, "directory from `train`")
      ->required();
  attack_cmd->callback([&]() {
    const revit::ExperimentConfig cfg = load_config(g);
    const revit::TrainedDefense defense = load_defense(cfg, models_dir);
    const revit::AsrReport report = revit::evaluate_defense(cfg, defense);
    write_reports(report, g);
  });

  // report conversion
  auto* report_cmd = app.add_subcommand("report", "convert a JSON report");
  std::string report_in;
  report_cmd->add_option("--in", report_in, "report.json path")->required();
  report_cmd->callback([&]() {
    const revit::AsrReport report = revit::load_report(report_in);
    write_reports(report, g);
  });

  // full pipeline
  auto* run_cmd = app.add_subcommand("run", "full pipeline from a config");
  run_cmd->callback([&]() {
    const revit::ExperimentConfig cfg = load_config(g);
    const revit::TrainedDefense defense = revit::prepare_defense(cfg);
    save_defense(cfg, defense, g.out_dir);
    const revit::AsrReport report = revit::evaluate_defense(cfg, defense);
    write_reports(report, g);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const revit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const revit::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const revit::NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const revit::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 5;
  }
  return 0;
}
