#include <gtest/gtest.h>

#include "revit/dataset.hpp"
#include "revit/shuffle.hpp"
#include "revit/trainer.hpp"

namespace {

using revit::LabeledDataset;
using revit::ModelParams;
using revit::ShuffleKey;
using revit::Tensor;
using revit::TrainConfig;
using revit::VitConfig;

VitConfig small_config() {
  VitConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 3;
  cfg.embed_dim = 16;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.num_classes = 2;
  return cfg;
}

LabeledDataset toy_data() {
  // 8 images, 2 classes
  auto [train, test] = revit::synth_dataset(2, 8, 3, 4, 1, 555);
  return train;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  bool equal = true;
  std::vector<const Tensor*> ta, tb;
  revit::visit_params(const_cast<ModelParams&>(a),
                      [&](const std::string&, Tensor& t) { ta.push_back(&t); });
  revit::visit_params(const_cast<ModelParams&>(b),
                      [&](const std::string&, Tensor& t) { tb.push_back(&t); });
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i]->data != tb[i]->data) equal = false;
  return equal;
}

TEST(TrainSubmodel, ZeroEpochsReturnsInit) {
  const VitConfig cfg = small_config();
  TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 77;
  const ShuffleKey key = revit::make_key(1, 10, 4, 3);
  const ModelParams trained = revit::train_submodel(cfg, tc, key, toy_data());
  const ModelParams init = revit::init_params(cfg, tc.seed);
  EXPECT_TRUE(params_equal(trained, init));
  EXPECT_EQ(trained.key_id, 1);
}

TEST(TrainSubmodel, Deterministic) {
  const VitConfig cfg = small_config();
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 5;
  const ShuffleKey key = revit::make_key(2, 11, 4, 3);
  const LabeledDataset data = toy_data();
  const ModelParams a = revit::train_submodel(cfg, tc, key, data);
  const ModelParams b = revit::train_submodel(cfg, tc, key, data);
  EXPECT_TRUE(params_equal(a, b));
}

TEST(TrainSubmodel, DoesNotMutateInputs) {
  const VitConfig cfg = small_config();
  TrainConfig tc;
  tc.epochs = 2;
  const ShuffleKey key = revit::make_key(1, 12, 4, 3);
  const LabeledDataset data = toy_data();
  const std::vector<double> first_before = data.images[0].values;
  const std::vector<int> perm_before = key.permutation;
  (void)revit::train_submodel(cfg, tc, key, data);
  EXPECT_EQ(data.images[0].values, first_before);
  EXPECT_EQ(key.permutation, perm_before);
}

// Overfitting oracle: thresholds frozen after the first calibration run.
TEST(TrainSubmodel, OverfitsToyDataset) {
  const VitConfig cfg = small_config();
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  tc.seed = 9;
  const ShuffleKey key = revit::make_key(1, 13, 4, 3);
  const LabeledDataset data = toy_data();

  revit::TrainStats stats;
  const ModelParams trained =
      revit::train_submodel(cfg, tc, key, data, &stats);
  EXPECT_DOUBLE_EQ(revit::evaluate_accuracy(trained, key, data), 1.0);
  ASSERT_FALSE(stats.step_losses.empty());
  EXPECT_LT(stats.step_losses.back(), 0.1);

  // trend invariant: mean loss over the last 10% of steps is below the
  // mean over the first 10%
  const std::size_t tenth = std::max<std::size_t>(1, stats.step_losses.size() / 10);
  double head = 0.0, tail = 0.0;
  for (std::size_t i = 0; i < tenth; ++i) {
    head += stats.step_losses[i];
    tail += stats.step_losses[stats.step_losses.size() - 1 - i];
  }
  EXPECT_LT(tail, head);

  // a memorized dataset evaluates to 1.0; forcing wrong labels gives 0.0
  LabeledDataset wrong = data;
  for (std::size_t i = 0; i < wrong.size(); ++i) {
    Tensor flat({1, cfg.pixels()});
    const revit::ImageTensor enc = revit::encrypt_image(wrong.images[i], key);
    std::copy(enc.values.begin(), enc.values.end(), flat.data.begin());
    const Tensor logits = revit::forward(trained, flat);
    int best = 0;
    for (int j = 1; j < cfg.num_classes; ++j)
      if (logits[std::size_t(j)] > logits[std::size_t(best)]) best = j;
    wrong.labels[i] = (best + 1) % cfg.num_classes;
  }
  EXPECT_DOUBLE_EQ(revit::evaluate_accuracy(trained, key, wrong), 0.0);
}

TEST(EvaluateAccuracy, EmptyDatasetRejected) {
  const VitConfig cfg = small_config();
  const ModelParams p = revit::init_params(cfg, 1);
  const ShuffleKey key = revit::make_key(1, 14, 4, 3);
  LabeledDataset empty;
  empty.num_classes = 2;
  EXPECT_THROW(revit::evaluate_accuracy(p, key, empty), revit::DataError);
}

TEST(EvaluateAccuracy, IncompatibleDimsRejected) {
  const VitConfig cfg = small_config();
  const ModelParams p = revit::init_params(cfg, 1);
  const ShuffleKey key = revit::make_key(1, 15, 4, 3);
  auto [train, test] = revit::synth_dataset(2, 16, 3, 1, 1, 3);
  EXPECT_THROW(revit::evaluate_accuracy(p, key, train), revit::ConfigError);
}

TEST(TrainSubmodel, NanLossAborts) {
  const VitConfig cfg = small_config();
  TrainConfig tc;
  tc.epochs = 50;
  tc.learning_rate = 1e18;  // guaranteed blowup
  tc.optimizer = revit::OptimizerKind::kSgd;
  const ShuffleKey key = revit::make_key(1, 16, 4, 3);
  EXPECT_THROW(revit::train_submodel(cfg, tc, key, toy_data()),
               revit::NumericalError);
}

}  // namespace
