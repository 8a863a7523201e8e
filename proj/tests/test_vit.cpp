#include <cstdio>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "revit/checkpoint.hpp"
#include "revit/finite_diff.hpp"
#include "revit/vit.hpp"

namespace {

using revit::ImageTensor;
using revit::ModelParams;
using revit::SplitMix64;
using revit::Tensor;
using revit::VitConfig;

VitConfig desk_config() { return VitConfig{}; }  // 16x16x3, P=4, D=32, L=10

VitConfig tiny_config() {
  VitConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.channels = 3;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.num_classes = 3;
  return cfg;
}

Tensor random_batch(const VitConfig& cfg, int b, SplitMix64& rng) {
  Tensor t({b, cfg.pixels()});
  for (double& v : t.data) v = rng.uniform01();
  return t;
}

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

TEST(InitParams, GoldenParameterCount) {
  // frozen from a closed-form shape tally
  const ModelParams p = revit::init_params(desk_config(), 1);
  EXPECT_EQ(revit::param_count(p), 19626u);
  EXPECT_LE(revit::param_count(p), 200000u);
}

TEST(InitParams, DeterministicInConfigAndSeed) {
  const ModelParams a = revit::init_params(desk_config(), 99);
  const ModelParams b = revit::init_params(desk_config(), 99);
  bool equal = true;
  revit::visit_params(const_cast<ModelParams&>(a),
                      [&](const std::string& name, Tensor& t) {
                        ModelParams& bb = const_cast<ModelParams&>(b);
                        revit::visit_params(bb, [&](const std::string& n2,
                                                    Tensor& t2) {
                          if (n2 == name && t2.data != t.data) equal = false;
                        });
                      });
  EXPECT_TRUE(equal);
}

TEST(InitParams, DifferentSeedsDiffer) {
  const ModelParams a = revit::init_params(desk_config(), 1);
  const ModelParams b = revit::init_params(desk_config(), 2);
  EXPECT_NE(a.patch_w.data, b.patch_w.data);
}

TEST(InitParams, TruncatedAtTwoSigmaAndStructured) {
  const ModelParams p = revit::init_params(desk_config(), 7);
  for (double v : p.patch_w.data) EXPECT_LE(std::abs(v), 0.04 + 1e-12);
  for (double v : p.blocks[0].ln1_g.data) EXPECT_DOUBLE_EQ(v, 1.0);
  for (double v : p.blocks[0].ln1_b.data) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : p.head_b.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(InitParams, InvalidConfigRejected) {
  VitConfig bad = desk_config();
  bad.patch_size = 5;  // does not divide 16
  EXPECT_THROW(revit::init_params(bad, 1), revit::ConfigError);
  bad = desk_config();
  bad.heads = 5;  // does not divide 32
  EXPECT_THROW(revit::init_params(bad, 1), revit::ConfigError);
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

TEST(Forward, OutputShapeAndPurity) {
  SplitMix64 rng(1);
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 3);
  const Tensor batch = random_batch(cfg, 5, rng);
  const Tensor a = revit::forward(p, batch);
  const Tensor b = revit::forward(p, batch);
  ASSERT_EQ(a.shape, (std::vector<int>{5, cfg.num_classes}));
  EXPECT_EQ(a.data, b.data);  // pure function, bit-identical
}

TEST(Forward, BatchIndependence) {
  SplitMix64 rng(2);
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 4);
  Tensor batch({3, cfg.pixels()});
  Tensor one = random_batch(cfg, 1, rng);
  for (int b = 0; b < 3; ++b)
    std::copy(one.data.begin(), one.data.end(),
              batch.data.begin() + std::size_t(b) * cfg.pixels());
  const Tensor logits = revit::forward(p, batch);
  const int l = cfg.num_classes;
  for (int b = 1; b < 3; ++b)
    for (int j = 0; j < l; ++j)
      EXPECT_DOUBLE_EQ(logits[std::size_t(b) * l + j], logits[std::size_t(j)]);
}

TEST(Forward, BatchPermutationPermutesRows) {
  SplitMix64 rng(3);
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 5);
  const Tensor batch = random_batch(cfg, 4, rng);
  Tensor reversed({4, cfg.pixels()});
  for (int b = 0; b < 4; ++b)
    std::copy(batch.data.begin() + std::size_t(3 - b) * cfg.pixels(),
              batch.data.begin() + std::size_t(4 - b) * cfg.pixels(),
              reversed.data.begin() + std::size_t(b) * cfg.pixels());
  const Tensor la = revit::forward(p, batch);
  const Tensor lb = revit::forward(p, reversed);
  const int l = cfg.num_classes;
  for (int b = 0; b < 4; ++b)
    for (int j = 0; j < l; ++j)
      EXPECT_DOUBLE_EQ(la[std::size_t(b) * l + j],
                       lb[std::size_t(3 - b) * l + j]);
}

TEST(Forward, ZeroWeightsPropagateHeadBias) {
  VitConfig cfg;
  cfg.image_size = 4;  // single patch
  cfg.patch_size = 4;
  cfg.channels = 3;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.num_classes = 5;
  ModelParams p = revit::zero_params(cfg);
  p.head_b = Tensor({5}, {0.3, -1.2, 0.0, 2.5, 0.7});

  SplitMix64 rng(6);
  const Tensor batch = random_batch(cfg, 3, rng);
  const Tensor logits = revit::forward(p, batch);
  for (int b = 0; b < 3; ++b)
    for (int j = 0; j < 5; ++j)
      EXPECT_DOUBLE_EQ(logits[std::size_t(b) * 5 + j], p.head_b[std::size_t(j)]);
}

TEST(Forward, SoftmaxOfLogitsIsProbabilityVector) {
  SplitMix64 rng(7);
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 8);
  const Tensor logits = revit::forward(p, random_batch(cfg, 2, rng));
  for (int b = 0; b < 2; ++b) {
    Tensor row({cfg.num_classes});
    for (int j = 0; j < cfg.num_classes; ++j)
      row[std::size_t(j)] = logits[std::size_t(b) * cfg.num_classes + j];
    const Tensor sm = revit::softmax(row);
    double sum = 0.0;
    for (double v : sm.data) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Forward, ShapeMismatchRejected) {
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 1);
  EXPECT_THROW(revit::forward(p, Tensor({2, 10})), revit::ConfigError);
}

// ---------------------------------------------------------------------------
// loss_and_grads
// ---------------------------------------------------------------------------

std::vector<Tensor*> tensors_of(ModelParams& p) {
  std::vector<Tensor*> out;
  revit::visit_params(p, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

Tensor flatten_params(const ModelParams& p) {
  Tensor flat({static_cast<int>(revit::param_count(p))});
  std::size_t pos = 0;
  revit::visit_params(const_cast<ModelParams&>(p),
                      [&](const std::string&, Tensor& t) {
                        std::copy(t.data.begin(), t.data.end(),
                                  flat.data.begin() + pos);
                        pos += t.numel();
                      });
  return flat;
}

void unflatten_params(const Tensor& flat, ModelParams& p) {
  std::size_t pos = 0;
  revit::visit_params(p, [&](const std::string&, Tensor& t) {
    std::copy(flat.data.begin() + pos, flat.data.begin() + pos + t.numel(),
              t.data.begin());
    pos += t.numel();
  });
}

TEST(LossAndGrads, FullModelGradientMatchesFiniteDiff) {
  SplitMix64 rng(9);
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 11);
  const Tensor batch = random_batch(cfg, 2, rng);
  const std::vector<int> labels = {0, 2};

  auto [loss, grads] = revit::loss_and_grads(p, batch, labels);
  EXPECT_GE(loss, 0.0);

  // parameter gradient against central differences over every coordinate
  auto loss_at_params = [&](const Tensor& flat) {
    ModelParams probe = p;
    unflatten_params(flat, probe);
    return revit::loss_and_grads(probe, batch, labels).first;
  };
  const Tensor fd = revit::finite_diff_check(loss_at_params, flatten_params(p));
  EXPECT_LE(revit::max_rel_err(flatten_params(grads), fd), 1e-4);

  // input gradient via the graph directly
  revit::Graph g;
  revit::TapeBackend be(g);
  auto refs = revit::make_refs(be, p);
  const auto input = g.leaf(batch);
  const auto plan = revit::build_vit_plan(cfg, 2);
  const auto logits = revit::vit_forward(be, refs, input, cfg, plan);
  const auto loss_node = g.cross_entropy_mean(logits, labels);
  g.backward(loss_node);
  auto loss_at_input = [&](const Tensor& x) {
    return revit::loss_and_grads(p, x, labels).first;
  };
  const Tensor fd_in = revit::finite_diff_check(loss_at_input, batch);
  EXPECT_LE(revit::max_rel_err(g.grad(input), fd_in), 1e-4);
}

TEST(LossAndGrads, DuplicatedBatchKeepsLoss) {
  SplitMix64 rng(10);
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 12);
  const Tensor batch = random_batch(cfg, 2, rng);
  Tensor doubled({4, cfg.pixels()});
  std::copy(batch.data.begin(), batch.data.end(), doubled.data.begin());
  std::copy(batch.data.begin(), batch.data.end(),
            doubled.data.begin() + batch.numel());
  const double l1 = revit::loss_and_grads(p, batch, {0, 1}).first;
  const double l2 = revit::loss_and_grads(p, doubled, {0, 1, 0, 1}).first;
  EXPECT_NEAR(l1, l2, 1e-12);
}

TEST(LossAndGrads, LabelOutOfRangeRejected) {
  SplitMix64 rng(11);
  const VitConfig cfg = tiny_config();
  const ModelParams p = revit::init_params(cfg, 13);
  const Tensor batch = random_batch(cfg, 1, rng);
  EXPECT_THROW(revit::loss_and_grads(p, batch, {cfg.num_classes}),
               revit::ConfigError);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST(Checkpoint, RoundtripBitwise) {
  const ModelParams p = revit::init_params(tiny_config(), 21);
  const std::string path = "ckpt_test.bin";
  revit::save_checkpoint(p, path);
  ModelParams q = revit::load_checkpoint(path);
  EXPECT_EQ(q.key_id, p.key_id);
  EXPECT_TRUE(q.config == p.config);
  auto pa = tensors_of(const_cast<ModelParams&>(p));
  auto qa = tensors_of(q);
  ASSERT_EQ(pa.size(), qa.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_EQ(pa[i]->data, qa[i]->data);
  std::filesystem::remove(path);
}

TEST(Checkpoint, FileSizeMatchesShapeTally) {
  const ModelParams p = revit::init_params(desk_config(), 30);
  const std::string path = "ckpt_size.bin";
  revit::save_checkpoint(p, path);

  std::ifstream in(path, std::ios::binary);
  unsigned char lenbuf[4];
  in.read(reinterpret_cast<char*>(lenbuf), 4);
  const std::uint32_t hlen = lenbuf[0] | (lenbuf[1] << 8) | (lenbuf[2] << 16) |
                             (std::uint32_t(lenbuf[3]) << 24);
  const auto actual = std::filesystem::file_size(path);
  EXPECT_EQ(actual, 4u + hlen + 8u * 19626u);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TamperedShapeRejected) {
  const ModelParams p = revit::init_params(tiny_config(), 22);
  const std::string path = "ckpt_tamper.bin";
  revit::save_checkpoint(p, path);

  // rewrite the header with one tensor shape changed
  std::ifstream in(path, std::ios::binary);
  unsigned char lenbuf[4];
  in.read(reinterpret_cast<char*>(lenbuf), 4);
  const std::uint32_t hlen = lenbuf[0] | (lenbuf[1] << 8) | (lenbuf[2] << 16) |
                             (std::uint32_t(lenbuf[3]) << 24);
  std::string header(hlen, '\0');
  in.read(header.data(), hlen);
  std::string rest((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  in.close();

  auto j = nlohmann::json::parse(header);
  j["tensors"][0]["shape"] = {1, 1};
  std::string tampered = j.dump();
  std::ofstream out(path, std::ios::binary);
  const std::uint32_t tlen = static_cast<std::uint32_t>(tampered.size());
  unsigned char tl[4] = {static_cast<unsigned char>(tlen & 0xff),
                         static_cast<unsigned char>((tlen >> 8) & 0xff),
                         static_cast<unsigned char>((tlen >> 16) & 0xff),
                         static_cast<unsigned char>((tlen >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(tl), 4);
  out << tampered << rest;
  out.close();

  try {
    revit::load_checkpoint(path);
    FAIL() << "expected shape mismatch";
  } catch (const revit::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, VersionAndTruncationErrors) {
  const ModelParams p = revit::init_params(tiny_config(), 23);
  const std::string path = "ckpt_bad.bin";
  revit::save_checkpoint(p, path);

  // truncate the payload
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 16);
  try {
    revit::load_checkpoint(path);
    FAIL() << "expected truncation error";
  } catch (const revit::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }

  // bad version
  {
    nlohmann::json j;
    j["version"] = 3;
    const std::string htext = j.dump();
    std::ofstream out(path, std::ios::binary);
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    unsigned char lenbuf[4] = {static_cast<unsigned char>(hlen & 0xff),
                               static_cast<unsigned char>((hlen >> 8) & 0xff),
                               static_cast<unsigned char>((hlen >> 16) & 0xff),
                               static_cast<unsigned char>((hlen >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenbuf), 4);
    out << htext;
  }
  try {
    revit::load_checkpoint(path);
    FAIL() << "expected version error";
  } catch (const revit::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  std::filesystem::remove(path);
}

}  // namespace
