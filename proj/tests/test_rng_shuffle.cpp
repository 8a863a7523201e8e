#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "revit/rng.hpp"
#include "revit/shuffle.hpp"

namespace {

using revit::derive_permutation;
using revit::derive_seed;
using revit::encrypt_image;
using revit::decrypt_image;
using revit::generate_keys;
using revit::ImageTensor;
using revit::make_key;
using revit::ShuffleKey;
using revit::SplitMix64;

ImageTensor random_image(int h, int w, int c, SplitMix64& rng) {
  ImageTensor img(h, w, c);
  for (double& v : img.values) v = rng.uniform01();
  return img;
}

// ---------------------------------------------------------------------------
// PRNG golden values (frozen from an independent implementation of the
// documented conventions; splitmix64(0) matches the published vector).
// ---------------------------------------------------------------------------

TEST(SplitMix64, GoldenSequence) {
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.next(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(rng.next(), 0x06c45d188009454fULL);
}

TEST(Fnv1a64, GoldenValues) {
  EXPECT_EQ(revit::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(revit::fnv1a64("key/1"), 0x711a66f295f8b1b8ULL);
}

TEST(SplitMix64, BoundedIsInRangeAndDeterministic) {
  SplitMix64 a(99), b(99);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t n = 1 + a.state() % 17;
    const std::uint64_t va = a.bounded(n);
    EXPECT_LT(va, n);
    EXPECT_EQ(va, b.bounded(n));
  }
}

// ---------------------------------------------------------------------------
// permutation derivation
// ---------------------------------------------------------------------------

TEST(DerivePermutation, SingleElementDomain) {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 999999ULL})
    EXPECT_EQ(derive_permutation(seed, 1, 1), std::vector<int>({0}));
}

TEST(DerivePermutation, GoldenSeed42) {
  // frozen from hand-stepping splitmix64 + Fisher-Yates
  EXPECT_EQ(derive_permutation(42, 2, 1), std::vector<int>({2, 0, 3, 1}));
}

TEST(DerivePermutation, BijectiveOverRandomSeeds) {
  SplitMix64 seeds(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::vector<int> perm = derive_permutation(seeds.next(), 3, 2);
    std::vector<int> sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> identity(perm.size());
    std::iota(identity.begin(), identity.end(), 0);
    ASSERT_EQ(sorted, identity);
  }
}

TEST(GenerateKeys, GoldenMasterSeed7) {
  const auto keys = generate_keys(7, 2, 2, 1);
  ASSERT_EQ(keys.size(), 2u);
  EXPECT_EQ(keys[0].id, 1);
  EXPECT_EQ(keys[0].seed, 12236503841238446740ULL);
  EXPECT_EQ(keys[0].permutation, std::vector<int>({1, 3, 0, 2}));
  EXPECT_EQ(keys[1].id, 2);
  EXPECT_EQ(keys[1].seed, 13529099351338660470ULL);
  EXPECT_EQ(keys[1].permutation, std::vector<int>({1, 3, 2, 0}));
}

TEST(GenerateKeys, TrivialAndDeterministic) {
  const auto one = generate_keys(123, 1, 1, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].permutation, std::vector<int>({0}));

  const auto a = generate_keys(55, 4, 4, 3);
  const auto b = generate_keys(55, 4, 4, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].seed, b[i].seed);
    EXPECT_EQ(a[i].permutation, b[i].permutation);
  }
}

TEST(GenerateKeys, DistinctPermutationsWhenDomainLargeEnough) {
  const auto keys = generate_keys(2024, 16, 4, 3);
  std::set<std::vector<int>> perms;
  for (const ShuffleKey& k : keys) perms.insert(k.permutation);
  EXPECT_EQ(perms.size(), keys.size());
}

TEST(GenerateKeys, ZeroCountIsError) {
  EXPECT_THROW(generate_keys(1, 0, 4, 3), revit::ConfigError);
}

// ---------------------------------------------------------------------------
// encryption
// ---------------------------------------------------------------------------

ShuffleKey identity_key(int id, int m, int c) {
  ShuffleKey key = make_key(id, 1, m, c);
  std::iota(key.permutation.begin(), key.permutation.end(), 0);
  return key;
}

TEST(Encrypt, IdentityPermutationIsNoOp) {
  SplitMix64 rng(3);
  const ImageTensor img = random_image(8, 8, 3, rng);
  const ImageTensor out = encrypt_image(img, identity_key(1, 4, 3));
  EXPECT_EQ(out.values, img.values);
}

TEST(Encrypt, HandComputedTwoByTwo) {
  // [[a,b],[c,d]], M=2, pi=[2,0,3,1] -> [c,a,d,b]
  ImageTensor img(2, 2, 1);
  img.values = {0.1, 0.2, 0.3, 0.4};  // a b c d
  ShuffleKey key = make_key(1, 42, 2, 1);
  ASSERT_EQ(key.permutation, std::vector<int>({2, 0, 3, 1}));
  const ImageTensor out = encrypt_image(img, key);
  EXPECT_EQ(out.values, std::vector<double>({0.3, 0.1, 0.4, 0.2}));
}

TEST(Encrypt, InverseOfHandExample) {
  ImageTensor enc(2, 2, 1);
  enc.values = {0.3, 0.1, 0.4, 0.2};  // c a d b
  ShuffleKey key = make_key(1, 42, 2, 1);
  const ImageTensor out = decrypt_image(enc, key);
  EXPECT_EQ(out.values, std::vector<double>({0.1, 0.2, 0.3, 0.4}));
}

TEST(Encrypt, BlockMultisetPreserved) {
  SplitMix64 rng(4);
  const ImageTensor img = random_image(8, 8, 3, rng);
  const ShuffleKey key = make_key(1, 77, 4, 3);
  const ImageTensor out = encrypt_image(img, key);
  for (int gy = 0; gy < 2; ++gy)
    for (int gx = 0; gx < 2; ++gx) {
      std::vector<double> in_block, out_block;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          for (int c = 0; c < 3; ++c) {
            in_block.push_back(img.at(gy * 4 + y, gx * 4 + x, c));
            out_block.push_back(out.at(gy * 4 + y, gx * 4 + x, c));
          }
      std::sort(in_block.begin(), in_block.end());
      std::sort(out_block.begin(), out_block.end());
      EXPECT_EQ(in_block, out_block);
    }
}

TEST(Encrypt, RoundtripIsBitwiseIdentity) {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const ShuffleKey key = make_key(1, rng.next(), 4, 3);
    const ImageTensor img = random_image(8, 8, 3, rng);
    const ImageTensor back = decrypt_image(encrypt_image(img, key), key);
    ASSERT_EQ(back.values, img.values);
  }
}

TEST(Encrypt, BlockLocality) {
  SplitMix64 rng(6);
  const ShuffleKey key = make_key(1, 31337, 4, 3);
  const ImageTensor img = random_image(16, 16, 3, rng);
  const ImageTensor base = encrypt_image(img, key);
  ImageTensor poked = img;
  poked.at(5, 9, 1) += 0.125;  // block (1, 2)
  const ImageTensor out = encrypt_image(poked, key);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) {
        const bool same_block = (y / 4 == 1) && (x / 4 == 2);
        if (!same_block)
          ASSERT_EQ(out.at(y, x, c), base.at(y, x, c));
      }
  EXPECT_NE(out.values, base.values);
}

TEST(Encrypt, CompositionMatchesComposedPermutation) {
  SplitMix64 rng(8);
  const ShuffleKey a = make_key(1, 1001, 4, 3);
  const ShuffleKey b = make_key(2, 1002, 4, 3);
  const ImageTensor img = random_image(8, 8, 3, rng);
  const ImageTensor two_step = encrypt_image(encrypt_image(img, a), b);

  ShuffleKey composed = a;
  for (std::size_t j = 0; j < composed.permutation.size(); ++j)
    composed.permutation[j] =
        a.permutation[static_cast<std::size_t>(b.permutation[j])];
  const ImageTensor one_step = encrypt_image(img, composed);
  EXPECT_EQ(two_step.values, one_step.values);
}

TEST(Encrypt, DimensionMismatchError) {
  SplitMix64 rng(9);
  const ImageTensor img = random_image(6, 6, 3, rng);
  const ShuffleKey key = make_key(1, 1, 4, 3);
  EXPECT_THROW(encrypt_image(img, key), revit::ConfigError);
}

TEST(Encrypt, PixelUnitKeepsChannelsTogether) {
  SplitMix64 rng(10);
  const ShuffleKey key = make_key(1, 500, 2, 3, revit::ShuffleUnit::kPixel);
  EXPECT_EQ(key.permutation.size(), 4u);
  ImageTensor img(2, 2, 3);
  for (int p = 0; p < 4; ++p)
    for (int c = 0; c < 3; ++c)
      img.values[std::size_t(p) * 3 + c] = p + 0.1 * c;
  const ImageTensor out = encrypt_image(img, key);
  // every output pixel must be one of the input pixel triplets
  for (int p = 0; p < 4; ++p) {
    const double base = out.values[std::size_t(p) * 3];
    EXPECT_EQ(out.values[std::size_t(p) * 3 + 1], base + 0.1);
    EXPECT_NEAR(out.values[std::size_t(p) * 3 + 2], base + 0.2, 1e-12);
  }
}

// ---------------------------------------------------------------------------
// key file
// ---------------------------------------------------------------------------

TEST(KeyFile, RoundtripAndDecimalSeeds) {
  const auto keys = generate_keys(7, 3, 4, 3);
  const std::string path = "keys_test.json";
  revit::save_key_file(keys, path);

  std::ifstream raw(path);
  std::string text((std::istreambuf_iterator<char>(raw)),
                   std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("\"seed\": \""), std::string::npos);

  const auto loaded = revit::load_key_file(path);
  ASSERT_EQ(loaded.size(), keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    EXPECT_EQ(loaded[i].id, keys[i].id);
    EXPECT_EQ(loaded[i].seed, keys[i].seed);
    EXPECT_EQ(loaded[i].permutation, keys[i].permutation);
  }
  std::filesystem::remove(path);
}

TEST(KeyFile, RejectsBadContent) {
  const std::string path = "keys_bad.json";
  {
    std::ofstream out(path);
    out << "{\"version\": 9}";
  }
  EXPECT_THROW(revit::load_key_file(path), revit::DataError);
  {
    std::ofstream out(path);
    out << "not json";
  }
  EXPECT_THROW(revit::load_key_file(path), revit::DataError);
  std::filesystem::remove(path);
  EXPECT_THROW(revit::load_key_file(path), revit::IoError);
}

}  // namespace
