#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "revit/errors.hpp"
#include "revit/image.hpp"
#include "revit/rng.hpp"

namespace revit {

// Whether the keyed permutation acts on every scalar of an M x M x C block
// (channels shuffled together with positions) or on the M x M pixel
// positions with RGB triplets kept intact.
enum class ShuffleUnit { kScalar, kPixel };

inline const char* to_string(ShuffleUnit u) {
  return u == ShuffleUnit::kScalar ? "scalar" : "pixel";
}

inline ShuffleUnit shuffle_unit_from_string(const std::string& s) {
  if (s == "scalar") return ShuffleUnit::kScalar;
  if (s == "pixel") return ShuffleUnit::kPixel;
  throw ConfigError("unknown shuffle_unit: " + s);
}

// One sub-model's secret: a seed plus the block permutation re-derived
// from it. perm[j] is the source position of output position j, over a
// block flattened row-major with channel fastest.
struct ShuffleKey {
  int id = 0;
  std::uint64_t seed = 0;
  int block_size = 0;
  int channels = 0;
  ShuffleUnit unit = ShuffleUnit::kScalar;
  std::vector<int> permutation;

  int domain() const {
    return unit == ShuffleUnit::kScalar
               ? block_size * block_size * channels
               : block_size * block_size;
  }
};

// Bijection on {0..M*M*C-1}, a pure function of (seed, M, C).
inline std::vector<int> derive_permutation(std::uint64_t seed, int block_size,
                                           int channels) {
  if (block_size < 1 || channels < 1)
    throw ConfigError("derive_permutation: block size and channels must be >= 1");
  SplitMix64 rng(seed);
  return random_permutation(rng, block_size * block_size * channels);
}

inline ShuffleKey make_key(int id, std::uint64_t seed, int block_size,
                           int channels,
                           ShuffleUnit unit = ShuffleUnit::kScalar) {
  ShuffleKey key;
  key.id = id;
  key.seed = seed;
  key.block_size = block_size;
  key.channels = channels;
  key.unit = unit;
  key.permutation =
      unit == ShuffleUnit::kScalar
          ? derive_permutation(seed, block_size, channels)
          : derive_permutation(seed, block_size, 1);
  return key;
}

// n keys with ids 1..n; per-key seeds come from the labeled child
// derivation so the list is a pure function of master_seed.
inline std::vector<ShuffleKey> generate_keys(
    std::uint64_t master_seed, int n, int block_size, int channels,
    ShuffleUnit unit = ShuffleUnit::kScalar) {
  if (n < 1) throw ConfigError("generate_keys: n must be >= 1");
  std::vector<ShuffleKey> keys;
  keys.reserve(static_cast<std::size_t>(n));
  for (int id = 1; id <= n; ++id) {
    const std::uint64_t seed =
        derive_seed(master_seed, "key/" + std::to_string(id));
    keys.push_back(make_key(id, seed, block_size, channels, unit));
  }
  return keys;
}

namespace detail {

// Full-image gather map for one key: out[t] = in[map[t]], over the flat
// (y, x, c) channel-fastest layout. Blocks never mix.
inline std::vector<int> encryption_index_map(const ShuffleKey& key, int height,
                                             int width) {
  const int m = key.block_size;
  const int c = key.channels;
  if (height % m != 0 || width % m != 0)
    throw ConfigError("block size does not divide image");
  std::vector<int> map(static_cast<std::size_t>(height) * width * c);
  const int by = height / m, bx = width / m;
  for (int gy = 0; gy < by; ++gy) {
    for (int gx = 0; gx < bx; ++gx) {
      if (key.unit == ShuffleUnit::kScalar) {
        // position j within a block = ((py * m) + px) * c + ch
        for (int j = 0; j < m * m * c; ++j) {
          const int src = key.permutation[static_cast<std::size_t>(j)];
          const int spy = src / (m * c), spx = (src / c) % m, sch = src % c;
          const int dpy = j / (m * c), dpx = (j / c) % m, dch = j % c;
          const std::size_t dst_flat =
              ((static_cast<std::size_t>(gy * m + dpy) * width) +
               (gx * m + dpx)) * c + dch;
          const std::size_t src_flat =
              ((static_cast<std::size_t>(gy * m + spy) * width) +
               (gx * m + spx)) * c + sch;
          map[dst_flat] = static_cast<int>(src_flat);
        }
      } else {
        for (int j = 0; j < m * m; ++j) {
          const int src = key.permutation[static_cast<std::size_t>(j)];
          const int spy = src / m, spx = src % m;
          const int dpy = j / m, dpx = j % m;
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t dst_flat =
                ((static_cast<std::size_t>(gy * m + dpy) * width) +
                 (gx * m + dpx)) * c + ch;
            const std::size_t src_flat =
                ((static_cast<std::size_t>(gy * m + spy) * width) +
                 (gx * m + spx)) * c + ch;
            map[dst_flat] = static_cast<int>(src_flat);
          }
        }
      }
    }
  }
  return map;
}

inline void check_key_dims(const ImageTensor& image, const ShuffleKey& key) {
  if (image.channels != key.channels)
    throw ConfigError("encrypt: channel count does not match key");
  if (image.height % key.block_size != 0 ||
      image.width % key.block_size != 0)
    throw ConfigError("block size does not divide image");
}

}  // namespace detail

inline ImageTensor encrypt_image(const ImageTensor& image,
                                 const ShuffleKey& key) {
  detail::check_key_dims(image, key);
  const std::vector<int> map =
      detail::encryption_index_map(key, image.height, image.width);
  ImageTensor out(image.height, image.width, image.channels);
  for (std::size_t t = 0; t < map.size(); ++t)
    out.values[t] = image.values[static_cast<std::size_t>(map[t])];
  return out;
}

// Exact inverse of encrypt_image; the scheme itself never decrypts, this
// exists for the roundtrip contract.
inline ImageTensor decrypt_image(const ImageTensor& image,
                                 const ShuffleKey& key) {
  detail::check_key_dims(image, key);
  const std::vector<int> map =
      detail::encryption_index_map(key, image.height, image.width);
  ImageTensor out(image.height, image.width, image.channels);
  for (std::size_t t = 0; t < map.size(); ++t)
    out.values[static_cast<std::size_t>(map[t])] = image.values[t];
  return out;
}

// --------------------------------------------------------------------------
// Key file: seeds only, permutations are re-derived on load. Seeds are
// decimal strings so 64-bit values survive any JSON reader.
// --------------------------------------------------------------------------

inline void save_key_file(const std::vector<ShuffleKey>& keys,
                          const std::string& path) {
  if (keys.empty()) throw ConfigError("save_key_file: no keys");
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["block_size"] = keys.front().block_size;
  j["channels"] = keys.front().channels;
  j["shuffle_unit"] = to_string(keys.front().unit);
  j["keys"] = nlohmann::ordered_json::array();
  for (const ShuffleKey& k : keys)
    j["keys"].push_back({{"id", k.id}, {"seed", std::to_string(k.seed)}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<ShuffleKey> load_key_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("key file parse error: " + std::string(e.what()));
  }
  try {
    if (j.at("version").get<int>() != 1)
      throw DataError("key file: unsupported version");
    const int m = j.at("block_size").get<int>();
    const int c = j.at("channels").get<int>();
    const ShuffleUnit unit =
        shuffle_unit_from_string(j.at("shuffle_unit").get<std::string>());
    std::vector<ShuffleKey> keys;
    for (const auto& jk : j.at("keys")) {
      const std::uint64_t seed =
          std::stoull(jk.at("seed").get<std::string>());
      keys.push_back(make_key(jk.at("id").get<int>(), seed, m, c, unit));
    }
    if (keys.empty()) throw DataError("key file: empty key list");
    return keys;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("key file: " + std::string(e.what()));
  }
}

}  // namespace revit
