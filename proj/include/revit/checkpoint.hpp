#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "revit/vit.hpp"

namespace revit {

inline nlohmann::ordered_json vit_config_to_json(const VitConfig& cfg) {
  nlohmann::ordered_json j;
  j["image_size"] = cfg.image_size;
  j["patch_size"] = cfg.patch_size;
  j["channels"] = cfg.channels;
  j["embed_dim"] = cfg.embed_dim;
  j["depth"] = cfg.depth;
  j["heads"] = cfg.heads;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["num_classes"] = cfg.num_classes;
  j["nonlinearity"] = to_string(cfg.nonlinearity);
  return j;
}

inline VitConfig vit_config_from_json(const nlohmann::json& j, bool strict) {
  static const std::vector<std::string> known = {
      "image_size", "patch_size", "channels",    "embed_dim",    "depth",
      "heads",      "mlp_ratio",  "num_classes", "nonlinearity"};
  if (strict)
    for (auto it = j.begin(); it != j.end(); ++it)
      if (std::find(known.begin(), known.end(), it.key()) == known.end())
        throw ConfigError("model config: unknown field \"" + it.key() + "\"");
  VitConfig cfg;
  try {
    cfg.image_size = j.at("image_size").get<int>();
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.depth = j.at("depth").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    if (j.contains("nonlinearity"))
      cfg.nonlinearity =
          nonlinearity_from_string(j.at("nonlinearity").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model config: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

// Checkpoint layout: 4-byte little-endian header length, JSON header
// (version, config, key_id, tensor table with element offsets), then the
// payload as raw little-endian 64-bit floats. Roundtrips are bit-exact.
inline void save_checkpoint(const ModelParams& params,
                            const std::string& path) {
  nlohmann::ordered_json header;
  header["version"] = 1;
  header["config"] = vit_config_to_json(params.config);
  header["key_id"] = params.key_id;
  header["tensors"] = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  visit_params(const_cast<ModelParams&>(params),
               [&](const std::string& name, Tensor& t) {
                 header["tensors"].push_back({{"name", name},
                                              {"shape", t.shape},
                                              {"offset", offset},
                                              {"len", t.numel()}});
                 offset += t.numel();
               });
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  unsigned char lenbuf[4] = {
      static_cast<unsigned char>(hlen & 0xff),
      static_cast<unsigned char>((hlen >> 8) & 0xff),
      static_cast<unsigned char>((hlen >> 16) & 0xff),
      static_cast<unsigned char>((hlen >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(lenbuf), 4);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  visit_params(const_cast<ModelParams&>(params),
               [&](const std::string&, Tensor& t) {
                 out.write(reinterpret_cast<const char*>(t.data.data()),
                           static_cast<std::streamsize>(t.numel() * 8));
               });
  if (!out) throw IoError("write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);

  unsigned char lenbuf[4];
  if (!in.read(reinterpret_cast<char*>(lenbuf), 4))
    throw DataError("checkpoint: truncated header length");
  const std::uint32_t hlen = static_cast<std::uint32_t>(lenbuf[0]) |
                             (static_cast<std::uint32_t>(lenbuf[1]) << 8) |
                             (static_cast<std::uint32_t>(lenbuf[2]) << 16) |
                             (static_cast<std::uint32_t>(lenbuf[3]) << 24);
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), static_cast<std::streamsize>(hlen)))
    throw DataError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: corrupt header: " + std::string(e.what()));
  }

  int version = 0;
  try {
    version = header.at("version").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw DataError("checkpoint: corrupt header: missing version");
  }
  if (version != 1)
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version));

  ModelParams params;
  try {
    params = zero_params(vit_config_from_json(header.at("config"), false));
    params.key_id = header.at("key_id").get<int>();

    std::size_t entry = 0;
    const auto& tensors = header.at("tensors");
    bool shape_ok = true;
    std::string bad_name;
    visit_params(params, [&](const std::string& name, Tensor& t) {
      if (!shape_ok) return;
      if (entry >= tensors.size()) {
        shape_ok = false;
        bad_name = name;
        return;
      }
      const auto& e = tensors[entry++];
      const std::vector<int> shape = e.at("shape").get<std::vector<int>>();
      if (e.at("name").get<std::string>() != name || shape != t.shape ||
          e.at("len").get<std::size_t>() != t.numel()) {
        shape_ok = false;
        bad_name = name;
      }
    });
    if (!shape_ok || entry != tensors.size())
      throw DataError("checkpoint: shape mismatch at tensor \"" + bad_name +
                      "\"");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint: corrupt header: " + std::string(e.what()));
  }

  bool payload_ok = true;
  visit_params(params, [&](const std::string&, Tensor& t) {
    if (!payload_ok) return;
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(t.numel() * 8)))
      payload_ok = false;
  });
  if (!payload_ok) throw DataError("checkpoint: truncated payload");
  return params;
}

}  // namespace revit
