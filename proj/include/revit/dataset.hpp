#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "revit/errors.hpp"
#include "revit/image.hpp"
#include "revit/rng.hpp"

namespace revit {

struct LabeledDataset {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  std::size_t size() const { return images.size(); }

  void validate() const {
    if (images.size() != labels.size())
      throw DataError("dataset: image/label count mismatch");
    for (int y : labels)
      if (y < 0 || y >= num_classes)
        throw DataError("dataset: label out of range");
    for (const ImageTensor& img : images)
      if (!img.same_dims(images.front()))
        throw DataError("dataset: inconsistent image dims");
  }
};

namespace detail {

// Class templates are sampled plane waves with an integer number of
// cycles per 4-pixel axis step, plus two-wave mixtures. Integer cycle
// counts make every block's pattern mean exactly zero, so no class is
// separable from block-mean statistics alone; the class signal lives in
// the within-block arrangement, which is precisely what a keyed shuffle
// scrambles.
struct WavePair {
  int ax, ay;  // cycles per 4 pixels, first wave
  int bx, by;  // second wave; (0,0) means single-wave class
};

inline WavePair class_wave(int k) {
  static const WavePair table[10] = {
      {1, 0, 0, 0}, {0, 1, 0, 0}, {1, 1, 0, 0}, {1, 2, 0, 0}, {1, 3, 0, 0},
      {2, 1, 0, 0}, {1, 0, 0, 1}, {1, 1, 1, 3}, {1, 2, 2, 1}, {0, 1, 1, 1}};
  return table[k % 10];
}

inline constexpr double kSynthAmplitude = 0.06;
inline constexpr double kSynthTexture = 0.04;
inline constexpr double kSynthNoise = 0.04;
// Per-image phase wobble, radians. Small on purpose: the class templates
// stay near-linearly separable so the desk ViT trains quickly, while the
// integer-cycle construction keeps every block's pattern mean at zero.
inline constexpr double kSynthPhaseJitter = 0.8;
// Master constant for the fixed per-class, per-cell phase dither. The
// dither breaks the wave's repetition across 4x4 cells; without it every
// cell of a class template carries the same 48 values and two keyed
// shuffles of it stay strongly correlated, which hands cross-key attacks
// a shared subspace they should not have.
inline constexpr std::uint64_t kTemplateDitherSeed = 0x7e3a11ce5eedULL;

inline double cell_dither(int label, int wave, int cell_y, int cell_x) {
  SplitMix64 rng = derive_stream(
      kTemplateDitherSeed,
      "template/class=" + std::to_string(label) + "/wave=" +
          std::to_string(wave) + "/cell=" + std::to_string(cell_y) + "," +
          std::to_string(cell_x));
  return rng.uniform01() * 2.0 * M_PI;
}

// Class-specific random texture for one 4x4 cell, zero-mean per channel.
// Spreads each class's evidence over generic within-cell directions, so
// two differently keyed shuffles of a template decorrelate the way two
// shuffles of white noise do.
inline std::vector<double> cell_texture(int label, int cell_y, int cell_x,
                                        int channels) {
  SplitMix64 rng = derive_stream(
      kTemplateDitherSeed,
      "template/class=" + std::to_string(label) + "/texture/cell=" +
          std::to_string(cell_y) + "," + std::to_string(cell_x));
  std::vector<double> t(static_cast<std::size_t>(16) * channels);
  for (double& v : t) v = rng.normal();
  for (int c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (int p = 0; p < 16; ++p) mean += t[std::size_t(p) * channels + c];
    mean /= 16.0;
    for (int p = 0; p < 16; ++p) t[std::size_t(p) * channels + c] -= mean;
  }
  return t;
}

inline double quantize_u8(double v) {
  const double clipped = std::min(1.0, std::max(0.0, v));
  return std::round(clipped * 255.0) / 255.0;
}

inline ImageTensor synth_image(int classes, int size, int channels, int label,
                               SplitMix64& rng) {
  const WavePair w = class_wave(label % classes);
  const bool mixture = (w.bx != 0 || w.by != 0);
  const double amp =
      mixture ? kSynthAmplitude * M_SQRT1_2 : kSynthAmplitude;
  const double phase_a = (rng.uniform01() - 0.5) * kSynthPhaseJitter;
  const double phase_b = (rng.uniform01() - 0.5) * kSynthPhaseJitter;

  const int cells = size / 4;
  std::vector<double> dither_a(static_cast<std::size_t>(cells) * cells);
  std::vector<double> dither_b(static_cast<std::size_t>(cells) * cells);
  std::vector<std::vector<double>> textures(
      static_cast<std::size_t>(cells) * cells);
  for (int gy = 0; gy < cells; ++gy)
    for (int gx = 0; gx < cells; ++gx) {
      dither_a[std::size_t(gy) * cells + gx] = cell_dither(label, 0, gy, gx);
      dither_b[std::size_t(gy) * cells + gx] = cell_dither(label, 1, gy, gx);
      textures[std::size_t(gy) * cells + gx] =
          cell_texture(label, gy, gx, channels);
    }

  ImageTensor img(size, size, channels);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < channels; ++c) {
        const std::size_t cell = std::size_t(y / 4) * cells + (x / 4);
        const double chan_shift = 2.0 * M_PI * c / 3.0;
        double v = 0.5 + amp * std::sin(2.0 * M_PI * (w.ax * x + w.ay * y) /
                                            4.0 +
                                        dither_a[cell] + phase_a + chan_shift);
        if (mixture)
          v += amp * std::sin(2.0 * M_PI * (w.bx * x + w.by * y) / 4.0 +
                              dither_b[cell] + phase_b + chan_shift);
        v += kSynthTexture *
             textures[cell][(std::size_t(y % 4) * 4 + (x % 4)) * channels + c];
        v += kSynthNoise * rng.normal();
        img.at(y, x, c) = quantize_u8(v);
      }
  return img;
}

}  // namespace detail

// Class-balanced synthetic splits; all pixel values land on the k/255
// grid so a save/load through the binary format is exact.
inline std::pair<LabeledDataset, LabeledDataset> synth_dataset(
    int classes, int size, int channels, int per_class_train,
    int per_class_test, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_dataset: need at least 2 classes");
  if (classes > 10)
    throw ConfigError("synth_dataset: at most 10 class templates");
  if (size < 4 || size % 4 != 0 || channels < 1)
    throw ConfigError("synth_dataset: size must be a positive multiple of 4");
  if (per_class_train < 1 || per_class_test < 1)
    throw ConfigError("synth_dataset: per-class counts must be positive");

  auto make_split = [&](const std::string& split, int per_class) {
    LabeledDataset ds;
    ds.num_classes = classes;
    ds.split = split;
    for (int k = 0; k < classes; ++k)
      for (int i = 0; i < per_class; ++i) {
        SplitMix64 rng = derive_stream(
            seed, "synth/" + split + "/class=" + std::to_string(k) +
                      "/img=" + std::to_string(i));
        ds.images.push_back(
            detail::synth_image(classes, size, channels, k, rng));
        ds.labels.push_back(k);
      }
    // deterministic order shuffle; keeps the class balance exact
    std::vector<int> order(ds.images.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = static_cast<int>(i);
    SplitMix64 rng = derive_stream(seed, "synth/" + split + "/shuffle");
    fisher_yates(rng, order);
    LabeledDataset shuffled;
    shuffled.num_classes = classes;
    shuffled.split = split;
    for (int idx : order) {
      shuffled.images.push_back(std::move(ds.images[std::size_t(idx)]));
      shuffled.labels.push_back(ds.labels[std::size_t(idx)]);
    }
    return shuffled;
  };

  return {make_split("train", per_class_train),
          make_split("test", per_class_test)};
}

// --------------------------------------------------------------------------
// Binary dataset file, little-endian:
//   magic "ENCD", u32 version=1, u32 count, u16 H, u16 W, u8 C,
//   u8 num_classes, count * (H*W*C) u8 pixels, count u8 labels.
// Pixels are stored (y, x, c) channel-fastest, value = byte / 255.
// --------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DataError("dataset file: truncated header");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2))
    throw DataError("dataset file: truncated header");
  return static_cast<std::uint16_t>(b[0] |
                                    (static_cast<std::uint16_t>(b[1]) << 8));
}

}  // namespace detail

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  if (ds.images.empty()) throw DataError("save_dataset: empty dataset");
  const ImageTensor& first = ds.images.front();
  if (ds.num_classes > 255 || first.height > 0xffff || first.width > 0xffff ||
      first.channels > 255)
    throw ConfigError("save_dataset: dims exceed format limits");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write("ENCD", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.images.size()));
  detail::put_u16(out, static_cast<std::uint16_t>(first.height));
  detail::put_u16(out, static_cast<std::uint16_t>(first.width));
  out.put(static_cast<char>(first.channels));
  out.put(static_cast<char>(ds.num_classes));
  std::vector<unsigned char> buf;
  for (const ImageTensor& img : ds.images) {
    buf.resize(img.values.size());
    for (std::size_t i = 0; i < img.values.size(); ++i) {
      const double v = std::min(1.0, std::max(0.0, img.values[i]));
      buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
  }
  for (int y : ds.labels) out.put(static_cast<char>(y));
  if (!out) throw IoError("write failed: " + path);
}

inline LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);

  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "ENCD")
    throw DataError("dataset file: bad magic");
  const std::uint32_t version = detail::get_u32(in);
  if (version != 1)
    throw DataError("dataset file: unsupported version " +
                    std::to_string(version));
  const std::uint32_t count = detail::get_u32(in);
  const int h = detail::get_u16(in);
  const int w = detail::get_u16(in);
  const int c = in.get();
  const int classes = in.get();
  if (!in) throw DataError("dataset file: truncated header");
  if (count == 0 || h == 0 || w == 0 || c == 0 || classes == 0)
    throw DataError("dataset file: degenerate dims");

  LabeledDataset ds;
  ds.num_classes = classes;
  const std::size_t pixels = static_cast<std::size_t>(h) * w * c;
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(pixels)))
      throw DataError("dataset file: truncated pixel payload");
    ImageTensor img(h, w, c);
    for (std::size_t j = 0; j < pixels; ++j)
      img.values[j] = buf[j] / 255.0;
    ds.images.push_back(std::move(img));
  }
  std::vector<unsigned char> labels(count);
  if (!in.read(reinterpret_cast<char*>(labels.data()),
               static_cast<std::streamsize>(count)))
    throw DataError("dataset file: truncated labels");
  for (unsigned char y : labels) {
    if (y >= classes) throw DataError("dataset file: label out of range");
    ds.labels.push_back(y);
  }
  return ds;
}

}  // namespace revit
