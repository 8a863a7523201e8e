#pragma once

#include <vector>

#include "revit/errors.hpp"
#include "revit/tensor.hpp"

namespace revit {

// H x W x C image, row-major with the channel index fastest, values in
// [0,1]. The flat layout matches Tensor so images feed straight into the
// graph as leaves.
struct ImageTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  ImageTensor() = default;

  ImageTensor(int h, int w, int c)
      : height(h), width(w), channels(c),
        values(static_cast<std::size_t>(h) * w * c, 0.0) {
    if (h <= 0 || w <= 0 || c <= 0)
      throw ConfigError("image: dimensions must be positive");
  }

  std::size_t size() const { return values.size(); }

  double& at(int y, int x, int c) {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool in_unit_range(double slack = 0.0) const {
    for (double v : values)
      if (!(v >= -slack && v <= 1.0 + slack)) return false;
    return true;
  }

  bool same_dims(const ImageTensor& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

inline double linf_distance(const ImageTensor& a, const ImageTensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    worst = std::max(worst, std::abs(a.values[i] - b.values[i]));
  return worst;
}

}  // namespace revit
