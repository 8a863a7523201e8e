#pragma once

#include <functional>

#include "revit/tensor.hpp"

namespace revit {

// Central-difference gradient estimate, (f(x+h e_i) - f(x-h e_i)) / 2h per
// coordinate. Deliberately evaluates f the slow way, one coordinate at a
// time: this is the independent oracle the reverse-mode path is checked
// against, so it must not share any code with Graph.
inline Tensor finite_diff_check(const std::function<double(const Tensor&)>& f,
                                const Tensor& x, double h = 1e-5) {
  Tensor grad(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|); the gradient-check metric.
inline double max_rel_err(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double denom =
        std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace revit
