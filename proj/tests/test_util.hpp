#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "evplan/autodiff.hpp"
#include "evplan/rng.hpp"
#include "evplan/tensor.hpp"

namespace evplan::testkit {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  Tensor t(shape, requires_grad);
  for (double& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences on (up to max_coords) coordinates of every parameter,
// compared against one taped backward pass.
inline GradCheck grad_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                            std::size_t max_coords = 0, double h = 1e-5, double floor = 1e-6) {
  for (auto& p : params) p.clear_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  GradCheck out;
  for (auto& p : params) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    const std::size_t n = p.size();
    const std::size_t stride = (max_coords == 0 || n <= max_coords) ? 1 : (n + max_coords - 1) / max_coords;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.values()[i];
      p.values()[i] = orig + h;
      const double up = loss_fn().item();
      p.values()[i] = orig - h;
      const double down = loss_fn().item();
      p.values()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace evplan::testkit
