#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mlrf/tensor.hpp"

namespace mlrf::testing {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::string worst_where;
};

/// Compares the backward gradient of `loss()` w.r.t. `inputs` against central
/// differences at `samples` random coordinates per input (all when 0).
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                 std::size_t samples = 0, double h = 1e-5, std::uint64_t seed = 3) {
  for (auto& t : inputs) t.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  std::mt19937_64 rng(seed);
  GradCheck out;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].values();
    std::vector<std::size_t> coords(values.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (samples && samples < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(samples);
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[k][i], numeric);
      ++out.checked;
      if (err > out.worst) {
        out.worst = err;
        out.worst_where = "input " + std::to_string(k) + " index " + std::to_string(i) + " analytic " +
                          std::to_string(analytic[k][i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace mlrf::testing
