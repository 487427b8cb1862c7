#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "partloc/engine/tape.hpp"

namespace partloc::engine {

struct GradCheckOptions {
  double perturbation = 1e-5;
  /// Coordinates sampled per input; 0 checks every coordinate.
  std::size_t samples_per_input = 0;
  std::uint64_t seed = 0;
  double guard = 1e-6;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<input index>[<coordinate>]"
};

/// Compares reverse-mode gradients of a scalar function with central
/// differences. `loss_fn` builds the loss from `inputs`, recording on the
/// tape when one is given.
template <typename T>
GradCheckResult finite_difference_check(
    const std::function<Var<T>(Tape<T>*)>& loss_fn, const std::vector<Var<T>>& inputs,
    const GradCheckOptions& options = {}) {
  for (const auto& v : inputs) v->tensor.clear_grad();
  {
    Tape<T> tape;
    for (const auto& v : inputs) tape.watch(v);
    Var<T> loss = loss_fn(&tape);
    tape.backward(loss);
  }
  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  const T h = static_cast<T>(options.perturbation);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& tensor = inputs[k]->tensor;
    const std::vector<T> analytic(tensor.grad().begin(), tensor.grad().end());
    std::vector<std::size_t> coords(tensor.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.samples_per_input > 0 && options.samples_per_input < coords.size()) {
      for (std::size_t i = 0; i < options.samples_per_input; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
        std::swap(coords[i], coords[pick(rng)]);
      }
      coords.resize(options.samples_per_input);
    }
    for (std::size_t i : coords) {
      const T original = tensor[i];
      tensor[i] = original + h;
      const double up = static_cast<double>(loss_fn(nullptr)->tensor[0]);
      tensor[i] = original - h;
      const double down = static_cast<double>(loss_fn(nullptr)->tensor[0]);
      tensor[i] = original;
      const double numeric = (up - down) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[i]);
      const double err = std::abs(a - numeric) / (std::abs(a) + options.guard);
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
    tensor.clear_grad();
  }
  return result;
}

}  // namespace partloc::engine
