#pragma once

// Randomized gradient-check cases, one per differentiable op. Each case
// builds fresh double-precision inputs from a seed and returns the worst
// relative error between reverse-mode and central-difference gradients.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "partloc/engine/gradcheck.hpp"
#include "partloc/engine/ops.hpp"
#include "partloc/model/network.hpp"

namespace opcases {

using namespace partloc::engine;
using D = double;

inline Tensor<D> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<D> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// Values bounded away from zero, for ops with a kink there.
inline Tensor<D> random_nonzero(std::mt19937_64& rng, Shape shape) {
  Tensor<D> t = random_tensor(rng, std::move(shape));
  for (auto& v : t.values()) v += v < 0 ? -0.1 : 0.1;
  return t;
}

inline LayerParams<D> conv_params(std::mt19937_64& rng, const std::string& name, std::size_t a,
                                  std::size_t b, std::size_t kh, std::size_t kw) {
  LayerParams<D> p;
  p.name = name;
  p.weights = make_var(random_tensor(rng, {a, b, kh, kw}), true);
  p.bias = make_var(random_tensor(rng, {name.rfind("deconv", 0) == 0 ? b : a}), true);
  return p;
}

/// Contracts an op output to a scalar with a non-trivial gradient: the mean
/// of 0.5 (y - r)^2 against a fixed random r.
inline Var<D> scalarize(Tape<D>* tape, const Var<D>& y, const Tensor<D>& r) {
  Tensor<D> mask(y->tensor.shape(), 1.0);
  return huber_loss(tape, y, r, mask, 1e6);
}

struct OpCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

inline GradCheckResult check(const std::function<Var<D>(Tape<D>*)>& f, const std::vector<Var<D>>& in,
                             std::uint64_t seed) {
  GradCheckOptions opts;
  opts.seed = seed;
  return finite_difference_check<D>(f, in, opts);
}

inline std::vector<OpCase> all_cases() {
  std::vector<OpCase> cases;

  cases.push_back({"conv2d", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 2);
    const std::size_t stride = 1 + pick(rng) % 2, dilation = 1 + pick(rng) % 2;
    const std::size_t k = 2 * pick(rng) + 1;
    const Padding pad = pick(rng) == 0 ? Padding::valid : Padding::same;
    const std::size_t extent = pad == Padding::valid ? (k - 1) * dilation + 3 : 5;
    auto x = make_var(random_tensor(rng, {1, 2, extent, extent + 1}), true);
    auto p = conv_params(rng, "conv", 3, 2, k, k);
    ConvOptions o{stride, dilation, pad};
    const auto probe = conv2d<D>(nullptr, x, p, o);
    const auto r = random_tensor(rng, probe->tensor.shape());
    return check([&](Tape<D>* t) { return scalarize(t, conv2d(t, x, p, o), r); },
                 {x, p.weights, p.bias}, seed);
  }});

  cases.push_back({"transposed_conv2d", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t stride = 1 + seed % 3;
    const std::size_t k = seed % 2 ? 3 : 1;
    auto x = make_var(random_tensor(rng, {1, 2, 3, 4}), true);
    auto p = conv_params(rng, "deconv", 2, 3, k, k);
    const auto probe = transposed_conv2d<D>(nullptr, x, p, stride);
    const auto r = random_tensor(rng, probe->tensor.shape());
    return check([&](Tape<D>* t) { return scalarize(t, transposed_conv2d(t, x, p, stride), r); },
                 {x, p.weights, p.bias}, seed);
  }});

  cases.push_back({"relu", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = make_var(random_nonzero(rng, {1, 2, 4, 4}), true);
    const auto r = random_tensor(rng, x->tensor.shape());
    return check([&](Tape<D>* t) { return scalarize(t, relu(t, x), r); }, {x}, seed);
  }});

  cases.push_back({"add", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto a = make_var(random_tensor(rng, {1, 2, 3, 3}), true);
    auto b = make_var(random_tensor(rng, {1, 2, 3, 3}), true);
    const auto r = random_tensor(rng, a->tensor.shape());
    return check([&](Tape<D>* t) { return scalarize(t, add(t, a, b), r); }, {a, b}, seed);
  }});

  cases.push_back({"frozen_norm", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = make_var(random_tensor(rng, {1, 3, 3, 3}), true);
    LayerParams<D> p;
    p.name = "norm";
    p.weights = make_var(random_tensor(rng, {3}), true);
    p.bias = make_var(random_tensor(rng, {3}), true);
    p.frozen_stats = FrozenStats<D>{random_tensor(rng, {3}).values(), random_tensor(rng, {3}, 0.2, 2.0).values()};
    const auto r = random_tensor(rng, x->tensor.shape());
    return check([&](Tape<D>* t) { return scalarize(t, frozen_norm(t, x, p), r); },
                 {x, p.weights, p.bias}, seed);
  }});

  cases.push_back({"crop", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = make_var(random_tensor(rng, {1, 2, 5, 6}), true);
    const std::size_t rows = 1 + seed % 5, cols = 1 + (seed / 5) % 6;
    const auto r = random_tensor(rng, {1, 2, rows, cols});
    return check([&](Tape<D>* t) { return scalarize(t, crop(t, x, rows, cols), r); }, {x}, seed);
  }});

  cases.push_back({"resize_bilinear", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = make_var(random_tensor(rng, {1, 2, 3 + seed % 3, 4}), true);
    const std::size_t rows = 2 + seed % 7, cols = 1 + (seed * 7) % 9;
    const auto r = random_tensor(rng, {1, 2, rows, cols});
    return check([&](Tape<D>* t) { return scalarize(t, resize_bilinear(t, x, rows, cols), r); }, {x},
                 seed);
  }});

  cases.push_back({"slice_channels", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = make_var(random_tensor(rng, {1, 5, 2, 3}), true);
    const std::size_t begin = seed % 4, count = 1 + (seed / 4) % (5 - begin);
    const auto r = random_tensor(rng, {1, count, 2, 3});
    return check([&](Tape<D>* t) { return scalarize(t, slice_channels(t, x, begin, count), r); }, {x},
                 seed);
  }});

  cases.push_back({"sum", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = make_var(random_tensor(rng, {1, 2, 3, 3}), true);
    Tensor<D> r({1}, 0.3);
    return check([&](Tape<D>* t) { return scalarize(t, sum(t, x), r); }, {x}, seed);
  }});

  cases.push_back({"weighted_sum", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto a = make_var(random_tensor(rng, {1}), true);
    auto b = make_var(random_tensor(rng, {1}), true);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    const double wa = u(rng), wb = u(rng);
    Tensor<D> r({1}, 0.1);
    return check([&](Tape<D>* t) { return scalarize(t, weighted_sum<D>(t, {{a, wa}, {b, wb}}), r); },
                 {a, b}, seed);
  }});

  cases.push_back({"sigmoid_cross_entropy_masked", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto z = make_var(random_tensor(rng, {1, 2, 4, 4}, -6.0, 6.0), true);
    Tensor<D> targets(z->tensor.shape()), mask(z->tensor.shape());
    std::bernoulli_distribution coin(0.5), keep(0.8);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      targets[i] = coin(rng) ? 1.0 : 0.0;
      mask[i] = keep(rng) ? 1.0 : 0.0;
    }
    mask[0] = 1.0;
    return check([&](Tape<D>* t) { return sigmoid_cross_entropy_masked(t, z, targets, mask); }, {z},
                 seed);
  }});

  cases.push_back({"huber_loss", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto p = make_var(random_tensor(rng, {1, 2, 3, 3}, -3.0, 3.0), true);
    const auto target = random_tensor(rng, p->tensor.shape());
    Tensor<D> mask(p->tensor.shape(), 1.0);
    // Keep residuals away from the quadratic/linear seam at |r| = delta.
    for (std::size_t i = 0; i < p->tensor.size(); ++i) {
      const double r = p->tensor[i] - target[i];
      if (std::abs(std::abs(r) - 1.0) < 0.05) p->tensor[i] += 0.2;
    }
    return check([&](Tape<D>* t) { return huber_loss(t, p, target, mask, 1.0); }, {p}, seed);
  }});

  return cases;
}

/// Toy two-part network in double precision on a 32x32 input; the loss sums
/// both score-map terms and the offset term.
struct NetworkCheck {
  GradCheckResult result;
  std::size_t inputs = 0;
};

inline NetworkCheck network_gradient_check() {
  using namespace partloc;
  std::mt19937_64 rng(22);
  Tensor<D> image = random_tensor(rng, {1, 3, 32, 32}, -0.5, 0.5);
  auto cfg = model::BackboneConfig::from_preset("toy");
  cfg.input_rescale = 1.0;
  model::PartDetectorNetwork<D> unit(cfg, {"a", "b"}, {true, true, 21});
  const auto probe = unit.forward_pose(nullptr, image);
  Tensor<D> targets(probe.scoremaps->tensor.shape()), mask(targets.shape(), 1.0);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = i % 5 == 0 ? 1.0 : 0.0;
  const auto offsets = random_tensor(rng, probe.offsets->tensor.shape());
  Tensor<D> offset_mask(offsets.shape(), 1.0);

  std::vector<Var<D>> inputs;
  for (const auto& p : unit.parameters()) inputs.push_back(p.var);
  auto loss_fn = [&](Tape<D>* tape) {
    const auto out = unit.forward_pose(tape, image);
    auto ce = sigmoid_cross_entropy_masked(tape, out.scoremaps, targets, mask);
    auto aux = sigmoid_cross_entropy_masked(tape, out.aux, targets, mask);
    auto hub = huber_loss(tape, out.offsets, offsets, offset_mask, 1.0);
    return weighted_sum<D>(tape, {{ce, 1.0}, {aux, 1.0}, {hub, 1.0}});
  };
  GradCheckOptions opts;
  opts.samples_per_input = 12;
  opts.seed = 23;
  return {finite_difference_check<D>(loss_fn, inputs, opts), inputs.size()};
}

}  // namespace opcases
