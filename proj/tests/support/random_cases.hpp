#pragma once

// Randomized inputs shared by the unit tests and the acceptance gate.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "partloc/eval/eval.hpp"
#include "partloc/kernels/conv.hpp"
#include "partloc/scoremap/scoremap.hpp"
#include "support/oracles.hpp"

namespace cases {

struct ConvCase {
  oracle::Conv g;
  std::vector<double> x, w, b;
};

inline ConvCase random_conv(std::mt19937_64& rng, bool integers, std::size_t max_extent = 9) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  ConvCase c;
  const std::size_t k = 2 * pick(0, 2) + 1;
  c.g = {pick(1, 2), pick(1, 3), pick(1, max_extent), pick(1, max_extent), pick(1, 4), k,
         2 * pick(0, 1) + 1, pick(1, 3), pick(1, 2), pick(0, 3) != 0};
  if (!c.g.same) {
    // Valid padding needs the dilated kernel to fit.
    c.g.h = std::max(c.g.h, (c.g.kh - 1) * c.g.dilation + 1);
    c.g.w = std::max(c.g.w, (c.g.kw - 1) * c.g.dilation + 1);
  }
  auto value = [&]() -> double {
    if (integers) return static_cast<double>(std::uniform_int_distribution<int>(-4, 4)(rng));
    return std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  };
  c.x.resize(c.g.n * c.g.c * c.g.h * c.g.w);
  c.w.resize(c.g.oc * c.g.c * c.g.kh * c.g.kw);
  c.b.resize(c.g.oc);
  for (auto& v : c.x) v = value();
  for (auto& v : c.w) v = value();
  for (auto& v : c.b) v = value();
  return c;
}

inline partloc::kernels::ConvGeometry geometry(const oracle::Conv& g) {
  using partloc::kernels::Padding;
  return partloc::kernels::make_geometry(g.n, g.c, g.h, g.w, g.oc, g.kh, g.kw, g.stride, g.dilation,
                                         g.same ? Padding::same : Padding::valid);
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

/// Brute-force positive count from the disk definition; a part whose disk
/// misses every cell center still owns its nearest cell.
inline std::size_t disk_positive_count(partloc::scoremap::Point label, std::size_t h, std::size_t w,
                                       const partloc::scoremap::PoseDecodeConfig& cfg) {
  const std::size_t rh = cfg.input_rescale == 1.0 ? h : static_cast<std::size_t>(std::ceil(h * cfg.input_rescale - 1e-9));
  const std::size_t rw = cfg.input_rescale == 1.0 ? w : static_cast<std::size_t>(std::ceil(w * cfg.input_rescale - 1e-9));
  const std::size_t rows = (rh + cfg.stride - 1) / cfg.stride, cols = (rw + cfg.stride - 1) / cfg.stride;
  std::size_t count = 0;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double cx = j * static_cast<double>(cfg.stride) + cfg.stride / 2.0;
      const double cy = i * static_cast<double>(cfg.stride) + cfg.stride / 2.0;
      if (std::hypot(cx - label.x * cfg.input_rescale, cy - label.y * cfg.input_rescale) <= cfg.epsilon) ++count;
    }
  return std::max<std::size_t>(count, 1);
}

struct TargetCase {
  partloc::scoremap::Point label;
  std::size_t h, w;
  partloc::scoremap::PoseDecodeConfig cfg;
};

inline TargetCase random_target(std::mt19937_64& rng, int trial) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t strides[] = {4, 8, 16};
  const double rescales[] = {1.0, 0.8, 0.5};
  TargetCase c;
  c.h = 32 + static_cast<std::size_t>(u(rng) * 100);
  c.w = 32 + static_cast<std::size_t>(u(rng) * 100);
  c.cfg.epsilon = 0.5 + u(rng) * 30.0;
  c.cfg.stride = strides[trial % 3];
  c.cfg.input_rescale = rescales[(trial / 3) % 3];
  c.label = {u(rng) * (c.w - 1e-6), u(rng) * (c.h - 1e-6)};
  return c;
}

struct RmseCase {
  partloc::eval::KeypointSet a, b;
  std::vector<oracle::Pair> pairs;
};

inline RmseCase random_rmse(std::mt19937_64& rng, std::size_t parts, bool integer) {
  using partloc::scoremap::Point;
  RmseCase c;
  std::uniform_real_distribution<double> u(0, 200);
  auto coord = [&] { return integer ? std::floor(u(rng)) : u(rng); };
  const std::size_t images = 1 + rng() % 12;
  for (std::size_t i = 0; i < images; ++i) {
    const std::string name = "img" + std::to_string(i) + ".png";
    const int side = static_cast<int>(rng() % 8);  // 0: only in a, 1: only in b, else both
    partloc::scoremap::PartLabels la(parts), lb(parts);
    for (std::size_t p = 0; p < parts; ++p) {
      if (rng() % 6 != 0) la[p] = Point{coord(), coord()};
      if (rng() % 6 != 0) lb[p] = Point{coord(), coord()};
    }
    if (side != 1) c.a[name] = la;
    if (side != 0) c.b[name] = lb;
    for (std::size_t p = 0; p < parts; ++p) {
      const bool both = side >= 2 && la[p] && lb[p];
      c.pairs.push_back({name, p, both, both ? la[p]->x : 0, both ? la[p]->y : 0, both ? lb[p]->x : 0,
                         both ? lb[p]->y : 0});
    }
  }
  return c;
}

}  // namespace cases
