#include <doctest.h>

#include <cmath>
#include <random>

#include "partloc/scoremap/scoremap.hpp"
#include "support/op_cases.hpp"
#include "support/oracles.hpp"
#include "support/random_cases.hpp"

using namespace partloc;
using namespace partloc::scoremap;
using engine::Tensor;

namespace {

PoseDecodeConfig unit_config(double eps = 17.0, std::size_t stride = 8, double rescale = 1.0) {
  PoseDecodeConfig cfg;
  cfg.epsilon = eps;
  cfg.stride = stride;
  cfg.input_rescale = rescale;
  return cfg;
}

double total(const Tensor<double>& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

/// Logit +20 on positives, -20 elsewhere; exact offsets.
Tensor<double> ideal_logits(const ScoremapTargets<double>& t) {
  Tensor<double> z(t.targets.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = t.targets[i] > 0.5 ? 20.0 : -20.0;
  return z;
}

}  // namespace

TEST_CASE("sixteen positive cells around (32, 32)") {
  const auto t = make_targets<double>({Point{32, 32}}, 64, 64, unit_config());
  CHECK(total(t.targets) == 16.0);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      const bool inside = i >= 2 && i <= 5 && j >= 2 && j <= 5;
      CHECK(t.targets.at(0, 0, i, j) == (inside ? 1.0 : 0.0));
    }
  CHECK(cases::disk_positive_count({32, 32}, 64, 64, unit_config()) == 16);
}

TEST_CASE("unlabeled parts are masked out and labeled parts fully unmasked") {
  const auto t = make_targets<double>({std::nullopt, Point{10, 50}}, 64, 64, unit_config());
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(t.mask[i] == 0.0);
    CHECK(t.targets[i] == 0.0);
    CHECK(t.mask[64 + i] == 1.0);
  }
}

TEST_CASE("label on a cell center has a zero offset") {
  const auto t = make_targets<double>({Point{20, 28}}, 64, 64, unit_config());
  // Cell center (20, 28) is row 3, column 2.
  CHECK(t.targets.at(0, 0, 3, 2) == 1.0);
  CHECK(t.offset_targets.at(0, 0, 3, 2) == 0.0);
  CHECK(t.offset_targets.at(0, 1, 3, 2) == 0.0);
  CHECK(t.offset_targets.at(0, 0, 3, 3) == doctest::Approx(-1.0));
}

TEST_CASE("out-of-bounds labels name the frame and part") {
  LabelContext ctx{"labeled-data/img007.png", {"snout", "tail"}};
  CHECK_THROWS_WITH_AS(make_targets<double>({std::nullopt, Point{64.5, 3}}, 64, 64, unit_config(), ctx),
                       doctest::Contains("'tail' in frame 'labeled-data/img007.png'"), LabelValidationError);
  CHECK_THROWS_AS(make_targets<double>({Point{-0.1, 3}}, 64, 64, unit_config()), LabelValidationError);
}

TEST_CASE("positive counts match the brute-force oracle over 1000 random triples") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = cases::random_target(rng, trial);
    const auto t = make_targets<double>({c.label}, c.h, c.w, c.cfg);
    REQUIRE(static_cast<std::size_t>(total(t.targets)) == cases::disk_positive_count(c.label, c.h, c.w, c.cfg));
    // The offset mask is the positive support.
    REQUIRE(total(t.offset_mask) == total(t.targets));
  }
}

TEST_CASE("loss at the saturated fixed point and with locref weight zero") {
  const std::vector<std::string> parts{"a", "b"};
  const auto t = make_targets<double>({Point{21, 30}, Point{50, 9}}, 64, 64, unit_config());
  model::PoseOutput<double> out;
  out.scoremaps = engine::make_var(ideal_logits(t));
  out.offsets = engine::make_var(t.offset_targets);
  const auto loss = compute_total_loss<double>(nullptr, out, t);
  REQUIRE(loss);
  CHECK((*loss)->tensor[0] < 1e-6);

  std::mt19937_64 rng(32);
  out.scoremaps = engine::make_var(opcases::random_tensor(rng, t.targets.shape(), -3, 3));
  out.offsets = engine::make_var(opcases::random_tensor(rng, t.offset_targets.shape(), -2, 2));
  const double ce = engine::sigmoid_cross_entropy_masked<double>(nullptr, out.scoremaps, t.targets, t.mask)->tensor[0];
  const auto no_locref = compute_total_loss<double>(nullptr, out, t, {1.0, 0.0, 1.0});
  CHECK((*no_locref)->tensor[0] == ce);
}

TEST_CASE("total loss equals the independently summed terms") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t parts = 1 + trial % 3;
    PartLabels labels;
    for (std::size_t p = 0; p < parts; ++p) {
      if (u(rng) < 0.2 && p > 0) labels.push_back(std::nullopt);
      else labels.push_back(Point{u(rng) * 63.0, u(rng) * 47.0});
    }
    const auto t = make_targets<double>(labels, 48, 64, unit_config(5.0 + 20.0 * u(rng)));
    model::PoseOutput<double> out;
    out.scoremaps = engine::make_var(opcases::random_tensor(rng, t.targets.shape(), -5, 5));
    out.offsets = engine::make_var(opcases::random_tensor(rng, t.offset_targets.shape(), -3, 3));
    out.aux = engine::make_var(opcases::random_tensor(rng, t.targets.shape(), -5, 5));
    const LossWeights w{1.0, 0.05 + u(rng), 0.05 + u(rng)};
    const double delta = 0.5 + u(rng);

    double ce = 0, aux = 0, m = 0, hub = 0, hm = 0;
    for (std::size_t i = 0; i < t.targets.size(); ++i) {
      ce += t.mask[i] * oracle::sigmoid_ce(out.scoremaps->tensor[i], t.targets[i]);
      aux += t.mask[i] * oracle::sigmoid_ce(out.aux->tensor[i], t.targets[i]);
      m += t.mask[i];
    }
    const std::size_t plane = t.targets.dim(2) * t.targets.dim(3);
    for (std::size_t p = 0; p < parts; ++p)
      for (std::size_t k = 0; k < plane; ++k) {
        const double om = t.offset_mask[p * plane + k];
        for (std::size_t axis = 0; axis < 2; ++axis) {
          const std::size_t idx = (2 * p + axis) * plane + k;
          hub += om * oracle::huber(out.offsets->tensor[idx] - t.offset_targets[idx], delta);
          hm += om;
        }
      }
    const double expected = ce / m + w.locref * hub / hm + w.aux * aux / m;
    const auto got = compute_total_loss<double>(nullptr, out, t, w, delta);
    REQUIRE(got);
    REQUIRE(std::abs((*got)->tensor[0] - expected) < 1e-9);
  }
}

TEST_CASE("a frame with no labeled part yields no loss") {
  const auto t = make_targets<double>({std::nullopt, std::nullopt}, 64, 64, unit_config());
  model::PoseOutput<double> out;
  out.scoremaps = engine::make_var(Tensor<double>(t.targets.shape()));
  CHECK_FALSE(compute_total_loss<double>(nullptr, out, t).has_value());
}

TEST_CASE("decode_single grid mapping, tie rule and confidence") {
  auto cfg = unit_config();
  cfg.refinement = Refinement::none;
  Tensor<double> z({1, 1, 8, 8}, -5.0);
  z.at(0, 0, 2, 3) = 7.0;
  const auto k = decode_single<double>(z, nullptr, cfg, {"snout"});
  REQUIRE(k.size() == 1);
  CHECK(k[0].part == "snout");
  CHECK(k[0].x == 28.0);
  CHECK(k[0].y == 20.0);
  CHECK(k[0].confidence == doctest::Approx(1.0 / (1.0 + std::exp(-7.0))));

  Tensor<double> flat({1, 1, 8, 8}, 0.0);
  const auto f = decode_single<double>(flat, nullptr, cfg, {"snout"});
  CHECK(f[0].confidence == 0.5);
  CHECK(f[0].x == 4.0);
  CHECK(f[0].y == 4.0);

  Tensor<double> two({1, 1, 8, 8}, 0.0);
  two.at(0, 0, 5, 1) = 3.0;
  two.at(0, 0, 4, 6) = 3.0;
  CHECK(decode_single<double>(two, nullptr, cfg, {"p"})[0].y == 36.0);
}

TEST_CASE("decode applies the offsets and the rescale") {
  auto cfg = unit_config(17.0, 8, 0.5);
  Tensor<double> z({1, 1, 4, 4}, -5.0), off({1, 2, 4, 4}, 0.0);
  z.at(0, 0, 1, 2) = 5.0;
  off.at(0, 0, 1, 2) = 0.25;
  off.at(0, 1, 1, 2) = -0.5;
  const auto k = decode_single<double>(z, &off, cfg, {"p"});
  CHECK(k[0].x == doctest::Approx((20.0 + 2.0) / 0.5));
  CHECK(k[0].y == doctest::Approx((12.0 - 4.0) / 0.5));
}

TEST_CASE("parabolic refinement recovers a sampled quadratic's vertex") {
  auto cfg = unit_config();
  cfg.refinement = Refinement::parabolic;
  const double vx = 3.3, vy = 4.8;
  Tensor<double> z({1, 1, 8, 8});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) z.at(0, 0, i, j) = 4.0 - 0.7 * ((j - vx) * (j - vx) + (i - vy) * (i - vy));
  const auto k = decode_single<double>(z, nullptr, cfg, {"p"});
  CHECK(k[0].x == doctest::Approx(vx * 8 + 4));
  CHECK(k[0].y == doctest::Approx(vy * 8 + 4));
}

TEST_CASE("encode then decode the ideal map recovers the label within half a pixel") {
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double rescale = trial % 2 ? 0.8 : 1.0;
    auto cfg = unit_config(3.0 + 25.0 * u(rng), trial % 3 ? 8 : 4, rescale);
    const Point label{u(rng) * 99.9, u(rng) * 79.9};
    const auto t = make_targets<double>({label}, 80, 100, cfg);
    const auto z = ideal_logits(t);
    const auto k = decode_single<double>(z, &t.offset_targets, cfg, {"p"});
    REQUIRE(std::hypot(k[0].x - label.x, k[0].y - label.y) < 0.5);
  }
}

TEST_CASE("decoding is equivariant to the input rescale within one coarse stride") {
  // The same keypoint rendered as a peaked map on each grid.
  auto peaked = [](Point label, std::size_t h, std::size_t w, const PoseDecodeConfig& cfg) {
    const auto g = grid_geometry(h, w, cfg);
    Tensor<double> z({1, 1, g.rows, g.cols});
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) {
        const Point c = cell_center(i, j, cfg.stride);
        const double d = std::hypot(c.x - label.x * cfg.input_rescale, c.y - label.y * cfg.input_rescale);
        z.at(0, 0, i, j) = 8.0 - d / cfg.stride;
      }
    return z;
  };
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Point label{u(rng) * 127.0, u(rng) * 95.0};
    for (auto refinement : {Refinement::none, Refinement::parabolic}) {
      auto fine = unit_config(12.0, 8, 1.0);
      auto coarse = unit_config(12.0, 8, 0.5);
      fine.refinement = coarse.refinement = refinement;
      const auto kf = decode_single<double>(peaked(label, 96, 128, fine), nullptr, fine, {"p"});
      const auto kc = decode_single<double>(peaked(label, 96, 128, coarse), nullptr, coarse, {"p"});
      const double coarse_stride = 8.0 / 0.5;
      REQUIRE(std::abs(kf[0].x - kc[0].x) <= coarse_stride);
      REQUIRE(std::abs(kf[0].y - kc[0].y) <= coarse_stride);
    }
  }
}

TEST_CASE("decode_multi suppression and degenerate cases") {
  auto cfg = unit_config();
  cfg.refinement = Refinement::none;
  Tensor<double> z({1, 1, 8, 16}, -20.0);
  z.at(0, 0, 3, 1) = 20.0;
  z.at(0, 0, 3, 13) = 18.0;  // 96 px away, outside the 34 px radius
  const auto multi = decode_multi<double>(z, nullptr, cfg, {"p"}, 5);
  REQUIRE(multi[0].size() == 2);
  CHECK(multi[0][0].x == 12.0);
  CHECK(multi[0][1].x == 108.0);
  CHECK(multi[0][0].confidence > multi[0][1].confidence);

  Tensor<double> near_pair = z;
  near_pair.at(0, 0, 3, 13) = -20.0;
  near_pair.at(0, 0, 3, 4) = 19.0;  // 24 px away: suppressed
  CHECK(decode_multi<double>(near_pair, nullptr, cfg, {"p"}, 5)[0].size() == 1);

  CHECK(decode_multi<double>(z, nullptr, cfg, {"p"}, 1)[0].size() == 1);
  CHECK_THROWS_AS(decode_multi<double>(z, nullptr, cfg, {"p"}, 0), engine::ConfigError);
  Tensor<double> dark({1, 1, 4, 4}, -10.0);
  CHECK(decode_multi<double>(dark, nullptr, cfg, {"p"}, 3)[0].empty());
}

TEST_CASE("decode_multi with one instance equals decode_single when the peak clears the threshold") {
  std::mt19937_64 rng(36);
  for (int trial = 0; trial < 300; ++trial) {
    auto cfg = unit_config();
    cfg.refinement = trial % 2 ? Refinement::locref : Refinement::parabolic;
    const auto z = opcases::random_tensor(rng, {1, 2, 6, 7}, -6.0, 3.0);
    const auto off = opcases::random_tensor(rng, {1, 4, 6, 7}, -0.5, 0.5);
    const auto single = decode_single<double>(z, &off, cfg, {"a", "b"});
    const auto multi = decode_multi<double>(z, &off, cfg, {"a", "b"}, 1);
    for (std::size_t p = 0; p < 2; ++p) {
      if (single[p].confidence < cfg.confidence_threshold) continue;
      REQUIRE(multi[p].size() == 1);
      CHECK(multi[p][0].x == single[p].x);
      CHECK(multi[p][0].y == single[p].y);
      CHECK(multi[p][0].confidence == single[p].confidence);
    }
  }
}

TEST_CASE("peak confidence report") {
  auto cfg = unit_config();
  Tensor<double> z({1, 2, 3, 3}, -30.0);
  z.at(0, 0, 1, 1) = -4.0;
  z.at(0, 1, 0, 2) = 4.0;
  const auto r = peak_confidence_report<double>(z, cfg, {"hidden", "shown"});
  CHECK(r[0].peak_probability == doctest::Approx(0.01799).epsilon(1e-3));
  CHECK(r[0].flagged);
  CHECK(r[1].peak_probability == doctest::Approx(0.98201).epsilon(1e-4));
  CHECK_FALSE(r[1].flagged);
}

TEST_CASE("confidences stay inside the open unit interval") {
  for (double z : {-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6}) {
    const double p = confidence_from_logit(z);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("decode configuration validation") {
  auto cfg = unit_config();
  cfg.confidence_threshold = 1.0;
  CHECK_THROWS_AS(cfg.validate(), engine::ConfigError);
  cfg = unit_config(0.0);
  CHECK_THROWS_AS(cfg.validate(), engine::ConfigError);
  CHECK(unit_config().effective_nms_radius() == 34.0);
  CHECK(parse_refinement("parabolic") == Refinement::parabolic);
  CHECK_THROWS_AS(parse_refinement("kalman"), engine::ConfigError);
}
