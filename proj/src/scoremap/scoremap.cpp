#include "partloc/scoremap/scoremap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace partloc::scoremap {

using engine::ConfigError;
using engine::ShapeError;

Refinement parse_refinement(const std::string& name) {
  if (name == "locref") return Refinement::locref;
  if (name == "parabolic") return Refinement::parabolic;
  if (name == "none") return Refinement::none;
  throw ConfigError("unknown refinement '" + name + "' (expected locref, parabolic or none)");
}

std::string to_string(Refinement r) {
  switch (r) {
    case Refinement::locref: return "locref";
    case Refinement::parabolic: return "parabolic";
    case Refinement::none: return "none";
  }
  return "none";
}

void PoseDecodeConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (stride == 0) throw ConfigError("stride must be positive");
  if (!(input_rescale > 0.0)) throw ConfigError("input rescale must be positive");
  if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0)) {
    throw ConfigError("confidence threshold must lie in (0, 1)");
  }
}

GridGeometry grid_geometry(std::size_t height, std::size_t width, const PoseDecodeConfig& cfg) {
  GridGeometry g;
  auto scaled = [&](std::size_t extent) {
    if (cfg.input_rescale == 1.0) return extent;
    return static_cast<std::size_t>(std::ceil(static_cast<double>(extent) * cfg.input_rescale - 1e-9));
  };
  g.image_rows = scaled(height);
  g.image_cols = scaled(width);
  g.rows = (g.image_rows + cfg.stride - 1) / cfg.stride;
  g.cols = (g.image_cols + cfg.stride - 1) / cfg.stride;
  return g;
}

double confidence_from_logit(double logit) {
  const double p = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                                : std::exp(logit) / (1.0 + std::exp(logit));
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(p, lo, hi);
}

template <typename T>
ScoremapTargets<T> make_targets(const PartLabels& labels, std::size_t height, std::size_t width,
                                const PoseDecodeConfig& cfg, const LabelContext& context) {
  cfg.validate();
  const GridGeometry grid = grid_geometry(height, width, cfg);
  const std::size_t parts = labels.size();
  ScoremapTargets<T> t;
  t.targets = Tensor<T>({1, parts, grid.rows, grid.cols});
  t.mask = Tensor<T>({1, parts, grid.rows, grid.cols});
  t.offset_targets = Tensor<T>({1, 2 * parts, grid.rows, grid.cols});
  t.offset_mask = Tensor<T>({1, parts, grid.rows, grid.cols});
  const double stride = static_cast<double>(cfg.stride);
  const double eps2 = cfg.epsilon * cfg.epsilon;
  for (std::size_t p = 0; p < parts; ++p) {
    if (!labels[p]) continue;
    const Point& label = *labels[p];
    if (!(label.x >= 0.0 && label.x < static_cast<double>(width) && label.y >= 0.0 &&
          label.y < static_cast<double>(height))) {
      const std::string part = p < context.parts.size() ? context.parts[p] : std::to_string(p);
      throw LabelValidationError("label for part '" + part + "' in frame '" + context.frame +
                                 "' at (" + std::to_string(label.x) + ", " + std::to_string(label.y) +
                                 ") lies outside the " + std::to_string(width) + "x" +
                                 std::to_string(height) + " image");
    }
    const double lx = label.x * cfg.input_rescale;
    const double ly = label.y * cfg.input_rescale;
    std::size_t positives = 0;
    std::size_t nearest_r = 0, nearest_c = 0;
    double nearest = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < grid.rows; ++r) {
      for (std::size_t c = 0; c < grid.cols; ++c) {
        t.mask.at(0, p, r, c) = T{1};
        const Point center = cell_center(r, c, cfg.stride);
        const double dx = lx - center.x, dy = ly - center.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 < nearest) {
          nearest = d2;
          nearest_r = r;
          nearest_c = c;
        }
        if (d2 <= eps2) {
          ++positives;
          t.targets.at(0, p, r, c) = T{1};
          t.offset_mask.at(0, p, r, c) = T{1};
          t.offset_targets.at(0, 2 * p, r, c) = static_cast<T>(dx / stride);
          t.offset_targets.at(0, 2 * p + 1, r, c) = static_cast<T>(dy / stride);
        }
      }
    }
    if (positives == 0) {
      const Point center = cell_center(nearest_r, nearest_c, cfg.stride);
      t.targets.at(0, p, nearest_r, nearest_c) = T{1};
      t.offset_mask.at(0, p, nearest_r, nearest_c) = T{1};
      t.offset_targets.at(0, 2 * p, nearest_r, nearest_c) = static_cast<T>((lx - center.x) / stride);
      t.offset_targets.at(0, 2 * p + 1, nearest_r, nearest_c) = static_cast<T>((ly - center.y) / stride);
    }
  }
  return t;
}

template <typename T>
std::optional<engine::Var<T>> compute_total_loss(engine::Tape<T>* tape,
                                                 const model::PoseOutput<T>& output,
                                                 const ScoremapTargets<T>& targets,
                                                 const LossWeights& weights, double huber_delta) {
  T labeled{0};
  for (T m : targets.mask.data()) labeled += m;
  if (!(labeled > T{0})) return std::nullopt;

  std::vector<std::pair<engine::Var<T>, T>> terms;
  terms.emplace_back(engine::sigmoid_cross_entropy_masked(tape, output.scoremaps, targets.targets,
                                                          targets.mask),
                     static_cast<T>(weights.scoremap));
  if (output.offsets && weights.locref != 0.0) {
    const auto& om = targets.offset_mask;
    const std::size_t parts = om.dim(1), rows = om.dim(2), cols = om.dim(3);
    Tensor<T> mask2({1, 2 * parts, rows, cols});
    T total{0};
    for (std::size_t p = 0; p < parts; ++p) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const T m = om.at(0, p, r, c);
          mask2.at(0, 2 * p, r, c) = m;
          mask2.at(0, 2 * p + 1, r, c) = m;
          total += m;
        }
      }
    }
    if (total > T{0}) {
      terms.emplace_back(engine::huber_loss(tape, output.offsets, targets.offset_targets, mask2,
                                            static_cast<T>(huber_delta)),
                         static_cast<T>(weights.locref));
    }
  }
  if (output.aux && weights.aux != 0.0) {
    terms.emplace_back(engine::sigmoid_cross_entropy_masked(tape, output.aux, targets.targets,
                                                            targets.mask),
                       static_cast<T>(weights.aux));
  }
  return engine::weighted_sum(tape, terms);
}

namespace {

template <typename T>
void check_maps(const Tensor<T>& scoremaps, const Tensor<T>* offsets, std::size_t parts) {
  if (scoremaps.rank() != 4 || scoremaps.dim(0) != 1 || scoremaps.dim(1) != parts) {
    throw ShapeError("score-maps must be [1, " + std::to_string(parts) + ", h, w], got " +
                     engine::shape_string(scoremaps.shape()));
  }
  if (offsets && (offsets->rank() != 4 || offsets->dim(1) != 2 * parts ||
                  offsets->dim(2) != scoremaps.dim(2) || offsets->dim(3) != scoremaps.dim(3))) {
    throw ShapeError("offsets must be [1, 2P, h, w] matching the score-maps");
  }
}

// Sub-cell vertex of the parabola through three samples, in cells.
double parabolic_shift(double left, double center, double right) {
  const double curvature = left - 2.0 * center + right;
  if (!(curvature < 0.0)) return 0.0;
  return std::clamp(0.5 * (left - right) / curvature, -0.5, 0.5);
}

template <typename T>
Keypoint locate(const Tensor<T>& maps, const Tensor<T>* offsets, const PoseDecodeConfig& cfg,
                const std::string& name, std::size_t p, std::size_t r, std::size_t c) {
  const std::size_t rows = maps.dim(2), cols = maps.dim(3);
  Point px = cell_center(r, c, cfg.stride);
  const double stride = static_cast<double>(cfg.stride);
  const double peak = static_cast<double>(maps.at(0, p, r, c));
  if (cfg.refinement == Refinement::locref && offsets) {
    px.x += stride * static_cast<double>(offsets->at(0, 2 * p, r, c));
    px.y += stride * static_cast<double>(offsets->at(0, 2 * p + 1, r, c));
  } else if (cfg.refinement == Refinement::parabolic ||
             (cfg.refinement == Refinement::locref && !offsets)) {
    if (c > 0 && c + 1 < cols) {
      px.x += stride * parabolic_shift(maps.at(0, p, r, c - 1), peak, maps.at(0, p, r, c + 1));
    }
    if (r > 0 && r + 1 < rows) {
      px.y += stride * parabolic_shift(maps.at(0, p, r - 1, c), peak, maps.at(0, p, r + 1, c));
    }
  }
  Keypoint k;
  k.part = name;
  k.x = px.x / cfg.input_rescale;
  k.y = px.y / cfg.input_rescale;
  k.confidence = confidence_from_logit(peak);
  return k;
}

std::string part_name(const std::vector<std::string>& parts, std::size_t p) {
  return p < parts.size() ? parts[p] : std::to_string(p);
}

}  // namespace

template <typename T>
std::vector<Keypoint> decode_single(const Tensor<T>& scoremaps, const Tensor<T>* offsets,
                                    const PoseDecodeConfig& cfg,
                                    const std::vector<std::string>& parts) {
  const std::size_t count = scoremaps.rank() == 4 ? scoremaps.dim(1) : 0;
  check_maps(scoremaps, offsets, count);
  const std::size_t rows = scoremaps.dim(2), cols = scoremaps.dim(3);
  std::vector<Keypoint> out;
  out.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    std::size_t best_r = 0, best_c = 0;
    T best = scoremaps.at(0, p, 0, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        if (scoremaps.at(0, p, r, c) > best) {
          best = scoremaps.at(0, p, r, c);
          best_r = r;
          best_c = c;
        }
      }
    }
    out.push_back(locate(scoremaps, offsets, cfg, part_name(parts, p), p, best_r, best_c));
  }
  return out;
}

template <typename T>
std::vector<std::vector<Keypoint>> decode_multi(const Tensor<T>& scoremaps, const Tensor<T>* offsets,
                                                const PoseDecodeConfig& cfg,
                                                const std::vector<std::string>& parts,
                                                std::size_t max_instances) {
  if (max_instances == 0) throw ConfigError("max instances must be at least 1");
  const std::size_t count = scoremaps.rank() == 4 ? scoremaps.dim(1) : 0;
  check_maps(scoremaps, offsets, count);
  const std::size_t rows = scoremaps.dim(2), cols = scoremaps.dim(3);
  const double radius = cfg.effective_nms_radius();
  struct Candidate {
    T logit;
    std::size_t r, c;
  };
  std::vector<std::vector<Keypoint>> out(count);
  for (std::size_t p = 0; p < count; ++p) {
    std::vector<Candidate> candidates;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const T v = scoremaps.at(0, p, r, c);
        if (confidence_from_logit(static_cast<double>(v)) < cfg.confidence_threshold) continue;
        bool is_max = true;
        for (std::size_t rr = r == 0 ? 0 : r - 1; rr <= std::min(r + 1, rows - 1) && is_max; ++rr) {
          for (std::size_t cc = c == 0 ? 0 : c - 1; cc <= std::min(c + 1, cols - 1); ++cc) {
            if (scoremaps.at(0, p, rr, cc) > v) {
              is_max = false;
              break;
            }
          }
        }
        if (is_max) candidates.push_back({v, r, c});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.logit > b.logit; });
    std::vector<Point> kept;
    for (const auto& cand : candidates) {
      if (out[p].size() >= max_instances) break;
      const Point here = cell_center(cand.r, cand.c, cfg.stride);
      bool suppressed = false;
      for (const Point& k : kept) {
        if (std::hypot(here.x - k.x, here.y - k.y) <= radius) {
          suppressed = true;
          break;
        }
      }
      if (suppressed) continue;
      kept.push_back(here);
      out[p].push_back(locate(scoremaps, offsets, cfg, part_name(parts, p), p, cand.r, cand.c));
    }
  }
  return out;
}

template <typename T>
std::vector<PeakConfidence> peak_confidence_report(const Tensor<T>& scoremaps,
                                                   const PoseDecodeConfig& cfg,
                                                   const std::vector<std::string>& parts) {
  const std::size_t count = scoremaps.rank() == 4 ? scoremaps.dim(1) : 0;
  check_maps<T>(scoremaps, nullptr, count);
  std::vector<PeakConfidence> report;
  const std::size_t plane = scoremaps.dim(2) * scoremaps.dim(3);
  for (std::size_t p = 0; p < count; ++p) {
    const T* begin = scoremaps.data().data() + p * plane;
    const T peak = *std::max_element(begin, begin + plane);
    PeakConfidence pc;
    pc.part = part_name(parts, p);
    pc.peak_probability = confidence_from_logit(static_cast<double>(peak));
    pc.flagged = pc.peak_probability < cfg.confidence_threshold;
    report.push_back(pc);
  }
  return report;
}

#define PARTLOC_INSTANTIATE(T)                                                                   \
  template ScoremapTargets<T> make_targets<T>(const PartLabels&, std::size_t, std::size_t,       \
                                              const PoseDecodeConfig&, const LabelContext&);     \
  template std::optional<engine::Var<T>> compute_total_loss<T>(                                 \
      engine::Tape<T>*, const model::PoseOutput<T>&, const ScoremapTargets<T>&,                  \
      const LossWeights&, double);                                                              \
  template std::vector<Keypoint> decode_single<T>(const Tensor<T>&, const Tensor<T>*,            \
                                                  const PoseDecodeConfig&,                       \
                                                  const std::vector<std::string>&);              \
  template std::vector<std::vector<Keypoint>> decode_multi<T>(                                  \
      const Tensor<T>&, const Tensor<T>*, const PoseDecodeConfig&,                               \
      const std::vector<std::string>&, std::size_t);                                            \
  template std::vector<PeakConfidence> peak_confidence_report<T>(                               \
      const Tensor<T>&, const PoseDecodeConfig&, const std::vector<std::string>&);

PARTLOC_INSTANTIATE(float)
PARTLOC_INSTANTIATE(double)

#undef PARTLOC_INSTANTIATE

}  // namespace partloc::scoremap
