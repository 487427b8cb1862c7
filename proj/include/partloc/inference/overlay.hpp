#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "partloc/dataset/image.hpp"
#include "partloc/inference/analysis.hpp"

namespace partloc::inference {

using Color = std::array<std::uint8_t, 3>;

/// Evenly spaced hues at full saturation; depends only on (part, count).
Color part_color(std::size_t part, std::size_t count);

struct OverlayStyle {
  double dot_radius = 3.0;
  /// Points below this confidence are drawn as rings.
  double confidence_threshold = 0.10;
  Color edge_color{255, 255, 255};
};

struct OverlayPoint {
  std::size_t part = 0;
  std::size_t instance = 0;
  double x = 0.0;
  double y = 0.0;
  double confidence = 1.0;
};

/// Skeleton edges as part-index pairs; unknown names throw InferenceError.
std::vector<std::pair<std::size_t, std::size_t>> resolve_skeleton(
    const std::vector<std::string>& parts, const std::vector<std::pair<std::string, std::string>>& edges);

/// Draws skeleton segments between the points of one instance, then a dot
/// per point; the pixel containing a confident point's center takes the
/// part color exactly.
dataset::Image render_points(const dataset::Image& image, const std::vector<OverlayPoint>& points,
                             std::size_t part_count, const std::vector<std::pair<std::size_t, std::size_t>>& skeleton,
                             const OverlayStyle& style = {});

std::vector<OverlayPoint> points_from_row(const Trajectory& trajectory, std::size_t row);
std::vector<OverlayPoint> points_from_labels(const scoremap::PartLabels& labels);

/// Row-major tiling into `columns` columns (0 means ceil(sqrt(n))); cells are
/// the size of the largest image, padding is black.
dataset::Image montage(const std::vector<dataset::Image>& images, std::size_t columns = 0);

}  // namespace partloc::inference
