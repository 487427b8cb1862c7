#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "partloc/engine/ops.hpp"
#include "partloc/model/network.hpp"

namespace partloc::scoremap {

using engine::Tensor;

class LabelValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pixel coordinates: x is the column from the left, y the row from the top.
struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

/// One optional location per body part; nullopt means invisible/unlabeled.
using PartLabels = std::vector<std::optional<Point>>;

enum class Refinement { locref, parabolic, none };

Refinement parse_refinement(const std::string& name);
std::string to_string(Refinement r);

struct PoseDecodeConfig {
  double epsilon = 17.0;
  std::size_t stride = 8;
  double input_rescale = 0.8;
  double confidence_threshold = 0.10;
  /// Non-positive means the default of 2 * epsilon.
  double nms_radius = 0.0;
  Refinement refinement = Refinement::locref;

  void validate() const;
  double effective_nms_radius() const { return nms_radius > 0.0 ? nms_radius : 2.0 * epsilon; }
};

struct Keypoint {
  std::string part;
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
};

/// Targets in network layout: targets/mask/offset_mask are [1, P, h, w];
/// offset_targets is [1, 2P, h, w] with (dx, dy) interleaved per part.
template <typename T>
struct ScoremapTargets {
  Tensor<T> targets;
  Tensor<T> mask;
  Tensor<T> offset_targets;
  Tensor<T> offset_mask;
};

/// Rescaled image extents and score-map grid extents for an original image.
struct GridGeometry {
  std::size_t image_rows = 0, image_cols = 0;
  std::size_t rows = 0, cols = 0;
};
GridGeometry grid_geometry(std::size_t height, std::size_t width, const PoseDecodeConfig& cfg);

/// Center of grid cell (row, col) in rescaled-image pixels.
inline Point cell_center(std::size_t row, std::size_t col, std::size_t stride) {
  const double s = static_cast<double>(stride);
  return {static_cast<double>(col) * s + s / 2.0, static_cast<double>(row) * s + s / 2.0};
}

/// Logistic function in double, clamped into the open interval (0, 1).
double confidence_from_logit(double logit);

/// Names used in validation messages.
struct LabelContext {
  std::string frame;
  std::vector<std::string> parts;
};

/// Disk targets of radius epsilon (rescaled pixels). A labeled part whose
/// disk contains no cell center is assigned its nearest cell.
template <typename T>
ScoremapTargets<T> make_targets(const PartLabels& labels, std::size_t height, std::size_t width,
                                const PoseDecodeConfig& cfg, const LabelContext& context = {});

struct LossWeights {
  double scoremap = 1.0;
  double locref = 1.0;
  double aux = 1.0;
};

/// Weighted sum of masked cross-entropy on score-maps (and the auxiliary head
/// when present) plus masked Huber on offsets. Returns nullopt when the frame
/// has no labeled part.
template <typename T>
std::optional<engine::Var<T>> compute_total_loss(engine::Tape<T>* tape,
                                                 const model::PoseOutput<T>& output,
                                                 const ScoremapTargets<T>& targets,
                                                 const LossWeights& weights = {},
                                                 double huber_delta = 1.0);

/// Argmax decode per part. `scoremaps`/`offsets` are [1, P, h, w] /
/// [1, 2P, h, w]; offsets may be null.
template <typename T>
std::vector<Keypoint> decode_single(const Tensor<T>& scoremaps, const Tensor<T>* offsets,
                                    const PoseDecodeConfig& cfg,
                                    const std::vector<std::string>& parts);

/// Greedy non-maximum suppression over local maxima above the confidence
/// threshold; results per part in descending confidence.
template <typename T>
std::vector<std::vector<Keypoint>> decode_multi(const Tensor<T>& scoremaps, const Tensor<T>* offsets,
                                                const PoseDecodeConfig& cfg,
                                                const std::vector<std::string>& parts,
                                                std::size_t max_instances);

struct PeakConfidence {
  std::string part;
  double peak_probability = 0.0;
  bool flagged = false;
};

template <typename T>
std::vector<PeakConfidence> peak_confidence_report(const Tensor<T>& scoremaps,
                                                   const PoseDecodeConfig& cfg,
                                                   const std::vector<std::string>& parts);

}  // namespace partloc::scoremap
