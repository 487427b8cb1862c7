#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "partloc/dataset/image.hpp"
#include "partloc/dataset/project.hpp"
#include "partloc/model/network.hpp"
#include "partloc/scoremap/scoremap.hpp"

namespace partloc::inference {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Detection {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
  bool operator==(const Detection&) const = default;
};

struct TrajectoryRow {
  std::size_t frame = 0;
  /// points[part * instances + k]; absent when unreadable or not detected.
  std::vector<std::optional<Detection>> points;
  bool operator==(const TrajectoryRow&) const = default;
};

struct Trajectory {
  std::vector<std::string> parts;
  std::size_t instances = 1;
  std::vector<TrajectoryRow> rows;

  const std::optional<Detection>& at(std::size_t row, std::size_t part, std::size_t instance = 0) const {
    return rows[row].points[part * instances + instance];
  }
  bool operator==(const Trajectory&) const = default;
};

/// Header "frame,<part>_x,<part>_y,<part>_confidence,..." (instance k > 0 of a
/// multi-instance trajectory names its columns "<part>#<k+1>_x"); absent
/// values are empty cells and numbers use shortest round-trip text.
std::string trajectory_to_csv(const Trajectory& trajectory);
Trajectory trajectory_from_csv(const std::string& text, const std::string& origin);

/// Forward pass plus decode for one image in original coordinates.
struct FramePrediction {
  std::vector<std::optional<Detection>> points;  // part * instances + k
  /// Per-part sigmoid of the maximal logit.
  std::vector<double> peaks;
};

FramePrediction predict_frame(const model::PartDetectorNetwork<float>& net, const dataset::Image& image,
                              const scoremap::PoseDecodeConfig& cfg, std::size_t instances = 1);

struct AnalysisConfig {
  scoremap::PoseDecodeConfig decode;
  std::size_t instances = 1;
  std::optional<dataset::CropRegion> crop;
};

/// Everything analyze_sequence produced; persisted as <name>.csv plus a
/// <name>.json sidecar. The throughput is not persisted, so stored files
/// depend only on inputs.
struct SequenceAnalysis {
  std::string sequence;
  std::vector<std::string> frame_files;  // one per trajectory row
  Trajectory trajectory;
  /// peaks[row][part]; NaN for unreadable frames.
  std::vector<std::vector<double>> peaks;
  AnalysisConfig config;
  double frames_per_second = 0.0;
  std::vector<std::string> warnings;
};

/// Decodes every frame independently (no temporal filtering), in order.
/// Unreadable frames produce a row of absent values and a warning.
SequenceAnalysis analyze_sequence(const model::PartDetectorNetwork<float>& net,
                                  const std::vector<std::filesystem::path>& frames, const AnalysisConfig& cfg,
                                  const std::string& sequence = "sequence",
                                  const std::function<void(std::size_t done)>& progress = {});

/// Sorted PNG files of a directory.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

void save_analysis(const std::filesystem::path& dir, const SequenceAnalysis& analysis);
SequenceAnalysis load_analysis(const std::filesystem::path& dir, const std::string& sequence);
/// Sequence names with a stored analysis in `dir`.
std::vector<std::string> list_analyses(const std::filesystem::path& dir);

struct Histogram {
  double bin_width = 1.0;
  /// Bin k covers [(first_bin + k) * w, (first_bin + k + 1) * w).
  std::int64_t first_bin = 0;
  std::vector<std::size_t> counts;

  void add(double value);
  std::size_t count_at(double value) const;
  std::size_t total() const;
};

struct PartContinuity {
  std::string part;
  Histogram dx, dy, jump;
  std::size_t transitions = 0;
  double max_jump = 0.0;
  std::size_t max_jump_frame = 0;
  double median_jump = 0.0;
  double q90_jump = 0.0;
  double q99_jump = 0.0;
  /// (frame, jump) for every transition into `frame` above the bound.
  std::vector<std::pair<std::size_t, double>> flagged;
};

struct ContinuityReport {
  double bound = 20.0;
  std::vector<PartContinuity> parts;
};

/// Frame-by-frame differences of instance 0 between consecutive rows where
/// both detections exist.
ContinuityReport continuity_stats(const Trajectory& trajectory, double bin_px = 1.0, double bound_px = 20.0);

enum class QueueReason { low_confidence, discontinuity };
std::string to_string(QueueReason reason);

struct RefineQueueEntry {
  std::size_t frame = 0;  // trajectory row
  QueueReason reason = QueueReason::low_confidence;
  /// Peak probability (low_confidence) or jump in px (discontinuity).
  double score = 0.0;
  std::vector<std::string> parts;
  /// Weaker reasons also present for this frame.
  std::vector<QueueReason> also;
  /// Ranking key in (0, 1]: 1 - p / threshold or 1 - bound / jump.
  double severity = 0.0;
};

/// Frames with a part below the confidence threshold, and frames that a part
/// jumps into by more than the bound. A one-frame spike is attributed to the
/// spiking frame only. One entry per frame, worst first, at most `limit`.
std::vector<RefineQueueEntry> build_refine_queue(const SequenceAnalysis& analysis, double threshold, double bound_px,
                                                 std::size_t limit = 0);

std::string refine_queue_to_csv(const SequenceAnalysis& analysis, const std::vector<RefineQueueEntry>& queue);

}  // namespace partloc::inference
