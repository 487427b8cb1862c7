#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "partloc/dataset/labels.hpp"
#include "partloc/dataset/training_data.hpp"
#include "partloc/training/trainer.hpp"

namespace partloc::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per image, one optional location per part.
using KeypointSet = std::map<std::string, scoremap::PartLabels>;

KeypointSet keypoints_of(const dataset::LabelSet& labels);

struct PairDistance {
  std::string image;
  std::size_t part = 0;
  double distance = 0.0;
};

/// "RMSE" here is the mean Euclidean distance over matched (image, part)
/// pairs, not a root of mean squares.
struct RmseResult {
  double value = 0.0;
  std::size_t included = 0;
  /// Pairs where either side is absent (including images on one side only).
  std::size_t excluded = 0;
  std::vector<PairDistance> pairs;
  /// NaN where a part has no included pair.
  std::vector<double> per_part;
  std::vector<std::size_t> per_part_count;
};

/// `part_filter`, when nonempty, selects the part indices to include.
/// Distances are summed in image-name order, then part order, so the result
/// does not depend on how the sets were built. Throws EvalError when no pair
/// is included.
RmseResult rmse(const KeypointSet& a, const KeypointSet& b, std::size_t part_count,
                const std::vector<std::size_t>& part_filter = {});

struct MeanStat {
  double mean = 0.0;
  /// Sample standard deviation (n - 1) over sqrt(n); 0 for n < 2.
  double sem = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n = 0;
};

/// Mean with 95% interval mean +- 1.96 sem.
MeanStat summarize(const std::vector<double>& values);

struct VariabilityReport {
  MeanStat aggregate;
  std::vector<MeanStat> per_part;
  std::size_t overlap_frames = 0;
  std::size_t excluded_pairs = 0;
  double outlier_threshold = 0.0;
  std::vector<PairDistance> outliers;
};

/// Throws EvalError when the sets share no image or no matched pair.
VariabilityReport compare_scorers(const dataset::LabelSet& a, const dataset::LabelSet& b, std::size_t part_count,
                                  double outlier_px = 10.0);

struct EvaluationReport {
  std::int64_t step = 0;
  std::string snapshot;
  dataset::SplitSpec split;
  std::optional<RmseResult> train;
  std::optional<RmseResult> test;
  /// Fraction of predicted parts whose peak probability is below threshold.
  double low_confidence_fraction = 0.0;
  std::vector<std::string> parts;
};

struct CurveRow {
  std::int64_t step = 0;
  double train_rmse = 0.0;  // NaN without frames
  double test_rmse = 0.0;
  double loss = 0.0;  // NaN without a loss log entry at or before the step
};

struct LearningCurve {
  std::vector<CurveRow> rows;  // strictly increasing steps
  std::vector<EvaluationReport> reports;
  std::vector<std::string> warnings;
};

using FrameList = std::vector<dataset::TrainingFrame>;

/// Predictions of one network for every frame, in original coordinates.
KeypointSet predict_keypoints(const model::PartDetectorNetwork<float>& net, const FrameList& frames,
                              const scoremap::PoseDecodeConfig& cfg, std::size_t* low_confidence = nullptr,
                              std::size_t* predicted = nullptr);

EvaluationReport evaluate_network(const model::PartDetectorNetwork<float>& net, const FrameList& train,
                                  const FrameList& test, const scoremap::PoseDecodeConfig& cfg);

/// Loads each snapshot into a fresh project network and evaluates it without
/// augmentation; unreadable snapshots are skipped with a warning. `loss_log`
/// supplies the loss column.
LearningCurve evaluate_snapshots(const dataset::Project& project, const FrameList& train, const FrameList& test,
                                 const std::vector<training::SnapshotRecord>& snapshots,
                                 const std::vector<training::LossLogRow>& loss_log = {},
                                 const dataset::SplitSpec& split = {});

std::vector<training::LossLogRow> read_loss_log(const std::filesystem::path& path);

std::string learning_curve_csv(const LearningCurve& curve);
std::string per_image_errors_csv(const LearningCurve& curve, const std::vector<std::string>& parts);
std::string evaluation_json(const LearningCurve& curve);
std::string variability_json(const VariabilityReport& report, const std::vector<std::string>& parts);

enum class SweepAxis { train_fraction, epsilon };
SweepAxis parse_axis(const std::string& name);
std::string to_string(SweepAxis axis);

struct SweepConfig {
  SweepAxis axis = SweepAxis::train_fraction;
  std::vector<double> points;
  /// One entry per point, or a single entry applied to all.
  std::vector<std::size_t> splits_per_point;
  std::int64_t budget = 5000;
  /// Snapshots per run (evaluated at budget * k / checkpoints).
  std::int64_t checkpoints = 4;
  std::size_t workers = 1;
  std::filesystem::path output_dir;  // required
  std::string scorer;                // empty means the project scorer
};

/// The default (fraction) grid and its split counts.
SweepConfig default_fraction_sweep();

struct SweepRun {
  std::size_t point_index = 0;
  double point = 0.0;
  std::size_t split_index = 0;
  std::uint64_t split_seed = 0;
  std::uint64_t network_seed = 0;
  bool ok = false;
  std::string error;
  std::size_t train_frames = 0;
  std::size_t test_frames = 0;
  std::vector<CurveRow> curve;
};

struct SweepPoint {
  double point = 0.0;
  std::size_t runs_ok = 0;
  std::size_t runs_failed = 0;
  MeanStat final_train;
  MeanStat final_test;
  /// Mean test RMSE across runs at each checkpoint step.
  std::vector<std::pair<std::int64_t, MeanStat>> test_by_step;
};

struct SweepReport {
  SweepConfig config;
  std::uint64_t project_seed = 0;
  std::vector<SweepRun> runs;
  std::vector<SweepPoint> points;
};

/// Split seed of (point, split): epsilon sweeps share splits across points.
std::uint64_t sweep_split_seed(std::uint64_t project_seed, SweepAxis axis, std::size_t point_index,
                               std::size_t split_index);

/// Trains and evaluates one network per (point, split). Runs are independent;
/// a failing run is recorded and the sweep continues.
SweepReport run_sweep(const dataset::ProjectData& data, const SweepConfig& config);

std::string sweep_runs_csv(const SweepReport& report);
std::string sweep_json(const SweepReport& report);

}  // namespace partloc::eval
