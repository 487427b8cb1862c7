#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "partloc/dataset/training_data.hpp"
#include "partloc/model/network.hpp"
#include "partloc/model/weights_io.hpp"

namespace partloc::training {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SnapshotRecord {
  std::int64_t step = 0;
  std::filesystem::path path;
};

struct TrainProgress {
  std::int64_t step = 0;  // steps completed
  double loss = 0.0;      // loss of the last step
  double learning_rate = 0.0;
};

struct TrainOptions {
  std::int64_t total_steps = 0;
  std::int64_t snapshot_interval = 0;
  engine::LearningRateSchedule schedule;
  double momentum = 0.9;
  scoremap::LossWeights weights;
  double huber_delta = 1.0;
  /// Empty disables snapshot and log files.
  std::filesystem::path snapshot_dir;
  /// Rows of the loss log average this many steps.
  std::int64_t log_interval = 100;
  std::function<void(const TrainProgress&)> on_progress;
  /// Called before a snapshot is written.
  std::function<void(std::int64_t step)> on_snapshot_begin;
  std::function<void(const SnapshotRecord&)> on_snapshot;
  /// Checked after every step; when set, training stops and a final snapshot
  /// is written.
  const std::atomic<bool>* cancel = nullptr;
};

struct LossLogRow {
  std::int64_t step = 0;  // last step of the window
  double mean_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  std::int64_t steps = 0;
  bool cancelled = false;
  double final_loss = 0.0;
  std::vector<SnapshotRecord> snapshots;
  std::vector<LossLogRow> loss_log;
};

/// snapshot-<step, 8 digits>.plw
std::string snapshot_name(std::int64_t step);
/// Snapshots in `dir` sorted by step; other files are ignored.
std::vector<SnapshotRecord> list_snapshots(const std::filesystem::path& dir);
std::optional<SnapshotRecord> latest_snapshot(const std::filesystem::path& dir);

/// Batch-size-1 SGD over the iterator. Snapshots land at every multiple of
/// the interval and after the last step; the loss log is written to
/// snapshot_dir/loss_log.csv.
TrainResult train_network(model::PartDetectorNetwork<float>& net, dataset::TrainingIterator& samples,
                          const TrainOptions& options);

/// Everything needed to train a project network from its dataset file.
struct RunSpec {
  std::int64_t steps = 0;              // 0 means the project value
  std::int64_t snapshot_interval = 0;  // 0 means the project value
  std::uint64_t seed = 0;              // network init and sampling
  std::filesystem::path output_dir;    // empty means training/run
  std::optional<std::filesystem::path> init_weights;
  model::LoadMode init_mode = model::LoadMode::full;
};

struct RunMetadata {
  std::string scorer;
  dataset::SplitSpec split;
  std::uint64_t seed = 0;
  std::int64_t steps = 0;
  std::int64_t snapshot_interval = 0;
  std::vector<std::string> parts;
  std::string backbone;
  double epsilon = 0.0;
  std::size_t train_frames = 0;
};

std::filesystem::path default_run_dir(const dataset::Project& project);
void write_run_metadata(const std::filesystem::path& dir, const RunMetadata& meta);
/// Throws TrainingError naming the train step when the file is absent.
RunMetadata read_run_metadata(const std::filesystem::path& dir);

model::PartDetectorNetwork<float> build_project_network(const dataset::Project& project, std::uint64_t seed);

/// Trains on the train side of `dataset`, writing run.json, snapshots and the
/// loss log to the run directory (cleared of earlier snapshots first).
TrainResult train_project(const dataset::ProjectData& data, const dataset::TrainingDataset& dataset,
                          const RunSpec& spec, TrainOptions hooks = {});

}  // namespace partloc::training
