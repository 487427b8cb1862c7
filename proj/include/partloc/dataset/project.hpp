#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "partloc/engine/optimizer.hpp"
#include "partloc/model/network.hpp"
#include "partloc/scoremap/scoremap.hpp"

namespace partloc::dataset {

class ProjectError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pixel window of a source video; cropped coordinates map back to the
/// original frame as original = (x0, y0) + cropped.
struct CropRegion {
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  bool operator==(const CropRegion&) const = default;

  scoremap::Point to_original(scoremap::Point cropped) const {
    return {static_cast<double>(x0) + cropped.x, static_cast<double>(y0) + cropped.y};
  }
  scoremap::Point to_cropped(scoremap::Point original) const {
    return {original.x - static_cast<double>(x0), original.y - static_cast<double>(y0)};
  }
};

struct TrainingConfig {
  std::string backbone = "toy";
  double epsilon = 17.0;
  std::size_t output_stride = 8;
  double input_rescale = 0.8;
  double scale_min = 0.5;
  double scale_max = 1.5;
  std::int64_t total_steps = 500000;
  std::int64_t snapshot_interval = 50000;
  /// Empty means LearningRateSchedule::standard(total_steps).
  std::vector<engine::LearningRateSchedule::Stage> schedule;
  double momentum = 0.9;
  bool locref = true;
  bool intermediate_supervision = false;
  double locref_weight = 1.0;
  double aux_weight = 1.0;
  double huber_delta = 1.0;
  double train_fraction = 0.8;
};

struct InferenceConfig {
  double confidence_threshold = 0.10;
  /// Non-positive means 2 * epsilon.
  double nms_radius = 0.0;
  scoremap::Refinement refinement = scoremap::Refinement::locref;
  double discontinuity_px = 20.0;
  double histogram_bin_px = 1.0;
};

struct Project {
  std::string name;
  std::vector<std::string> parts;
  std::string frames_dir = "labeled-data";
  std::string scorer = "scorer";
  std::uint64_t seed = 0;
  TrainingConfig training;
  InferenceConfig inference;
  std::vector<std::pair<std::string, std::string>> skeleton;
  std::map<std::string, CropRegion> crops;
  std::string decoder = "ffmpeg -loglevel error -i {input} {outdir}/%06d.png";

  /// Directory holding project.yaml; not serialized.
  std::filesystem::path root;

  void validate() const;
  std::size_t part_index(const std::string& part) const;

  std::filesystem::path config_path() const { return root / "project.yaml"; }
  std::filesystem::path frames_path() const { return root / frames_dir; }
  std::filesystem::path labels_path() const { return root / "labels"; }
  std::filesystem::path label_file(const std::string& scorer_id) const {
    return labels_path() / ("CollectedData_" + scorer_id + ".csv");
  }
  std::filesystem::path training_path() const { return root / "training"; }
  std::filesystem::path analysis_path() const { return root / "analysis"; }

  scoremap::PoseDecodeConfig decode_config() const;
  model::BackboneConfig backbone_config() const;
  model::NetworkOptions network_options(std::uint64_t seed) const;
  engine::LearningRateSchedule schedule() const;
  scoremap::LossWeights loss_weights() const;
};

inline constexpr const char* kProjectFile = "project.yaml";

/// Reads and validates <dir>/project.yaml.
Project load_project(const std::filesystem::path& dir);

/// Writes root/project.yaml atomically.
void save_project(const Project& project);

std::string project_to_yaml(const Project& project);
Project project_from_yaml(const std::string& text, const std::string& origin = "project.yaml");

/// Creates the directory layout and config of a new project; refuses to
/// overwrite an existing config.
Project init_project(const std::filesystem::path& dir, const std::string& name,
                     const std::vector<std::string>& parts, const std::string& scorer,
                     std::uint64_t seed);

}  // namespace partloc::dataset
