#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "partloc/dataset/image.hpp"
#include "partloc/dataset/labels.hpp"
#include "partloc/engine/random.hpp"
#include "partloc/scoremap/scoremap.hpp"

namespace partloc::dataset {

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct Split {
  SplitSpec spec;
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

/// Seeded Fisher-Yates shuffle of [0, count); the first round(f * count)
/// indices form the training set.
Split split_dataset(std::size_t count, const SplitSpec& spec);

struct AugmentedFrame {
  Image image;
  scoremap::PartLabels labels;
};

/// Extent ceil(n * scale) for scale != 1.
std::size_t scaled_extent(std::size_t extent, double scale);

/// Bilinear resize to scaled_extent of each side; labels are multiplied by
/// `scale` and invisible parts stay invisible.
AugmentedFrame augment_rescale(const Image& image, const scoremap::PartLabels& labels, double scale);

struct TrainingFrame {
  std::string id;
  Image image;
  scoremap::PartLabels labels;
};

struct IteratorConfig {
  double scale_min = 0.5;
  double scale_max = 1.5;
  scoremap::PoseDecodeConfig decode;
  /// Smallest accepted extent after augmentation and input rescale.
  std::size_t minimum_extent = 32;
};

struct TrainingSample {
  std::size_t frame = 0;
  double scale = 1.0;
  engine::Tensor<float> image;  // 1x3xHxW at augmented resolution
  scoremap::PartLabels labels;  // augmented coordinates
  scoremap::ScoremapTargets<float> targets;
};

/// Endless stream of augmented samples: frames drawn uniformly with
/// replacement, augmentation scale drawn uniformly per step and redrawn
/// while the result would be smaller than the network minimum.
class TrainingIterator {
 public:
  TrainingIterator(std::vector<TrainingFrame> frames, IteratorConfig config, std::uint64_t seed);

  TrainingSample next();
  std::size_t frame_count() const { return frames_.size(); }
  const TrainingFrame& frame(std::size_t i) const { return frames_[i]; }

 private:
  bool acceptable(const TrainingFrame& f, double scale) const;

  std::vector<TrainingFrame> frames_;
  IteratorConfig config_;
  Rng rng_;
};

/// Project settings for the iterator; `minimum_extent` comes from the network.
IteratorConfig iterator_config(const Project& project, std::size_t minimum_extent);

/// The frames of one scorer chosen for training and their split, persisted
/// as training/dataset.json. Frames are those with at least one labeled part;
/// frames marked as refined always join the training side.
struct TrainingDataset {
  std::string scorer;
  SplitSpec spec;
  std::vector<std::string> frames;
  std::vector<std::size_t> train;  // indices into frames, ascending
  std::vector<std::size_t> test;

  std::vector<std::string> train_images() const;
  std::vector<std::string> test_images() const;
};

TrainingDataset create_training_dataset(const ProjectData& data, const std::string& scorer, const SplitSpec& spec);
std::string training_dataset_to_json(const TrainingDataset& dataset);
TrainingDataset training_dataset_from_json(const std::string& text, const std::string& origin);
std::filesystem::path training_dataset_path(const Project& project);
void save_training_dataset(const Project& project, const TrainingDataset& dataset);
/// Throws ProjectError naming dataset-create when the file is absent.
TrainingDataset load_training_dataset(const Project& project);

/// Current labels and pixels of the named frames; frames that are missing
/// from `labels` or have no labeled part are skipped.
std::vector<TrainingFrame> frames_by_image(const Project& project, const LabelSet& labels,
                                           const std::vector<std::string>& images);

/// Loads images for the given frames of a label set (images resolved under
/// the project root); frames without any labeled part are dropped.
std::vector<TrainingFrame> load_training_frames(const Project& project, const LabelSet& labels,
                                                const std::vector<std::size_t>& indices);

}  // namespace partloc::dataset
