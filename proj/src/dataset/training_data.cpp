#include "partloc/dataset/training_data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "partloc/dataset/files.hpp"

namespace partloc::dataset {

Split split_dataset(std::size_t count, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw ProjectError("train fraction must lie in (0, 1), got " + std::to_string(spec.train_fraction));
  }
  const auto train_size = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(count)));
  if (train_size == 0) {
    throw ProjectError("train fraction " + std::to_string(spec.train_fraction) + " of " + std::to_string(count) +
                       " frames leaves an empty training set");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(spec.seed);
  for (std::size_t i = count; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  Split split;
  split.spec = spec;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_size));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train_size), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::size_t scaled_extent(std::size_t extent, double scale) {
  if (scale == 1.0) return extent;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(extent) * scale - 1e-9)));
}

AugmentedFrame augment_rescale(const Image& image, const scoremap::PartLabels& labels, double scale) {
  if (!(scale > 0.0)) throw ProjectError("augmentation scale must be positive");
  AugmentedFrame out;
  out.image = resize_image(image, scaled_extent(image.width, scale), scaled_extent(image.height, scale));
  out.labels = labels;
  for (auto& l : out.labels) {
    if (l) {
      l->x *= scale;
      l->y *= scale;
    }
  }
  return out;
}

TrainingIterator::TrainingIterator(std::vector<TrainingFrame> frames, IteratorConfig config, std::uint64_t seed)
    : frames_(std::move(frames)), config_(std::move(config)), rng_(seed) {
  if (frames_.empty()) throw ProjectError("training set is empty");
  if (!(config_.scale_min > 0.0 && config_.scale_min <= config_.scale_max)) {
    throw ProjectError("augmentation scale range must satisfy 0 < min <= max");
  }
  config_.decode.validate();
  for (const auto& f : frames_) {
    if (!acceptable(f, config_.scale_max)) {
      throw ProjectError("frame '" + f.id + "' (" + std::to_string(f.image.width) + "x" +
                         std::to_string(f.image.height) + ") is too small for the network even at scale " +
                         std::to_string(config_.scale_max));
    }
  }
}

bool TrainingIterator::acceptable(const TrainingFrame& f, double scale) const {
  const auto g = scoremap::grid_geometry(scaled_extent(f.image.height, scale), scaled_extent(f.image.width, scale),
                                         config_.decode);
  return g.image_rows >= config_.minimum_extent && g.image_cols >= config_.minimum_extent;
}

TrainingSample TrainingIterator::next() {
  TrainingSample s;
  s.frame = static_cast<std::size_t>(rng_.below(frames_.size()));
  const auto& f = frames_[s.frame];
  s.scale = config_.scale_max;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double candidate = rng_.uniform(config_.scale_min, config_.scale_max);
    if (acceptable(f, candidate)) {
      s.scale = candidate;
      break;
    }
  }
  auto aug = augment_rescale(f.image, f.labels, s.scale);
  s.image = image_to_tensor<float>(aug.image);
  s.targets = scoremap::make_targets<float>(aug.labels, aug.image.height, aug.image.width, config_.decode,
                                            {f.id, {}});
  s.labels = std::move(aug.labels);
  return s;
}

std::vector<TrainingFrame> load_training_frames(const Project& project, const LabelSet& labels,
                                                const std::vector<std::size_t>& indices) {
  std::vector<TrainingFrame> out;
  for (std::size_t i : indices) {
    const auto& f = labels.frames.at(i);
    if (!f.any_labeled()) continue;
    out.push_back({f.image, read_png(project.root / f.image), f.labels});
  }
  return out;
}

IteratorConfig iterator_config(const Project& project, std::size_t minimum_extent) {
  IteratorConfig c;
  c.scale_min = project.training.scale_min;
  c.scale_max = project.training.scale_max;
  c.decode = project.decode_config();
  c.minimum_extent = minimum_extent;
  return c;
}

std::vector<std::string> TrainingDataset::train_images() const {
  std::vector<std::string> out;
  for (auto i : train) out.push_back(frames.at(i));
  return out;
}

std::vector<std::string> TrainingDataset::test_images() const {
  std::vector<std::string> out;
  for (auto i : test) out.push_back(frames.at(i));
  return out;
}

TrainingDataset create_training_dataset(const ProjectData& data, const std::string& scorer, const SplitSpec& spec) {
  const auto& labels = data.scorer_labels(scorer);
  const auto refined_list = read_refined_frames(data.project, scorer);
  const std::set<std::string> refined(refined_list.begin(), refined_list.end());
  TrainingDataset ds;
  ds.scorer = scorer;
  ds.spec = spec;
  std::vector<std::size_t> regular, forced;
  for (const auto& f : labels.frames) {
    if (!f.any_labeled()) continue;
    (refined.count(f.image) ? forced : regular).push_back(ds.frames.size());
    ds.frames.push_back(f.image);
  }
  if (ds.frames.empty()) {
    throw ProjectError("scorer '" + scorer + "' has no labeled frames; label frames before dataset-create");
  }
  if (!regular.empty()) {
    const auto split = split_dataset(regular.size(), spec);
    for (auto i : split.train) ds.train.push_back(regular[i]);
    for (auto i : split.test) ds.test.push_back(regular[i]);
  }
  ds.train.insert(ds.train.end(), forced.begin(), forced.end());
  std::sort(ds.train.begin(), ds.train.end());
  return ds;
}

std::string training_dataset_to_json(const TrainingDataset& ds) {
  nlohmann::ordered_json j;
  j["scorer"] = ds.scorer;
  j["split_seed"] = ds.spec.seed;
  j["train_fraction"] = ds.spec.train_fraction;
  j["frames"] = ds.frames;
  j["train"] = ds.train;
  j["test"] = ds.test;
  return j.dump(2) + "\n";
}

TrainingDataset training_dataset_from_json(const std::string& text, const std::string& origin) {
  try {
    const auto j = nlohmann::json::parse(text);
    TrainingDataset ds;
    ds.scorer = j.at("scorer").get<std::string>();
    ds.spec.seed = j.at("split_seed").get<std::uint64_t>();
    ds.spec.train_fraction = j.at("train_fraction").get<double>();
    ds.frames = j.at("frames").get<std::vector<std::string>>();
    ds.train = j.at("train").get<std::vector<std::size_t>>();
    ds.test = j.at("test").get<std::vector<std::size_t>>();
    for (auto i : ds.train) {
      if (i >= ds.frames.size()) throw ProjectError(origin + ": train index out of range");
    }
    for (auto i : ds.test) {
      if (i >= ds.frames.size()) throw ProjectError(origin + ": test index out of range");
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw ProjectError(origin + ": " + e.what());
  }
}

std::filesystem::path training_dataset_path(const Project& project) {
  return project.training_path() / "dataset.json";
}

void save_training_dataset(const Project& project, const TrainingDataset& dataset) {
  write_file_durably(training_dataset_path(project), training_dataset_to_json(dataset));
}

TrainingDataset load_training_dataset(const Project& project) {
  const auto path = training_dataset_path(project);
  if (!std::filesystem::exists(path)) {
    throw ProjectError("no training dataset at " + path.string() + "; run dataset-create first");
  }
  return training_dataset_from_json(read_text_file(path), path.string());
}

std::vector<TrainingFrame> frames_by_image(const Project& project, const LabelSet& labels,
                                           const std::vector<std::string>& images) {
  std::vector<TrainingFrame> out;
  for (const auto& image : images) {
    const auto* f = labels.find(image);
    if (!f || !f->any_labeled()) continue;
    out.push_back({f->image, read_png(project.root / f->image), f->labels});
  }
  return out;
}

}  // namespace partloc::dataset
