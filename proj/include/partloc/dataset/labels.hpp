#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "partloc/dataset/project.hpp"
#include "partloc/scoremap/scoremap.hpp"

namespace partloc::dataset {

/// Malformed label text; the message starts with "<file>:<line>:".
class LabelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabeledFrame {
  /// Image path relative to the project root, '/'-separated.
  std::string image;
  scoremap::PartLabels labels;
  std::string scorer;

  bool any_labeled() const;
};

struct LabelSet {
  std::string scorer;
  std::vector<LabeledFrame> frames;

  const LabeledFrame* find(const std::string& image) const;
  LabeledFrame* find(const std::string& image);
};

/// Delimited text: three header rows (scorer / bodyparts / coords) followed
/// by one row per image; an empty x/y pair marks the part invisible.
std::string labels_to_csv(const LabelSet& set, const std::vector<std::string>& parts);
LabelSet labels_from_csv(const std::string& text, const std::vector<std::string>& parts,
                         const std::string& origin);

LabelSet read_label_file(const std::filesystem::path& path, const std::vector<std::string>& parts);
void write_label_file(const std::filesystem::path& path, const LabelSet& set,
                      const std::vector<std::string>& parts);

/// Throws scoremap::LabelValidationError naming frame and part when a label
/// lies outside its image or the image is missing.
void validate_label_bounds(const Project& project, const LabelSet& set);

/// Frames whose labels came from accepted refinement corrections, kept in
/// labels/Refined_<scorer>.txt (one image path per line).
std::filesystem::path refined_list_path(const Project& project, const std::string& scorer);
std::vector<std::string> read_refined_frames(const Project& project, const std::string& scorer);
void mark_refined(const Project& project, const std::string& scorer, const std::string& image);

struct ProjectData {
  Project project;
  std::map<std::string, LabelSet> labels;  // by scorer
  /// Per scorer, number of frames in which each part is labeled.
  std::map<std::string, std::vector<std::size_t>> labeled_per_part;

  const LabelSet& scorer_labels(const std::string& scorer) const;
};

/// Loads the config and every labels/CollectedData_<scorer>.csv.
ProjectData load_project_and_labels(const std::filesystem::path& dir);

}  // namespace partloc::dataset
