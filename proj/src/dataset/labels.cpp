#include "partloc/dataset/labels.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "partloc/dataset/files.hpp"
#include "partloc/dataset/image.hpp"

namespace partloc::dataset {

bool LabeledFrame::any_labeled() const {
  return std::any_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); });
}

const LabeledFrame* LabelSet::find(const std::string& image) const {
  for (const auto& f : frames) {
    if (f.image == image) return &f;
  }
  return nullptr;
}

LabeledFrame* LabelSet::find(const std::string& image) {
  return const_cast<LabeledFrame*>(static_cast<const LabelSet*>(this)->find(image));
}

namespace {

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct Row {
  std::size_t line;
  std::vector<std::string> cells;
};

std::vector<Row> parse_rows(const std::string& text, const std::string& origin) {
  std::vector<Row> rows;
  Row row{1, {}};
  std::string cell;
  std::size_t line = 1;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        cell += c;
      }
      continue;
    }
    if (c == '"' && cell.empty()) {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.cells.push_back(std::move(cell));
      cell.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !cell.empty()) {
        row.cells.push_back(std::move(cell));
        rows.push_back(std::move(row));
      }
      cell.clear();
      any = false;
      ++line;
      row = Row{line, {}};
    } else {
      cell += c;
      any = true;
    }
  }
  if (quoted) throw LabelFormatError(origin + ":" + std::to_string(line) + ": unterminated quoted field");
  if (any || !cell.empty()) {
    row.cells.push_back(std::move(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string labels_to_csv(const LabelSet& set, const std::vector<std::string>& parts) {
  std::string out = "scorer";
  for (std::size_t p = 0; p < parts.size(); ++p) out += "," + quote(set.scorer) + "," + quote(set.scorer);
  out += "\nbodyparts";
  for (const auto& p : parts) out += "," + quote(p) + "," + quote(p);
  out += "\ncoords";
  for (std::size_t p = 0; p < parts.size(); ++p) out += ",x,y";
  out += "\n";
  for (const auto& f : set.frames) {
    out += quote(f.image);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto& l = p < f.labels.size() ? f.labels[p] : std::nullopt;
      if (l) {
        out += "," + format_double(l->x) + "," + format_double(l->y);
      } else {
        out += ",,";
      }
    }
    out += "\n";
  }
  return out;
}

LabelSet labels_from_csv(const std::string& text, const std::vector<std::string>& parts,
                         const std::string& origin) {
  const auto rows = parse_rows(text, origin);
  auto error = [&](std::size_t line, const std::string& message) -> LabelFormatError {
    return LabelFormatError(origin + ":" + std::to_string(line) + ": " + message);
  };
  if (rows.size() < 3) throw error(rows.empty() ? 1 : rows.back().line, "expected three header rows");
  const auto& scorer_row = rows[0];
  const auto& part_row = rows[1];
  const auto& coord_row = rows[2];
  if (scorer_row.cells.front() != "scorer") throw error(scorer_row.line, "first header row must start with 'scorer'");
  if (part_row.cells.front() != "bodyparts") throw error(part_row.line, "second header row must start with 'bodyparts'");
  if (coord_row.cells.front() != "coords") throw error(coord_row.line, "third header row must start with 'coords'");
  const std::size_t width = scorer_row.cells.size();
  if (width % 2 != 1 || width < 3) throw error(scorer_row.line, "header must hold x,y column pairs");
  for (const auto* r : {&part_row, &coord_row}) {
    if (r->cells.size() != width) throw error(r->line, "header rows differ in column count");
  }
  LabelSet set;
  set.scorer = scorer_row.cells[1];
  // Column pair k holds the project part column_part[k].
  std::vector<std::size_t> column_part;
  std::set<std::string> seen;
  for (std::size_t col = 1; col < width; col += 2) {
    if (scorer_row.cells[col] != set.scorer || scorer_row.cells[col + 1] != set.scorer) {
      throw error(scorer_row.line, "mixed scorer ids in one file");
    }
    const auto& name = part_row.cells[col];
    if (part_row.cells[col + 1] != name) throw error(part_row.line, "x and y columns name different parts");
    if (coord_row.cells[col] != "x" || coord_row.cells[col + 1] != "y") {
      throw error(coord_row.line, "coordinate columns must alternate x,y");
    }
    const auto it = std::find(parts.begin(), parts.end(), name);
    if (it == parts.end()) throw error(part_row.line, "body part '" + name + "' is not in the project");
    if (!seen.insert(name).second) throw error(part_row.line, "body part '" + name + "' appears twice");
    column_part.push_back(static_cast<std::size_t>(it - parts.begin()));
  }
  if (seen.size() != parts.size()) {
    for (const auto& p : parts) {
      if (!seen.count(p)) throw error(part_row.line, "missing columns for body part '" + p + "'");
    }
  }
  std::set<std::string> images;
  for (std::size_t r = 3; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.cells.size() != width) {
      throw error(row.line, "expected " + std::to_string(width) + " fields, found " + std::to_string(row.cells.size()));
    }
    LabeledFrame f;
    f.image = row.cells[0];
    f.scorer = set.scorer;
    if (f.image.empty()) throw error(row.line, "empty image path");
    if (!images.insert(f.image).second) throw error(row.line, "duplicate image path '" + f.image + "'");
    f.labels.assign(parts.size(), std::nullopt);
    for (std::size_t k = 0; k < column_part.size(); ++k) {
      const auto& xs = row.cells[1 + 2 * k];
      const auto& ys = row.cells[2 + 2 * k];
      if (xs.empty() && ys.empty()) continue;
      scoremap::Point pt;
      if (xs.empty() || ys.empty()) {
        throw error(row.line, "part '" + parts[column_part[k]] + "' has only one coordinate");
      }
      if (!parse_double(xs, pt.x) || !parse_double(ys, pt.y) || !std::isfinite(pt.x) || !std::isfinite(pt.y)) {
        throw error(row.line, "part '" + parts[column_part[k]] + "' has a non-numeric coordinate");
      }
      f.labels[column_part[k]] = pt;
    }
    set.frames.push_back(std::move(f));
  }
  return set;
}

LabelSet read_label_file(const std::filesystem::path& path, const std::vector<std::string>& parts) {
  return labels_from_csv(read_text_file(path), parts, path.string());
}

void write_label_file(const std::filesystem::path& path, const LabelSet& set,
                      const std::vector<std::string>& parts) {
  write_file_durably(path, labels_to_csv(set, parts));
}

void validate_label_bounds(const Project& project, const LabelSet& set) {
  for (const auto& f : set.frames) {
    if (!f.any_labeled()) continue;
    const auto path = project.root / f.image;
    if (!std::filesystem::exists(path)) {
      throw scoremap::LabelValidationError("frame '" + f.image + "' (scorer " + set.scorer + ") does not exist");
    }
    const auto size = read_png_size(path);
    for (std::size_t p = 0; p < f.labels.size(); ++p) {
      const auto& l = f.labels[p];
      if (!l) continue;
      if (!(l->x >= 0.0 && l->y >= 0.0 && l->x < static_cast<double>(size.width) &&
            l->y < static_cast<double>(size.height))) {
        throw scoremap::LabelValidationError(
            "label for part '" + project.parts[p] + "' in frame '" + f.image + "' (scorer " + set.scorer +
            ") at (" + format_double(l->x) + ", " + format_double(l->y) + ") lies outside the " +
            std::to_string(size.width) + "x" + std::to_string(size.height) + " image");
      }
    }
  }
}

std::filesystem::path refined_list_path(const Project& project, const std::string& scorer) {
  return project.labels_path() / ("Refined_" + scorer + ".txt");
}

std::vector<std::string> read_refined_frames(const Project& project, const std::string& scorer) {
  const auto path = refined_list_path(project, scorer);
  std::vector<std::string> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && std::find(out.begin(), out.end(), line) == out.end()) out.push_back(line);
  }
  return out;
}

void mark_refined(const Project& project, const std::string& scorer, const std::string& image) {
  const auto existing = read_refined_frames(project, scorer);
  if (std::find(existing.begin(), existing.end(), image) != existing.end()) return;
  append_line_durably(refined_list_path(project, scorer), image);
}

const LabelSet& ProjectData::scorer_labels(const std::string& scorer) const {
  const auto it = labels.find(scorer);
  if (it == labels.end()) throw ProjectError("no labels for scorer '" + scorer + "'");
  return it->second;
}

ProjectData load_project_and_labels(const std::filesystem::path& dir) {
  ProjectData data;
  data.project = load_project(dir);
  const auto labels_dir = data.project.labels_path();
  if (!std::filesystem::exists(labels_dir)) return data;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(labels_dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("CollectedData_", 0) == 0 && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    LabelSet set = read_label_file(file, data.project.parts);
    const auto stem = file.stem().string().substr(std::string("CollectedData_").size());
    if (set.scorer != stem) {
      throw LabelFormatError(file.string() + ":1: scorer '" + set.scorer + "' does not match the file name");
    }
    validate_label_bounds(data.project, set);
    std::vector<std::size_t> counts(data.project.parts.size(), 0);
    for (const auto& f : set.frames) {
      for (std::size_t p = 0; p < counts.size(); ++p) counts[p] += f.labels[p].has_value();
    }
    data.labeled_per_part[set.scorer] = counts;
    data.labels[set.scorer] = std::move(set);
  }
  return data;
}

}  // namespace partloc::dataset
