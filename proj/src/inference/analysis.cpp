#include "partloc/inference/analysis.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "partloc/dataset/files.hpp"

namespace partloc::inference {

namespace {

using dataset::format_double;

std::string column_prefix(const std::string& part, std::size_t instance) {
  return instance == 0 ? part : part + "#" + std::to_string(instance + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"' && cell.empty()) {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string trajectory_to_csv(const Trajectory& t) {
  std::string out = "frame";
  for (std::size_t p = 0; p < t.parts.size(); ++p) {
    for (std::size_t k = 0; k < t.instances; ++k) {
      const auto prefix = column_prefix(t.parts[p], k);
      out += "," + quote(prefix + "_x") + "," + quote(prefix + "_y") + "," + quote(prefix + "_confidence");
    }
  }
  out += "\n";
  for (const auto& row : t.rows) {
    out += std::to_string(row.frame);
    for (const auto& d : row.points) {
      if (d) {
        out += "," + format_double(d->x) + "," + format_double(d->y) + "," + format_double(d->confidence);
      } else {
        out += ",,,";
      }
    }
    out += "\n";
  }
  return out;
}

Trajectory trajectory_from_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  auto fail = [&](std::size_t n, const std::string& msg) {
    return InferenceError(origin + ":" + std::to_string(n) + ": " + msg);
  };
  if (!std::getline(in, line)) throw fail(1, "missing header");
  const auto header = split_line(line);
  if (header.empty() || header[0] != "frame" || (header.size() - 1) % 3 != 0) {
    throw fail(1, "header must be 'frame' followed by x,y,confidence triplets");
  }
  Trajectory t;
  std::vector<std::string> prefixes;
  for (std::size_t c = 1; c < header.size(); c += 3) {
    const auto& xh = header[c];
    if (xh.size() < 2 || xh.substr(xh.size() - 2) != "_x") throw fail(1, "expected an _x column at " + xh);
    const auto prefix = xh.substr(0, xh.size() - 2);
    if (header[c + 1] != prefix + "_y" || header[c + 2] != prefix + "_confidence") {
      throw fail(1, "columns for '" + prefix + "' must be _x,_y,_confidence");
    }
    prefixes.push_back(prefix);
  }
  // Instance count: prefixes of the first part repeat as "<part>#k".
  std::size_t instances = 1;
  while (instances < prefixes.size() && prefixes[instances] == prefixes[0] + "#" + std::to_string(instances + 1)) {
    ++instances;
  }
  if (prefixes.size() % instances != 0) throw fail(1, "inconsistent instance columns");
  t.instances = instances;
  for (std::size_t i = 0; i < prefixes.size(); i += instances) {
    t.parts.push_back(prefixes[i]);
    for (std::size_t k = 1; k < instances; ++k) {
      if (prefixes[i + k] != prefixes[i] + "#" + std::to_string(k + 1)) throw fail(1, "inconsistent instance columns");
    }
  }
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw fail(n, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    TrajectoryRow row;
    try {
      row.frame = std::stoull(cells[0]);
    } catch (const std::exception&) {
      throw fail(n, "bad frame index '" + cells[0] + "'");
    }
    for (std::size_t c = 1; c < cells.size(); c += 3) {
      if (cells[c].empty() && cells[c + 1].empty() && cells[c + 2].empty()) {
        row.points.push_back(std::nullopt);
        continue;
      }
      Detection d;
      if (!dataset::parse_double(cells[c], d.x) || !dataset::parse_double(cells[c + 1], d.y) ||
          !dataset::parse_double(cells[c + 2], d.confidence)) {
        throw fail(n, "non-numeric value");
      }
      row.points.push_back(d);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

FramePrediction predict_frame(const model::PartDetectorNetwork<float>& net, const dataset::Image& image,
                              const scoremap::PoseDecodeConfig& cfg, std::size_t instances) {
  const auto out = net.forward_pose(nullptr, dataset::image_to_tensor<float>(image));
  const auto* offsets = out.offsets ? &out.offsets->tensor : nullptr;
  const auto& parts = net.parts();
  FramePrediction pred;
  for (const auto& peak : scoremap::peak_confidence_report(out.scoremaps->tensor, cfg, parts)) {
    pred.peaks.push_back(peak.peak_probability);
  }
  pred.points.assign(parts.size() * instances, std::nullopt);
  if (instances == 1) {
    const auto kps = scoremap::decode_single(out.scoremaps->tensor, offsets, cfg, parts);
    for (std::size_t p = 0; p < parts.size(); ++p) pred.points[p] = Detection{kps[p].x, kps[p].y, kps[p].confidence};
  } else {
    const auto kps = scoremap::decode_multi(out.scoremaps->tensor, offsets, cfg, parts, instances);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      for (std::size_t k = 0; k < kps[p].size() && k < instances; ++k) {
        pred.points[p * instances + k] = Detection{kps[p][k].x, kps[p][k].y, kps[p][k].confidence};
      }
    }
  }
  return pred;
}

SequenceAnalysis analyze_sequence(const model::PartDetectorNetwork<float>& net,
                                  const std::vector<std::filesystem::path>& frames, const AnalysisConfig& cfg,
                                  const std::string& sequence, const std::function<void(std::size_t)>& progress) {
  if (cfg.instances == 0) throw InferenceError("instances must be at least 1");
  cfg.decode.validate();
  SequenceAnalysis a;
  a.sequence = sequence;
  a.config = cfg;
  a.trajectory.parts = net.parts();
  a.trajectory.instances = cfg.instances;
  const std::size_t width = net.parts().size() * cfg.instances;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    a.frame_files.push_back(frames[i].string());
    TrajectoryRow row{i, std::vector<std::optional<Detection>>(width)};
    std::vector<double> peaks(net.parts().size(), std::numeric_limits<double>::quiet_NaN());
    try {
      auto image = dataset::read_png(frames[i]);
      if (cfg.crop) image = dataset::crop_image(image, cfg.crop->x0, cfg.crop->y0, cfg.crop->width, cfg.crop->height);
      auto pred = predict_frame(net, image, cfg.decode, cfg.instances);
      for (auto& d : pred.points) {
        if (d && cfg.crop) {
          const auto o = cfg.crop->to_original({d->x, d->y});
          d->x = o.x;
          d->y = o.y;
        }
      }
      row.points = std::move(pred.points);
      peaks = std::move(pred.peaks);
    } catch (const dataset::ImageError& e) {
      a.warnings.push_back("frame " + std::to_string(i) + " (" + frames[i].string() + ") unreadable: " + e.what());
    } catch (const engine::ShapeError& e) {
      a.warnings.push_back("frame " + std::to_string(i) + " (" + frames[i].string() + ") rejected: " + e.what());
    }
    a.trajectory.rows.push_back(std::move(row));
    a.peaks.push_back(std::move(peaks));
    if (progress) progress(i + 1);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  a.frames_per_second = seconds > 0 ? static_cast<double>(frames.size()) / seconds : 0.0;
  return a;
}

std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InferenceError("frame directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void save_analysis(const std::filesystem::path& dir, const SequenceAnalysis& a) {
  nlohmann::ordered_json j;
  j["sequence"] = a.sequence;
  j["parts"] = a.trajectory.parts;
  j["instances"] = a.trajectory.instances;
  j["frames"] = a.frame_files;
  const auto& d = a.config.decode;
  j["decode"] = {{"epsilon", d.epsilon},
                 {"stride", d.stride},
                 {"input_rescale", d.input_rescale},
                 {"confidence_threshold", d.confidence_threshold},
                 {"nms_radius", d.nms_radius},
                 {"refinement", scoremap::to_string(d.refinement)}};
  if (a.config.crop) {
    j["crop"] = {a.config.crop->x0, a.config.crop->y0, a.config.crop->width, a.config.crop->height};
  } else {
    j["crop"] = nullptr;
  }
  auto peaks = nlohmann::json::array();
  for (const auto& row : a.peaks) {
    auto r = nlohmann::json::array();
    for (double v : row) {
      if (std::isfinite(v)) r.push_back(v);
      else r.push_back(nullptr);
    }
    peaks.push_back(r);
  }
  j["peaks"] = peaks;
  j["warnings"] = a.warnings;
  std::filesystem::create_directories(dir);
  dataset::write_file_durably(dir / (a.sequence + ".csv"), trajectory_to_csv(a.trajectory));
  dataset::write_file_durably(dir / (a.sequence + ".json"), j.dump(2) + "\n");
}

SequenceAnalysis load_analysis(const std::filesystem::path& dir, const std::string& sequence) {
  const auto csv = dir / (sequence + ".csv");
  const auto meta = dir / (sequence + ".json");
  if (!std::filesystem::exists(csv) || !std::filesystem::exists(meta)) {
    throw InferenceError("no analysis for sequence '" + sequence + "' in " + dir.string() + "; run analyze first");
  }
  SequenceAnalysis a;
  a.trajectory = trajectory_from_csv(dataset::read_text_file(csv), csv.string());
  try {
    const auto j = nlohmann::json::parse(dataset::read_text_file(meta));
    a.sequence = j.at("sequence").get<std::string>();
    a.frame_files = j.at("frames").get<std::vector<std::string>>();
    const auto& d = j.at("decode");
    a.config.decode.epsilon = d.at("epsilon").get<double>();
    a.config.decode.stride = d.at("stride").get<std::size_t>();
    a.config.decode.input_rescale = d.at("input_rescale").get<double>();
    a.config.decode.confidence_threshold = d.at("confidence_threshold").get<double>();
    a.config.decode.nms_radius = d.at("nms_radius").get<double>();
    a.config.decode.refinement = scoremap::parse_refinement(d.at("refinement").get<std::string>());
    a.config.instances = j.at("instances").get<std::size_t>();
    if (!j.at("crop").is_null()) {
      const auto c = j.at("crop").get<std::vector<std::size_t>>();
      if (c.size() != 4) throw InferenceError(meta.string() + ": crop must have four entries");
      a.config.crop = dataset::CropRegion{c[0], c[1], c[2], c[3]};
    }
    for (const auto& row : j.at("peaks")) {
      std::vector<double> r;
      for (const auto& v : row) r.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
      a.peaks.push_back(std::move(r));
    }
    a.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw InferenceError(meta.string() + ": " + e.what());
  }
  if (a.peaks.size() != a.trajectory.rows.size() || a.frame_files.size() != a.trajectory.rows.size()) {
    throw InferenceError(meta.string() + ": row count differs from " + csv.string());
  }
  return a;
}

std::vector<std::string> list_analyses(const std::filesystem::path& dir) {
  std::vector<std::string> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    auto csv = e.path();
    csv.replace_extension(".csv");
    if (std::filesystem::exists(csv)) out.push_back(e.path().stem().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void Histogram::add(double value) {
  const auto bin = static_cast<std::int64_t>(std::floor(value / bin_width + 1e-9));
  if (counts.empty()) {
    first_bin = bin;
    counts.assign(1, 0);
  } else if (bin < first_bin) {
    counts.insert(counts.begin(), static_cast<std::size_t>(first_bin - bin), 0);
    first_bin = bin;
  } else if (bin >= first_bin + static_cast<std::int64_t>(counts.size())) {
    counts.resize(static_cast<std::size_t>(bin - first_bin + 1), 0);
  }
  ++counts[static_cast<std::size_t>(bin - first_bin)];
}

std::size_t Histogram::count_at(double value) const {
  const auto bin = static_cast<std::int64_t>(std::floor(value / bin_width + 1e-9));
  if (bin < first_bin || bin >= first_bin + static_cast<std::int64_t>(counts.size())) return 0;
  return counts[static_cast<std::size_t>(bin - first_bin)];
}

std::size_t Histogram::total() const {
  std::size_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

ContinuityReport continuity_stats(const Trajectory& t, double bin_px, double bound_px) {
  if (t.rows.size() < 2) throw InferenceError("continuity statistics need at least two frames");
  if (!(bin_px > 0.0)) throw InferenceError("histogram bin width must be positive");
  ContinuityReport report;
  report.bound = bound_px;
  for (std::size_t p = 0; p < t.parts.size(); ++p) {
    PartContinuity c;
    c.part = t.parts[p];
    c.dx.bin_width = c.dy.bin_width = c.jump.bin_width = bin_px;
    std::vector<double> jumps;
    for (std::size_t r = 1; r < t.rows.size(); ++r) {
      const auto& a = t.at(r - 1, p);
      const auto& b = t.at(r, p);
      if (!a || !b) continue;
      const double dx = b->x - a->x, dy = b->y - a->y, j = std::hypot(dx, dy);
      c.dx.add(dx);
      c.dy.add(dy);
      c.jump.add(j);
      jumps.push_back(j);
      if (j > c.max_jump) {
        c.max_jump = j;
        c.max_jump_frame = t.rows[r].frame;
      }
      if (j > bound_px) c.flagged.push_back({t.rows[r].frame, j});
    }
    c.transitions = jumps.size();
    c.median_jump = quantile(jumps, 0.5);
    c.q90_jump = quantile(jumps, 0.9);
    c.q99_jump = quantile(jumps, 0.99);
    report.parts.push_back(std::move(c));
  }
  return report;
}

std::string to_string(QueueReason reason) {
  return reason == QueueReason::low_confidence ? "low-confidence" : "discontinuity";
}

std::vector<RefineQueueEntry> build_refine_queue(const SequenceAnalysis& a, double threshold, double bound_px,
                                                 std::size_t limit) {
  const auto& t = a.trajectory;
  struct Candidate {
    double severity;
    double score;
    std::vector<std::string> parts;
  };
  std::map<std::size_t, std::map<QueueReason, Candidate>> found;

  for (std::size_t r = 0; r < t.rows.size() && r < a.peaks.size(); ++r) {
    Candidate c{0.0, 1.0, {}};
    for (std::size_t p = 0; p < t.parts.size(); ++p) {
      const double peak = a.peaks[r][p];
      if (std::isfinite(peak) && peak < threshold) {
        c.parts.push_back(t.parts[p]);
        c.score = std::min(c.score, peak);
      }
    }
    if (!c.parts.empty()) {
      c.severity = 1.0 - c.score / threshold;
      found[r][QueueReason::low_confidence] = c;
    }
  }

  auto dist = [&](std::size_t r0, std::size_t r1, std::size_t p) -> std::optional<double> {
    const auto& x = t.at(r0, p);
    const auto& y = t.at(r1, p);
    if (!x || !y) return std::nullopt;
    return std::hypot(y->x - x->x, y->y - x->y);
  };
  for (std::size_t p = 0; p < t.parts.size(); ++p) {
    for (std::size_t r = 1; r < t.rows.size(); ++r) {
      const auto in = dist(r - 1, r, p);
      if (!in || *in <= bound_px) continue;
      auto& c = found[r][QueueReason::discontinuity];
      if (c.parts.empty() || *in > c.score) {
        c.score = std::max(c.score, *in);
        c.severity = 1.0 - bound_px / c.score;
      }
      c.parts.push_back(t.parts[p]);
      // The jump back out of a spike is not a second discontinuity.
      if (r + 1 < t.rows.size()) {
        const auto out = dist(r, r + 1, p);
        const auto across = dist(r - 1, r + 1, p);
        if (out && *out > bound_px && across && *across <= bound_px) ++r;
      }
    }
  }

  std::vector<RefineQueueEntry> queue;
  for (auto& [row, reasons] : found) {
    RefineQueueEntry e;
    e.frame = row;
    bool first = true;
    for (auto& [reason, c] : reasons) {
      if (first || c.severity > e.severity) {
        if (!first) e.also.push_back(e.reason);
        e.reason = reason;
        e.score = c.score;
        e.severity = c.severity;
        e.parts = c.parts;
      } else {
        e.also.push_back(reason);
      }
      first = false;
    }
    queue.push_back(std::move(e));
  }
  std::stable_sort(queue.begin(), queue.end(), [](const auto& x, const auto& y) {
    if (x.severity != y.severity) return x.severity > y.severity;
    return x.frame < y.frame;
  });
  if (limit > 0 && queue.size() > limit) queue.resize(limit);
  return queue;
}

std::string refine_queue_to_csv(const SequenceAnalysis& a, const std::vector<RefineQueueEntry>& queue) {
  std::string out = "rank,frame,image,reason,score,severity,parts,also\n";
  for (std::size_t i = 0; i < queue.size(); ++i) {
    const auto& e = queue[i];
    std::string parts, also;
    for (const auto& p : e.parts) parts += (parts.empty() ? "" : ";") + p;
    for (auto r : e.also) also += (also.empty() ? "" : ";") + to_string(r);
    const std::string image = e.frame < a.frame_files.size() ? a.frame_files[e.frame] : "";
    out += std::to_string(i + 1) + "," + std::to_string(a.trajectory.rows.at(e.frame).frame) + "," + quote(image) +
           "," + to_string(e.reason) + "," + format_double(e.score) + "," + format_double(e.severity) + "," +
           quote(parts) + "," + also + "\n";
  }
  return out;
}

}  // namespace partloc::inference
