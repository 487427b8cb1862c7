#include "partloc/service/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <regex>
#include <set>

#include "partloc/dataset/files.hpp"
#include "partloc/dataset/image.hpp"
#include "partloc/dataset/labels.hpp"
#include "partloc/inference/analysis.hpp"
#include "partloc/model/weights_io.hpp"
#include "partloc/training/trainer.hpp"

namespace partloc::service {

namespace fs = std::filesystem;

namespace {

ServiceError bad_request(const std::string& m) { return {400, "bad_request", m}; }
ServiceError not_found(const std::string& m) { return {404, "not_found", m}; }
ServiceError conflict(const std::string& m) { return {409, "conflict", m}; }
ServiceError precondition(const std::string& m) { return {412, "precondition_failed", m}; }

bool valid_name(const std::string& name) {
  static const std::regex re("[A-Za-z0-9][A-Za-z0-9_.-]*");
  return std::regex_match(name, re);
}

bool safe_relative(const fs::path& p) {
  if (p.empty() || p.is_absolute()) return false;
  for (const auto& part : p) {
    if (part == "..") return false;
  }
  return true;
}

std::string now_iso() {
  const auto t = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(t);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03lldZ", buf, static_cast<long long>(ms));
  return out;
}

Json point_json(const std::optional<scoremap::Point>& p) {
  if (!p) return nullptr;
  return Json{{"x", p->x}, {"y", p->y}};
}

Json labels_json(const dataset::Project& project, const std::string& frame_id, const std::string& image,
                 const std::string& scorer, const scoremap::PartLabels& labels, dataset::ImageSize size) {
  Json parts = Json::object();
  for (std::size_t p = 0; p < project.parts.size(); ++p) {
    parts[project.parts[p]] = p < labels.size() ? point_json(labels[p]) : Json(nullptr);
  }
  return {{"frame", frame_id}, {"image", image},        {"scorer", scorer},
          {"width", size.width}, {"height", size.height}, {"parts", parts}};
}

dataset::LabelSet read_or_empty(const dataset::Project& project, const std::string& scorer) {
  const auto path = project.label_file(scorer);
  if (!fs::exists(path)) return dataset::LabelSet{scorer, {}};
  return dataset::read_label_file(path, project.parts);
}

std::string relative_to(const fs::path& root, const fs::path& file) {
  return fs::path(file).lexically_relative(root).generic_string();
}

std::string pick_sequence(const dataset::Project& project, const std::string& sequence) {
  if (!sequence.empty()) return sequence;
  const auto names = inference::list_analyses(project.analysis_path());
  if (names.empty()) throw precondition("no analysis available for project '" + project.name + "'; run analyze first");
  if (names.size() > 1) throw bad_request("several analyses exist; name one with the sequence parameter");
  return names.front();
}

inference::SequenceAnalysis load_analysis_or_fail(const dataset::Project& project, const std::string& sequence) {
  try {
    return inference::load_analysis(project.analysis_path(), sequence);
  } catch (const inference::InferenceError& e) {
    throw precondition(e.what());
  }
}

/// Where an analyzed frame's labels live: in place when already under the
/// frames directory, else copied to <frames_dir>/<sequence>/<file name>.
std::string labeled_image_for(const dataset::Project& project, const std::string& sequence,
                              const std::string& image) {
  const std::string prefix = project.frames_dir + "/";
  if (image.rfind(prefix, 0) == 0) return image;
  return prefix + sequence + "/" + fs::path(image).filename().string();
}

}  // namespace

std::string to_string(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return "queued";
    case JobStatus::running: return "running";
    case JobStatus::snapshotting: return "snapshotting";
    case JobStatus::done: return "done";
    case JobStatus::failed: return "failed";
  }
  return "failed";
}

int status_rank(JobStatus s) {
  switch (s) {
    case JobStatus::queued: return 0;
    case JobStatus::running:
    case JobStatus::snapshotting: return 1;
    default: return 2;
  }
}

Json job_to_json(const TrainingJob& j) {
  return {{"id", j.id},
          {"project", j.project},
          {"split", {{"train_fraction", j.split.train_fraction}, {"seed", j.split.seed}}},
          {"status", to_string(j.status)},
          {"step", j.step},
          {"total_steps", j.total_steps},
          {"loss", j.loss ? Json(*j.loss) : Json(nullptr)},
          {"snapshot", j.snapshot.empty() ? Json(nullptr) : Json(j.snapshot)},
          {"cancel_requested", j.cancel_requested},
          {"cancelled", j.cancelled},
          {"error", j.error.empty() ? Json(nullptr) : Json(j.error)}};
}

ProjectService::ProjectService(fs::path root) : root_(std::move(root)) {
  if (!fs::is_directory(root_)) throw ServiceError(400, "bad_request", "data root " + root_.string() + " is not a directory");
}

ProjectService::~ProjectService() {
  std::vector<JobSlot*> slots;
  {
    std::lock_guard lock(jobs_mutex_);
    for (auto& [id, slot] : jobs_) {
      slot->cancel = true;
      slots.push_back(slot.get());
    }
  }
  for (auto* s : slots) {
    if (s->worker.joinable()) s->worker.join();
  }
}

fs::path ProjectService::project_dir(const std::string& project) const {
  if (!valid_name(project)) throw bad_request("invalid project name '" + project + "'");
  const auto dir = root_ / project;
  if (!fs::exists(dir / dataset::kProjectFile)) throw not_found("no project named '" + project + "'");
  return dir;
}

std::pair<std::string, std::string> ProjectService::split_frame_id(const std::string& frame_id) const {
  const auto slash = frame_id.find('/');
  if (slash == std::string::npos || slash + 1 >= frame_id.size()) {
    throw bad_request("frame id '" + frame_id + "' must be <project>/<image path>");
  }
  auto project = frame_id.substr(0, slash);
  auto image = frame_id.substr(slash + 1);
  if (!safe_relative(image)) throw bad_request("frame id '" + frame_id + "' escapes its project");
  const auto dir = project_dir(project);
  if (!fs::is_regular_file(dir / image)) throw not_found("no frame '" + frame_id + "'");
  return {project, image};
}

Json ProjectService::list_projects() const {
  Json out = Json::array();
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root_)) {
    if (e.is_directory() && fs::exists(e.path() / dataset::kProjectFile)) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) {
    const auto p = dataset::load_project(d);
    out.push_back({{"name", d.filename().string()},
                   {"title", p.name},
                   {"parts", p.parts},
                   {"scorer", p.scorer},
                   {"seed", p.seed},
                   {"skeleton", p.skeleton}});
  }
  return out;
}

Json ProjectService::create_project(const Json& body) {
  const auto name = body.value("name", std::string());
  if (!valid_name(name)) throw bad_request("project name must match [A-Za-z0-9][A-Za-z0-9_.-]*");
  if (!body.contains("parts") || !body["parts"].is_array() || body["parts"].empty()) {
    throw bad_request("parts must be a nonempty list of names");
  }
  const auto parts = body["parts"].get<std::vector<std::string>>();
  const auto scorer = body.value("scorer", std::string("scorer"));
  const auto seed = body.value("seed", std::uint64_t{0});
  if (fs::exists(root_ / name / dataset::kProjectFile)) throw conflict("project '" + name + "' already exists");
  dataset::Project p;
  try {
    p = dataset::init_project(root_ / name, name, parts, scorer, seed);
  } catch (const dataset::ProjectError& e) {
    throw bad_request(e.what());
  }
  return {{"name", name}, {"parts", p.parts}, {"scorer", p.scorer}, {"seed", p.seed}};
}

Json ProjectService::list_frames(const std::string& project) const {
  const auto dir = project_dir(project);
  const auto p = dataset::load_project(dir);
  std::set<std::string> labeled;
  {
    std::shared_lock lock(labels_mutex_);
    for (const auto& f : read_or_empty(p, p.scorer).frames) {
      if (f.any_labeled()) labeled.insert(f.image);
    }
  }
  std::vector<std::string> images;
  if (fs::is_directory(p.frames_path())) {
    for (const auto& e : fs::recursive_directory_iterator(p.frames_path())) {
      if (e.is_regular_file() && e.path().extension() == ".png") images.push_back(relative_to(dir, e.path()));
    }
  }
  std::sort(images.begin(), images.end());
  Json out = Json::array();
  for (const auto& image : images) {
    const auto size = dataset::read_png_size(dir / image);
    out.push_back({{"id", project + "/" + image},
                   {"image", image},
                   {"width", size.width},
                   {"height", size.height},
                   {"labeled", labeled.count(image) > 0}});
  }
  return out;
}

std::string ProjectService::frame_image(const std::string& frame_id, std::optional<std::size_t> max_side) const {
  const auto [project, image] = split_frame_id(frame_id);
  const auto path = root_ / project / image;
  if (!max_side) return dataset::read_text_file(path);
  if (*max_side == 0) throw bad_request("preview size must be positive");
  const auto img = dataset::read_png(path);
  const std::size_t side = std::max(img.width, img.height);
  if (side <= *max_side) return dataset::read_text_file(path);
  const double s = static_cast<double>(*max_side) / static_cast<double>(side);
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.width * s)));
  const auto h = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.height * s)));
  const auto bytes = dataset::encode_png(dataset::resize_image(img, w, h));
  return std::string(bytes.begin(), bytes.end());
}

Json ProjectService::get_labels(const std::string& frame_id, const std::string& scorer_arg) const {
  const auto [project, image] = split_frame_id(frame_id);
  const auto p = dataset::load_project(root_ / project);
  const auto scorer = scorer_arg.empty() ? p.scorer : scorer_arg;
  if (!valid_name(scorer)) throw bad_request("invalid scorer '" + scorer + "'");
  scoremap::PartLabels labels(p.parts.size());
  {
    std::shared_lock lock(labels_mutex_);
    const auto set = read_or_empty(p, scorer);
    if (const auto* f = set.find(image)) labels = f->labels;
  }
  return labels_json(p, frame_id, image, scorer, labels, dataset::read_png_size(root_ / project / image));
}

Json ProjectService::put_labels(const std::string& frame_id, const Json& body) {
  const auto [project, image] = split_frame_id(frame_id);
  if (!body.is_object() || !body.contains("parts") || !body["parts"].is_object()) {
    throw bad_request("body must be an object with a 'parts' object");
  }
  return write_labels(project, image, body.value("scorer", std::string()), body["parts"], "label");
}

Json ProjectService::write_labels(const std::string& project, const std::string& image, const std::string& scorer_arg,
                                  const Json& parts, const std::string& source) {
  const auto dir = root_ / project;
  const auto p = dataset::load_project(dir);
  const auto scorer = scorer_arg.empty() ? p.scorer : scorer_arg;
  if (!valid_name(scorer)) throw bad_request("invalid scorer '" + scorer + "'");
  const auto size = dataset::read_png_size(dir / image);

  std::vector<std::pair<std::size_t, std::optional<scoremap::Point>>> updates;
  for (const auto& [name, value] : parts.items()) {
    const auto it = std::find(p.parts.begin(), p.parts.end(), name);
    if (it == p.parts.end()) throw bad_request("unknown body part '" + name + "'");
    const auto idx = static_cast<std::size_t>(it - p.parts.begin());
    if (value.is_null()) {
      updates.push_back({idx, std::nullopt});
      continue;
    }
    if (!value.is_object() || !value.contains("x") || !value.contains("y") || !value["x"].is_number() ||
        !value["y"].is_number()) {
      throw bad_request("part '" + name + "' must be null or {\"x\": number, \"y\": number}");
    }
    const double x = value["x"].get<double>(), y = value["y"].get<double>();
    if (!std::isfinite(x) || !std::isfinite(y) || x < 0 || y < 0 || x >= static_cast<double>(size.width) ||
        y >= static_cast<double>(size.height)) {
      throw bad_request("coordinate (" + dataset::format_double(x) + ", " + dataset::format_double(y) +
                        ") for part '" + name + "' is outside the frame bounds [0, " + std::to_string(size.width) +
                        ") x [0, " + std::to_string(size.height) + ")");
    }
    updates.push_back({idx, scoremap::Point{x, y}});
  }

  std::unique_lock lock(labels_mutex_);
  auto set = read_or_empty(p, scorer);
  auto* frame = set.find(image);
  if (!frame) {
    set.frames.push_back({image, scoremap::PartLabels(p.parts.size()), scorer});
    frame = &set.frames.back();
  }
  const auto stamp = now_iso();
  std::vector<std::string> audit;
  for (const auto& [idx, value] : updates) {
    Json line{{"time", stamp},         {"frame", project + "/" + image}, {"scorer", scorer},
              {"part", p.parts[idx]},  {"previous", point_json(frame->labels[idx])},
              {"value", point_json(value)}, {"source", source}};
    audit.push_back(line.dump());
    frame->labels[idx] = value;
  }
  dataset::write_label_file(p.label_file(scorer), set, p.parts);
  for (const auto& line : audit) dataset::append_line_durably(audit_log_path(project), line);
  auto out = labels_json(p, project + "/" + image, image, scorer, frame->labels, size);
  out["updated_at"] = stamp;
  return out;
}

fs::path ProjectService::audit_log_path(const std::string& project) const {
  return root_ / project / "labels" / "audit.log";
}

void ProjectService::set_status(JobSlot& slot, JobStatus status) {
  std::lock_guard lock(jobs_mutex_);
  if (status_rank(status) >= status_rank(slot.job.status)) slot.job.status = status;
  jobs_changed_.notify_all();
}

TrainingJob ProjectService::start_training(const std::string& project, const TrainRequest& req) {
  const auto dir = project_dir(project);
  {
    std::lock_guard lock(jobs_mutex_);
    if (const auto it = active_job_.find(project); it != active_job_.end()) {
      const auto& j = jobs_.at(it->second)->job;
      if (status_rank(j.status) < 2) throw conflict("project '" + project + "' already has training job " + j.id);
    }
  }
  auto data = std::make_shared<dataset::ProjectData>();
  std::shared_ptr<dataset::TrainingDataset> ds;
  {
    std::shared_lock lock(labels_mutex_);
    *data = dataset::load_project_and_labels(dir);
    const auto& pr = data->project;
    const dataset::SplitSpec spec{req.train_fraction.value_or(pr.training.train_fraction),
                                  req.split_seed.value_or(pr.seed)};
    try {
      ds = std::make_shared<dataset::TrainingDataset>(
          dataset::create_training_dataset(*data, req.scorer.empty() ? pr.scorer : req.scorer, spec));
    } catch (const dataset::ProjectError& e) {
      throw precondition(e.what());
    }
  }
  if (ds->train.empty()) throw precondition("the train split has no labeled frame");
  dataset::save_training_dataset(data->project, *ds);

  training::RunSpec spec;
  spec.steps = req.steps;
  spec.snapshot_interval = req.snapshot_interval;
  spec.seed = req.seed.value_or(data->project.seed);

  std::lock_guard lock(jobs_mutex_);
  if (const auto it = active_job_.find(project); it != active_job_.end()) {
    const auto& j = jobs_.at(it->second)->job;
    if (status_rank(j.status) < 2) throw conflict("project '" + project + "' already has training job " + j.id);
  }
  auto slot = std::make_unique<JobSlot>();
  slot->job.id = "job-" + std::to_string(next_job_++);
  slot->job.project = project;
  slot->job.split = ds->spec;
  slot->job.total_steps = req.steps > 0 ? req.steps : data->project.training.total_steps;
  auto* s = slot.get();
  active_job_[project] = s->job.id;
  jobs_[s->job.id] = std::move(slot);
  s->worker = std::thread([this, s, data, ds, spec] {
    set_status(*s, JobStatus::running);
    training::TrainOptions hooks;
    hooks.cancel = &s->cancel;
    hooks.on_progress = [this, s](const training::TrainProgress& p) {
      std::lock_guard lock(jobs_mutex_);
      s->job.step = p.step;
      s->job.loss = p.loss;
      jobs_changed_.notify_all();
    };
    hooks.on_snapshot_begin = [this, s](std::int64_t) { set_status(*s, JobStatus::snapshotting); };
    hooks.on_snapshot = [this, s](const training::SnapshotRecord& r) {
      {
        std::lock_guard lock(jobs_mutex_);
        s->job.snapshot = r.path.string();
        if (s->job.status == JobStatus::snapshotting) s->job.status = JobStatus::running;
      }
      jobs_changed_.notify_all();
    };
    try {
      const auto result = training::train_project(*data, *ds, spec, hooks);
      std::lock_guard lock(jobs_mutex_);
      s->job.cancelled = result.cancelled;
      s->job.status = JobStatus::done;
    } catch (const std::exception& e) {
      std::lock_guard lock(jobs_mutex_);
      s->job.error = e.what();
      s->job.status = JobStatus::failed;
    }
    jobs_changed_.notify_all();
  });
  return s->job;
}

TrainingJob ProjectService::job(const std::string& id) const {
  std::lock_guard lock(jobs_mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw not_found("no training job '" + id + "'");
  return it->second->job;
}

TrainingJob ProjectService::cancel_job(const std::string& id) {
  std::lock_guard lock(jobs_mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw not_found("no training job '" + id + "'");
  if (status_rank(it->second->job.status) < 2) {
    it->second->cancel = true;
    it->second->job.cancel_requested = true;
  }
  return it->second->job;
}

TrainingJob ProjectService::wait_job(const std::string& id) const {
  std::unique_lock lock(jobs_mutex_);
  const auto it = jobs_.find(id);
  if (it == jobs_.end()) throw not_found("no training job '" + id + "'");
  const auto* slot = it->second.get();
  jobs_changed_.wait(lock, [&] { return status_rank(slot->job.status) == 2; });
  return slot->job;
}

Json ProjectService::analyze(const std::string& project, const Json& body) {
  const auto dir = project_dir(project);
  const auto p = dataset::load_project(dir);
  const auto frames_rel = body.value("frames", std::string());
  if (frames_rel.empty()) throw bad_request("'frames' must name a frame directory inside the project");
  if (!safe_relative(frames_rel)) throw bad_request("frame directory '" + frames_rel + "' escapes the project");
  const auto frames_dir = dir / frames_rel;
  if (!fs::is_directory(frames_dir)) throw not_found("no frame directory '" + frames_rel + "'");
  auto sequence = body.value("sequence", fs::path(frames_rel).lexically_normal().filename().string());
  if (sequence.empty()) sequence = fs::path(frames_rel).lexically_normal().parent_path().filename().string();
  if (!valid_name(sequence)) throw bad_request("invalid sequence name '" + sequence + "'");
  const auto snapshot = training::latest_snapshot(training::default_run_dir(p));
  if (!snapshot) throw precondition("project '" + project + "' has no trained snapshot; run train first");

  auto net = training::build_project_network(p, 0);
  model::load_weights(net, snapshot->path);
  inference::AnalysisConfig cfg;
  cfg.decode = p.decode_config();
  cfg.instances = body.value("instances", std::size_t{1});
  if (const auto it = p.crops.find(sequence); it != p.crops.end()) cfg.crop = it->second;
  std::vector<fs::path> frames;
  for (const auto& f : inference::list_frames(frames_dir)) frames.push_back(fs::path(relative_to(dir, f)));

  std::lock_guard lock(analysis_mutex_);
  std::vector<fs::path> absolute;
  for (const auto& f : frames) absolute.push_back(dir / f);
  auto a = inference::analyze_sequence(net, absolute, cfg, sequence);
  for (std::size_t i = 0; i < a.frame_files.size(); ++i) a.frame_files[i] = frames[i].generic_string();
  inference::save_analysis(p.analysis_path(), a);
  const auto queue = inference::build_refine_queue(a, p.inference.confidence_threshold, p.inference.discontinuity_px);
  return {{"sequence", sequence},
          {"frames", a.frame_files.size()},
          {"snapshot", snapshot->path.filename().string()},
          {"frames_per_second", a.frames_per_second},
          {"queue_length", queue.size()},
          {"warnings", a.warnings}};
}

Json ProjectService::refine_queue(const std::string& project, const std::string& sequence_arg,
                                  std::size_t limit) const {
  const auto dir = project_dir(project);
  const auto p = dataset::load_project(dir);
  const auto sequence = pick_sequence(p, sequence_arg);
  const auto a = load_analysis_or_fail(p, sequence);
  std::set<std::string> refined;
  for (const auto& f : dataset::read_refined_frames(p, p.scorer)) refined.insert(f);

  auto queue = inference::build_refine_queue(a, p.inference.confidence_threshold, p.inference.discontinuity_px);
  Json entries = Json::array();
  std::size_t rank = 0;
  for (const auto& e : queue) {
    const auto& image = a.frame_files.at(e.frame);
    if (refined.count(labeled_image_for(p, sequence, image))) continue;
    if (limit > 0 && rank >= limit) break;
    Json predictions = Json::object();
    for (std::size_t part = 0; part < a.trajectory.parts.size(); ++part) {
      const auto& d = a.trajectory.at(e.frame, part);
      const double peak = a.peaks[e.frame][part];
      predictions[a.trajectory.parts[part]] =
          d ? Json{{"x", d->x}, {"y", d->y}, {"confidence", d->confidence},
                   {"peak", std::isfinite(peak) ? Json(peak) : Json(nullptr)}}
            : Json(nullptr);
    }
    std::vector<std::string> also;
    for (auto r : e.also) also.push_back(inference::to_string(r));
    entries.push_back({{"rank", ++rank},
                       {"row", e.frame},
                       {"frame", project + "/" + image},
                       {"image", image},
                       {"reason", inference::to_string(e.reason)},
                       {"score", e.score},
                       {"severity", e.severity},
                       {"parts", e.parts},
                       {"also", also},
                       {"predictions", predictions}});
  }
  return {{"sequence", sequence},
          {"confidence_threshold", p.inference.confidence_threshold},
          {"discontinuity_px", p.inference.discontinuity_px},
          {"entries", entries}};
}

Json ProjectService::accept_prediction(const std::string& frame_id, const Json& body) {
  const auto [project, image] = split_frame_id(frame_id);
  const auto decision = body.value("decision", std::string("accept"));
  if (decision == "reject") return {{"status", "rejected"}, {"frame", frame_id}};
  if (decision != "accept") throw bad_request("decision must be 'accept' or 'reject'");
  const auto dir = root_ / project;
  const auto p = dataset::load_project(dir);
  const auto sequence = pick_sequence(p, body.value("sequence", std::string()));
  const auto a = load_analysis_or_fail(p, sequence);
  const auto row = std::find(a.frame_files.begin(), a.frame_files.end(), image);
  if (row == a.frame_files.end()) throw not_found("frame '" + frame_id + "' is not part of sequence '" + sequence + "'");
  const auto r = static_cast<std::size_t>(row - a.frame_files.begin());

  Json parts = Json::object();
  if (body.contains("parts")) {
    if (!body["parts"].is_object()) throw bad_request("'parts' must be an object");
    parts = body["parts"];
  } else {
    for (std::size_t part = 0; part < a.trajectory.parts.size(); ++part) {
      const auto& d = a.trajectory.at(r, part);
      const double peak = a.peaks[r][part];
      const bool confident = d && std::isfinite(peak) && peak >= p.inference.confidence_threshold;
      parts[a.trajectory.parts[part]] = confident ? Json{{"x", d->x}, {"y", d->y}} : Json(nullptr);
    }
  }

  const auto target = labeled_image_for(p, sequence, image);
  if (target != image) {
    std::unique_lock lock(labels_mutex_);
    if (!fs::exists(dir / target)) {
      fs::create_directories((dir / target).parent_path());
      const auto bytes = dataset::read_text_file(dir / image);
      dataset::write_file_durably(dir / target, std::string_view(bytes));
    }
  }
  const auto scorer = body.value("scorer", std::string());
  auto stored = write_labels(project, target, scorer, parts, "refinement");
  {
    std::unique_lock lock(labels_mutex_);
    dataset::mark_refined(p, scorer.empty() ? p.scorer : scorer, target);
  }
  return {{"status", "accepted"}, {"frame", project + "/" + target}, {"labels", stored}};
}

}  // namespace partloc::service
