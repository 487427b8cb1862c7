#include "partloc/cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "partloc/dataset/files.hpp"
#include "partloc/dataset/frames.hpp"
#include "partloc/dataset/image.hpp"
#include "partloc/dataset/labels.hpp"
#include "partloc/dataset/training_data.hpp"
#include "partloc/eval/eval.hpp"
#include "partloc/inference/analysis.hpp"
#include "partloc/inference/overlay.hpp"
#include "partloc/model/weights_io.hpp"
#include "partloc/service/service.hpp"
#include "partloc/training/trainer.hpp"

namespace partloc::cli {

namespace fs = std::filesystem;
using dataset::format_double;

namespace {

/// A failure with a chosen exit code.
struct CommandError : std::runtime_error {
  CommandError(int c, const std::string& m) : std::runtime_error(m), code(c) {}
  int code;
};

CommandError precondition(const std::string& m) { return {kPrecondition, m}; }

struct Options {
  fs::path project;
  // project-init
  std::string name;
  std::vector<std::string> parts;
  std::string scorer;
  std::uint64_t seed = 0;
  bool seed_set = false;
  // frames-extract
  fs::path video;
  std::size_t count = 20;
  std::string strategy = "uniform";
  std::string sequence;
  // labels-check / render / analyze
  fs::path out;
  fs::path frames;
  std::size_t instances = 1;
  fs::path snapshot;
  std::size_t columns = 0;
  bool montage = false;
  // dataset-create / evaluate
  std::optional<double> train_fraction;
  std::optional<std::uint64_t> split_seed;
  std::string snapshots = "all";
  std::string human;
  double outlier_px = 10.0;
  // train
  std::int64_t steps = 0;
  std::int64_t snapshot_interval = 0;
  fs::path init_weights;
  std::string init_mode = "full";
  // sweep
  std::string axis = "train-fraction";
  std::vector<double> points;
  std::vector<std::size_t> splits;
  std::int64_t budget = 5000;
  std::int64_t checkpoints = 4;
  std::size_t workers = 1;
  // refine
  std::optional<double> threshold;
  std::optional<double> bound;
  std::size_t limit = 0;
  // serve
  std::string host;
  int port = -1;
  fs::path root;
};

struct Context {
  Options& o;
  std::ostream& out;
  std::ostream& err;
};

fs::path require_project_dir(const fs::path& dir) {
  if (!fs::exists(dir / dataset::kProjectFile)) {
    throw CommandError(kMissingProject, "no project at " + dir.string() + " (missing " + dataset::kProjectFile + ")");
  }
  return dir;
}

dataset::ProjectData load_validated(const fs::path& dir) {
  return dataset::load_project_and_labels(require_project_dir(dir));
}

const dataset::LabelSet& labels_or_empty(const dataset::ProjectData& data, const std::string& scorer) {
  static const dataset::LabelSet empty;
  const auto it = data.labels.find(scorer);
  return it == data.labels.end() ? empty : it->second;
}

fs::path resolve(const dataset::Project& p, const fs::path& path) { return path.is_absolute() ? path : p.root / path; }

std::string rel(const dataset::Project& p, const fs::path& path) {
  const auto r = path.lexically_relative(p.root);
  return r.empty() || *r.begin() == ".." ? path.generic_string() : r.generic_string();
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  dataset::write_file_durably(path, std::string_view(text));
}

// Commands.

void project_init(Context& c) {
  auto& o = c.o;
  if (o.parts.empty()) throw CommandError(kUsage, "--parts needs at least one body part");
  const auto name = o.name.empty() ? fs::absolute(o.project).lexically_normal().filename().string() : o.name;
  const auto p = dataset::init_project(o.project, name, o.parts, o.scorer.empty() ? "scorer" : o.scorer, o.seed);
  c.out << "created project '" << p.name << "' at " << o.project.string() << " seed=" << p.seed << "\n";
}

void frames_extract(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  const auto seed = o.seed_set ? o.seed : p.seed;
  const auto name = o.sequence.empty() ? o.video.stem().string() : o.sequence;
  const auto outdir = p.frames_path() / name;
  c.out << "seed=" << seed << " strategy=" << o.strategy << " count=" << o.count << "\n";
  const auto r = dataset::extract_frames(o.video, outdir, dataset::parse_strategy(o.strategy), o.count, p.decoder, seed);
  for (const auto& w : r.warnings) c.err << "warning: " << w << "\n";
  c.out << "extracted " << r.written.size() << " of " << r.decoded_frames << " frames to " << rel(p, outdir) << "\n";
}

void labels_check(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  const auto scorer = o.scorer.empty() ? p.scorer : o.scorer;
  const auto& labels = labels_or_empty(data, scorer);
  const auto outdir = o.out.empty() ? p.root / "labels-check" / scorer : o.out;
  const auto skeleton = inference::resolve_skeleton(p.parts, p.skeleton);
  std::size_t labeled = 0, written = 0;
  for (const auto& f : labels.frames) {
    if (!f.any_labeled()) continue;
    ++labeled;
    const auto image = dataset::read_png(p.root / f.image);
    const auto overlay =
        inference::render_points(image, inference::points_from_labels(f.labels), p.parts.size(), skeleton);
    const auto target = outdir / f.image;
    fs::create_directories(target.parent_path());
    dataset::write_png(target, overlay);
    ++written;
  }
  std::vector<std::size_t> per_part(p.parts.size(), 0);
  if (const auto it = data.labeled_per_part.find(scorer); it != data.labeled_per_part.end()) per_part = it->second;
  c.out << "scorer " << scorer << ": " << labeled << " labeled frames, " << written << " overlays written";
  if (written) c.out << " to " << rel(p, outdir);
  c.out << "\n";
  for (std::size_t i = 0; i < p.parts.size(); ++i) c.out << "  " << p.parts[i] << ": " << per_part[i] << "\n";
}

void dataset_create(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  const dataset::SplitSpec spec{o.train_fraction.value_or(p.training.train_fraction), o.split_seed.value_or(p.seed)};
  const auto scorer = o.scorer.empty() ? p.scorer : o.scorer;
  dataset::TrainingDataset ds;
  try {
    ds = dataset::create_training_dataset(data, scorer, spec);
  } catch (const dataset::ProjectError& e) {
    throw precondition(e.what());
  }
  dataset::save_training_dataset(p, ds);
  c.out << "split_seed=" << spec.seed << " train_fraction=" << format_double(spec.train_fraction) << "\n";
  c.out << "scorer " << scorer << ": " << ds.train.size() << " train, " << ds.test.size() << " test frames -> "
        << rel(p, dataset::training_dataset_path(p)) << "\n";
}

dataset::TrainingDataset load_dataset_or_fail(const dataset::Project& p) {
  try {
    return dataset::load_training_dataset(p);
  } catch (const dataset::ProjectError& e) {
    if (!fs::exists(dataset::training_dataset_path(p))) throw precondition(e.what());
    throw;
  }
}

void train(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  const auto ds = load_dataset_or_fail(p);
  training::RunSpec spec;
  spec.steps = o.steps;
  spec.snapshot_interval = o.snapshot_interval;
  spec.seed = o.seed_set ? o.seed : p.seed;
  spec.output_dir = o.out.empty() ? training::default_run_dir(p) : resolve(p, o.out);
  if (!o.init_weights.empty()) {
    spec.init_weights = resolve(p, o.init_weights);
    if (o.init_mode == "backbone") spec.init_mode = model::LoadMode::backbone_only;
  }
  c.out << "seed=" << spec.seed << " split_seed=" << ds.spec.seed << " train_frames=" << ds.train.size() << "\n";
  training::TrainOptions hooks;
  hooks.on_snapshot = [&](const training::SnapshotRecord& r) {
    c.out << "snapshot step=" << r.step << " " << rel(p, r.path) << "\n";
  };
  training::TrainResult result;
  try {
    result = training::train_project(data, ds, spec, hooks);
  } catch (const dataset::ProjectError& e) {
    throw precondition(e.what());
  }
  c.out << "trained " << result.steps << " steps, final loss " << format_double(result.final_loss) << "\n";
}

eval::FrameList frames_for(const dataset::ProjectData& data, const std::string& scorer,
                           const std::vector<std::string>& images) {
  return dataset::frames_by_image(data.project, labels_or_empty(data, scorer), images);
}

void evaluate(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  const auto run_dir = o.snapshot.empty() ? training::default_run_dir(p) : resolve(p, o.snapshot);
  training::RunMetadata meta;
  try {
    meta = training::read_run_metadata(run_dir);
  } catch (const training::TrainingError& e) {
    throw precondition(e.what());
  }
  const auto ds = load_dataset_or_fail(p);
  if (o.split_seed && *o.split_seed != meta.split.seed) {
    throw precondition("split seed mismatch: training run used split_seed=" + std::to_string(meta.split.seed) +
                       ", requested --split-seed=" + std::to_string(*o.split_seed));
  }
  if (ds.spec.seed != meta.split.seed || ds.spec.train_fraction != meta.split.train_fraction) {
    throw precondition("split mismatch: training run used split_seed=" + std::to_string(meta.split.seed) +
                       " train_fraction=" + format_double(meta.split.train_fraction) + ", " +
                       rel(p, dataset::training_dataset_path(p)) + " has split_seed=" + std::to_string(ds.spec.seed) +
                       " train_fraction=" + format_double(ds.spec.train_fraction) + "; rerun train");
  }
  auto snaps = training::list_snapshots(run_dir);
  if (snaps.empty()) throw precondition("no snapshots in " + rel(p, run_dir) + "; run train first");
  if (o.snapshots == "latest") snaps = {snaps.back()};
  else if (o.snapshots != "all") throw CommandError(kUsage, "--snapshots must be 'all' or 'latest'");

  const auto train = frames_for(data, ds.scorer, ds.train_images());
  const auto test = frames_for(data, ds.scorer, ds.test_images());
  auto curve =
      eval::evaluate_snapshots(p, train, test, snaps, eval::read_loss_log(run_dir / "loss_log.csv"), ds.spec);
  for (auto& r : curve.reports) r.snapshot = rel(p, r.snapshot);
  for (const auto& w : curve.warnings) c.err << "warning: " << w << "\n";
  const auto outdir = o.out.empty() ? p.root / "evaluation" : resolve(p, o.out);
  write_text(outdir / "learning_curve.csv", eval::learning_curve_csv(curve));
  write_text(outdir / "per_image_errors.csv", eval::per_image_errors_csv(curve, p.parts));
  write_text(outdir / "evaluation.json", eval::evaluation_json(curve));
  c.out << "split_seed=" << ds.spec.seed << " train_fraction=" << format_double(ds.spec.train_fraction)
        << " seed=" << meta.seed << "\n";
  c.out << "step,train_rmse,test_rmse\n";
  for (const auto& r : curve.rows) {
    c.out << r.step << "," << (std::isfinite(r.train_rmse) ? format_double(r.train_rmse) : "") << ","
          << (std::isfinite(r.test_rmse) ? format_double(r.test_rmse) : "") << "\n";
  }
  if (!o.human.empty()) {
    const auto& theirs = labels_or_empty(data, o.human);
    if (theirs.frames.empty()) throw precondition("scorer '" + o.human + "' has no labels");
    const auto rep = eval::compare_scorers(labels_or_empty(data, ds.scorer), theirs, p.parts.size(), o.outlier_px);
    write_text(outdir / "variability.json", eval::variability_json(rep, p.parts));
    c.out << "human variability " << ds.scorer << " vs " << o.human << ": " << format_double(rep.aggregate.mean)
          << " px, 95% CI [" << format_double(rep.aggregate.ci_low) << ", " << format_double(rep.aggregate.ci_high)
          << "], " << rep.aggregate.n << " pairs\n";
  }
  c.out << "reports written to " << rel(p, outdir) << "\n";
}

void sweep(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  eval::SweepConfig cfg;
  cfg.axis = eval::parse_axis(o.axis);
  if (cfg.axis == eval::SweepAxis::train_fraction) {
    const auto d = eval::default_fraction_sweep();
    cfg.points = o.points.empty() ? d.points : o.points;
    cfg.splits_per_point = o.splits.empty() ? (o.points.empty() ? d.splits_per_point : std::vector<std::size_t>{3})
                                            : o.splits;
  } else {
    cfg.points = o.points.empty() ? std::vector<double>{3, 9, 17, 25} : o.points;
    cfg.splits_per_point = o.splits.empty() ? std::vector<std::size_t>{1} : o.splits;
  }
  cfg.budget = o.budget;
  cfg.checkpoints = o.checkpoints;
  cfg.workers = o.workers;
  cfg.scorer = o.scorer;
  cfg.output_dir = o.out.empty() ? p.root / "sweeps" / o.axis : resolve(p, o.out);
  c.out << "project_seed=" << p.seed << " axis=" << o.axis << " budget=" << cfg.budget << "\n";
  const auto report = eval::run_sweep(data, cfg);
  write_text(cfg.output_dir / "runs.csv", eval::sweep_runs_csv(report));
  write_text(cfg.output_dir / "sweep.json", eval::sweep_json(report));
  for (const auto& run : report.runs) {
    if (!run.ok) c.err << "warning: run point=" << format_double(run.point) << " split=" << run.split_index
                       << " failed: " << run.error << "\n";
  }
  c.out << "point,runs_ok,runs_failed,test_rmse_mean,test_rmse_sem,train_rmse_mean\n";
  for (const auto& pt : report.points) {
    auto num = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
    c.out << format_double(pt.point) << "," << pt.runs_ok << "," << pt.runs_failed << "," << num(pt.final_test.mean)
          << "," << num(pt.final_test.sem) << "," << num(pt.final_train.mean) << "\n";
  }
  c.out << "reports written to " << rel(p, cfg.output_dir) << "\n";
}

std::string sequence_name(const Options& o) {
  if (!o.sequence.empty()) return o.sequence;
  const auto norm = o.frames.lexically_normal();
  const auto name = norm.filename().empty() ? norm.parent_path().filename() : norm.filename();
  return name.string();
}

void analyze(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  fs::path snapshot;
  if (o.snapshot.empty()) {
    const auto latest = training::latest_snapshot(training::default_run_dir(p));
    if (!latest) throw precondition("no snapshots in " + rel(p, training::default_run_dir(p)) + "; run train first");
    snapshot = latest->path;
  } else {
    snapshot = resolve(p, o.snapshot);
  }
  auto net = training::build_project_network(p, 0);
  model::load_weights(net, snapshot);
  const auto frames_dir = resolve(p, o.frames);
  const auto sequence = sequence_name(o);
  inference::AnalysisConfig cfg;
  cfg.decode = p.decode_config();
  cfg.instances = o.instances;
  if (const auto it = p.crops.find(sequence); it != p.crops.end()) cfg.crop = it->second;
  const auto frames = inference::list_frames(frames_dir);
  auto a = inference::analyze_sequence(net, frames, cfg, sequence);
  for (auto& f : a.frame_files) f = rel(p, f);
  for (const auto& w : a.warnings) c.err << "warning: " << w << "\n";
  inference::save_analysis(p.analysis_path(), a);
  c.out << "analyzed " << frames.size() << " frames of '" << sequence << "' with " << rel(p, snapshot) << "\n";
  c.out << "throughput " << format_double(std::round(a.frames_per_second * 10) / 10) << " frames/s\n";
  c.out << "trajectory written to " << rel(p, p.analysis_path() / (sequence + ".csv")) << "\n";
}

std::string pick_sequence(const dataset::Project& p, const std::string& given) {
  if (!given.empty()) return given;
  const auto names = inference::list_analyses(p.analysis_path());
  if (names.empty()) throw precondition("no analysis in " + rel(p, p.analysis_path()) + "; run analyze first");
  if (names.size() > 1) throw CommandError(kUsage, "several analyses exist; choose one with --sequence");
  return names.front();
}

inference::SequenceAnalysis load_analysis_or_fail(const dataset::Project& p, const std::string& sequence) {
  try {
    return inference::load_analysis(p.analysis_path(), sequence);
  } catch (const inference::InferenceError& e) {
    if (!fs::exists(p.analysis_path() / (sequence + ".csv"))) throw precondition(e.what());
    throw;
  }
}

std::string continuity_csv(const inference::ContinuityReport& r) {
  std::string out = "part,quantity,bin_start,count\n";
  for (const auto& part : r.parts) {
    for (const auto& [name, h] : {std::pair{"dx", &part.dx}, std::pair{"dy", &part.dy}, std::pair{"jump", &part.jump}}) {
      for (std::size_t k = 0; k < h->counts.size(); ++k) {
        if (!h->counts[k]) continue;
        out += part.part + "," + name + "," +
               format_double(static_cast<double>(h->first_bin + static_cast<std::int64_t>(k)) * h->bin_width) + "," +
               std::to_string(h->counts[k]) + "\n";
      }
    }
  }
  return out;
}

void refine(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  const auto sequence = pick_sequence(p, o.sequence);
  const auto a = load_analysis_or_fail(p, sequence);
  const double threshold = o.threshold.value_or(p.inference.confidence_threshold);
  const double bound = o.bound.value_or(p.inference.discontinuity_px);
  const auto queue = inference::build_refine_queue(a, threshold, bound, o.limit);
  write_text(p.analysis_path() / (sequence + "_refine.csv"), inference::refine_queue_to_csv(a, queue));
  if (a.trajectory.rows.size() >= 2) {
    const auto cont = inference::continuity_stats(a.trajectory, p.inference.histogram_bin_px, bound);
    write_text(p.analysis_path() / (sequence + "_continuity.csv"), continuity_csv(cont));
    for (const auto& part : cont.parts) {
      c.out << "continuity " << part.part << ": max jump " << format_double(part.max_jump) << " px at frame "
            << part.max_jump_frame << ", median " << format_double(part.median_jump) << ", "
            << part.flagged.size() << " above " << format_double(bound) << " px\n";
    }
  }
  std::size_t low = 0, jump = 0;
  for (const auto& e : queue) (e.reason == inference::QueueReason::low_confidence ? low : jump)++;
  c.out << "queued " << queue.size() << " frames (" << low << " low-confidence, " << jump << " discontinuity) -> "
        << rel(p, p.analysis_path() / (sequence + "_refine.csv")) << "\n";
}

void render(Context& c) {
  auto& o = c.o;
  const auto data = load_validated(o.project);
  const auto& p = data.project;
  const auto sequence = pick_sequence(p, o.sequence);
  const auto a = load_analysis_or_fail(p, sequence);
  const auto skeleton = inference::resolve_skeleton(p.parts, p.skeleton);
  const auto outdir = o.out.empty() ? p.root / "renders" / sequence : resolve(p, o.out);
  fs::create_directories(outdir);
  inference::OverlayStyle style;
  style.confidence_threshold = p.inference.confidence_threshold;
  std::vector<dataset::Image> rendered;
  std::size_t written = 0, skipped = 0;
  for (std::size_t r = 0; r < a.trajectory.rows.size(); ++r) {
    dataset::Image image;
    try {
      image = dataset::read_png(resolve(p, a.frame_files[r]));
    } catch (const dataset::ImageError& e) {
      c.err << "warning: " << e.what() << "\n";
      ++skipped;
      continue;
    }
    auto overlay = inference::render_points(image, inference::points_from_row(a.trajectory, r), p.parts.size(),
                                            skeleton, style);
    dataset::write_png(outdir / fs::path(a.frame_files[r]).filename(), overlay);
    ++written;
    if (o.montage) rendered.push_back(std::move(overlay));
  }
  if (o.montage && !rendered.empty()) dataset::write_png(outdir / "montage.png", inference::montage(rendered, o.columns));
  c.out << "rendered " << written << " frames";
  if (skipped) c.out << " (" << skipped << " unreadable)";
  c.out << " to " << rel(p, outdir) << "\n";
}

void serve(Context& c) {
  auto& o = c.o;
  std::string host = "127.0.0.1";
  int port = 8080;
  if (const char* listen = std::getenv("PARTLOC_LISTEN"); listen && *listen) {
    const std::string v = listen;
    const auto colon = v.rfind(':');
    if (colon == std::string::npos) throw CommandError(kUsage, "PARTLOC_LISTEN must be host:port");
    host = v.substr(0, colon);
    try {
      port = std::stoi(v.substr(colon + 1));
    } catch (const std::exception&) {
      throw CommandError(kUsage, "PARTLOC_LISTEN must be host:port");
    }
  }
  if (!o.host.empty()) host = o.host;
  if (o.port >= 0) port = o.port;
  fs::path root = ".";
  if (const char* r = std::getenv("PARTLOC_ROOT"); r && *r) root = r;
  if (!o.root.empty()) root = o.root;
  service::ProjectService svc(root);
  service::HttpServer server(svc);
  const int bound = server.bind(host, port);
  c.out << "listening on http://" << host << ":" << bound << " root=" << root.string() << std::endl;
  server.listen();
}

using Command = std::function<void(Context&)>;

struct App {
  CLI::App app{"Markerless keypoint tracking: label frames, train a part detector, analyze sequences.", "partloc"};
  std::map<std::string, std::pair<CLI::App*, Command>> commands;
};

CLI::App* add(App& a, const std::string& name, const std::string& desc, Command cmd) {
  auto* sub = a.app.add_subcommand(name, desc);
  a.commands[name] = {sub, std::move(cmd)};
  return sub;
}

void add_project(CLI::App* sub, Options& o) {
  sub->add_option("project", o.project, "Project directory (holds project.yaml)")->required();
}

void add_seed(CLI::App* sub, Options& o, const std::string& what) {
  sub->add_option_function<std::uint64_t>(
      "--seed",
      [&o](std::uint64_t v) {
        o.seed = v;
        o.seed_set = true;
      },
      what + " (default: the project seed)");
}

std::unique_ptr<App> build(Options& o) {
  auto a = std::make_unique<App>();
  a->app.require_subcommand(1);
  a->app.set_help_all_flag("--help-all", "Print help for every subcommand");

  auto* s = add(*a, "project-init", "Create a project directory and its project.yaml", project_init);
  s->add_option("project", o.project, "Directory to create the project in")->required();
  s->add_option("--name", o.name, "Project name (default: the directory name)");
  s->add_option("--parts", o.parts, "Body part names, comma separated")->required()->delimiter(',');
  s->add_option("--scorer", o.scorer, "Scorer id of the human labeler (default: scorer)");
  s->add_option("--seed", o.seed, "Project seed for splits, sampling and initialization (default: 0)");

  s = add(*a, "frames-extract", "Decode a video and store selected frames under the frames directory",
          frames_extract);
  add_project(s, o);
  s->add_option("--video", o.video, "Video file passed to the project's decoder command")->required();
  s->add_option("--count", o.count, "Number of frames to keep (default: 20)")->check(CLI::PositiveNumber);
  s->add_option("--strategy", o.strategy, "Frame selection: uniform or kmeans (default: uniform)")
      ->check(CLI::IsMember({"uniform", "kmeans"}));
  s->add_option("--sequence", o.sequence, "Output subdirectory name (default: the video file stem)");
  add_seed(s, o, "Seed of the k-means selection");

  s = add(*a, "labels-check", "Validate labels and render them onto their frames", labels_check);
  add_project(s, o);
  s->add_option("--scorer", o.scorer, "Scorer whose labels to check (default: the project scorer)");
  s->add_option("--out", o.out, "Overlay directory (default: <project>/labels-check/<scorer>)");

  s = add(*a, "dataset-create", "Split labeled frames into train and test sets", dataset_create);
  add_project(s, o);
  s->add_option("--scorer", o.scorer, "Scorer whose labels to use (default: the project scorer)");
  s->add_option("--train-fraction", o.train_fraction, "Fraction of frames used for training (default: project value)")
      ->check(CLI::Range(0.0, 1.0));
  s->add_option("--split-seed", o.split_seed, "Seed of the split (default: the project seed)");

  s = add(*a, "train", "Train the part detector on the train split, writing snapshots", train);
  add_project(s, o);
  s->add_option("--steps", o.steps, "Training steps (default: project total_steps)")->check(CLI::PositiveNumber);
  s->add_option("--snapshot-interval", o.snapshot_interval, "Steps between snapshots (default: project value)")
      ->check(CLI::PositiveNumber);
  add_seed(s, o, "Seed of initialization and sampling");
  s->add_option("--init-weights", o.init_weights, "Weight file to start from");
  s->add_option("--init-mode", o.init_mode, "Load all layers (full) or only the backbone (default: full)")
      ->check(CLI::IsMember({"full", "backbone"}));
  s->add_option("--out", o.out, "Run directory (default: <project>/training/run)");

  s = add(*a, "evaluate", "Evaluate stored snapshots on the train and test splits", evaluate);
  add_project(s, o);
  s->add_option("--split-seed", o.split_seed, "Expected split seed; refuses to run when training used another");
  s->add_option("--snapshots", o.snapshots, "Evaluate all snapshots or only the latest (default: all)")
      ->check(CLI::IsMember({"all", "latest"}));
  s->add_option("--run", o.snapshot, "Run directory (default: <project>/training/run)");
  s->add_option("--human", o.human, "Second scorer to compare with the dataset scorer (human variability)");
  s->add_option("--outlier-px", o.outlier_px, "Distance above which scorer pairs are listed as outliers (default: 10)");
  s->add_option("--out", o.out, "Report directory (default: <project>/evaluation)");

  s = add(*a, "sweep", "Train and evaluate one network per (point, split) along an axis", sweep);
  add_project(s, o);
  s->add_option("--axis", o.axis, "train-fraction or epsilon (default: train-fraction)")
      ->check(CLI::IsMember({"train-fraction", "epsilon"}));
  s->add_option("--points", o.points, "Axis values, comma separated (default grid per axis)")->delimiter(',');
  s->add_option("--splits", o.splits, "Splits per point, one value or one per point, comma separated")
      ->delimiter(',');
  s->add_option("--budget", o.budget, "Training steps per run, at least 1000 (default: 5000)");
  s->add_option("--checkpoints", o.checkpoints, "Snapshots evaluated per run (default: 4)")
      ->check(CLI::PositiveNumber);
  s->add_option("--workers", o.workers, "Runs trained in parallel (default: 1)")->check(CLI::PositiveNumber);
  s->add_option("--scorer", o.scorer, "Scorer whose labels to use (default: the project scorer)");
  s->add_option("--out", o.out, "Sweep directory (default: <project>/sweeps/<axis>)");

  s = add(*a, "analyze", "Run the trained network frame by frame over a directory of frames", analyze);
  add_project(s, o);
  s->add_option("--frames", o.frames, "Directory of PNG frames, relative to the project or absolute")->required();
  s->add_option("--sequence", o.sequence, "Sequence name for the outputs (default: the directory name)");
  s->add_option("--instances", o.instances, "Detections kept per part and frame (default: 1)")
      ->check(CLI::PositiveNumber);
  s->add_option("--snapshot", o.snapshot, "Weight file (default: the latest snapshot of the training run)");

  s = add(*a, "refine", "Rank analyzed frames for relabeling by confidence and continuity", refine);
  add_project(s, o);
  s->add_option("--sequence", o.sequence, "Analyzed sequence (default: the only one)");
  s->add_option("--threshold", o.threshold, "Peak probability below which a part is uncertain (default: project)");
  s->add_option("--bound", o.bound, "Frame-to-frame jump in px above which a part is discontinuous (default: project)");
  s->add_option("--limit", o.limit, "Maximum queue length, 0 for no limit (default: 0)");

  s = add(*a, "render", "Draw predicted keypoints and skeleton onto analyzed frames", render);
  add_project(s, o);
  s->add_option("--sequence", o.sequence, "Analyzed sequence (default: the only one)");
  s->add_option("--out", o.out, "Output directory (default: <project>/renders/<sequence>)");
  s->add_flag("--montage", o.montage, "Also write montage.png tiling every rendered frame");
  s->add_option("--columns", o.columns, "Montage columns, 0 for a square-ish grid (default: 0)");

  s = add(*a, "serve", "Serve the labeling and refinement HTTP API", serve);
  s->add_option("--root", o.root, "Directory whose subdirectories are projects (env PARTLOC_ROOT, default: .)");
  s->add_option("--host", o.host, "Listen address (env PARTLOC_LISTEN=host:port, default: 127.0.0.1)");
  s->add_option("--port", o.port, "Listen port, 0 for any free port (default: 8080)")->check(CLI::Range(0, 65535));
  return a;
}

std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int fail(std::ostream& err, int code, const std::string& message) {
  err << "error code=" << exit_code_name(code) << " exit=" << code << ": " << one_line(message) << "\n";
  return code;
}

}  // namespace

std::string exit_code_name(int code) {
  switch (code) {
    case kOk: return "ok";
    case kUsage: return "usage";
    case kMissingProject: return "missing_project";
    case kPrecondition: return "precondition";
    case kInvalidData: return "invalid_data";
    case kEnvironment: return "environment";
    default: return "failure";
  }
}

std::vector<std::string> subcommands() {
  Options o;
  const auto a = build(o);
  std::vector<std::string> out;
  for (const auto* sub : a->app.get_subcommands({})) out.push_back(sub->get_name());
  return out;
}

std::vector<OptionDoc> option_docs(const std::string& subcommand) {
  Options o;
  const auto a = build(o);
  const auto it = a->commands.find(subcommand);
  if (it == a->commands.end()) return {};
  std::vector<OptionDoc> out;
  for (const auto* opt : it->second.first->get_options()) out.push_back({opt->get_name(), opt->get_description()});
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  auto a = build(o);
  std::vector<const char*> argv{"partloc"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    a->app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const auto* sub = a->app.get_subcommands().empty() ? &a->app : a->app.get_subcommands().front();
    out << sub->help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << a->app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kUsage, e.what());
  }
  const auto* chosen = a->app.get_subcommands().front();
  Context ctx{o, out, err};
  try {
    a->commands.at(chosen->get_name()).second(ctx);
  } catch (const CommandError& e) {
    return fail(err, e.code, e.what());
  } catch (const dataset::EnvironmentError& e) {
    return fail(err, kEnvironment, e.what());
  } catch (const dataset::ProjectError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const dataset::LabelFormatError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const scoremap::LabelValidationError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const dataset::ImageError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const model::WeightFileError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const inference::InferenceError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const eval::EvalError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const engine::ConfigError& e) {
    return fail(err, kInvalidData, e.what());
  } catch (const service::ServiceError& e) {
    return fail(err, kEnvironment, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(err, kUsage, e.what());
  } catch (const std::exception& e) {
    return fail(err, kFailure, e.what());
  }
  return kOk;
}

}  // namespace partloc::cli
