#include "partloc/eval/eval.hpp"

#include <omp.h>

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "partloc/dataset/files.hpp"
#include "partloc/inference/analysis.hpp"

namespace partloc::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using dataset::format_double;

std::string num(double v) { return std::isfinite(v) ? format_double(v) : ""; }

nlohmann::json json_num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::ordered_json stat_json(const MeanStat& s) {
  return {{"mean", json_num(s.mean)}, {"sem", json_num(s.sem)}, {"ci_low", json_num(s.ci_low)},
          {"ci_high", json_num(s.ci_high)}, {"n", s.n}};
}

}  // namespace

KeypointSet keypoints_of(const dataset::LabelSet& labels) {
  KeypointSet out;
  for (const auto& f : labels.frames) out[f.image] = f.labels;
  return out;
}

RmseResult rmse(const KeypointSet& a, const KeypointSet& b, std::size_t part_count,
                const std::vector<std::size_t>& part_filter) {
  std::vector<bool> use(part_count, part_filter.empty());
  for (auto p : part_filter) {
    if (p >= part_count) throw EvalError("part filter index " + std::to_string(p) + " out of range");
    use[p] = true;
  }
  RmseResult r;
  r.per_part.assign(part_count, 0.0);
  r.per_part_count.assign(part_count, 0);
  std::set<std::string> images;
  for (const auto& [k, v] : a) images.insert(k);
  for (const auto& [k, v] : b) images.insert(k);
  double sum = 0.0;
  for (const auto& image : images) {
    const auto ia = a.find(image);
    const auto ib = b.find(image);
    for (std::size_t p = 0; p < part_count; ++p) {
      if (!use[p]) continue;
      const std::optional<scoremap::Point>* pa =
          ia != a.end() && p < ia->second.size() ? &ia->second[p] : nullptr;
      const std::optional<scoremap::Point>* pb =
          ib != b.end() && p < ib->second.size() ? &ib->second[p] : nullptr;
      if (!pa || !pb || !*pa || !*pb) {
        ++r.excluded;
        continue;
      }
      const double dx = (*pa)->x - (*pb)->x, dy = (*pa)->y - (*pb)->y;
      const double d = std::sqrt(dx * dx + dy * dy);
      r.pairs.push_back({image, p, d});
      sum += d;
      r.per_part[p] += d;
      ++r.per_part_count[p];
    }
  }
  r.included = r.pairs.size();
  if (r.included == 0) throw EvalError("no matched (image, part) pairs to compare");
  r.value = sum / static_cast<double>(r.included);
  for (std::size_t p = 0; p < part_count; ++p) {
    r.per_part[p] = r.per_part_count[p] ? r.per_part[p] / static_cast<double>(r.per_part_count[p]) : kNaN;
  }
  return r;
}

MeanStat summarize(const std::vector<double>& values) {
  MeanStat s;
  s.n = values.size();
  if (values.empty()) {
    s.mean = s.sem = s.ci_low = s.ci_high = kNaN;
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sem = std::sqrt(ss / static_cast<double>(s.n - 1)) / std::sqrt(static_cast<double>(s.n));
  }
  s.ci_low = s.mean - 1.96 * s.sem;
  s.ci_high = s.mean + 1.96 * s.sem;
  return s;
}

VariabilityReport compare_scorers(const dataset::LabelSet& a, const dataset::LabelSet& b, std::size_t part_count,
                                  double outlier_px) {
  KeypointSet ka, kb;
  for (const auto& f : a.frames) {
    if (b.find(f.image)) ka[f.image] = f.labels;
  }
  for (const auto& f : b.frames) {
    if (a.find(f.image)) kb[f.image] = f.labels;
  }
  if (ka.empty()) throw EvalError("scorers '" + a.scorer + "' and '" + b.scorer + "' share no frame");
  const auto r = rmse(ka, kb, part_count);
  VariabilityReport rep;
  rep.overlap_frames = ka.size();
  rep.excluded_pairs = r.excluded;
  rep.outlier_threshold = outlier_px;
  std::vector<double> all;
  std::vector<std::vector<double>> per(part_count);
  for (const auto& pd : r.pairs) {
    all.push_back(pd.distance);
    per[pd.part].push_back(pd.distance);
    if (pd.distance > outlier_px) rep.outliers.push_back(pd);
  }
  rep.aggregate = summarize(all);
  for (const auto& v : per) rep.per_part.push_back(summarize(v));
  return rep;
}

KeypointSet predict_keypoints(const model::PartDetectorNetwork<float>& net, const FrameList& frames,
                              const scoremap::PoseDecodeConfig& cfg, std::size_t* low_confidence,
                              std::size_t* predicted) {
  KeypointSet out;
  for (const auto& f : frames) {
    const auto pred = inference::predict_frame(net, f.image, cfg, 1);
    scoremap::PartLabels labels;
    for (std::size_t p = 0; p < pred.points.size(); ++p) {
      const auto& d = pred.points[p];
      labels.push_back(scoremap::Point{d->x, d->y});
      if (low_confidence && pred.peaks[p] < cfg.confidence_threshold) ++*low_confidence;
      if (predicted) ++*predicted;
    }
    out[f.id] = std::move(labels);
  }
  return out;
}

EvaluationReport evaluate_network(const model::PartDetectorNetwork<float>& net, const FrameList& train,
                                  const FrameList& test, const scoremap::PoseDecodeConfig& cfg) {
  EvaluationReport rep;
  rep.parts = net.parts();
  std::size_t low = 0, total = 0;
  auto side = [&](const FrameList& frames) -> std::optional<RmseResult> {
    if (frames.empty()) return std::nullopt;
    KeypointSet truth;
    for (const auto& f : frames) truth[f.id] = f.labels;
    const auto pred = predict_keypoints(net, frames, cfg, &low, &total);
    try {
      return rmse(truth, pred, net.parts().size());
    } catch (const EvalError&) {
      return std::nullopt;
    }
  };
  rep.train = side(train);
  rep.test = side(test);
  rep.low_confidence_fraction = total ? static_cast<double>(low) / static_cast<double>(total) : 0.0;
  return rep;
}

LearningCurve evaluate_snapshots(const dataset::Project& project, const FrameList& train, const FrameList& test,
                                 const std::vector<training::SnapshotRecord>& snapshots,
                                 const std::vector<training::LossLogRow>& loss_log, const dataset::SplitSpec& split) {
  if (snapshots.empty()) throw EvalError("no snapshots to evaluate; run train first");
  LearningCurve curve;
  auto net = training::build_project_network(project, 0);
  const auto cfg = project.decode_config();
  for (const auto& snap : snapshots) {
    try {
      model::load_weights(net, snap.path);
    } catch (const std::exception& e) {
      curve.warnings.push_back("skipping unreadable snapshot " + snap.path.string() + ": " + e.what());
      continue;
    }
    if (!curve.rows.empty() && snap.step <= curve.rows.back().step) {
      curve.warnings.push_back("skipping snapshot " + snap.path.string() + ": step not after the previous one");
      continue;
    }
    auto rep = evaluate_network(net, train, test, cfg);
    rep.step = snap.step;
    rep.snapshot = snap.path.string();
    rep.split = split;
    CurveRow row{snap.step, rep.train ? rep.train->value : kNaN, rep.test ? rep.test->value : kNaN, kNaN};
    for (const auto& l : loss_log) {
      if (l.step <= snap.step) row.loss = l.mean_loss;
    }
    curve.rows.push_back(row);
    curve.reports.push_back(std::move(rep));
  }
  return curve;
}

std::vector<training::LossLogRow> read_loss_log(const std::filesystem::path& path) {
  std::vector<training::LossLogRow> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(dataset::read_text_file(path));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string step, loss, lr;
    std::getline(cells, step, ',');
    std::getline(cells, loss, ',');
    std::getline(cells, lr, ',');
    training::LossLogRow row;
    try {
      row.step = std::stoll(step);
    } catch (const std::exception&) {
      continue;
    }
    dataset::parse_double(loss, row.mean_loss);
    dataset::parse_double(lr, row.learning_rate);
    out.push_back(row);
  }
  return out;
}

std::string learning_curve_csv(const LearningCurve& curve) {
  std::string out = "step,train_rmse,test_rmse,loss\n";
  for (const auto& r : curve.rows) {
    out += std::to_string(r.step) + "," + num(r.train_rmse) + "," + num(r.test_rmse) + "," + num(r.loss) + "\n";
  }
  return out;
}

std::string per_image_errors_csv(const LearningCurve& curve, const std::vector<std::string>& parts) {
  std::string out = "step,split,image,part,distance\n";
  for (const auto& rep : curve.reports) {
    for (const auto& [name, side] : {std::pair{"train", &rep.train}, std::pair{"test", &rep.test}}) {
      if (!*side) continue;
      for (const auto& pd : (*side)->pairs) {
        out += std::to_string(rep.step) + "," + name + "," + pd.image + "," + parts.at(pd.part) + "," +
               format_double(pd.distance) + "\n";
      }
    }
  }
  return out;
}

std::string evaluation_json(const LearningCurve& curve) {
  nlohmann::ordered_json j;
  j["metric"] = "mean Euclidean distance in pixels over matched (image, part) pairs";
  auto reports = nlohmann::ordered_json::array();
  for (const auto& rep : curve.reports) {
    nlohmann::ordered_json r;
    r["step"] = rep.step;
    r["snapshot"] = rep.snapshot;
    r["split_seed"] = rep.split.seed;
    r["train_fraction"] = rep.split.train_fraction;
    for (const auto& [name, side] : {std::pair{"train", &rep.train}, std::pair{"test", &rep.test}}) {
      if (!*side) {
        r[name] = nullptr;
        continue;
      }
      nlohmann::ordered_json s;
      s["rmse"] = (*side)->value;
      s["pairs"] = (*side)->included;
      s["excluded"] = (*side)->excluded;
      nlohmann::ordered_json per;
      for (std::size_t p = 0; p < rep.parts.size(); ++p) per[rep.parts[p]] = json_num((*side)->per_part[p]);
      s["per_part"] = per;
      r[name] = s;
    }
    r["low_confidence_fraction"] = rep.low_confidence_fraction;
    reports.push_back(r);
  }
  j["reports"] = reports;
  j["warnings"] = curve.warnings;
  return j.dump(2) + "\n";
}

std::string variability_json(const VariabilityReport& rep, const std::vector<std::string>& parts) {
  nlohmann::ordered_json j;
  j["aggregate"] = stat_json(rep.aggregate);
  nlohmann::ordered_json per;
  for (std::size_t p = 0; p < parts.size() && p < rep.per_part.size(); ++p) per[parts[p]] = stat_json(rep.per_part[p]);
  j["per_part"] = per;
  j["overlap_frames"] = rep.overlap_frames;
  j["excluded_pairs"] = rep.excluded_pairs;
  j["outlier_threshold"] = rep.outlier_threshold;
  auto outliers = nlohmann::ordered_json::array();
  for (const auto& o : rep.outliers) {
    outliers.push_back({{"image", o.image}, {"part", parts.at(o.part)}, {"distance", o.distance}});
  }
  j["outliers"] = outliers;
  return j.dump(2) + "\n";
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "train-fraction") return SweepAxis::train_fraction;
  if (name == "epsilon") return SweepAxis::epsilon;
  throw EvalError("unknown sweep axis '" + name + "' (expected train-fraction or epsilon)");
}

std::string to_string(SweepAxis axis) { return axis == SweepAxis::epsilon ? "epsilon" : "train-fraction"; }

SweepConfig default_fraction_sweep() {
  SweepConfig c;
  c.axis = SweepAxis::train_fraction;
  c.points = {0.01, 0.05, 0.1, 0.2, 0.5, 0.8};
  c.splits_per_point = {6, 6, 6, 6, 3, 3};
  return c;
}

std::uint64_t sweep_split_seed(std::uint64_t project_seed, SweepAxis axis, std::size_t point_index,
                               std::size_t split_index) {
  return mix_seed(project_seed, axis == SweepAxis::epsilon ? 0 : point_index + 1, split_index);
}

namespace {

struct RunPlan {
  SweepRun run;
  dataset::Project project;
  double fraction = 0.0;
};

void execute(RunPlan& plan, const FrameList& all, const SweepConfig& cfg) {
  auto& run = plan.run;
  try {
    const auto split = dataset::split_dataset(all.size(), {plan.fraction, run.split_seed});
    FrameList train, test;
    for (auto i : split.train) train.push_back(all[i]);
    for (auto i : split.test) test.push_back(all[i]);
    run.train_frames = train.size();
    run.test_frames = test.size();
    auto net = training::build_project_network(plan.project, run.network_seed);
    dataset::TrainingIterator samples(train, dataset::iterator_config(plan.project, net.minimum_extent()),
                                      mix_seed(run.network_seed, 0x5a3b1e));
    training::TrainOptions opts;
    opts.total_steps = cfg.budget;
    opts.snapshot_interval = std::max<std::int64_t>(1, cfg.budget / std::max<std::int64_t>(1, cfg.checkpoints));
    opts.schedule = plan.project.training.schedule.empty()
                        ? engine::LearningRateSchedule::standard(cfg.budget)
                        : engine::LearningRateSchedule(plan.project.training.schedule);
    opts.momentum = plan.project.training.momentum;
    opts.weights = plan.project.loss_weights();
    opts.huber_delta = plan.project.training.huber_delta;
    char name[64];
    std::snprintf(name, sizeof name, "run-p%02zu-s%02zu", run.point_index, run.split_index);
    opts.snapshot_dir = cfg.output_dir / name;
    std::filesystem::remove_all(opts.snapshot_dir);
    const auto result = training::train_network(net, samples, opts);
    const auto curve = evaluate_snapshots(plan.project, train, test, result.snapshots, result.loss_log,
                                          split.spec);
    if (curve.rows.empty()) throw EvalError("no snapshot could be evaluated");
    run.curve = curve.rows;
    run.ok = true;
  } catch (const std::exception& e) {
    run.ok = false;
    run.error = e.what();
  }
}

}  // namespace

SweepReport run_sweep(const dataset::ProjectData& data, const SweepConfig& config) {
  if (config.points.empty()) throw EvalError("sweep needs at least one point");
  if (config.budget < 1000) throw EvalError("sweep budget must be at least 1000 steps");
  if (config.output_dir.empty()) throw EvalError("sweep output directory is required");
  if (config.splits_per_point.size() != 1 && config.splits_per_point.size() != config.points.size()) {
    throw EvalError("splits per point must have one entry or one per point");
  }
  const auto& project = data.project;
  const std::string scorer = config.scorer.empty() ? project.scorer : config.scorer;
  const auto& labels = data.scorer_labels(scorer);
  std::vector<std::string> images;
  for (const auto& f : labels.frames) {
    if (f.any_labeled()) images.push_back(f.image);
  }
  const auto all = dataset::frames_by_image(project, labels, images);
  if (all.empty()) throw EvalError("scorer '" + scorer + "' has no labeled frames");

  SweepReport report;
  report.config = config;
  report.project_seed = project.seed;
  std::vector<RunPlan> plans;
  for (std::size_t p = 0; p < config.points.size(); ++p) {
    const std::size_t splits = config.splits_per_point.size() == 1 ? config.splits_per_point[0]
                                                                   : config.splits_per_point[p];
    for (std::size_t s = 0; s < splits; ++s) {
      RunPlan plan;
      plan.project = project;
      plan.run.point_index = p;
      plan.run.point = config.points[p];
      plan.run.split_index = s;
      plan.run.split_seed = sweep_split_seed(project.seed, config.axis, p, s);
      plan.run.network_seed = mix_seed(plan.run.split_seed, 0x1e7);
      if (config.axis == SweepAxis::epsilon) {
        plan.project.training.epsilon = config.points[p];
        plan.fraction = project.training.train_fraction;
      } else {
        plan.fraction = config.points[p];
      }
      plans.push_back(std::move(plan));
    }
  }
  std::filesystem::create_directories(config.output_dir);
  const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, plans.size()));
  if (workers == 1) {
    for (auto& plan : plans) execute(plan, all, config);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        omp_set_num_threads(1);
        for (std::size_t i = next++; i < plans.size(); i = next++) execute(plans[i], all, config);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& plan : plans) report.runs.push_back(std::move(plan.run));

  for (std::size_t p = 0; p < config.points.size(); ++p) {
    SweepPoint sp;
    sp.point = config.points[p];
    std::vector<double> train, test;
    std::map<std::int64_t, std::vector<double>> by_step;
    for (const auto& run : report.runs) {
      if (run.point_index != p) continue;
      if (!run.ok) {
        ++sp.runs_failed;
        continue;
      }
      ++sp.runs_ok;
      train.push_back(run.curve.back().train_rmse);
      test.push_back(run.curve.back().test_rmse);
      for (const auto& row : run.curve) by_step[row.step].push_back(row.test_rmse);
    }
    sp.final_train = summarize(train);
    sp.final_test = summarize(test);
    for (const auto& [step, values] : by_step) sp.test_by_step.push_back({step, summarize(values)});
    report.points.push_back(std::move(sp));
  }
  return report;
}

std::string sweep_runs_csv(const SweepReport& report) {
  std::string out = "axis,point,split,split_seed,network_seed,status,train_frames,test_frames,step,train_rmse,test_rmse,"
                    "loss,error\n";
  const auto axis = to_string(report.config.axis);
  for (const auto& run : report.runs) {
    const std::string head = axis + "," + format_double(run.point) + "," + std::to_string(run.split_index) + "," +
                             std::to_string(run.split_seed) + "," + std::to_string(run.network_seed) + "," +
                             (run.ok ? "ok" : "failed") + "," + std::to_string(run.train_frames) + "," +
                             std::to_string(run.test_frames) + ",";
    if (!run.ok) {
      std::string err = run.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      out += head + ",,,," + err + "\n";
      continue;
    }
    for (const auto& row : run.curve) {
      out += head + std::to_string(row.step) + "," + num(row.train_rmse) + "," + num(row.test_rmse) + "," +
             num(row.loss) + ",\n";
    }
  }
  return out;
}

std::string sweep_json(const SweepReport& report) {
  nlohmann::ordered_json j;
  j["axis"] = to_string(report.config.axis);
  j["budget"] = report.config.budget;
  j["project_seed"] = report.project_seed;
  auto points = nlohmann::ordered_json::array();
  for (const auto& sp : report.points) {
    nlohmann::ordered_json p;
    p["point"] = sp.point;
    p["runs_ok"] = sp.runs_ok;
    p["runs_failed"] = sp.runs_failed;
    p["train_rmse"] = stat_json(sp.final_train);
    p["test_rmse"] = stat_json(sp.final_test);
    auto steps = nlohmann::ordered_json::array();
    for (const auto& [step, s] : sp.test_by_step) steps.push_back({{"step", step}, {"test_rmse", stat_json(s)}});
    p["test_by_step"] = steps;
    points.push_back(p);
  }
  j["points"] = points;
  auto failures = nlohmann::ordered_json::array();
  for (const auto& run : report.runs) {
    if (!run.ok) failures.push_back({{"point", run.point}, {"split", run.split_index}, {"error", run.error}});
  }
  j["failures"] = failures;
  return j.dump(2) + "\n";
}

}  // namespace partloc::eval
