#include "partloc/training/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <regex>

#include "partloc/dataset/files.hpp"
#include "partloc/model/weights_io.hpp"
#include "partloc/scoremap/scoremap.hpp"

namespace partloc::training {

std::string snapshot_name(std::int64_t step) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "snapshot-%08lld.plw", static_cast<long long>(step));
  return buf;
}

std::vector<SnapshotRecord> list_snapshots(const std::filesystem::path& dir) {
  std::vector<SnapshotRecord> out;
  if (!std::filesystem::is_directory(dir)) return out;
  static const std::regex pattern(R"(snapshot-(\d{8,})\.plw)");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, m, pattern)) {
      out.push_back({std::stoll(m[1].str()), e.path()});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  return out;
}

std::optional<SnapshotRecord> latest_snapshot(const std::filesystem::path& dir) {
  auto all = list_snapshots(dir);
  if (all.empty()) return std::nullopt;
  return all.back();
}

namespace {

std::string loss_log_csv(const std::vector<LossLogRow>& rows) {
  std::string out = "step,loss,learning_rate\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + dataset::format_double(r.mean_loss) + "," +
           dataset::format_double(r.learning_rate) + "\n";
  }
  return out;
}

}  // namespace

TrainResult train_network(model::PartDetectorNetwork<float>& net, dataset::TrainingIterator& samples,
                          const TrainOptions& options) {
  if (options.total_steps <= 0) throw TrainingError("total steps must be positive");
  if (options.snapshot_interval <= 0) throw TrainingError("snapshot interval must be positive");
  engine::SgdOptimizer<float> optimizer(options.schedule, options.momentum);
  const auto params = net.parameters();
  TrainResult result;
  double window_sum = 0.0;
  std::int64_t window_count = 0;
  const bool files = !options.snapshot_dir.empty();
  if (files) std::filesystem::create_directories(options.snapshot_dir);

  auto snapshot = [&](std::int64_t step) {
    if (!files) return;
    if (options.on_snapshot_begin) options.on_snapshot_begin(step);
    SnapshotRecord rec{step, options.snapshot_dir / snapshot_name(step)};
    model::save_weights(net, rec.path);
    dataset::write_file_durably(options.snapshot_dir / "loss_log.csv", loss_log_csv(result.loss_log));
    result.snapshots.push_back(rec);
    if (options.on_snapshot) options.on_snapshot(rec);
  };

  for (std::int64_t step = 0; step < options.total_steps; ++step) {
    const auto sample = samples.next();
    engine::Tape<float> tape;
    net.watch_parameters(tape);
    model::PoseOutput<float> out;
    try {
      out = net.forward_pose(&tape, sample.image);
    } catch (const engine::NumericError& e) {
      throw TrainingError("training diverged at step " + std::to_string(step + 1) + ": " + e.what());
    }
    const auto loss = scoremap::compute_total_loss(&tape, out, sample.targets, options.weights, options.huber_delta);
    if (!loss) throw TrainingError("training frame '" + samples.frame(sample.frame).id + "' has no labeled part");
    const double value = (*loss)->tensor[0];
    if (!std::isfinite(value)) {
      throw TrainingError("loss became non-finite at step " + std::to_string(step + 1));
    }
    const double rate = options.schedule.rate_at(optimizer.global_step());
    tape.backward(*loss);
    optimizer.step(params);
    const std::int64_t done = step + 1;
    result.steps = done;
    result.final_loss = value;
    window_sum += value;
    ++window_count;
    if (window_count == options.log_interval || done == options.total_steps) {
      result.loss_log.push_back({done, window_sum / static_cast<double>(window_count), rate});
      window_sum = 0.0;
      window_count = 0;
    }
    if (options.on_progress) options.on_progress({done, value, rate});
    const bool cancelled = options.cancel && options.cancel->load();
    if (cancelled && window_count > 0) {
      result.loss_log.push_back({done, window_sum / static_cast<double>(window_count), rate});
      window_count = 0;
    }
    if (done % options.snapshot_interval == 0 || done == options.total_steps || cancelled) snapshot(done);
    if (cancelled) {
      result.cancelled = true;
      break;
    }
  }
  return result;
}

std::filesystem::path default_run_dir(const dataset::Project& project) { return project.training_path() / "run"; }

void write_run_metadata(const std::filesystem::path& dir, const RunMetadata& m) {
  nlohmann::ordered_json j;
  j["scorer"] = m.scorer;
  j["split_seed"] = m.split.seed;
  j["train_fraction"] = m.split.train_fraction;
  j["seed"] = m.seed;
  j["steps"] = m.steps;
  j["snapshot_interval"] = m.snapshot_interval;
  j["parts"] = m.parts;
  j["backbone"] = m.backbone;
  j["epsilon"] = m.epsilon;
  j["train_frames"] = m.train_frames;
  dataset::write_file_durably(dir / "run.json", j.dump(2) + "\n");
}

RunMetadata read_run_metadata(const std::filesystem::path& dir) {
  const auto path = dir / "run.json";
  if (!std::filesystem::exists(path)) {
    throw TrainingError("no training run at " + dir.string() + "; run train first");
  }
  try {
    const auto j = nlohmann::json::parse(dataset::read_text_file(path));
    RunMetadata m;
    m.scorer = j.at("scorer").get<std::string>();
    m.split.seed = j.at("split_seed").get<std::uint64_t>();
    m.split.train_fraction = j.at("train_fraction").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.steps = j.at("steps").get<std::int64_t>();
    m.snapshot_interval = j.at("snapshot_interval").get<std::int64_t>();
    m.parts = j.at("parts").get<std::vector<std::string>>();
    m.backbone = j.at("backbone").get<std::string>();
    m.epsilon = j.at("epsilon").get<double>();
    m.train_frames = j.at("train_frames").get<std::size_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw TrainingError(path.string() + ": " + e.what());
  }
}

model::PartDetectorNetwork<float> build_project_network(const dataset::Project& project, std::uint64_t seed) {
  return model::PartDetectorNetwork<float>(project.backbone_config(), project.parts, project.network_options(seed));
}

TrainResult train_project(const dataset::ProjectData& data, const dataset::TrainingDataset& ds, const RunSpec& spec,
                          TrainOptions hooks) {
  const auto& project = data.project;
  const auto& labels = data.scorer_labels(ds.scorer);
  auto frames = dataset::frames_by_image(project, labels, ds.train_images());
  if (frames.empty()) throw dataset::ProjectError("the train split has no labeled frame");

  auto net = build_project_network(project, spec.seed);
  if (spec.init_weights) model::load_weights(net, *spec.init_weights, spec.init_mode);

  const std::int64_t steps = spec.steps > 0 ? spec.steps : project.training.total_steps;
  const std::int64_t interval = spec.snapshot_interval > 0 ? spec.snapshot_interval : project.training.snapshot_interval;
  const auto dir = spec.output_dir.empty() ? default_run_dir(project) : spec.output_dir;
  std::filesystem::create_directories(dir);
  for (const auto& old : list_snapshots(dir)) std::filesystem::remove(old.path);

  RunMetadata meta{ds.scorer, ds.spec, spec.seed, steps, interval, project.parts, project.training.backbone,
                   project.training.epsilon, frames.size()};
  write_run_metadata(dir, meta);

  dataset::TrainingIterator samples(std::move(frames), dataset::iterator_config(project, net.minimum_extent()),
                                    mix_seed(spec.seed, 0x5a3b1e));
  hooks.total_steps = steps;
  hooks.snapshot_interval = interval;
  hooks.schedule = project.training.schedule.empty() ? engine::LearningRateSchedule::standard(steps)
                                                     : engine::LearningRateSchedule(project.training.schedule);
  hooks.momentum = project.training.momentum;
  hooks.weights = project.loss_weights();
  hooks.huber_delta = project.training.huber_delta;
  hooks.snapshot_dir = dir;
  return train_network(net, samples, hooks);
}

}  // namespace partloc::training
