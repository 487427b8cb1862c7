#include "partloc/dataset/project.hpp"

#include <yaml-cpp/yaml.h>

#include <set>

#include "partloc/dataset/files.hpp"

namespace partloc::dataset {

namespace {

[[noreturn]] void fail(const std::string& origin, const std::string& message) {
  throw ProjectError(origin + ": " + message);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ProjectError("invalid project: " + message);
}

void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where,
                const std::string& origin) {
  if (!node.IsMap()) fail(origin, where + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) fail(origin, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& origin) {
  const auto v = node[key];
  if (!v) return;
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    fail(origin, std::string("cannot parse '") + key + "' (line " + std::to_string(v.Mark().line + 1) + ")");
  }
}

std::string num(double v) { return format_double(v); }

}  // namespace

void Project::validate() const {
  require(!name.empty(), "name must not be empty");
  require(!parts.empty(), "at least one body part is required");
  std::set<std::string> seen;
  for (const auto& p : parts) {
    require(!p.empty(), "body part names must not be empty");
    require(seen.insert(p).second, "duplicate body part '" + p + "'");
  }
  require(!scorer.empty(), "scorer must not be empty");
  require(!frames_dir.empty(), "frames_dir must not be empty");
  const auto& t = training;
  require(t.epsilon > 0.0, "training.epsilon must be positive");
  require(t.output_stride == 4 || t.output_stride == 8 || t.output_stride == 16,
          "training.output_stride must be 4, 8 or 16");
  require(t.input_rescale > 0.0, "training.input_rescale must be positive");
  require(t.scale_min > 0.0 && t.scale_min <= t.scale_max && t.scale_max < 10.0,
          "training.scale_range must satisfy 0 < min <= max < 10");
  require(t.total_steps > 0, "training.total_steps must be positive");
  require(t.snapshot_interval > 0, "training.snapshot_interval must be positive");
  require(t.momentum >= 0.0 && t.momentum < 1.0, "training.momentum must lie in [0, 1)");
  require(t.train_fraction > 0.0 && t.train_fraction < 1.0, "training.train_fraction must lie in (0, 1)");
  require(t.huber_delta > 0.0, "training.huber_delta must be positive");
  require(t.locref_weight >= 0.0 && t.aux_weight >= 0.0, "loss weights must be non-negative");
  try {
    backbone_config().validate();
    if (!t.schedule.empty()) engine::LearningRateSchedule s(t.schedule);
  } catch (const engine::ConfigError& e) {
    require(false, e.what());
  }
  const auto& i = inference;
  require(i.confidence_threshold > 0.0 && i.confidence_threshold < 1.0,
          "inference.confidence_threshold must lie in (0, 1)");
  require(i.discontinuity_px > 0.0, "inference.discontinuity_px must be positive");
  require(i.histogram_bin_px > 0.0, "inference.histogram_bin_px must be positive");
  for (const auto& [a, b] : skeleton) {
    require(seen.count(a) && seen.count(b), "skeleton edge " + a + "-" + b + " names an unknown body part");
  }
  for (const auto& [video, c] : crops) {
    require(c.width > 0 && c.height > 0, "crop region for '" + video + "' must have positive extent");
  }
  require(decoder.find("{input}") != std::string::npos && decoder.find("{outdir}") != std::string::npos,
          "extraction.decoder must contain {input} and {outdir}");
}

std::size_t Project::part_index(const std::string& part) const {
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i] == part) return i;
  }
  throw ProjectError("unknown body part '" + part + "'");
}

scoremap::PoseDecodeConfig Project::decode_config() const {
  scoremap::PoseDecodeConfig c;
  c.epsilon = training.epsilon;
  c.stride = training.output_stride;
  c.input_rescale = training.input_rescale;
  c.confidence_threshold = inference.confidence_threshold;
  c.nms_radius = inference.nms_radius;
  c.refinement = inference.refinement;
  if (!training.locref && c.refinement == scoremap::Refinement::locref) {
    c.refinement = scoremap::Refinement::parabolic;
  }
  return c;
}

model::BackboneConfig Project::backbone_config() const {
  auto c = model::BackboneConfig::from_preset(training.backbone);
  c.output_stride = training.output_stride;
  c.input_rescale = training.input_rescale;
  return c;
}

model::NetworkOptions Project::network_options(std::uint64_t net_seed) const {
  return {training.locref, training.intermediate_supervision, net_seed};
}

engine::LearningRateSchedule Project::schedule() const {
  if (training.schedule.empty()) return engine::LearningRateSchedule::standard(training.total_steps);
  return engine::LearningRateSchedule(training.schedule);
}

scoremap::LossWeights Project::loss_weights() const {
  return {1.0, training.locref ? training.locref_weight : 0.0,
          training.intermediate_supervision ? training.aux_weight : 0.0};
}

std::string project_to_yaml(const Project& p) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << p.name;
  out << YAML::Key << "seed" << YAML::Value << p.seed;
  out << YAML::Key << "scorer" << YAML::Value << p.scorer;
  out << YAML::Key << "frames_dir" << YAML::Value << p.frames_dir;
  out << YAML::Key << "bodyparts" << YAML::Value << YAML::Flow << p.parts;
  out << YAML::Key << "skeleton" << YAML::Value << YAML::BeginSeq;
  for (const auto& [a, b] : p.skeleton) out << YAML::Flow << std::vector<std::string>{a, b};
  out << YAML::EndSeq;
  out << YAML::Key << "crops" << YAML::Value << YAML::BeginMap;
  for (const auto& [video, c] : p.crops) {
    out << YAML::Key << video << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key << "x0"
        << YAML::Value << c.x0 << YAML::Key << "y0" << YAML::Value << c.y0 << YAML::Key << "width"
        << YAML::Value << c.width << YAML::Key << "height" << YAML::Value << c.height << YAML::EndMap;
  }
  out << YAML::EndMap;
  out << YAML::Key << "extraction" << YAML::Value << YAML::BeginMap << YAML::Key << "decoder"
      << YAML::Value << YAML::DoubleQuoted << p.decoder << YAML::EndMap;

  const auto& t = p.training;
  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "backbone" << YAML::Value << t.backbone;
  out << YAML::Key << "epsilon" << YAML::Value << num(t.epsilon);
  out << YAML::Key << "output_stride" << YAML::Value << t.output_stride;
  out << YAML::Key << "input_rescale" << YAML::Value << num(t.input_rescale);
  out << YAML::Key << "scale_range" << YAML::Value << YAML::Flow
      << std::vector<std::string>{num(t.scale_min), num(t.scale_max)};
  out << YAML::Key << "total_steps" << YAML::Value << t.total_steps;
  out << YAML::Key << "snapshot_interval" << YAML::Value << t.snapshot_interval;
  out << YAML::Key << "momentum" << YAML::Value << num(t.momentum);
  if (!t.schedule.empty()) {
    out << YAML::Key << "schedule" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : t.schedule) {
      out << YAML::Flow << YAML::BeginMap << YAML::Key << "until" << YAML::Value << s.until_step
          << YAML::Key << "rate" << YAML::Value << num(s.rate) << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  out << YAML::Key << "locref" << YAML::Value << t.locref;
  out << YAML::Key << "intermediate_supervision" << YAML::Value << t.intermediate_supervision;
  out << YAML::Key << "locref_weight" << YAML::Value << num(t.locref_weight);
  out << YAML::Key << "aux_weight" << YAML::Value << num(t.aux_weight);
  out << YAML::Key << "huber_delta" << YAML::Value << num(t.huber_delta);
  out << YAML::Key << "train_fraction" << YAML::Value << num(t.train_fraction);
  out << YAML::EndMap;

  const auto& i = p.inference;
  out << YAML::Key << "inference" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "confidence_threshold" << YAML::Value << num(i.confidence_threshold);
  out << YAML::Key << "nms_radius" << YAML::Value << num(i.nms_radius);
  out << YAML::Key << "refinement" << YAML::Value << scoremap::to_string(i.refinement);
  out << YAML::Key << "discontinuity_px" << YAML::Value << num(i.discontinuity_px);
  out << YAML::Key << "histogram_bin_px" << YAML::Value << num(i.histogram_bin_px);
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

Project project_from_yaml(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    fail(origin, std::string("YAML syntax error: ") + e.what());
  }
  check_keys(root, {"name", "seed", "scorer", "frames_dir", "bodyparts", "skeleton", "crops", "extraction",
                    "training", "inference"},
             "the top level", origin);
  Project p;
  read(root, "name", p.name, origin);
  read(root, "seed", p.seed, origin);
  read(root, "scorer", p.scorer, origin);
  read(root, "frames_dir", p.frames_dir, origin);
  read(root, "bodyparts", p.parts, origin);
  if (const auto sk = root["skeleton"]) {
    if (!sk.IsSequence()) fail(origin, "skeleton must be a list of [part, part] pairs");
    for (const auto& edge : sk) {
      if (!edge.IsSequence() || edge.size() != 2) fail(origin, "skeleton edges must be [part, part] pairs");
      p.skeleton.emplace_back(edge[0].as<std::string>(), edge[1].as<std::string>());
    }
  }
  if (const auto crops = root["crops"]; crops && !crops.IsNull()) {
    if (!crops.IsMap()) fail(origin, "crops must map video names to regions");
    for (const auto& kv : crops) {
      const auto video = kv.first.as<std::string>();
      check_keys(kv.second, {"x0", "y0", "width", "height"}, "crops." + video, origin);
      CropRegion c;
      read(kv.second, "x0", c.x0, origin);
      read(kv.second, "y0", c.y0, origin);
      read(kv.second, "width", c.width, origin);
      read(kv.second, "height", c.height, origin);
      p.crops[video] = c;
    }
  }
  if (const auto ex = root["extraction"]) {
    check_keys(ex, {"decoder"}, "extraction", origin);
    read(ex, "decoder", p.decoder, origin);
  }
  if (const auto tn = root["training"]) {
    check_keys(tn, {"backbone", "epsilon", "output_stride", "input_rescale", "scale_range", "total_steps",
                    "snapshot_interval", "momentum", "schedule", "locref", "intermediate_supervision",
                    "locref_weight", "aux_weight", "huber_delta", "train_fraction"},
               "training", origin);
    auto& t = p.training;
    read(tn, "backbone", t.backbone, origin);
    read(tn, "epsilon", t.epsilon, origin);
    read(tn, "output_stride", t.output_stride, origin);
    read(tn, "input_rescale", t.input_rescale, origin);
    if (const auto sr = tn["scale_range"]) {
      if (!sr.IsSequence() || sr.size() != 2) fail(origin, "training.scale_range must be [min, max]");
      t.scale_min = sr[0].as<double>();
      t.scale_max = sr[1].as<double>();
    }
    read(tn, "total_steps", t.total_steps, origin);
    read(tn, "snapshot_interval", t.snapshot_interval, origin);
    read(tn, "momentum", t.momentum, origin);
    if (const auto sc = tn["schedule"]) {
      if (!sc.IsSequence()) fail(origin, "training.schedule must be a list of {until, rate}");
      for (const auto& s : sc) {
        check_keys(s, {"until", "rate"}, "training.schedule entry", origin);
        t.schedule.push_back({s["until"].as<std::int64_t>(), s["rate"].as<double>()});
      }
    }
    read(tn, "locref", t.locref, origin);
    read(tn, "intermediate_supervision", t.intermediate_supervision, origin);
    read(tn, "locref_weight", t.locref_weight, origin);
    read(tn, "aux_weight", t.aux_weight, origin);
    read(tn, "huber_delta", t.huber_delta, origin);
    read(tn, "train_fraction", t.train_fraction, origin);
  }
  if (const auto in = root["inference"]) {
    check_keys(in, {"confidence_threshold", "nms_radius", "refinement", "discontinuity_px", "histogram_bin_px"},
               "inference", origin);
    auto& i = p.inference;
    read(in, "confidence_threshold", i.confidence_threshold, origin);
    read(in, "nms_radius", i.nms_radius, origin);
    std::string refinement = scoremap::to_string(i.refinement);
    read(in, "refinement", refinement, origin);
    try {
      i.refinement = scoremap::parse_refinement(refinement);
    } catch (const engine::ConfigError& e) {
      fail(origin, e.what());
    }
    read(in, "discontinuity_px", i.discontinuity_px, origin);
    read(in, "histogram_bin_px", i.histogram_bin_px, origin);
  }
  try {
    p.validate();
  } catch (const ProjectError& e) {
    fail(origin, e.what());
  }
  return p;
}

Project load_project(const std::filesystem::path& dir) {
  const auto path = dir / kProjectFile;
  if (!std::filesystem::exists(path)) {
    throw ProjectError("no project at " + dir.string() + " (missing " + kProjectFile + ")");
  }
  Project p = project_from_yaml(read_text_file(path), path.string());
  p.root = dir;
  return p;
}

void save_project(const Project& project) {
  project.validate();
  write_file_durably(project.config_path(), project_to_yaml(project));
}

Project init_project(const std::filesystem::path& dir, const std::string& name,
                     const std::vector<std::string>& parts, const std::string& scorer, std::uint64_t seed) {
  if (std::filesystem::exists(dir / kProjectFile)) {
    throw ProjectError("a project already exists at " + dir.string());
  }
  Project p;
  p.name = name;
  p.parts = parts;
  p.scorer = scorer;
  p.seed = seed;
  p.root = dir;
  p.validate();
  std::filesystem::create_directories(p.frames_path());
  std::filesystem::create_directories(p.labels_path());
  save_project(p);
  return p;
}

}  // namespace partloc::dataset
