#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "partloc/cli/cli.hpp"
#include "partloc/dataset/files.hpp"
#include "partloc/dataset/project.hpp"
#include "partloc/training/trainer.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace partloc;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

std::string install_fake_decoder(const fs::path& dir) {
  const auto script = dir / "fake-decoder.sh";
  std::ofstream(script) << "#!/bin/sh\nset -e\ni=1\nfor f in \"$1\"/*.png; do\n"
                           "  cp \"$f\" \"$2/$(printf %06d $i).png\"\n  i=$((i+1))\ndone\n";
  fs::permissions(script, fs::perms::owner_all);
  return script.string() + " {input} {outdir}";
}

// Text output with the throughput line removed (it measures wall time).
std::string without_timing(const std::string& s) {
  std::istringstream in(s);
  std::string line, out;
  while (std::getline(in, line)) {
    if (!contains(line, "frames/s")) out += line + "\n";
  }
  return out;
}

std::string workflow(const fs::path& dir, const synth::World& world) {
  synth::make_project(dir, world, {.frames = 10});
  synth::SequenceOptions so;
  so.frames = 8;
  so.teleport_at = 5;
  so.occlude_at = 2;
  synth::write_frames(dir, "videos/clip", synth::sequence(world, so, 3));
  const auto p = dir.string();
  std::string log;
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"dataset-create", p, "--train-fraction", "0.7", "--split-seed", "11"},
           {"train", p, "--steps", "60", "--snapshot-interval", "25", "--seed", "5"},
           {"evaluate", p},
           {"analyze", p, "--frames", "videos/clip"},
           {"refine", p},
           {"render", p, "--montage"}}) {
    const auto r = invoke(args);
    REQUIRE_MESSAGE(r.code == 0, args.front() << ": " << r.err);
    log += without_timing(r.out);
  }
  return log;
}

}  // namespace

TEST_CASE("every option is documented in its help text") {
  const auto subs = cli::subcommands();
  CHECK(subs == std::vector<std::string>{"project-init", "frames-extract", "labels-check", "dataset-create", "train",
                                         "evaluate", "sweep", "analyze", "refine", "render", "serve"});
  for (const auto& sub : subs) {
    const auto help = invoke({sub, "--help"});
    REQUIRE(help.code == 0);
    const auto docs = cli::option_docs(sub);
    CHECK(docs.size() >= 2);
    for (const auto& d : docs) {
      CAPTURE(sub);
      CAPTURE(d.name);
      CHECK_FALSE(d.description.empty());
      CHECK(contains(help.out, d.description));
    }
  }
  const auto top = invoke({"--help"});
  CHECK(top.code == 0);
  for (const auto& sub : subs) CHECK(contains(top.out, sub));
}

TEST_CASE("failures map to distinct exit codes with a uniform error line") {
  testing::TempDir dir;
  std::set<int> codes{cli::kOk};

  auto expect = [&](const Result& r, int code) {
    CAPTURE(r.err);
    CHECK(r.code == code);
    CHECK(r.err.rfind("error code=" + cli::exit_code_name(code) + " exit=" + std::to_string(code) + ": ", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') >= 1);
    codes.insert(r.code);
  };

  expect(invoke({"train", (dir.path() / "p").string(), "--bogus"}), cli::kUsage);
  expect(invoke({}), cli::kUsage);
  expect(invoke({"train", (dir.path() / "nowhere").string()}), cli::kMissingProject);

  const auto p = (dir.path() / "p").string();
  REQUIRE(invoke({"project-init", p, "--parts", "head,tail", "--seed", "4"}).code == 0);
  expect(invoke({"train", p}), cli::kPrecondition);
  expect(invoke({"analyze", p, "--frames", "frames"}), cli::kPrecondition);
  expect(invoke({"refine", p}), cli::kPrecondition);
  expect(invoke({"dataset-create", p}), cli::kPrecondition);

  auto project = dataset::load_project(p);
  project.decoder = "no-such-decoder-zzz {input} {outdir}";
  dataset::save_project(project);
  expect(invoke({"frames-extract", p, "--video", (dir.path() / "missing.mp4").string()}), cli::kUsage);
  std::ofstream(dir.path() / "v.mp4") << "x";
  expect(invoke({"frames-extract", p, "--video", (dir.path() / "v.mp4").string()}), cli::kEnvironment);

  std::ofstream(fs::path(p) / dataset::kProjectFile, std::ios::app) << "parts: [unterminated\n";
  expect(invoke({"labels-check", p}), cli::kInvalidData);

  CHECK(codes.size() == 6);
  const std::set<std::string> names{cli::exit_code_name(0), cli::exit_code_name(2), cli::exit_code_name(3),
                                    cli::exit_code_name(4), cli::exit_code_name(5), cli::exit_code_name(6),
                                    cli::exit_code_name(7)};
  CHECK(names.size() == 7);
}

TEST_CASE("project-init then labels-check on a project without labels") {
  testing::TempDir dir;
  const auto p = (dir.path() / "mouse").string();
  const auto init = invoke({"project-init", p, "--parts", "snout,ear,tailbase", "--scorer", "kim", "--seed", "9"});
  REQUIRE(init.code == 0);
  CHECK(contains(init.out, "seed=9"));
  const auto project = dataset::load_project(p);
  CHECK(project.name == "mouse");
  CHECK(project.parts == std::vector<std::string>{"snout", "ear", "tailbase"});
  CHECK(project.scorer == "kim");
  CHECK(project.seed == 9);

  const auto check = invoke({"labels-check", p});
  CHECK(check.code == 0);
  CHECK(contains(check.out, "0 labeled frames, 0 overlays written"));
  CHECK(check.err.empty());

  CHECK(invoke({"project-init", p, "--parts", "a"}).code != 0);
}

TEST_CASE("frames-extract echoes the seed and writes the selection") {
  testing::TempDir dir;
  const auto p = dir.path() / "p";
  REQUIRE(invoke({"project-init", p.string(), "--parts", "a", "--seed", "21"}).code == 0);
  auto project = dataset::load_project(p);
  project.decoder = install_fake_decoder(dir.path());
  dataset::save_project(project);
  synth::World world({.width = 32, .height = 32});
  std::vector<synth::Frame> frames;
  for (std::uint64_t i = 0; i < 12; ++i) frames.push_back(world.frame(i));
  synth::write_frames(dir.path(), "video", frames);

  const auto r = invoke({"frames-extract", p.string(), "--video", (dir.path() / "video").string(), "--count", "4",
                      "--strategy", "kmeans", "--sequence", "clip"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(contains(r.out, "seed=21 strategy=kmeans count=4"));
  CHECK(contains(r.out, "extracted 4 of 12 frames"));
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(project.frames_path() / "clip")) n += e.path().extension() == ".png";
  CHECK(n == 4);
  CHECK(invoke({"frames-extract", p.string(), "--video", "x", "--strategy", "random"}).code == cli::kUsage);
}

TEST_CASE("full workflow: snapshots at the interval, reports, refusal on split mismatch, reproducible output") {
  synth::World world({.width = 48, .height = 48, .radius = 3.0, .limb = 8.0});
  testing::TempDir a, b;
  const auto log = workflow(a.path(), world);
  const auto p = a.path().string();

  std::vector<std::int64_t> steps;
  for (const auto& s : training::list_snapshots(a.path() / "training" / "run")) steps.push_back(s.step);
  CHECK(steps == std::vector<std::int64_t>{25, 50, 60});
  CHECK(contains(log, "split_seed=11 train_fraction=0.7"));
  CHECK(contains(log, "seed=5 split_seed=11 train_frames=7"));
  CHECK(contains(log, "snapshot step=25"));
  CHECK(contains(log, "trained 60 steps"));
  const auto curve = slurp(a.path() / "evaluation" / "learning_curve.csv");
  CHECK(curve.rfind("step,train_rmse,test_rmse,loss\n", 0) == 0);
  CHECK(std::count(curve.begin(), curve.end(), '\n') == 4);
  CHECK(fs::exists(a.path() / "evaluation" / "per_image_errors.csv"));
  CHECK(fs::exists(a.path() / "evaluation" / "evaluation.json"));
  CHECK(fs::exists(a.path() / "analysis" / "clip.csv"));
  CHECK(fs::exists(a.path() / "analysis" / "clip_refine.csv"));
  CHECK(fs::exists(a.path() / "analysis" / "clip_continuity.csv"));
  CHECK(fs::exists(a.path() / "renders" / "clip" / "montage.png"));
  CHECK(contains(log, "rendered 8 frames"));

  SUBCASE("evaluate refuses a different split seed and names both") {
    const auto r = invoke({"evaluate", p, "--split-seed", "12"});
    CHECK(r.code == cli::kPrecondition);
    CHECK(contains(r.err, "split_seed=11"));
    CHECK(contains(r.err, "--split-seed=12"));
    CHECK(invoke({"evaluate", p, "--split-seed", "11", "--snapshots", "latest"}).code == 0);
  }
  SUBCASE("evaluate refuses a dataset recreated with another seed") {
    REQUIRE(invoke({"dataset-create", p, "--train-fraction", "0.7", "--split-seed", "13"}).code == 0);
    const auto r = invoke({"evaluate", p});
    CHECK(r.code == cli::kPrecondition);
    CHECK(contains(r.err, "split_seed=11"));
    CHECK(contains(r.err, "split_seed=13"));
  }
  SUBCASE("human variability against a second scorer") {
    synth::make_project(b.path(), world, {.frames = 10, .scorer = "bob"});
    fs::copy_file(b.path() / "labels" / "CollectedData_bob.csv", a.path() / "labels" / "CollectedData_bob.csv");
    const auto r = invoke({"evaluate", p, "--human", "bob"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(contains(r.out, "human variability alice vs bob: 0 px"));
    CHECK(fs::exists(a.path() / "evaluation" / "variability.json"));
  }
  SUBCASE("every text output is identical on a rerun") {
    CHECK(workflow(b.path(), world) == log);
    for (const auto* f : {"evaluation/learning_curve.csv", "evaluation/per_image_errors.csv",
                          "evaluation/evaluation.json", "analysis/clip.csv", "analysis/clip_refine.csv",
                          "analysis/clip_continuity.csv", "training/run/loss_log.csv"}) {
      CAPTURE(f);
      CHECK(slurp(a.path() / f) == slurp(b.path() / f));
    }
    CHECK(slurp(a.path() / "training/run" / training::snapshot_name(60)) ==
          slurp(b.path() / "training/run" / training::snapshot_name(60)));
  }
}
