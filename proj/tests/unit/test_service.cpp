#include <doctest.h>
#include <httplib.h>

#include <chrono>
#include <thread>

#include "partloc/dataset/files.hpp"
#include "partloc/dataset/image.hpp"
#include "partloc/dataset/labels.hpp"
#include "partloc/inference/analysis.hpp"
#include "partloc/service/service.hpp"
#include "partloc/training/trainer.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace partloc;
using namespace partloc::service;
namespace fs = std::filesystem;

namespace {

struct Server {
  testing::TempDir dir;
  synth::World world{{.width = 64, .height = 64}};
  std::unique_ptr<ProjectService> service;
  std::unique_ptr<HttpServer> http;
  int port = 0;

  Server() {
    service = std::make_unique<ProjectService>(dir.path());
    http = std::make_unique<HttpServer>(*service);
    port = http->start("127.0.0.1", 0);
  }
  ~Server() {
    http->stop();
    http.reset();
    service.reset();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(120, 0);
    return c;
  }
  Json get(const std::string& path, int expect = 200) const {
    auto c = client();
    auto r = c.Get(path);
    REQUIRE(r);
    INFO(path << " -> " << r->body);
    CHECK(r->status == expect);
    return Json::parse(r->body);
  }
  Json send(const std::string& method, const std::string& path, const Json& body, int expect = 200) const {
    auto c = client();
    auto r = method == "PUT" ? c.Put(path, body.dump(), "application/json")
                             : c.Post(path, body.dump(), "application/json");
    REQUIRE(r);
    INFO(method << " " << path << " -> " << r->body);
    CHECK(r->status == expect);
    return Json::parse(r->body);
  }

  /// A labeled synthetic project plus an unlabeled sequence under videos/seq.
  dataset::Project project(const std::string& name, std::size_t frames = 8) const {
    auto p = synth::make_project(dir.path() / name, world, {.frames = frames});
    std::vector<synth::Frame> seq;
    for (int i = 0; i < 6; ++i) seq.push_back(world.frame(100 + i));
    synth::write_frames(dir.path() / name, "videos/seq", seq);
    return p;
  }
};

Json point(double x, double y) { return {{"x", x}, {"y", y}}; }

}  // namespace

TEST_CASE("project endpoints") {
  Server s;
  CHECK(s.get("/api/projects").empty());
  const auto made = s.send("POST", "/api/projects", {{"name", "mouse"}, {"parts", {"snout", "tail"}}, {"seed", 4}}, 201);
  CHECK(made["parts"] == Json({"snout", "tail"}));
  s.send("POST", "/api/projects", {{"name", "mouse"}, {"parts", {"snout"}}}, 409);
  s.send("POST", "/api/projects", {{"name", "../evil"}, {"parts", {"snout"}}}, 400);
  s.send("POST", "/api/projects", {{"name", "fly"}}, 400);
  const auto list = s.get("/api/projects");
  REQUIRE(list.size() == 1);
  CHECK(list[0]["name"] == "mouse");
  CHECK(list[0]["seed"] == 4);
  CHECK(s.get("/api/projects/nope/frames", 404)["code"] == "not_found");
  CHECK(s.get("/api/nothing", 404)["code"] == "not_found");

  auto c = s.client();
  auto bad = c.Post("/api/projects", "{not json", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
}

TEST_CASE("frames and images") {
  Server s;
  s.project("p", 3);
  const auto frames = s.get("/api/projects/p/frames");
  REQUIRE(frames.size() == 3);
  CHECK(frames[0]["id"] == "p/labeled-data/vid/img0000.png");
  CHECK(frames[0]["labeled"] == true);
  CHECK(frames[0]["width"] == 64);

  auto c = s.client();
  auto img = c.Get("/api/frames/p/labeled-data/vid/img0001.png/image");
  REQUIRE(img);
  CHECK(img->status == 200);
  CHECK(img->get_header_value("Content-Type") == "image/png");
  CHECK(img->body == dataset::read_text_file(s.dir.path() / "p/labeled-data/vid/img0001.png"));

  auto prev = c.Get("/api/frames/p/labeled-data/vid/img0001.png/image?preview=32");
  REQUIRE(prev);
  const std::vector<std::uint8_t> bytes(prev->body.begin(), prev->body.end());
  dataset::write_file_durably(s.dir.path() / "preview.png", std::span<const std::uint8_t>(bytes));
  const auto size = dataset::read_png_size(s.dir.path() / "preview.png");
  CHECK(size.width == 32);
  CHECK(size.height == 32);

  CHECK(s.get("/api/frames/p/labeled-data/vid/missing.png/image", 404)["code"] == "not_found");
  CHECK(s.get("/api/frames/p/../p/labeled-data/vid/img0001.png/labels", 400)["code"] == "bad_request");
}

TEST_CASE("label persistence") {
  Server s;
  const auto p = s.project("p", 3);
  const std::string f = "/api/frames/p/labeled-data/vid/img0002.png/labels";

  SUBCASE("write then read gives identical coordinates in the label file") {
    const auto put = s.send("PUT", f, {{"parts", {{"head", point(10.125, 20.5)}, {"tail", nullptr}}}});
    CHECK(put["parts"]["head"] == point(10.125, 20.5));
    const auto got = s.get(f);
    CHECK(got["parts"]["head"] == point(10.125, 20.5));
    CHECK(got["parts"]["tail"].is_null());
    CHECK(got["parts"]["body"] == put["parts"]["body"]);
    const auto set = dataset::read_label_file(p.label_file("alice"), p.parts);
    const auto* frame = set.find("labeled-data/vid/img0002.png");
    REQUIRE(frame);
    CHECK(*frame->labels[0] == scoremap::Point{10.125, 20.5});
    CHECK_FALSE(frame->labels[2].has_value());
  }
  SUBCASE("second write wins and the audit log keeps the first") {
    s.send("PUT", f, {{"parts", {{"body", point(1, 2)}}}});
    s.send("PUT", f, {{"parts", {{"body", point(3, 4)}}}});
    CHECK(s.get(f)["parts"]["body"] == point(3, 4));
    std::istringstream log(dataset::read_text_file(s.service->audit_log_path("p")));
    std::vector<Json> lines;
    for (std::string line; std::getline(log, line);) lines.push_back(Json::parse(line));
    REQUIRE(lines.size() == 2);
    CHECK(lines[1]["previous"] == point(1, 2));
    CHECK(lines[1]["value"] == point(3, 4));
    CHECK(lines[1]["part"] == "body");
    CHECK(lines[1]["scorer"] == "alice");
  }
  SUBCASE("out-of-bounds coordinate is rejected with the bounds") {
    const auto err = s.send("PUT", f, {{"parts", {{"head", point(64, 3)}}}}, 400);
    CHECK(err["error"].get<std::string>().find("[0, 64) x [0, 64)") != std::string::npos);
    s.send("PUT", f, {{"parts", {{"head", point(-0.5, 3)}}}}, 400);
    s.send("PUT", f, {{"parts", {{"paw", point(1, 1)}}}}, 400);
    s.send("PUT", f, {{"parts", {{"head", "here"}}}}, 400);
    s.send("PUT", f, {{"labels", {}}}, 400);
  }
  SUBCASE("new scorer gets its own file") {
    s.send("PUT", f, {{"scorer", "bob"}, {"parts", {{"head", point(5, 5)}}}});
    CHECK(s.get(f + "?scorer=bob")["parts"]["head"] == point(5, 5));
    CHECK(fs::exists(p.label_file("bob")));
    CHECK(dataset::load_project_and_labels(p.root).labels.count("bob") == 1);
  }
  SUBCASE("concurrent writes to different frames all persist") {
    synth::World w{{.width = 64, .height = 64}};
    std::vector<synth::Frame> more;
    for (int i = 0; i < 16; ++i) more.push_back(w.frame(50 + i));
    const auto rel = synth::write_frames(p.root, "labeled-data/extra", more);
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (std::size_t i = 0; i < rel.size(); ++i) {
      threads.emplace_back([&, i] {
        auto c = s.client();
        const Json body{{"parts", {{"head", point(1.0 + i, 2.0)}}}};
        auto r = c.Put("/api/frames/p/" + rel[i] + "/labels", body.dump(), "application/json");
        if (r && r->status == 200) ++ok;
      });
    }
    for (auto& t : threads) t.join();
    CHECK(ok == 16);
    const auto set = dataset::read_label_file(p.label_file("alice"), p.parts);
    CHECK(set.frames.size() == 3 + 16);
    for (std::size_t i = 0; i < rel.size(); ++i) {
      const auto* frame = set.find(rel[i]);
      REQUIRE(frame);
      CHECK(frame->labels[0]->x == 1.0 + static_cast<double>(i));
    }
  }
}

TEST_CASE("training job lifecycle") {
  Server s;
  s.send("POST", "/api/projects", {{"name", "empty"}, {"parts", {"a"}}}, 201);
  CHECK(s.send("POST", "/api/projects/empty/train", {{"steps", 10}}, 412)["code"] == "precondition_failed");

  s.project("p", 8);
  const auto started = s.send("POST", "/api/projects/p/train", {{"steps", 400}, {"snapshot_interval", 100}}, 202);
  const auto id = started["id"].get<std::string>();
  CHECK(s.send("POST", "/api/projects/p/train", {{"steps", 10}}, 409)["code"] == "conflict");

  std::vector<std::int64_t> steps;
  int last_rank = 0;
  for (;;) {
    const auto j = s.get("/api/train/" + id);
    const auto status = j["status"].get<std::string>();
    const int rank = status == "queued" ? 0 : (status == "running" || status == "snapshotting") ? 1 : 2;
    CHECK(rank >= last_rank);
    last_rank = rank;
    if (rank == 2) break;
    if (rank == 1) steps.push_back(j["step"].get<std::int64_t>());
    std::this_thread::sleep_for(std::chrono::milliseconds(60));
  }
  REQUIRE(steps.size() >= 3);
  for (std::size_t i = 1; i < steps.size(); ++i) CHECK(steps[i] > steps[i - 1]);
  const auto done = s.get("/api/train/" + id);
  CHECK(done["status"] == "done");
  CHECK(done["step"] == 400);
  CHECK(done["snapshot"].get<std::string>().find("snapshot-00000400.plw") != std::string::npos);
  CHECK(s.get("/api/train/job-999", 404)["code"] == "not_found");

  SUBCASE("cancel writes a final snapshot that inference can use") {
    const auto again = s.send("POST", "/api/projects/p/train", {{"steps", 100000}, {"snapshot_interval", 50000}}, 202);
    const auto jid = again["id"].get<std::string>();
    while (s.get("/api/train/" + jid)["step"].get<std::int64_t>() < 5) {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    CHECK(s.send("POST", "/api/train/" + jid + "/cancel", Json::object())["cancel_requested"] == true);
    const auto j = s.service->wait_job(jid);
    CHECK(j.status == JobStatus::done);
    CHECK(j.cancelled);
    CHECK(j.step < 100000);
    CHECK(fs::path(j.snapshot).filename() == training::snapshot_name(j.step));
    const auto a = s.send("POST", "/api/projects/p/analyze", {{"frames", "videos/seq"}});
    CHECK(a["frames"] == 6);
    CHECK(a["snapshot"] == fs::path(j.snapshot).filename().string());
    // A finished job no longer blocks a new one.
    const auto third = s.send("POST", "/api/projects/p/train", {{"steps", 2}, {"snapshot_interval", 2}}, 202);
    CHECK(s.service->wait_job(third["id"].get<std::string>()).status == JobStatus::done);
  }
}

TEST_CASE("refinement endpoints") {
  Server s;
  const auto p = s.project("p", 8);
  CHECK(s.get("/api/projects/p/refine-queue", 412)["error"].get<std::string>().find("run analyze first") !=
        std::string::npos);
  CHECK(s.send("POST", "/api/projects/p/analyze", {{"frames", "videos/seq"}}, 412)["error"].get<std::string>().find(
            "run train first") != std::string::npos);
  s.send("POST", "/api/projects/p/analyze", {{"frames", "../x"}}, 400);

  SUBCASE("empty queue is an empty list") {
    inference::SequenceAnalysis a;
    a.sequence = "calm";
    a.trajectory.parts = p.parts;
    for (std::size_t r = 0; r < 4; ++r) {
      a.trajectory.rows.push_back({r, {inference::Detection{10, 10, 0.9}, inference::Detection{20, 10, 0.9},
                                       inference::Detection{30, 10, 0.9}}});
      a.frame_files.push_back("videos/seq/img000" + std::to_string(r) + ".png");
      a.peaks.push_back({0.9, 0.9, 0.9});
    }
    inference::save_analysis(p.analysis_path(), a);
    const auto q = s.get("/api/projects/p/refine-queue?sequence=calm");
    CHECK(q["entries"].empty());
  }

  SUBCASE("queue, reject, accept and the next training split") {
    s.service->wait_job(s.send("POST", "/api/projects/p/train", {{"steps", 3}, {"snapshot_interval", 3}}, 202)["id"].get<std::string>());
    const auto a = s.send("POST", "/api/projects/p/analyze", {{"frames", "videos/seq"}});
    CHECK(a["sequence"] == "seq");
    const auto q = s.get("/api/projects/p/refine-queue");
    // A barely trained head keeps every peak below threshold.
    REQUIRE(q["entries"].size() == 6);
    const auto first = q["entries"][0];
    CHECK(first["reason"] == "low-confidence");
    CHECK(first["predictions"]["head"]["confidence"].is_number());
    CHECK(s.get("/api/projects/p/refine-queue?limit=2")["entries"].size() == 2);

    const auto frame = first["frame"].get<std::string>();
    const auto labels_before = dataset::read_text_file(p.label_file("alice"));
    CHECK(s.send("POST", "/api/frames/" + frame + "/accept-prediction", {{"decision", "reject"}})["status"] ==
          "rejected");
    CHECK(dataset::read_text_file(p.label_file("alice")) == labels_before);
    CHECK(dataset::read_refined_frames(p, "alice").empty());

    const auto accepted = s.send("POST", "/api/frames/" + frame + "/accept-prediction",
                                 {{"decision", "accept"}, {"parts", {{"head", point(12, 13)}}}});
    CHECK(accepted["status"] == "accepted");
    const auto stored = accepted["frame"].get<std::string>();
    CHECK(stored.rfind("p/labeled-data/seq/", 0) == 0);
    CHECK(s.get("/api/frames/" + stored + "/labels")["parts"]["head"] == point(12, 13));
    const auto image = stored.substr(2);
    CHECK(dataset::read_refined_frames(p, "alice") == std::vector<std::string>{image});

    const auto after = s.get("/api/projects/p/refine-queue");
    CHECK(after["entries"].size() == 5);
    for (const auto& e : after["entries"]) CHECK(e["frame"] != frame);

    const auto data = dataset::load_project_and_labels(p.root);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto ds = dataset::create_training_dataset(data, "alice", {0.5, seed});
      const auto train = ds.train_images();
      CHECK(std::find(train.begin(), train.end(), image) != train.end());
    }
    s.send("POST", "/api/frames/" + frame + "/accept-prediction", {{"decision", "maybe"}}, 400);
    s.send("POST", "/api/frames/p/labeled-data/vid/img0000.png/accept-prediction", {{"decision", "accept"}}, 404);
  }
}
