#include <doctest.h>

#include <cmath>
#include <set>

#include "partloc/dataset/files.hpp"
#include "partloc/dataset/labels.hpp"
#include "partloc/dataset/training_data.hpp"
#include "support/temp_dir.hpp"

using namespace partloc;
using namespace partloc::dataset;
using scoremap::PartLabels;
using scoremap::Point;

namespace {

const std::vector<std::string> kParts{"snout", "left ear", "tail,base"};

Image noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Image img(w, h);
  Rng rng(seed);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

// Smooth content so bilinear round trips are well conditioned.
Image smooth_image(std::size_t w, std::size_t h) {
  Image img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      auto* px = img.at(x, y);
      px[0] = static_cast<std::uint8_t>(127.5 + 100 * std::sin(0.11 * x) * std::cos(0.07 * y));
      px[1] = static_cast<std::uint8_t>((x * 2 + y) % 256);
      px[2] = static_cast<std::uint8_t>(200 - std::min<std::size_t>(200, (x + y) / 2));
    }
  }
  return img;
}

LabelSet random_labels(const std::string& scorer, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  LabelSet set;
  set.scorer = scorer;
  for (std::size_t i = 0; i < frames; ++i) {
    LabeledFrame f;
    f.image = "labeled-data/vid/img" + std::to_string(i) + ".png";
    f.scorer = scorer;
    for (std::size_t p = 0; p < kParts.size(); ++p) {
      if (rng.uniform() < 0.2) {
        f.labels.push_back(std::nullopt);
      } else {
        f.labels.push_back(Point{rng.uniform(0, 640), rng.uniform(0, 480)});
      }
    }
    set.frames.push_back(std::move(f));
  }
  return set;
}

Project make_project(const std::filesystem::path& root) {
  Project p;
  p.name = "mouse";
  p.parts = kParts;
  p.root = root;
  return p;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("format_double round trips every sampled double") {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double v = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-8, 8));
    double back = 0;
    REQUIRE(parse_double(format_double(v), back));
    CHECK(back == v);
  }
  double x;
  CHECK_FALSE(parse_double("12a", x));
  CHECK_FALSE(parse_double("", x));
  CHECK(parse_double("+1.5", x));
  CHECK(x == 1.5);
}

TEST_CASE("label text round trips coordinates exactly") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto set = random_labels("alice", 30, seed);
    const auto text = labels_to_csv(set, kParts);
    const auto back = labels_from_csv(text, kParts, "mem.csv");
    REQUIRE(back.frames.size() == set.frames.size());
    CHECK(back.scorer == "alice");
    for (std::size_t i = 0; i < set.frames.size(); ++i) {
      CHECK(back.frames[i].image == set.frames[i].image);
      CHECK(back.frames[i].labels == set.frames[i].labels);
    }
    CHECK(labels_to_csv(back, kParts) == text);
  }
}

TEST_CASE("label file layout has three header rows and empty invisible cells") {
  LabelSet set;
  set.scorer = "bob";
  set.frames.push_back({"a.png", {Point{1.5, 2}, std::nullopt, Point{3, 4.25}}, "bob"});
  const auto text = labels_to_csv(set, kParts);
  CHECK(text ==
        "scorer,bob,bob,bob,bob,bob,bob\n"
        "bodyparts,snout,snout,left ear,left ear,\"tail,base\",\"tail,base\"\n"
        "coords,x,y,x,y,x,y\n"
        "a.png,1.5,2,,,3,4.25\n");
}

TEST_CASE("columns are mapped by part name") {
  const std::string text =
      "scorer,s,s,s,s,s,s\n"
      "bodyparts,tail,tail,head,head,ear,ear\n"
      "coords,x,y,x,y,x,y\n"
      "f.png,1,2,,,5,6\n";
  const auto set = labels_from_csv(text, {"head", "ear", "tail"}, "m.csv");
  REQUIRE(set.frames.size() == 1);
  CHECK_FALSE(set.frames[0].labels[0].has_value());
  CHECK(set.frames[0].labels[1] == Point{5, 6});
  CHECK(set.frames[0].labels[2] == Point{1, 2});
}

TEST_CASE("malformed label text reports file and line") {
  const std::string header =
      "scorer,s,s,s,s,s,s\n"
      "bodyparts,snout,snout,left ear,left ear,\"tail,base\",\"tail,base\"\n"
      "coords,x,y,x,y,x,y\n";
  auto msg = [&](const std::string& body) {
    return error_of([&] { labels_from_csv(header + body, kParts, "L.csv"); });
  };
  CHECK(msg("a.png,1,2,,,3,4\na.png,1,2,,,3,4\n") == "L.csv:5: duplicate image path 'a.png'");
  CHECK(msg("a.png,1,2,,,3\n").rfind("L.csv:4: expected 7 fields", 0) == 0);
  CHECK(msg("a.png,1,,,,3,4\n") == "L.csv:4: part 'snout' has only one coordinate");
  CHECK(msg("a.png,1,x2,,,3,4\n") == "L.csv:4: part 'snout' has a non-numeric coordinate");
  CHECK(msg("a.png,1,nan,,,3,4\n") == "L.csv:4: part 'snout' has a non-numeric coordinate");
  CHECK(error_of([&] { labels_from_csv("scorer,a,b\nbodyparts,snout,snout\ncoords,x,y\n", {"snout"}, "M.csv"); }) ==
        "M.csv:1: mixed scorer ids in one file");
  CHECK(error_of([&] { labels_from_csv("scorer,a,a\nbodyparts,nose,nose\ncoords,x,y\n", {"snout"}, "M.csv"); }) ==
        "M.csv:2: body part 'nose' is not in the project");
  CHECK(error_of([&] { labels_from_csv("scorer,a,a\n", {"snout"}, "M.csv"); }).rfind("M.csv:1:", 0) == 0);
  CHECK_THROWS_AS(labels_from_csv(header + "\"a.png,1\n", kParts, "L.csv"), LabelFormatError);
}

TEST_CASE("project config round trips through its text form") {
  Project p = make_project("/tmp/x");
  p.seed = 42;
  p.training.epsilon = 9.5;
  p.training.input_rescale = 1.0;
  p.training.total_steps = 1234;
  p.training.snapshot_interval = 100;
  p.training.schedule = {{600, 0.005}, {1234, 0.001}};
  p.training.intermediate_supervision = true;
  p.inference.refinement = scoremap::Refinement::parabolic;
  p.inference.confidence_threshold = 1.0 / 3.0;
  p.skeleton = {{"snout", "left ear"}};
  p.crops["vid"] = CropRegion{10, 20, 300, 200};
  p.decoder = "mydec {input} {outdir}";
  const auto text = project_to_yaml(p);
  Project q = project_from_yaml(text);
  CHECK(q.name == p.name);
  CHECK(q.parts == p.parts);
  CHECK(q.seed == 42);
  CHECK(q.training.epsilon == 9.5);
  CHECK(q.training.total_steps == 1234);
  CHECK(q.training.schedule.size() == 2);
  CHECK(q.training.schedule[1].until_step == 1234);
  CHECK(q.training.schedule[0].rate == 0.005);
  CHECK(q.training.intermediate_supervision);
  CHECK(q.inference.refinement == scoremap::Refinement::parabolic);
  CHECK(q.inference.confidence_threshold == 1.0 / 3.0);
  CHECK(q.skeleton == p.skeleton);
  CHECK(q.crops.at("vid") == CropRegion{10, 20, 300, 200});
  CHECK(q.decoder == p.decoder);
  CHECK(project_to_yaml(q) == text);
}

TEST_CASE("project defaults and validation") {
  Project p = make_project("/tmp/x");
  CHECK(p.training.epsilon == 17.0);
  CHECK(p.training.scale_min == 0.5);
  CHECK(p.training.scale_max == 1.5);
  CHECK(p.training.total_steps == 500000);
  CHECK(p.training.snapshot_interval == 50000);
  CHECK_NOTHROW(p.validate());
  auto bad = [&](auto mutate) {
    Project q = p;
    mutate(q);
    return error_of([&] { q.validate(); });
  };
  CHECK(!bad([](Project& q) { q.parts.push_back("snout"); }).empty());
  CHECK(!bad([](Project& q) { q.training.snapshot_interval = 0; }).empty());
  CHECK(!bad([](Project& q) { q.training.scale_max = 10.0; }).empty());
  CHECK(!bad([](Project& q) { q.training.scale_min = 0.0; }).empty());
  CHECK(!bad([](Project& q) { q.skeleton = {{"snout", "paw"}}; }).empty());
  CHECK_THROWS_AS(project_from_yaml("name: a\nparts: [x]\nbogus: 1\n"), ProjectError);
  CHECK_THROWS_AS(project_from_yaml("name: a\nparts: [x]\ntraining: {epslion: 3}\n"), ProjectError);
}

TEST_CASE("two scorer files load as distinct label sets") {
  testing::TempDir dir;
  Project p = init_project(dir.path(), "mouse", kParts, "alice", 7);
  CHECK_THROWS_AS(init_project(dir.path(), "mouse", kParts, "alice", 7), ProjectError);
  std::filesystem::create_directories(dir.path() / "labeled-data/vid");
  LabelSet a, b;
  a.scorer = "alice";
  b.scorer = "bob";
  for (int i = 0; i < 3; ++i) {
    const std::string rel = "labeled-data/vid/img" + std::to_string(i) + ".png";
    write_png(dir.path() / rel, Image(64, 48));
    a.frames.push_back({rel, {Point{10.0 + i, 5}, std::nullopt, Point{1, 1}}, "alice"});
    b.frames.push_back({rel, {Point{11.0 + i, 6}, Point{2, 2}, std::nullopt}, "bob"});
  }
  write_label_file(p.label_file("alice"), a, kParts);
  write_label_file(p.label_file("bob"), b, kParts);
  const auto data = load_project_and_labels(dir.path());
  REQUIRE(data.labels.size() == 2);
  CHECK(data.scorer_labels("alice").frames[2].labels[0] == Point{12, 5});
  CHECK(data.scorer_labels("bob").frames[2].labels[0] == Point{13, 6});
  CHECK_FALSE(data.scorer_labels("alice").frames[0].labels[1].has_value());
  CHECK(data.labeled_per_part.at("alice") == std::vector<std::size_t>{3, 0, 3});
  CHECK(data.labeled_per_part.at("bob") == std::vector<std::size_t>{3, 3, 0});
  CHECK(data.project.seed == 7);

  SUBCASE("out-of-bounds label is a validation error naming frame and part") {
    a.frames[1].labels[2] = Point{64.0, 3.0};
    write_label_file(p.label_file("alice"), a, kParts);
    const auto msg = error_of([&] { load_project_and_labels(dir.path()); });
    CHECK(msg.find("'tail,base'") != std::string::npos);
    CHECK(msg.find("labeled-data/vid/img1.png") != std::string::npos);
    CHECK(msg.find("alice") != std::string::npos);
    CHECK_THROWS_AS(load_project_and_labels(dir.path()), scoremap::LabelValidationError);
  }
  SUBCASE("scorer inside a file must match its file name") {
    write_label_file(p.label_file("carol"), a, kParts);
    CHECK_THROWS_AS(load_project_and_labels(dir.path()), LabelFormatError);
  }
}

TEST_CASE("split_dataset sizes, determinism and partition") {
  const auto s = split_dataset(1080, {0.8, 1});
  CHECK(s.train.size() == 864);
  CHECK(s.test.size() == 216);

  const auto a = split_dataset(100, {0.5, 9});
  const auto b = split_dataset(100, {0.5, 9});
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  const auto c = split_dataset(100, {0.5, 10});
  CHECK(a.train != c.train);

  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    const double f = rng.uniform(0.01, 0.99);
    if (std::llround(f * n) == 0) {
      CHECK_THROWS_AS(split_dataset(n, {f, rng.next()}), ProjectError);
      continue;
    }
    const auto sp = split_dataset(n, {f, rng.next()});
    CHECK(sp.train.size() == static_cast<std::size_t>(std::llround(f * n)));
    std::set<std::size_t> all(sp.train.begin(), sp.train.end());
    for (auto t : sp.test) CHECK(all.insert(t).second);
    CHECK(all.size() == n);
    CHECK(*all.rbegin() == n - 1);
  }
  CHECK_THROWS_AS(split_dataset(1, {0.2, 0}), ProjectError);
  CHECK_THROWS_AS(split_dataset(10, {1.0, 0}), ProjectError);
  CHECK_THROWS_AS(split_dataset(10, {0.0, 0}), ProjectError);
}

TEST_CASE("augment_rescale examples") {
  const Image img = noise_image(40, 30, 1);
  const PartLabels labels{Point{100, 60}, std::nullopt};
  const auto same = augment_rescale(img, labels, 1.0);
  CHECK(same.image == img);
  CHECK(same.labels == labels);

  const auto half = augment_rescale(img, labels, 0.5);
  CHECK(half.image.width == 20);
  CHECK(half.image.height == 15);
  CHECK(half.labels[0] == Point{50, 30});
  CHECK_FALSE(half.labels[1].has_value());

  const Image smooth = smooth_image(120, 90);
  const PartLabels l2{Point{37.25, 11.5}, Point{0.1, 89.9}};
  const auto up = augment_rescale(smooth, l2, 2.0);
  const auto back = augment_rescale(up.image, up.labels, 0.5);
  CHECK(back.labels == l2);
  REQUIRE(back.image.width == smooth.width);
  REQUIRE(back.image.height == smooth.height);
  double diff = 0;
  for (std::size_t i = 0; i < smooth.pixels.size(); ++i) {
    diff += std::abs(static_cast<int>(smooth.pixels[i]) - static_cast<int>(back.image.pixels[i]));
  }
  CHECK(diff / static_cast<double>(smooth.pixels.size()) < 2.0);
}

TEST_CASE("augmentation commutes with target encoding") {
  scoremap::PoseDecodeConfig cfg;
  Rng rng(11);
  const Image img(97, 71);
  for (int trial = 0; trial < 200; ++trial) {
    const double scale = rng.uniform(0.5, 1.5);
    PartLabels labels;
    for (int p = 0; p < 3; ++p) {
      if (rng.uniform() < 0.2) labels.push_back(std::nullopt);
      else labels.push_back(Point{rng.uniform(0, 97), rng.uniform(0, 71)});
    }
    const auto aug = augment_rescale(img, labels, scale);
    PartLabels direct = labels;
    for (auto& l : direct) {
      if (l) *l = Point{l->x * scale, l->y * scale};
    }
    const auto a = scoremap::make_targets<float>(aug.labels, aug.image.height, aug.image.width, cfg);
    const auto b = scoremap::make_targets<float>(direct, aug.image.height, aug.image.width, cfg);
    CHECK(a.targets.values() == b.targets.values());
    CHECK(a.mask.values() == b.mask.values());
    CHECK(a.offset_targets.values() == b.offset_targets.values());
  }
}

TEST_CASE("crop offsets compose exactly") {
  const Image full = noise_image(80, 60, 4);
  const CropRegion crop{13, 7, 40, 30};
  const Image cropped = crop_image(full, crop.x0, crop.y0, crop.width, crop.height);
  REQUIRE(cropped.width == 40);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Point c{rng.uniform(0, 40), rng.uniform(0, 30)};
    const Point o = crop.to_original(c);
    CHECK(o.x == 13.0 + c.x);
    CHECK(o.y == 7.0 + c.y);
    const auto px = static_cast<std::size_t>(c.x), py = static_cast<std::size_t>(c.y);
    CHECK(std::equal(cropped.at(px, py), cropped.at(px, py) + 3, full.at(px + 13, py + 7)));
  }
  CHECK(crop.to_cropped({20, 10}) == Point{7, 3});
}

TEST_CASE("training iterator sampling") {
  IteratorConfig cfg;
  cfg.decode.input_rescale = 1.0;
  std::vector<TrainingFrame> frames;
  for (int i = 0; i < 4; ++i) {
    frames.push_back({"f" + std::to_string(i), noise_image(64, 64, i), {Point{20.0 + i, 30}}});
  }

  SUBCASE("same seed gives identical samples") {
    TrainingIterator a(frames, cfg, 77), b(frames, cfg, 77);
    for (int i = 0; i < 100; ++i) {
      const auto x = a.next(), y = b.next();
      CHECK(x.frame == y.frame);
      CHECK(x.scale == y.scale);
      CHECK(x.image.values() == y.image.values());
      CHECK(x.targets.targets.values() == y.targets.targets.values());
    }
  }
  SUBCASE("single frame set repeats the frame at varying scales") {
    TrainingIterator it({frames[0]}, cfg, 3);
    std::set<double> scales;
    for (int i = 0; i < 50; ++i) {
      const auto s = it.next();
      CHECK(s.frame == 0);
      CHECK(s.scale >= 0.5);
      CHECK(s.scale < 1.5);
      CHECK(s.labels[0] == Point{20 * s.scale, 30 * s.scale});
      CHECK(s.image.dim(2) == scaled_extent(64, s.scale));
      scales.insert(s.scale);
    }
    CHECK(scales.size() == 50);
  }
  SUBCASE("frame frequencies are uniform within 3 sigma") {
    cfg.scale_min = cfg.scale_max = 0.5;
    TrainingIterator it(frames, cfg, 5);
    std::vector<int> counts(4, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[it.next().frame];
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    for (int c : counts) CHECK(std::abs(c - n / 4.0) <= 3 * sigma);
  }
  SUBCASE("scales below the network minimum are redrawn") {
    TrainingIterator it(frames, cfg, 8);
    for (int i = 0; i < 200; ++i) CHECK(it.next().scale >= 0.5);
    IteratorConfig small = cfg;
    small.scale_min = 0.1;
    TrainingIterator it2(frames, small, 8);
    for (int i = 0; i < 200; ++i) CHECK(scaled_extent(64, it2.next().scale) >= 32);
  }
  CHECK_THROWS_AS(TrainingIterator({}, cfg, 0), ProjectError);
  CHECK_THROWS_AS(TrainingIterator({{"tiny", Image(16, 16), {Point{1, 1}}}}, cfg, 0), ProjectError);
}
