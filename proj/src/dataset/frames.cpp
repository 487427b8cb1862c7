#include "partloc/dataset/frames.hpp"

#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

#include "partloc/engine/random.hpp"

namespace partloc::dataset {

ExtractionStrategy parse_strategy(const std::string& name) {
  if (name == "uniform") return ExtractionStrategy::uniform;
  if (name == "kmeans") return ExtractionStrategy::kmeans;
  throw std::invalid_argument("unknown extraction strategy '" + name + "' (expected uniform or kmeans)");
}

std::vector<std::size_t> select_uniform(std::size_t total, std::size_t count) {
  if (count == 0) throw std::invalid_argument("frame count must be at least 1");
  if (total == 0) return {};
  if (count == 1) return {total / 2};
  count = std::min(count, total);
  std::vector<std::size_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = i * total / count;
  return out;
}

namespace {

constexpr std::size_t kThumb = 16;

std::vector<double> thumbnail(const Image& image) {
  const Image small = resize_image(image, kThumb, kThumb);
  std::vector<double> f(kThumb * kThumb);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto* px = small.pixels.data() + 3 * i;
    f[i] = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]) / 255.0;
  }
  return f;
}

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

std::string first_token(const std::string& command) {
  std::istringstream in(command);
  std::string token;
  in >> token;
  return token;
}

}  // namespace

std::vector<std::size_t> select_kmeans(const std::vector<Image>& frames, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("frame count must be at least 1");
  const std::size_t n = frames.size();
  if (count >= n) return select_uniform(n, n);
  std::vector<std::vector<double>> x;
  x.reserve(n);
  for (const auto& f : frames) x.push_back(thumbnail(f));

  Rng rng(seed);
  std::vector<std::vector<double>> centers{x[rng.below(n)]};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centers.size() < count) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], sq_distance(x[i], centers.back()));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      for (pick = 0; pick + 1 < n && r >= nearest[pick]; ++pick) r -= nearest[pick];
    } else {
      pick = rng.below(n);
    }
    centers.push_back(x[pick]);
  }

  std::vector<std::size_t> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < count; ++k) {
        const double d = sq_distance(x[i], centers[k]);
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (assign[i] != best) changed = true;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<std::vector<double>> sums(count, std::vector<double>(kThumb * kThumb, 0.0));
    std::vector<std::size_t> sizes(count, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[assign[i]];
      for (std::size_t d = 0; d < sums[0].size(); ++d) sums[assign[i]][d] += x[i][d];
    }
    for (std::size_t k = 0; k < count; ++k) {
      if (sizes[k] == 0) continue;
      for (auto& v : sums[k]) v /= static_cast<double>(sizes[k]);
      centers[k] = std::move(sums[k]);
    }
  }

  std::vector<std::size_t> chosen;
  std::vector<bool> used(n, false);
  for (std::size_t k = 0; k < count; ++k) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (assign[i] != k || used[i]) continue;
      const double d = sq_distance(x[i], centers[k]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best < n) {
      used[best] = true;
      chosen.push_back(best);
    }
  }
  // Empty clusters (duplicate frames) are filled with the unused frames
  // farthest from everything chosen so far.
  while (chosen.size() < count) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen) d = std::min(d, sq_distance(x[i], x[c]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    used[best] = true;
    chosen.push_back(best);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::string decoder_command(const std::string& decoder_template, const std::filesystem::path& input,
                            const std::filesystem::path& outdir) {
  std::string cmd = decoder_template;
  auto substitute = [&](const std::string& key, const std::string& value) {
    for (std::size_t at = cmd.find(key); at != std::string::npos; at = cmd.find(key, at + value.size())) {
      cmd.replace(at, key.size(), value);
    }
  };
  substitute("{input}", shell_quote(input.string()));
  substitute("{outdir}", shell_quote(outdir.string()));
  return cmd;
}

void check_decoder(const std::string& decoder_template) {
  const std::string program = first_token(decoder_template);
  if (program.empty()) throw EnvironmentError("extraction.decoder is empty; set it in project.yaml");
  auto runnable = [](const std::filesystem::path& p) { return ::access(p.c_str(), X_OK) == 0; };
  if (program.find('/') != std::string::npos) {
    if (runnable(program)) return;
  } else if (const char* path = std::getenv("PATH")) {
    std::istringstream dirs(path);
    std::string dir;
    while (std::getline(dirs, dir, ':')) {
      if (!dir.empty() && runnable(std::filesystem::path(dir) / program)) return;
    }
  }
  throw EnvironmentError("frame decoder '" + program +
                         "' was not found; install it or point extraction.decoder in project.yaml at a "
                         "program that writes numbered PNG frames to {outdir}");
}

ExtractionResult extract_frames(const std::filesystem::path& video, const std::filesystem::path& outdir,
                                ExtractionStrategy strategy, std::size_t count,
                                const std::string& decoder_template, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("frame count must be at least 1");
  if (!std::filesystem::exists(video)) throw std::invalid_argument("video " + video.string() + " does not exist");
  check_decoder(decoder_template);
  std::filesystem::create_directories(outdir);
  const auto scratch = outdir / (".decoded-" + std::to_string(::getpid()));
  std::filesystem::remove_all(scratch);
  std::filesystem::create_directories(scratch);
  struct Cleanup {
    std::filesystem::path dir;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove_all(dir, ec);
    }
  } cleanup{scratch};

  const std::string cmd = decoder_command(decoder_template, video, scratch);
  const int status = std::system(cmd.c_str());
  if (status != 0) {
    throw EnvironmentError("frame decoder failed (status " + std::to_string(status) + "): " + cmd);
  }
  std::vector<std::filesystem::path> decoded;
  for (const auto& e : std::filesystem::directory_iterator(scratch)) {
    if (e.is_regular_file() && e.path().extension() == ".png") decoded.push_back(e.path());
  }
  std::sort(decoded.begin(), decoded.end());
  if (decoded.empty()) throw EnvironmentError("frame decoder wrote no PNG frames: " + cmd);

  ExtractionResult result;
  result.decoded_frames = decoded.size();
  if (count > decoded.size()) {
    result.warnings.push_back("video has " + std::to_string(decoded.size()) + " frames, fewer than the requested " +
                              std::to_string(count) + "; extracting every frame");
    result.frame_indices = select_uniform(decoded.size(), decoded.size());
  } else if (strategy == ExtractionStrategy::uniform) {
    result.frame_indices = select_uniform(decoded.size(), count);
  } else {
    std::vector<Image> images;
    images.reserve(decoded.size());
    for (const auto& p : decoded) images.push_back(read_png(p));
    result.frame_indices = select_kmeans(images, count, seed);
  }
  for (std::size_t index : result.frame_indices) {
    char name[32];
    std::snprintf(name, sizeof name, "img%06zu.png", index);
    const auto target = outdir / name;
    std::filesystem::copy_file(decoded[index], target, std::filesystem::copy_options::overwrite_existing);
    result.written.push_back(target);
  }
  return result;
}

}  // namespace partloc::dataset
