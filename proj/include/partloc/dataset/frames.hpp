#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "partloc/dataset/image.hpp"

namespace partloc::dataset {

/// Missing or failing external tool; the message says what to install or
/// configure.
class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExtractionStrategy { uniform, kmeans };

ExtractionStrategy parse_strategy(const std::string& name);

/// floor(i * total / count) for i < count; a single frame is the middle one.
std::vector<std::size_t> select_uniform(std::size_t total, std::size_t count);

/// k-means (k-means++ seeding) on 16x16 grayscale thumbnails; per cluster the
/// member closest to the centroid. Ascending indices.
std::vector<std::size_t> select_kmeans(const std::vector<Image>& frames, std::size_t count, std::uint64_t seed);

/// Substitutes shell-quoted paths for {input} and {outdir}.
std::string decoder_command(const std::string& decoder_template, const std::filesystem::path& input,
                            const std::filesystem::path& outdir);

/// Fails with an EnvironmentError unless the template's program resolves.
void check_decoder(const std::string& decoder_template);

struct ExtractionResult {
  std::size_t decoded_frames = 0;
  std::vector<std::size_t> frame_indices;
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// Runs the decoder into a scratch directory under `outdir`, selects frames
/// and writes them as img<index>.png (six digits, zero-based).
ExtractionResult extract_frames(const std::filesystem::path& video, const std::filesystem::path& outdir,
                                ExtractionStrategy strategy, std::size_t count,
                                const std::string& decoder_template, std::uint64_t seed);

}  // namespace partloc::dataset
