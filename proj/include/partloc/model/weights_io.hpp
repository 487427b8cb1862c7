#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "partloc/model/network.hpp"

namespace partloc::model {

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One named f32 tensor of a weight file.
struct WeightEntry {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

/// Binary layout, all integers little-endian:
///   "PLW1" | version u32 | count u32 |
///   count x (name_len u32 | name bytes | rank u32 | extents u32[rank] |
///            payload f32[prod extents])
inline constexpr char kWeightMagic[4] = {'P', 'L', 'W', '1'};
inline constexpr std::uint32_t kWeightVersion = 1;

std::vector<std::uint8_t> encode_weight_file(const std::vector<WeightEntry>& entries);
std::vector<WeightEntry> decode_weight_file(const std::vector<std::uint8_t>& bytes,
                                            const std::string& origin = "<memory>");

void write_weight_file(const std::filesystem::path& path, const std::vector<WeightEntry>& entries);
std::vector<WeightEntry> read_weight_file(const std::filesystem::path& path);

enum class LoadMode { full, backbone_only };

/// Entries "<layer>/weights", "<layer>/bias", "<layer>/mean", "<layer>/variance"
/// in layer order.
template <typename T>
std::vector<WeightEntry> export_weights(const PartDetectorNetwork<T>& net);

/// Validates every entry before mutating anything; on mismatch throws a
/// WeightFileError that lists all offending entries.
template <typename T>
void import_weights(PartDetectorNetwork<T>& net, const std::vector<WeightEntry>& entries,
                    LoadMode mode = LoadMode::full);

template <typename T>
void save_weights(const PartDetectorNetwork<T>& net, const std::filesystem::path& path) {
  write_weight_file(path, export_weights(net));
}

template <typename T>
void load_weights(PartDetectorNetwork<T>& net, const std::filesystem::path& path,
                  LoadMode mode = LoadMode::full) {
  import_weights(net, read_weight_file(path), mode);
}

}  // namespace partloc::model
