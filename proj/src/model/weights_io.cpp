#include "partloc/model/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace partloc::model {

namespace {

static_assert(std::endian::native == std::endian::little,
              "weight file codec assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      fail(std::string("unexpected end of file reading ") + what);
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void floats(std::vector<float>& out, std::size_t n) {
    if (n > (bytes_.size() - pos_) / 4) fail("unexpected end of file reading tensor payload");
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }

  [[noreturn]] void fail(const std::string& message) const { fail_at(pos_, message); }
  [[noreturn]] void fail_at(std::size_t offset, const std::string& message) const {
    throw WeightFileError(origin_ + ": " + message + " at offset " + std::to_string(offset));
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

template <typename T>
void append_entry(std::vector<WeightEntry>& out, const std::string& name,
                  const engine::Shape& shape, std::span<const T> data) {
  WeightEntry e;
  e.name = name;
  for (auto d : shape) e.extents.push_back(static_cast<std::uint32_t>(d));
  e.values.assign(data.begin(), data.end());
  out.push_back(std::move(e));
}

std::string extents_string(const std::vector<std::uint32_t>& extents) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < extents.size(); ++i) s << (i ? "x" : "") << extents[i];
  s << ']';
  return s.str();
}

}  // namespace

std::vector<std::uint8_t> encode_weight_file(const std::vector<WeightEntry>& entries) {
  std::vector<std::uint8_t> out(kWeightMagic, kWeightMagic + 4);
  put_u32(out, kWeightVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, static_cast<std::uint32_t>(e.extents.size()));
    std::size_t count = 1;
    for (auto d : e.extents) {
      put_u32(out, d);
      count *= d;
    }
    if (count != e.values.size()) {
      throw WeightFileError("entry '" + e.name + "' payload does not match its extents");
    }
    const std::size_t at = out.size();
    out.resize(at + count * 4);
    std::memcpy(out.data() + at, e.values.data(), count * 4);
  }
  return out;
}

std::vector<WeightEntry> decode_weight_file(const std::vector<std::uint8_t>& bytes,
                                            const std::string& origin) {
  Reader in(bytes, origin);
  in.need(4, "magic");
  if (std::memcmp(bytes.data(), kWeightMagic, 4) != 0) in.fail("bad magic (expected \"PLW1\")");
  in.text(4, "magic");
  const std::size_t version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kWeightVersion) {
    in.fail_at(version_at, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32("entry count");
  std::vector<WeightEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightEntry e;
    const std::uint32_t name_len = in.u32("name length");
    e.name = in.text(name_len, "entry name");
    const std::size_t rank_at = in.offset();
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) in.fail_at(rank_at, "implausible rank " + std::to_string(rank));
    std::size_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.extents.push_back(in.u32("extent"));
      elements *= e.extents.back();
    }
    in.floats(e.values, elements);
    entries.push_back(std::move(e));
  }
  if (!in.at_end()) in.fail("trailing bytes after last entry");
  return entries;
}

void write_weight_file(const std::filesystem::path& path, const std::vector<WeightEntry>& entries) {
  const auto bytes = encode_weight_file(entries);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw WeightFileError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw WeightFileError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<WeightEntry> read_weight_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WeightFileError("cannot open weight file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weight_file(bytes, path.string());
}

template <typename T>
std::vector<WeightEntry> export_weights(const PartDetectorNetwork<T>& net) {
  std::vector<WeightEntry> entries;
  for (const auto& layer : net.layers()) {
    if (layer.weights) {
      append_entry<T>(entries, layer.name + "/weights", layer.weights->tensor.shape(),
                      layer.weights->tensor.data());
    }
    if (layer.bias) {
      append_entry<T>(entries, layer.name + "/bias", layer.bias->tensor.shape(),
                      layer.bias->tensor.data());
    }
    if (layer.frozen_stats) {
      const auto& st = *layer.frozen_stats;
      append_entry<T>(entries, layer.name + "/mean", {st.mean.size()}, std::span<const T>(st.mean));
      append_entry<T>(entries, layer.name + "/variance", {st.variance.size()},
                      std::span<const T>(st.variance));
    }
  }
  return entries;
}

template <typename T>
void import_weights(PartDetectorNetwork<T>& net, const std::vector<WeightEntry>& entries,
                    LoadMode mode) {
  struct Slot {
    std::vector<T>* values;
    engine::Shape shape;
    bool head;
    bool is_variance;
  };
  std::map<std::string, Slot> slots;
  for (auto& layer : net.layers()) {
    const bool head = PartDetectorNetwork<T>::is_head_layer(layer.name);
    if (layer.weights) {
      slots[layer.name + "/weights"] = {&layer.weights->tensor.values(), layer.weights->tensor.shape(), head, false};
    }
    if (layer.bias) {
      slots[layer.name + "/bias"] = {&layer.bias->tensor.values(), layer.bias->tensor.shape(), head, false};
    }
    if (layer.frozen_stats) {
      auto& st = *layer.frozen_stats;
      slots[layer.name + "/mean"] = {&st.mean, {st.mean.size()}, head, false};
      slots[layer.name + "/variance"] = {&st.variance, {st.variance.size()}, head, true};
    }
  }

  std::vector<std::string> problems;
  std::map<std::string, const WeightEntry*> chosen;
  for (const auto& e : entries) {
    auto it = slots.find(e.name);
    if (it == slots.end()) {
      problems.push_back("unexpected entry '" + e.name + "'");
      continue;
    }
    if (mode == LoadMode::backbone_only && it->second.head) continue;
    std::vector<std::uint32_t> want;
    for (auto d : it->second.shape) want.push_back(static_cast<std::uint32_t>(d));
    if (want != e.extents) {
      problems.push_back("shape mismatch for '" + e.name + "': file " + extents_string(e.extents) +
                         ", network " + extents_string(want));
      continue;
    }
    if (it->second.is_variance) {
      for (float v : e.values) {
        if (!(v > 0.0f)) {
          problems.push_back("non-positive variance in '" + e.name + "'");
          break;
        }
      }
    }
    if (chosen.count(e.name)) problems.push_back("duplicate entry '" + e.name + "'");
    chosen[e.name] = &e;
  }
  for (const auto& [name, slot] : slots) {
    if (mode == LoadMode::backbone_only && slot.head) continue;
    if (!chosen.count(name)) problems.push_back("missing entry '" + name + "'");
  }
  if (!problems.empty()) {
    std::string message = "weight load failed (" + std::to_string(problems.size()) + " problem" +
                          (problems.size() == 1 ? "" : "s") + "):";
    for (const auto& p : problems) message += "\n  " + p;
    throw WeightFileError(message);
  }
  for (const auto& [name, entry] : chosen) {
    auto& dst = *slots[name].values;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(entry->values[i]);
  }
}

template std::vector<WeightEntry> export_weights<float>(const PartDetectorNetwork<float>&);
template std::vector<WeightEntry> export_weights<double>(const PartDetectorNetwork<double>&);
template void import_weights<float>(PartDetectorNetwork<float>&, const std::vector<WeightEntry>&, LoadMode);
template void import_weights<double>(PartDetectorNetwork<double>&, const std::vector<WeightEntry>&, LoadMode);

}  // namespace partloc::model
