#include "partloc/model/network.hpp"

#include <cmath>
#include <set>

#include "partloc/engine/random.hpp"

namespace partloc::model {

using engine::ConfigError;
using engine::ConvOptions;
using engine::FrozenStats;
using engine::ShapeError;

namespace {

constexpr double kReadoutInitStd = 0.01;
constexpr double kAbsentPartBias = -4.0;

std::size_t ceil_scaled(std::size_t extent, double rescale) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(extent) * rescale - 1e-9));
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

BackboneConfig BackboneConfig::from_preset(const std::string& name) {
  BackboneConfig c;
  c.preset = name;
  if (name == "toy") return c;
  if (name == "res50-like" || name == "res101-like") {
    c.block = BlockKind::bottleneck;
    c.stem_width = 64;
    c.stem_kernel = 7;
    c.stage_widths = {64, 128, 256, 512};
    c.blocks_per_stage = name == "res50-like" ? std::vector<std::size_t>{3, 4, 6, 3}
                                              : std::vector<std::size_t>{3, 4, 23, 3};
    c.head_width = 256;
    return c;
  }
  throw ConfigError("unknown backbone preset '" + name +
                    "' (expected toy, res50-like or res101-like)");
}

void BackboneConfig::validate() const {
  if (output_stride != 4 && output_stride != 8 && output_stride != 16) {
    throw ConfigError("output stride must be 4, 8 or 16, got " + std::to_string(output_stride));
  }
  if (!(input_rescale > 0.0) || !std::isfinite(input_rescale)) {
    throw ConfigError("input rescale must be positive");
  }
  if (stage_widths.size() < 3 || stage_widths.size() != blocks_per_stage.size()) {
    throw ConfigError("backbone needs at least three stages with matching block counts");
  }
  for (std::size_t b : blocks_per_stage) {
    if (b == 0) throw ConfigError("every stage needs at least one block");
  }
  if (head_upsample != 1 && head_upsample != 2) {
    throw ConfigError("head upsample must be 1 or 2");
  }
  if (stem_kernel % 2 == 0) throw ConfigError("stem kernel must be odd");
  // Stem stride 2 plus one factor of two per stage.
  const std::size_t reachable = std::size_t{2} << stage_widths.size();
  if (backbone_stride() > reachable || backbone_stride() < 4) {
    throw ConfigError("backbone of " + std::to_string(stage_widths.size()) +
                      " stages cannot run at stride " + std::to_string(backbone_stride()));
  }
}

template <typename T>
PartDetectorNetwork<T>::PartDetectorNetwork(BackboneConfig config,
                                            std::vector<std::string> parts,
                                            NetworkOptions options)
    : config_(std::move(config)),
      parts_(std::move(parts)),
      options_(options),
      rng_state_(options.seed) {
  config_.validate();
  if (parts_.empty()) throw ConfigError("network needs at least one body part");
  std::set<std::string> unique(parts_.begin(), parts_.end());
  if (unique.size() != parts_.size()) throw ConfigError("body part names must be unique");

  stem_conv_ = add_conv("stem/conv", config_.stem_width, 3, config_.stem_kernel, false, 0.0);
  stem_norm_ = add_norm("stem/norm", config_.stem_width);

  std::size_t channels = config_.stem_width;
  std::size_t stride = 2;
  std::size_t dilation = 1;
  const std::size_t target = config_.backbone_stride();
  for (std::size_t s = 0; s < config_.stage_widths.size(); ++s) {
    Stage stage;
    stage.name = "conv" + std::to_string(s + 2);
    std::size_t stage_stride = 1;
    if (stride * 2 <= target) {
      stage_stride = 2;
      stride *= 2;
    } else {
      dilation *= 2;
    }
    const std::size_t width = config_.stage_widths[s];
    const std::size_t out = config_.block == BlockKind::bottleneck ? 4 * width : width;
    for (std::size_t b = 0; b < config_.blocks_per_stage[s]; ++b) {
      const std::string prefix = stage.name + "/block" + std::to_string(b + 1) + "/";
      Block block;
      block.stride = b == 0 ? stage_stride : 1;
      block.dilation = dilation;
      if (config_.block == BlockKind::basic) {
        block.conv1 = add_conv(prefix + "conv1", width, channels, 3, false, 0.0);
        block.norm1 = add_norm(prefix + "norm1", width);
        block.conv2 = add_conv(prefix + "conv2", width, width, 3, false, 0.0);
        block.norm2 = add_norm(prefix + "norm2", width);
      } else {
        block.conv1 = add_conv(prefix + "conv1", width, channels, 1, false, 0.0);
        block.norm1 = add_norm(prefix + "norm1", width);
        block.conv2 = add_conv(prefix + "conv2", width, width, 3, false, 0.0);
        block.norm2 = add_norm(prefix + "norm2", width);
        block.conv3 = add_conv(prefix + "conv3", out, width, 1, false, 0.0);
        block.norm3 = add_norm(prefix + "norm3", out);
      }
      if (block.stride != 1 || channels != out) {
        block.has_shortcut = true;
        block.shortcut = add_conv(prefix + "shortcut", out, channels, 1, false, 0.0);
        block.shortcut_norm = add_norm(prefix + "shortcut_norm", out);
      }
      stage.blocks.push_back(block);
      channels = out;
    }
    stage.out_channels = out;
    stages_.push_back(std::move(stage));
  }
  if (stride != target) {
    throw ConfigError("backbone reached stride " + std::to_string(stride) + ", expected " +
                      std::to_string(target));
  }

  const std::size_t parts_count = parts_.size();
  head_deconv_ = add_transposed("head/deconv", channels, config_.head_width, 3);
  head_skip_ = add_conv("head/skip", config_.head_width, stages_[1].out_channels, 1, true, 0.0);
  head_readout_ = add_conv("head/readout", parts_count * (options_.locref ? 3 : 1),
                           config_.head_width, 1, true, kReadoutInitStd);
  auto& readout_bias = layers_[head_readout_].bias->tensor;
  for (std::size_t p = 0; p < parts_count; ++p) readout_bias[p] = static_cast<T>(kAbsentPartBias);
  if (options_.intermediate_supervision) {
    aux_readout_ = add_conv("aux/readout", parts_count, stages_[2].out_channels, 1, true,
                            kReadoutInitStd);
    for (auto& v : layers_[aux_readout_].bias->tensor.values()) v = static_cast<T>(kAbsentPartBias);
  }
}

template <typename T>
std::size_t PartDetectorNetwork<T>::add_conv(const std::string& name, std::size_t out,
                                             std::size_t in, std::size_t kernel, bool bias,
                                             double init_std) {
  if (index_.count(name)) throw ConfigError("duplicate layer name '" + name + "'");
  Rng rng(mix_seed(rng_state_, layers_.size(), 0x77u));
  const double std_dev =
      init_std > 0.0 ? init_std : std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  Tensor<T> w({out, in, kernel, kernel});
  for (auto& v : w.values()) v = static_cast<T>(std_dev * rng.normal());
  LayerParams<T> layer;
  layer.name = name;
  layer.weights = engine::make_var(std::move(w), true);
  if (bias) layer.bias = engine::make_var(Tensor<T>({out}), true);
  index_[name] = layers_.size();
  layers_.push_back(std::move(layer));
  return layers_.size() - 1;
}

template <typename T>
std::size_t PartDetectorNetwork<T>::add_transposed(const std::string& name, std::size_t in,
                                                   std::size_t out, std::size_t kernel) {
  if (index_.count(name)) throw ConfigError("duplicate layer name '" + name + "'");
  Rng rng(mix_seed(rng_state_, layers_.size(), 0x77u));
  const double std_dev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
  Tensor<T> w({in, out, kernel, kernel});
  for (auto& v : w.values()) v = static_cast<T>(std_dev * rng.normal());
  LayerParams<T> layer;
  layer.name = name;
  layer.weights = engine::make_var(std::move(w), true);
  layer.bias = engine::make_var(Tensor<T>({out}), true);
  index_[name] = layers_.size();
  layers_.push_back(std::move(layer));
  return layers_.size() - 1;
}

template <typename T>
std::size_t PartDetectorNetwork<T>::add_norm(const std::string& name, std::size_t channels) {
  if (index_.count(name)) throw ConfigError("duplicate layer name '" + name + "'");
  LayerParams<T> layer;
  layer.name = name;
  layer.weights = engine::make_var(Tensor<T>({channels}, T{1}), true);
  layer.bias = engine::make_var(Tensor<T>({channels}, T{0}), true);
  layer.frozen_stats = FrozenStats<T>{std::vector<T>(channels, T{0}),
                                      std::vector<T>(channels, T{1})};
  index_[name] = layers_.size();
  layers_.push_back(std::move(layer));
  return layers_.size() - 1;
}

template <typename T>
Var<T> PartDetectorNetwork<T>::run_block(Tape<T>* tape, const Block& block,
                                         const Var<T>& input) const {
  using namespace engine;
  const ConvOptions first{block.stride, 1, Padding::same};
  const ConvOptions spatial{1, block.dilation, Padding::same};
  Var<T> x;
  if (config_.block == BlockKind::basic) {
    const ConvOptions c1{block.stride, block.dilation, Padding::same};
    x = relu(tape, frozen_norm(tape, conv2d(tape, input, layers_[block.conv1], c1),
                               layers_[block.norm1]));
    x = frozen_norm(tape, conv2d(tape, x, layers_[block.conv2], spatial), layers_[block.norm2]);
  } else {
    x = relu(tape, frozen_norm(tape, conv2d(tape, input, layers_[block.conv1], {}),
                               layers_[block.norm1]));
    const ConvOptions c2{block.stride, block.dilation, Padding::same};
    x = relu(tape, frozen_norm(tape, conv2d(tape, x, layers_[block.conv2], c2),
                               layers_[block.norm2]));
    x = frozen_norm(tape, conv2d(tape, x, layers_[block.conv3], {}), layers_[block.norm3]);
  }
  Var<T> shortcut = input;
  if (block.has_shortcut) {
    shortcut = frozen_norm(tape, conv2d(tape, input, layers_[block.shortcut], first),
                           layers_[block.shortcut_norm]);
  }
  return relu(tape, add(tape, x, shortcut));
}

template <typename T>
std::pair<std::size_t, std::size_t> PartDetectorNetwork<T>::rescaled_extents(
    std::size_t height, std::size_t width) const {
  if (config_.input_rescale == 1.0) return {height, width};
  return {ceil_scaled(height, config_.input_rescale), ceil_scaled(width, config_.input_rescale)};
}

template <typename T>
std::pair<std::size_t, std::size_t> PartDetectorNetwork<T>::output_extents(
    std::size_t height, std::size_t width) const {
  const auto [h, w] = rescaled_extents(height, width);
  return {ceil_div(h, config_.output_stride), ceil_div(w, config_.output_stride)};
}

template <typename T>
PoseOutput<T> PartDetectorNetwork<T>::forward_pose(Tape<T>* tape, const Tensor<T>& image) const {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) {
    throw ShapeError("forward_pose expects a 1x3xHxW image, got " +
                     engine::shape_string(image.shape()));
  }
  const auto [h, w] = rescaled_extents(image.dim(2), image.dim(3));
  Var<T> input = engine::make_var(image);
  if (h != image.dim(2) || w != image.dim(3)) input = engine::resize_bilinear<T>(nullptr, input, h, w);
  return forward(tape, input);
}

template <typename T>
PoseOutput<T> PartDetectorNetwork<T>::forward(Tape<T>* tape, const Var<T>& image) const {
  using namespace engine;
  const std::size_t height = image->tensor.dim(2), width = image->tensor.dim(3);
  if (height < minimum_extent() || width < minimum_extent()) {
    throw ShapeError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " (after rescale) is smaller than the minimum extent " +
                     std::to_string(minimum_extent()));
  }
  if (tape) watch_parameters(*tape);
  Var<T> x = relu(tape, frozen_norm(tape, conv2d(tape, image, layers_[stem_conv_], {2, 1, Padding::same}),
                                    layers_[stem_norm_]));
  Var<T> conv3, conv4;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (const Block& block : stages_[s].blocks) x = run_block(tape, block, x);
    if (s == 1) conv3 = x;
    if (s == 2) conv4 = x;
  }
  const std::size_t rows = ceil_div(height, config_.output_stride);
  const std::size_t cols = ceil_div(width, config_.output_stride);
  Var<T> trunk = transposed_conv2d(tape, x, layers_[head_deconv_], config_.head_upsample);
  trunk = crop(tape, trunk, rows, cols);
  Var<T> skip = resize_bilinear(tape, conv2d(tape, conv3, layers_[head_skip_], {}), rows, cols);
  trunk = relu(tape, add(tape, trunk, skip));
  Var<T> readout = conv2d(tape, trunk, layers_[head_readout_], {});

  const std::size_t count = parts_.size();
  PoseOutput<T> out;
  if (options_.locref) {
    out.scoremaps = slice_channels(tape, readout, 0, count);
    out.offsets = slice_channels(tape, readout, count, 2 * count);
  } else {
    out.scoremaps = readout;
  }
  if (options_.intermediate_supervision) {
    out.aux = resize_bilinear(tape, conv2d(tape, conv4, layers_[aux_readout_], {}), rows, cols);
  }
  if (!out.scoremaps->tensor.all_finite() || (out.offsets && !out.offsets->tensor.all_finite())) {
    throw engine::NumericError("non-finite network output");
  }
  return out;
}

template <typename T>
std::size_t PartDetectorNetwork<T>::head_channels() const {
  const std::size_t p = parts_.size();
  return p * (options_.locref ? 3 : 1) + (options_.intermediate_supervision ? p : 0);
}

template <typename T>
const LayerParams<T>* PartDetectorNetwork<T>::find_layer(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &layers_[it->second];
}

template <typename T>
bool PartDetectorNetwork<T>::is_head_layer(const std::string& name) {
  return name.rfind("head/", 0) == 0 || name.rfind("aux/", 0) == 0;
}

template <typename T>
std::vector<NamedParam<T>> PartDetectorNetwork<T>::parameters() const {
  std::vector<NamedParam<T>> params;
  for (const auto& layer : layers_) {
    if (layer.weights && layer.weights->requires_grad) {
      params.push_back({layer.name + "/weights", layer.weights});
    }
    if (layer.bias && layer.bias->requires_grad) {
      params.push_back({layer.name + "/bias", layer.bias});
    }
  }
  return params;
}

template <typename T>
std::size_t PartDetectorNetwork<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers_) {
    if (layer.weights) total += layer.weights->tensor.size();
    if (layer.bias) total += layer.bias->tensor.size();
  }
  return total;
}

template <typename T>
void PartDetectorNetwork<T>::watch_parameters(Tape<T>& tape) const {
  for (const auto& layer : layers_) {
    tape.watch(layer.weights);
    tape.watch(layer.bias);
  }
}

template class PartDetectorNetwork<float>;
template class PartDetectorNetwork<double>;

}  // namespace partloc::model
