#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "partloc/engine/ops.hpp"
#include "partloc/engine/optimizer.hpp"

namespace partloc::model {

using engine::LayerParams;
using engine::NamedParam;
using engine::Tape;
using engine::Tensor;
using engine::Var;

enum class BlockKind { basic, bottleneck };

struct BackboneConfig {
  std::string preset = "toy";
  BlockKind block = BlockKind::basic;
  std::size_t stem_width = 16;
  std::size_t stem_kernel = 3;
  /// Per-stage width (bottleneck stages emit 4x this many channels).
  std::vector<std::size_t> stage_widths{16, 32, 64};
  std::vector<std::size_t> blocks_per_stage{1, 1, 1};
  std::size_t output_stride = 8;
  /// Upsampling factor of the transposed-convolution readout; the backbone
  /// runs at output_stride * head_upsample.
  std::size_t head_upsample = 1;
  std::size_t head_width = 32;
  double input_rescale = 0.8;

  /// "toy", "res50-like" or "res101-like".
  static BackboneConfig from_preset(const std::string& name);
  void validate() const;
  std::size_t backbone_stride() const { return output_stride * head_upsample; }
};

struct NetworkOptions {
  bool locref = true;
  bool intermediate_supervision = false;
  std::uint64_t seed = 0;
};

/// Logits and offsets at score-map resolution. `offsets` interleaves (dx, dy)
/// per part: channel 2p is dx of part p. Absent heads are null.
template <typename T>
struct PoseOutput {
  Var<T> scoremaps;
  Var<T> offsets;
  Var<T> aux;

  std::size_t rows() const { return scoremaps->tensor.dim(2); }
  std::size_t cols() const { return scoremaps->tensor.dim(3); }
};

/// Residual fully-convolutional part detector: strided/dilated residual
/// stages, a transposed-convolution trunk fused with a projection of the
/// conv3 stage, one 1x1 readout emitting per-part logits and offsets, and an
/// optional conv4-stage auxiliary readout.
template <typename T>
class PartDetectorNetwork {
 public:
  PartDetectorNetwork(BackboneConfig config, std::vector<std::string> parts,
                      NetworkOptions options = {});

  /// Image tensor 1x3xHxW in original resolution; applies input rescale.
  PoseOutput<T> forward_pose(Tape<T>* tape, const Tensor<T>& image) const;
  /// Forward pass on an already rescaled image.
  PoseOutput<T> forward(Tape<T>* tape, const Var<T>& image) const;

  /// Score-map extents for an original-resolution image.
  std::pair<std::size_t, std::size_t> output_extents(std::size_t height,
                                                     std::size_t width) const;
  std::pair<std::size_t, std::size_t> rescaled_extents(std::size_t height,
                                                       std::size_t width) const;
  /// Smallest accepted extent after input rescale.
  std::size_t minimum_extent() const { return 4 * config_.output_stride; }

  const BackboneConfig& config() const { return config_; }
  const NetworkOptions& options() const { return options_; }
  const std::vector<std::string>& parts() const { return parts_; }
  std::size_t head_channels() const;

  std::vector<LayerParams<T>>& layers() { return layers_; }
  const std::vector<LayerParams<T>>& layers() const { return layers_; }
  const LayerParams<T>* find_layer(const std::string& name) const;
  static bool is_head_layer(const std::string& name);

  /// Trainable parameter tensors, named "<layer>/weights" and "<layer>/bias".
  std::vector<NamedParam<T>> parameters() const;
  std::size_t parameter_count() const;
  void watch_parameters(Tape<T>& tape) const;

 private:
  struct Block {
    std::size_t conv1, norm1, conv2, norm2;
    std::size_t conv3 = 0, norm3 = 0;  // bottleneck only
    bool has_shortcut = false;
    std::size_t shortcut = 0, shortcut_norm = 0;
    std::size_t stride = 1, dilation = 1;
  };
  struct Stage {
    std::string name;
    std::vector<Block> blocks;
    std::size_t out_channels = 0;
  };

  std::size_t add_conv(const std::string& name, std::size_t out, std::size_t in,
                       std::size_t kernel, bool bias, double init_std);
  std::size_t add_transposed(const std::string& name, std::size_t in, std::size_t out,
                             std::size_t kernel);
  std::size_t add_norm(const std::string& name, std::size_t channels);
  Var<T> run_block(Tape<T>* tape, const Block& block, const Var<T>& input) const;

  BackboneConfig config_;
  std::vector<std::string> parts_;
  NetworkOptions options_;
  std::vector<LayerParams<T>> layers_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t rng_state_;

  std::size_t stem_conv_ = 0, stem_norm_ = 0;
  std::vector<Stage> stages_;
  std::size_t head_deconv_ = 0, head_skip_ = 0, head_readout_ = 0, aux_readout_ = 0;
};

}  // namespace partloc::model
