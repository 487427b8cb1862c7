#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "partloc/engine/tape.hpp"
#include "partloc/kernels/conv.hpp"

namespace partloc::engine {

using kernels::Padding;

template <typename T>
struct FrozenStats {
  std::vector<T> mean;
  std::vector<T> variance;
};

/// Parameters of one named layer. For convolutions `weights` is
/// [out, in, kh, kw] (transposed convolutions: [in, out, kh, kw]); for
/// frozen normalization `weights`/`bias` are the per-channel scale/shift.
template <typename T>
struct LayerParams {
  std::string name;
  Var<T> weights;
  Var<T> bias;
  std::optional<FrozenStats<T>> frozen_stats;
  bool trainable = true;

  void set_trainable(bool on) {
    trainable = on;
    if (weights) weights->requires_grad = on;
    if (bias) bias->requires_grad = on;
  }
};

struct ConvOptions {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::same;
};

inline constexpr double kNormEpsilon = 1e-5;

// Every op takes an optional tape; with a null tape nothing is recorded and
// the result carries no gradient path (inference mode).

template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& input, const LayerParams<T>& params,
              const ConvOptions& options = {});

/// Adjoint of a same-padded conv2d with the given stride: output extents are
/// input extents times stride.
template <typename T>
Var<T> transposed_conv2d(Tape<T>* tape, const Var<T>& input,
                         const LayerParams<T>& params, std::size_t stride);

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& input);

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& lhs, const Var<T>& rhs);

/// gamma * (x - mean) / sqrt(var + 1e-5) + beta with stored statistics.
template <typename T>
Var<T> frozen_norm(Tape<T>* tape, const Var<T>& input, const LayerParams<T>& params);

/// Keeps the top-left rows x cols window of an NCHW tensor.
template <typename T>
Var<T> crop(Tape<T>* tape, const Var<T>& input, std::size_t rows, std::size_t cols);

template <typename T>
Var<T> resize_bilinear(Tape<T>* tape, const Var<T>& input, std::size_t rows,
                       std::size_t cols);

template <typename T>
Var<T> slice_channels(Tape<T>* tape, const Var<T>& input, std::size_t begin,
                      std::size_t count);

/// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(Tape<T>* tape, const Var<T>& input);

/// sum_i weight_i * term_i over scalar terms.
template <typename T>
Var<T> weighted_sum(Tape<T>* tape, const std::vector<std::pair<Var<T>, T>>& terms);

/// Masked mean sigmoid cross-entropy, evaluated in the overflow-free form
/// max(z,0) - z*t + log(1 + exp(-|z|)).
template <typename T>
Var<T> sigmoid_cross_entropy_masked(Tape<T>* tape, const Var<T>& logits,
                                    const Tensor<T>& targets, const Tensor<T>& mask);

/// Masked mean Huber penalty.
template <typename T>
Var<T> huber_loss(Tape<T>* tape, const Var<T>& prediction, const Tensor<T>& target,
                  const Tensor<T>& mask, T delta = T{1});

}  // namespace partloc::engine
