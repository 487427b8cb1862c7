#include "partloc/engine/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "partloc/kernels/resize.hpp"

namespace partloc::engine {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

template <typename T>
bool wants_grad(Tape<T>* tape, std::initializer_list<const Var<T>*> inputs) {
  if (!tape) return false;
  for (const Var<T>* v : inputs) {
    if (*v && (*v)->requires_grad) return true;
  }
  return false;
}

template <typename T>
Var<T> make_output(Tensor<T> value, bool requires_grad) {
  return make_var(std::move(value), requires_grad);
}

template <typename T>
void require_rank4(const Var<T>& v, const char* op) {
  if (!v || v->tensor.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected an NCHW tensor, got " +
                     (v ? shape_string(v->tensor.shape()) : std::string("null")));
  }
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
std::span<const T> const_span(std::span<T> s) {
  return {s.data(), s.size()};
}

template <typename T>
void check_kernel(const LayerParams<T>& params, const char* op) {
  if (!params.weights || params.weights->tensor.rank() != 4) {
    throw ConfigError(std::string(op) + " '" + params.name +
                      "': weights must be rank 4");
  }
  const auto& w = params.weights->tensor;
  if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
    throw ConfigError(std::string(op) + " '" + params.name +
                      "': kernel extents must be odd, got " + shape_string(w.shape()));
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& input, const LayerParams<T>& params,
              const ConvOptions& options) {
  require_rank4(input, "conv2d");
  check_kernel(params, "conv2d");
  const auto& x = input->tensor;
  const auto& w = params.weights->tensor;
  if (x.dim(1) != w.dim(1)) {
    throw ShapeError("conv2d '" + params.name + "': input has " +
                     std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(w.dim(1)));
  }
  const auto g = kernels::make_geometry(x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0),
                                        w.dim(2), w.dim(3), options.stride,
                                        options.dilation, options.padding);
  Tensor<T> y({g.batch, g.out_channels, g.out_h, g.out_w});
  std::span<const T> bias;
  if (params.bias) bias = params.bias->tensor.data();
  kernels::parallel::conv2d_forward<T>(g, x.data(), w.data(), bias, y.data());

  const bool grad = wants_grad(tape, {&input, &params.weights, &params.bias});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> in = input, weights = params.weights, b = params.bias;
    tape->record(out, [out, in, weights, b, g]() {
      if (!out->tensor.has_grad()) return;
      std::span<const T> go = const_span(out->tensor.grad());
      if (in->requires_grad) {
        kernels::parallel::conv2d_backward_input<T>(g, go, weights->tensor.data(),
                                                   in->tensor.ensure_grad());
      }
      const bool wgrad = weights->requires_grad;
      const bool bgrad = b && b->requires_grad;
      if (wgrad || bgrad) {
        std::vector<T> scratch_w;
        std::span<T> gw;
        if (wgrad) {
          gw = weights->tensor.ensure_grad();
        } else {
          scratch_w.assign(weights->tensor.size(), T{0});
          gw = scratch_w;
        }
        std::span<T> gb;
        if (bgrad) gb = b->tensor.ensure_grad();
        kernels::parallel::conv2d_backward_weights<T>(g, go, in->tensor.data(), gw, gb);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> transposed_conv2d(Tape<T>* tape, const Var<T>& input,
                         const LayerParams<T>& params, std::size_t stride) {
  require_rank4(input, "transposed_conv2d");
  check_kernel(params, "transposed_conv2d");
  if (stride == 0) throw ConfigError("transposed_conv2d: stride must be at least 1");
  const auto& x = input->tensor;
  const auto& w = params.weights->tensor;
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("transposed_conv2d '" + params.name + "': input has " +
                     std::to_string(x.dim(1)) + " channels, kernel expects " +
                     std::to_string(w.dim(0)));
  }
  // Geometry of the forward convolution this op is the adjoint of: it maps
  // [N, out, H*s, W*s] to [N, in, H, W].
  const std::size_t out_channels = w.dim(1);
  const auto g = kernels::make_geometry(x.dim(0), out_channels, x.dim(2) * stride,
                                        x.dim(3) * stride, w.dim(0), w.dim(2), w.dim(3),
                                        stride, 1, Padding::same);
  Tensor<T> y({g.batch, out_channels, g.in_h, g.in_w});
  kernels::parallel::conv2d_backward_input<T>(g, x.data(), w.data(), y.data());
  if (params.bias) {
    const auto& b = params.bias->tensor;
    const std::size_t plane = g.in_h * g.in_w;
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t c = 0; c < out_channels; ++c) {
        T* p = y.data().data() + (n * out_channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
      }
    }
  }

  const bool grad = wants_grad(tape, {&input, &params.weights, &params.bias});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> in = input, weights = params.weights, b = params.bias;
    tape->record(out, [out, in, weights, b, g]() {
      if (!out->tensor.has_grad()) return;
      std::span<const T> go = const_span(out->tensor.grad());
      if (in->requires_grad) {
        std::vector<T> tmp(g.output_size());
        kernels::parallel::conv2d_forward<T>(g, go, weights->tensor.data(), {}, tmp);
        accumulate<T>(in->tensor.ensure_grad(), tmp);
      }
      if (weights->requires_grad) {
        // d<convT_W(x), gy>/dW = d<x, conv_W(gy)>/dW
        kernels::parallel::conv2d_backward_weights<T>(g, in->tensor.data(), go,
                                                     weights->tensor.ensure_grad(), {});
      }
      if (b && b->requires_grad) {
        auto gb = b->tensor.ensure_grad();
        const std::size_t channels = gb.size();
        const std::size_t plane = g.in_h * g.in_w;
        for (std::size_t n = 0; n < g.batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const T* p = go.data() + (n * channels + c) * plane;
            T acc{0};
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            gb[c] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& input) {
  const auto& x = input->tensor;
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  const bool grad = wants_grad(tape, {&input});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> in = input;
    tape->record(out, [out, in]() {
      if (!out->tensor.has_grad()) return;
      auto gi = in->tensor.ensure_grad();
      auto go = out->tensor.grad();
      const auto& xv = in->tensor;
      for (std::size_t i = 0; i < gi.size(); ++i) {
        if (xv[i] > T{0}) gi[i] += go[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& lhs, const Var<T>& rhs) {
  if (lhs->tensor.shape() != rhs->tensor.shape()) {
    throw ShapeError("add: shape mismatch " + shape_string(lhs->tensor.shape()) +
                     " vs " + shape_string(rhs->tensor.shape()));
  }
  Tensor<T> y(lhs->tensor.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = lhs->tensor[i] + rhs->tensor[i];
  const bool grad = wants_grad(tape, {&lhs, &rhs});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> a = lhs, b = rhs;
    tape->record(out, [out, a, b]() {
      if (!out->tensor.has_grad()) return;
      std::span<const T> go = const_span(out->tensor.grad());
      if (a->requires_grad) accumulate<T>(a->tensor.ensure_grad(), go);
      if (b->requires_grad) accumulate<T>(b->tensor.ensure_grad(), go);
    });
  }
  return out;
}

template <typename T>
Var<T> frozen_norm(Tape<T>* tape, const Var<T>& input, const LayerParams<T>& params) {
  require_rank4(input, "frozen_norm");
  if (!params.frozen_stats) {
    throw ConfigError("frozen_norm '" + params.name + "': missing frozen statistics");
  }
  const auto& x = input->tensor;
  const std::size_t channels = x.dim(1);
  const auto& stats = *params.frozen_stats;
  if (stats.mean.size() != channels || stats.variance.size() != channels ||
      params.weights->tensor.size() != channels || params.bias->tensor.size() != channels) {
    throw ShapeError("frozen_norm '" + params.name + "': parameters do not match " +
                     std::to_string(channels) + " channels");
  }
  // Per-channel affine map: y = scale * x + shift.
  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(stats.variance[c] > T{0})) {
      throw ConfigError("frozen_norm '" + params.name + "': variance must be positive");
    }
    inv_std[c] = T{1} / std::sqrt(stats.variance[c] + static_cast<T>(kNormEpsilon));
  }
  const auto& gamma = params.weights->tensor;
  const auto& beta = params.bias->tensor;
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T scale = gamma[c] * inv_std[c];
      const T shift = beta[c] - scale * stats.mean[c];
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[base + i] = scale * x[base + i] + shift;
    }
  }
  const bool grad = wants_grad(tape, {&input, &params.weights, &params.bias});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> in = input, g = params.weights, b = params.bias;
    std::vector<T> mean = stats.mean;
    tape->record(out, [out, in, g, b, inv_std, mean, channels, plane]() {
      if (!out->tensor.has_grad()) return;
      auto go = out->tensor.grad();
      const auto& xv = in->tensor;
      const std::size_t batch = xv.dim(0);
      if (in->requires_grad) {
        auto gi = in->tensor.ensure_grad();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t c = 0; c < channels; ++c) {
            const T scale = g->tensor[c] * inv_std[c];
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gi[base + i] += scale * go[base + i];
          }
        }
      }
      if (g->requires_grad || b->requires_grad) {
        std::span<T> gg, gb;
        if (g->requires_grad) gg = g->tensor.ensure_grad();
        if (b->requires_grad) gb = b->tensor.ensure_grad();
        for (std::size_t c = 0; c < channels; ++c) {
          T sg{0}, sb{0};
          for (std::size_t n = 0; n < batch; ++n) {
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sb += go[base + i];
              sg += go[base + i] * (xv[base + i] - mean[c]) * inv_std[c];
            }
          }
          if (!gg.empty()) gg[c] += sg;
          if (!gb.empty()) gb[c] += sb;
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> crop(Tape<T>* tape, const Var<T>& input, std::size_t rows, std::size_t cols) {
  require_rank4(input, "crop");
  const auto& x = input->tensor;
  if (rows > x.dim(2) || cols > x.dim(3)) {
    throw ShapeError("crop: window " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " exceeds " + shape_string(x.shape()));
  }
  if (rows == x.dim(2) && cols == x.dim(3)) return input;
  const std::size_t planes = x.dim(0) * x.dim(1);
  Tensor<T> y({x.dim(0), x.dim(1), rows, cols});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* src = x.data().data() + (p * x.dim(2) + r) * x.dim(3);
      std::copy(src, src + cols, y.data().data() + (p * rows + r) * cols);
    }
  }
  const bool grad = wants_grad(tape, {&input});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> in = input;
    tape->record(out, [out, in, planes, rows, cols]() {
      if (!out->tensor.has_grad()) return;
      auto gi = in->tensor.ensure_grad();
      auto go = out->tensor.grad();
      const std::size_t in_h = in->tensor.dim(2), in_w = in->tensor.dim(3);
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            gi[(p * in_h + r) * in_w + c] += go[(p * rows + r) * cols + c];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> resize_bilinear(Tape<T>* tape, const Var<T>& input, std::size_t rows,
                       std::size_t cols) {
  require_rank4(input, "resize_bilinear");
  const auto& x = input->tensor;
  if (rows == x.dim(2) && cols == x.dim(3)) return input;
  if (rows == 0 || cols == 0) throw ShapeError("resize_bilinear: empty target");
  const std::size_t planes = x.dim(0) * x.dim(1);
  Tensor<T> y({x.dim(0), x.dim(1), rows, cols});
  kernels::resize_bilinear_forward<T>(planes, x.dim(2), x.dim(3), rows, cols, x.data(),
                                      y.data());
  const bool grad = wants_grad(tape, {&input});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> in = input;
    tape->record(out, [out, in, planes, rows, cols]() {
      if (!out->tensor.has_grad()) return;
      kernels::resize_bilinear_backward<T>(planes, in->tensor.dim(2), in->tensor.dim(3),
                                           rows, cols, const_span(out->tensor.grad()),
                                           in->tensor.ensure_grad());
    });
  }
  return out;
}

template <typename T>
Var<T> slice_channels(Tape<T>* tape, const Var<T>& input, std::size_t begin,
                      std::size_t count) {
  require_rank4(input, "slice_channels");
  const auto& x = input->tensor;
  const std::size_t channels = x.dim(1);
  if (begin + count > channels) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " +
                     std::to_string(channels) + " channels");
  }
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor<T> y({x.dim(0), count, x.dim(2), x.dim(3)});
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const T* src = x.data().data() + (n * channels + begin) * plane;
    std::copy(src, src + count * plane, y.data().data() + n * count * plane);
  }
  const bool grad = wants_grad(tape, {&input});
  Var<T> out = make_output(std::move(y), grad);
  if (grad) {
    Var<T> in = input;
    tape->record(out, [out, in, begin, count, channels, plane]() {
      if (!out->tensor.has_grad()) return;
      auto gi = in->tensor.ensure_grad();
      auto go = out->tensor.grad();
      const std::size_t batch = in->tensor.dim(0);
      for (std::size_t n = 0; n < batch; ++n) {
        T* dst = gi.data() + (n * channels + begin) * plane;
        const T* src = go.data() + n * count * plane;
        for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> sum(Tape<T>* tape, const Var<T>& input) {
  T acc{0};
  for (T v : input->tensor.data()) acc += v;
  const bool grad = wants_grad(tape, {&input});
  Var<T> out = make_output(Tensor<T>({1}, acc), grad);
  if (grad) {
    Var<T> in = input;
    tape->record(out, [out, in]() {
      if (!out->tensor.has_grad()) return;
      const T g = out->tensor.grad()[0];
      for (T& v : in->tensor.ensure_grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Var<T> weighted_sum(Tape<T>* tape, const std::vector<std::pair<Var<T>, T>>& terms) {
  T acc{0};
  bool grad = false;
  for (const auto& [term, weight] : terms) {
    if (term->tensor.size() != 1) {
      throw ShapeError("weighted_sum: terms must be scalars, got " +
                       shape_string(term->tensor.shape()));
    }
    acc += weight * term->tensor[0];
    grad = grad || (tape && term->requires_grad);
  }
  Var<T> out = make_output(Tensor<T>({1}, acc), grad);
  if (grad) {
    auto captured = terms;
    tape->record(out, [out, captured]() {
      if (!out->tensor.has_grad()) return;
      const T g = out->tensor.grad()[0];
      for (const auto& [term, weight] : captured) {
        if (term->requires_grad) term->tensor.ensure_grad()[0] += weight * g;
      }
    });
  }
  return out;
}

namespace {

template <typename T>
T checked_mask_total(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask,
                     const char* op) {
  if (pred->tensor.shape() != target.shape() || pred->tensor.shape() != mask.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(pred->tensor.shape()) + " / " +
                     shape_string(target.shape()) + " / " + shape_string(mask.shape()));
  }
  T total{0};
  for (T m : mask.data()) total += m;
  if (!(total > T{0})) {
    throw DegenerateLossError(std::string(op) + ": mask selects no elements");
  }
  return total;
}

}  // namespace

template <typename T>
Var<T> sigmoid_cross_entropy_masked(Tape<T>* tape, const Var<T>& logits,
                                    const Tensor<T>& targets, const Tensor<T>& mask) {
  const T total = checked_mask_total(logits, targets, mask, "sigmoid_cross_entropy_masked");
  const auto& z = logits->tensor;
  T acc{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (mask[i] == T{0}) continue;
    const T x = z[i];
    acc += mask[i] * (std::max(x, T{0}) - x * targets[i] + std::log1p(std::exp(-std::abs(x))));
  }
  const T loss = acc / total;
  if (!std::isfinite(loss)) throw DegenerateLossError("sigmoid_cross_entropy_masked: non-finite loss");
  const bool grad = wants_grad(tape, {&logits});
  Var<T> out = make_output(Tensor<T>({1}, loss), grad);
  if (grad) {
    Var<T> in = logits;
    tape->record(out, [out, in, targets, mask, total]() {
      if (!out->tensor.has_grad()) return;
      const T g = out->tensor.grad()[0] / total;
      auto gi = in->tensor.ensure_grad();
      const auto& zz = in->tensor;
      for (std::size_t i = 0; i < gi.size(); ++i) {
        if (mask[i] == T{0}) continue;
        const T x = zz[i];
        const T prob = x >= T{0} ? T{1} / (T{1} + std::exp(-x))
                                 : std::exp(x) / (T{1} + std::exp(x));
        gi[i] += g * mask[i] * (prob - targets[i]);
      }
    });
  }
  return out;
}

template <typename T>
Var<T> huber_loss(Tape<T>* tape, const Var<T>& prediction, const Tensor<T>& target,
                  const Tensor<T>& mask, T delta) {
  if (!(delta > T{0})) throw ConfigError("huber_loss: delta must be positive");
  const T total = checked_mask_total(prediction, target, mask, "huber_loss");
  const auto& p = prediction->tensor;
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i] == T{0}) continue;
    const T r = std::abs(p[i] - target[i]);
    acc += mask[i] * (r <= delta ? T{0.5} * r * r : delta * (r - T{0.5} * delta));
  }
  const T loss = acc / total;
  if (!std::isfinite(loss)) throw DegenerateLossError("huber_loss: non-finite loss");
  const bool grad = wants_grad(tape, {&prediction});
  Var<T> out = make_output(Tensor<T>({1}, loss), grad);
  if (grad) {
    Var<T> in = prediction;
    tape->record(out, [out, in, target, mask, total, delta]() {
      if (!out->tensor.has_grad()) return;
      const T g = out->tensor.grad()[0] / total;
      auto gi = in->tensor.ensure_grad();
      const auto& pv = in->tensor;
      for (std::size_t i = 0; i < gi.size(); ++i) {
        if (mask[i] == T{0}) continue;
        const T r = pv[i] - target[i];
        const T d = std::abs(r) <= delta ? r : (r > T{0} ? delta : -delta);
        gi[i] += g * mask[i] * d;
      }
    });
  }
  return out;
}

#define PARTLOC_INSTANTIATE(T)                                                               \
  template Var<T> conv2d<T>(Tape<T>*, const Var<T>&, const LayerParams<T>&,                 \
                            const ConvOptions&);                                            \
  template Var<T> transposed_conv2d<T>(Tape<T>*, const Var<T>&, const LayerParams<T>&,      \
                                       std::size_t);                                        \
  template Var<T> relu<T>(Tape<T>*, const Var<T>&);                                         \
  template Var<T> add<T>(Tape<T>*, const Var<T>&, const Var<T>&);                           \
  template Var<T> frozen_norm<T>(Tape<T>*, const Var<T>&, const LayerParams<T>&);           \
  template Var<T> crop<T>(Tape<T>*, const Var<T>&, std::size_t, std::size_t);               \
  template Var<T> resize_bilinear<T>(Tape<T>*, const Var<T>&, std::size_t, std::size_t);    \
  template Var<T> slice_channels<T>(Tape<T>*, const Var<T>&, std::size_t, std::size_t);     \
  template Var<T> sum<T>(Tape<T>*, const Var<T>&);                                          \
  template Var<T> weighted_sum<T>(Tape<T>*, const std::vector<std::pair<Var<T>, T>>&);      \
  template Var<T> sigmoid_cross_entropy_masked<T>(Tape<T>*, const Var<T>&, const Tensor<T>&, \
                                                  const Tensor<T>&);                        \
  template Var<T> huber_loss<T>(Tape<T>*, const Var<T>&, const Tensor<T>&, const Tensor<T>&, \
                                T);

PARTLOC_INSTANTIATE(float)
PARTLOC_INSTANTIATE(double)

#undef PARTLOC_INSTANTIATE

}  // namespace partloc::engine
