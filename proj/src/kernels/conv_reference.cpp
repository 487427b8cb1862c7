#include "partloc/kernels/conv.hpp"

namespace partloc::kernels::reference {

namespace {

// Input coordinate hit by output position `o` and kernel tap `k`, or -1 when
// it falls in the padding.
std::ptrdiff_t source_index(std::size_t o, std::size_t k, std::size_t stride,
                            std::size_t dilation, std::ptrdiff_t pad,
                            std::size_t extent) {
  const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(o * stride + k * dilation) - pad;
  if (i < 0 || i >= static_cast<std::ptrdiff_t>(extent)) return -1;
  return i;
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> input,
                    std::span<const T> weights, std::span<const T> bias,
                    std::span<T> output) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          T acc = bias.empty() ? T{0} : bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
              const auto ih = source_index(oh, kh, g.stride, g.dilation, g.pad_top, g.in_h);
              if (ih < 0) continue;
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const auto iw = source_index(ow, kw, g.stride, g.dilation, g.pad_left, g.in_w);
                if (iw < 0) continue;
                const T x = input[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw];
                const T w = weights[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw];
                acc += x * w;
              }
            }
          }
          output[((n * g.out_channels + co) * g.out_h + oh) * g.out_w + ow] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> grad_out,
                           std::span<const T> weights, std::span<T> grad_input) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          const T go = grad_out[((n * g.out_channels + co) * g.out_h + oh) * g.out_w + ow];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
              const auto ih = source_index(oh, kh, g.stride, g.dilation, g.pad_top, g.in_h);
              if (ih < 0) continue;
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const auto iw = source_index(ow, kw, g.stride, g.dilation, g.pad_left, g.in_w);
                if (iw < 0) continue;
                const T w = weights[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw];
                grad_input[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw] += go * w;
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(const ConvGeometry& g, std::span<const T> grad_out,
                             std::span<const T> input, std::span<T> grad_weights,
                             std::span<T> grad_bias) {
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      for (std::size_t oh = 0; oh < g.out_h; ++oh) {
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          const T go = grad_out[((n * g.out_channels + co) * g.out_h + oh) * g.out_w + ow];
          if (!grad_bias.empty()) grad_bias[co] += go;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
              const auto ih = source_index(oh, kh, g.stride, g.dilation, g.pad_top, g.in_h);
              if (ih < 0) continue;
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const auto iw = source_index(ow, kw, g.stride, g.dilation, g.pad_left, g.in_w);
                if (iw < 0) continue;
                const T x = input[((n * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw];
                grad_weights[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw] += go * x;
              }
            }
          }
        }
      }
    }
  }
}

#define PARTLOC_INSTANTIATE(T)                                                      \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>,         \
                                  std::span<const T>, std::span<const T>,          \
                                  std::span<T>);                                   \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,  \
                                         std::span<const T>, std::span<T>);        \
  template void conv2d_backward_weights<T>(const ConvGeometry&, std::span<const T>, \
                                           std::span<const T>, std::span<T>,       \
                                           std::span<T>);

PARTLOC_INSTANTIATE(float)
PARTLOC_INSTANTIATE(double)

#undef PARTLOC_INSTANTIATE

}  // namespace partloc::kernels::reference
