#include <algorithm>
#include <string>

#include "partloc/engine/tensor.hpp"
#include "partloc/kernels/conv.hpp"

namespace partloc::kernels {

AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride,
                   std::size_t dilation, Padding padding) {
  if (stride == 0 || dilation == 0) {
    throw engine::ConfigError("stride and dilation must be at least 1");
  }
  const std::size_t effective = (kernel - 1) * dilation + 1;
  AxisPlan plan;
  if (padding == Padding::same) {
    plan.out = (in + stride - 1) / stride;
    const std::ptrdiff_t total =
        static_cast<std::ptrdiff_t>((plan.out - 1) * stride + effective) -
        static_cast<std::ptrdiff_t>(in);
    plan.pad_before = std::max<std::ptrdiff_t>(total, 0) / 2;
  } else {
    if (in < effective) {
      throw engine::ShapeError("valid convolution: input extent " +
                               std::to_string(in) + " smaller than kernel " +
                               std::to_string(effective));
    }
    plan.out = (in - effective) / stride + 1;
    plan.pad_before = 0;
  }
  return plan;
}

ConvGeometry make_geometry(std::size_t batch, std::size_t in_channels,
                           std::size_t in_h, std::size_t in_w,
                           std::size_t out_channels, std::size_t kernel_h,
                           std::size_t kernel_w, std::size_t stride,
                           std::size_t dilation, Padding padding) {
  const AxisPlan rows = plan_axis(in_h, kernel_h, stride, dilation, padding);
  const AxisPlan cols = plan_axis(in_w, kernel_w, stride, dilation, padding);
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = in_channels;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_channels = out_channels;
  g.kernel_h = kernel_h;
  g.kernel_w = kernel_w;
  g.stride = stride;
  g.dilation = dilation;
  g.pad_top = rows.pad_before;
  g.pad_left = cols.pad_before;
  g.out_h = rows.out;
  g.out_w = cols.out;
  return g;
}

}  // namespace partloc::kernels
