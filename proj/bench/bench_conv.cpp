// Serial reference kernels against the OpenMP kernels on the convolution
// shapes the part detector runs at a 256x256 input.
#include <CLI11.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "partloc/kernels/conv.hpp"

using namespace partloc::kernels;

namespace {

struct Shape {
  const char* name;
  std::size_t c, h, w, oc, k, stride, dilation;
};

const Shape kShapes[] = {
    {"stem 7x7/2", 3, 256, 256, 32, 7, 2, 1},
    {"block 3x3", 32, 64, 64, 32, 3, 1, 1},
    {"down 3x3/2", 64, 64, 64, 128, 3, 2, 1},
    {"block 3x3", 128, 32, 32, 128, 3, 1, 1},
    {"dilated 3x3 d2", 128, 32, 32, 128, 3, 1, 2},
    {"head 1x1", 128, 32, 32, 6, 1, 1, 1},
};

double best_ms(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark serial and OpenMP convolution kernels"};
  int reps = 5;
  int threads = 0;
  std::size_t batch = 1;
  app.add_option("--reps", reps, "Timed repetitions per kernel; the fastest is reported")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "OpenMP threads for the parallel kernels (default: all)");
  app.add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  std::printf("threads=%d batch=%zu reps=%d\n", omp_get_max_threads(), batch, reps);
  std::printf("%-16s %-9s %10s %10s %8s %10s\n", "shape", "kernel", "serial_ms", "omp_ms", "speedup", "max_diff");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  double serial_total = 0.0, omp_total = 0.0;
  for (const auto& s : kShapes) {
    const auto g = make_geometry(batch, s.c, s.h, s.w, s.oc, s.k, s.k, s.stride, s.dilation, Padding::same);
    std::vector<float> x(batch * s.c * s.h * s.w), w(s.oc * s.c * s.k * s.k), b(s.oc);
    for (auto* v : {&x, &w, &b}) std::generate(v->begin(), v->end(), [&] { return dist(rng); });
    const std::size_t out_size = batch * s.oc * g.out_h * g.out_w;
    std::vector<float> gy(out_size);
    std::generate(gy.begin(), gy.end(), [&] { return dist(rng); });

    std::vector<float> y_ref(out_size), y_par(out_size);
    const double f_ref = best_ms(reps, [&] {
      reference::conv2d_forward<float>(g, x, w, b, y_ref);
    });
    const double f_par = best_ms(reps, [&] {
      parallel::conv2d_forward<float>(g, x, w, b, y_par);
    });

    std::vector<float> gx_ref(x.size()), gx_par(x.size());
    const double bi_ref = best_ms(reps, [&] {
      std::fill(gx_ref.begin(), gx_ref.end(), 0.0f);
      reference::conv2d_backward_input<float>(g, gy, w, gx_ref);
    });
    const double bi_par = best_ms(reps, [&] {
      std::fill(gx_par.begin(), gx_par.end(), 0.0f);
      parallel::conv2d_backward_input<float>(g, gy, w, gx_par);
    });

    std::vector<float> gw_ref(w.size()), gb_ref(b.size()), gw_par(w.size()), gb_par(b.size());
    const double bw_ref = best_ms(reps, [&] {
      std::fill(gw_ref.begin(), gw_ref.end(), 0.0f);
      std::fill(gb_ref.begin(), gb_ref.end(), 0.0f);
      reference::conv2d_backward_weights<float>(g, gy, x, gw_ref, gb_ref);
    });
    const double bw_par = best_ms(reps, [&] {
      std::fill(gw_par.begin(), gw_par.end(), 0.0f);
      std::fill(gb_par.begin(), gb_par.end(), 0.0f);
      parallel::conv2d_backward_weights<float>(g, gy, x, gw_par, gb_par);
    });

    const struct {
      const char* kernel;
      double ref, par, diff;
    } rows[] = {{"forward", f_ref, f_par, max_abs_diff(y_ref, y_par)},
                {"grad_in", bi_ref, bi_par, max_abs_diff(gx_ref, gx_par)},
                {"grad_w", bw_ref, bw_par, std::max(max_abs_diff(gw_ref, gw_par), max_abs_diff(gb_ref, gb_par))}};
    for (const auto& r : rows) {
      std::printf("%-16s %-9s %10.3f %10.3f %7.2fx %10.2e\n", s.name, r.kernel, r.ref, r.par, r.ref / r.par, r.diff);
      serial_total += r.ref;
      omp_total += r.par;
    }
  }
  std::printf("%-16s %-9s %10.3f %10.3f %7.2fx\n", "total", "", serial_total, omp_total, serial_total / omp_total);
  return 0;
}
