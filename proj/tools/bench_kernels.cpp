// Compares the OpenMP kernels against the serial reference implementations.
// Usage: bench_kernels [reps]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "tseg/kernels.hpp"
#include "tseg/rng.hpp"

using namespace tseg;
using Clock = std::chrono::steady_clock;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
  fn(); // warm up
  const auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = Clock::now();
  return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void report(const char* name, double flops, double t_ref, double t_omp) {
  std::printf("%-24s %10.4f ms %10.4f ms %8.2fx %9.2f GFLOP/s\n", name,
              t_ref * 1e3, t_omp * 1e3, t_ref / t_omp, flops / t_omp * 1e-9);
}

} // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::atoi(argv[1]) : 3;
  if (reps < 1) {
    std::fprintf(stderr, "usage: bench_kernels [reps>=1]\n");
    return 2;
  }
  auto rng = Rng::substream(1, "bench");

  const Shape4 xs{8, 16, 100, 84};
  const int64_t co = 16, k = 3;
  const Shape4 ys{xs.n, co, xs.h, xs.w};
  std::vector<float> x(xs.numel()), w(co * xs.c * k * k), b(co),
      y(ys.numel()), gy(ys.numel());
  for (auto& v : x) v = float(rng.uniform(-1, 1));
  for (auto& v : w) v = float(rng.uniform(-1, 1));
  for (auto& v : b) v = float(rng.uniform(-1, 1));
  for (auto& v : gy) v = float(rng.uniform(-1, 1));

  std::printf("threads: %d, conv shape x=[%lld,%lld,%lld,%lld] co=%lld k=%lld\n\n",
              omp_get_max_threads(), (long long)xs.n, (long long)xs.c,
              (long long)xs.h, (long long)xs.w, (long long)co, (long long)k);
  std::printf("%-24s %13s %13s %9s %17s\n", "kernel", "serial", "openmp",
              "speedup", "openmp rate");

  const double conv_flops = 2.0 * double(ys.numel()) * double(xs.c) * k * k;

  report("conv2d forward", conv_flops,
         time_of([&] { kern::ref::conv2d_forward(x.data(), xs, w.data(), co,
                                                 k, b.data(), y.data()); },
                 reps),
         time_of([&] { kern::conv2d_forward(x.data(), xs, w.data(), co, k,
                                            b.data(), y.data()); },
                 reps));

  std::vector<float> gx(xs.numel());
  report("conv2d dgrad", conv_flops,
         time_of([&] { kern::ref::conv2d_dgrad(gy.data(), ys, w.data(), xs.c,
                                               k, gx.data()); },
                 reps),
         time_of([&] { kern::conv2d_dgrad(gy.data(), ys, w.data(), xs.c, k,
                                          gx.data()); },
                 reps));

  std::vector<float> gw(w.size()), gb(co);
  report("conv2d wgrad", conv_flops,
         time_of([&] { kern::ref::conv2d_wgrad(x.data(), xs, gy.data(), co, k,
                                               gw.data(), gb.data()); },
                 reps),
         time_of([&] { kern::conv2d_wgrad(x.data(), xs, gy.data(), co, k,
                                          gw.data(), gb.data()); },
                 reps));

  std::vector<float> py(xs.numel() / 4);
  std::vector<uint8_t> idx(py.size());
  report("maxpool2 forward", 3.0 * double(py.size()),
         time_of([&] { kern::ref::maxpool2_forward(x.data(), xs, py.data(),
                                                   idx.data()); },
                 reps),
         time_of([&] { kern::maxpool2_forward(x.data(), xs, py.data(),
                                              idx.data()); },
                 reps));

  std::vector<float> uy(xs.numel() * 4);
  report("upsample2 forward", 8.0 * double(uy.size()),
         time_of([&] { kern::ref::upsample2_forward(x.data(), xs, uy.data()); },
                 reps),
         time_of([&] { kern::upsample2_forward(x.data(), xs, uy.data()); },
                 reps));

  std::vector<float> gamma(xs.c, 1.0f), beta(xs.c, 0.0f), m(xs.c), v(xs.c);
  std::vector<float> bny(xs.numel());
  report("batchnorm train fwd", 4.0 * double(xs.numel()),
         time_of([&] { kern::ref::batchnorm_train_forward(
                           x.data(), xs, gamma.data(), beta.data(), 1e-3f,
                           bny.data(), m.data(), v.data()); },
                 reps),
         time_of([&] { kern::batchnorm_train_forward(
                           x.data(), xs, gamma.data(), beta.data(), 1e-3f,
                           bny.data(), m.data(), v.data()); },
                 reps));

  return 0;
}
