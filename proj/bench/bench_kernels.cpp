// Times the OpenMP kernels against the serial reference kernels on
// toyfcn-sized layers and checks that both produce the same numbers.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "gp/kernels.hpp"
#include "gp/random.hpp"

using namespace gp;
namespace k = gp::kernels;
namespace ref = gp::kernels::reference;

namespace {

std::vector<double> rand_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, -1.0, 1.0);
  return v;
}

// Best-of-reps wall time in milliseconds.
double time_ms(const std::function<void()>& fn, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void row(const std::string& name, double fast, double slow, double diff) {
  std::printf("%-32s %10.3f %10.3f %8.2fx %10.2e\n", name.c_str(), fast, slow, slow / fast, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int reps = argc > 1 ? std::max(1, std::atoi(argv[1])) : 5;
  Rng rng(1);
  std::printf("threads: %d, best of %d\n", omp_get_max_threads(), reps);
  std::printf("%-32s %10s %10s %9s %10s\n", "kernel", "omp ms", "ref ms", "speedup", "max diff");

  const std::vector<std::pair<std::string, k::ConvGeometry>> convs = {
      {"conv1 3->16 64x64 k3", {3, 64, 64, 16, 3, 1, 1}},
      {"conv2 16->32 32x32 k3", {16, 32, 32, 32, 3, 1, 1}},
      {"fc5 64->64 8x8 k5", {64, 8, 8, 64, 5, 1, 2}},
      {"mnist conv2 20->50 12x12 k5", {20, 12, 12, 50, 5, 1, 0}},
  };
  for (const auto& [name, g] : convs) {
    const auto x = rand_vec(g.in_channels * g.in_h * g.in_w, rng);
    const auto w = rand_vec(g.out_channels * g.patch(), rng);
    const auto b = rand_vec(g.out_channels, rng);
    const auto gy = rand_vec(g.out_channels * g.out_h() * g.out_w(), rng);
    std::vector<double> y1(gy.size()), y2(gy.size()), gx1(x.size()), gx2(x.size());
    std::vector<double> gw1(w.size()), gw2(w.size()), gb1(b.size()), gb2(b.size());
    const double f1 = time_ms([&] { k::conv2d_forward(g, x, w, b, y1); }, reps);
    const double f2 = time_ms([&] { ref::conv2d_forward(g, x, w, b, y2); }, reps);
    row(name + " fwd", f1, f2, max_diff(y1, y2));
    const double i1 = time_ms([&] { k::conv2d_backward_input(g, w, gy, gx1); }, reps);
    const double i2 = time_ms([&] { ref::conv2d_backward_input(g, w, gy, gx2); }, reps);
    row(name + " bwd-in", i1, i2, max_diff(gx1, gx2));
    const double p1 = time_ms([&] {
      std::fill(gw1.begin(), gw1.end(), 0.0);
      std::fill(gb1.begin(), gb1.end(), 0.0);
      k::conv2d_backward_params(g, x, gy, gw1, gb1);
    }, reps);
    const double p2 = time_ms([&] {
      std::fill(gw2.begin(), gw2.end(), 0.0);
      std::fill(gb2.begin(), gb2.end(), 0.0);
      ref::conv2d_backward_params(g, x, gy, gw2, gb2);
    }, reps);
    row(name + " bwd-w", p1, p2, max_diff(gw1, gw2));
  }

  {
    const k::PoolGeometry g{16, 64, 64, 2, 2};
    const auto x = rand_vec(16 * 64 * 64, rng);
    const auto gy = rand_vec(16 * 32 * 32, rng);
    std::vector<double> y1(gy.size()), y2(gy.size()), gx1(x.size()), gx2(x.size());
    row("maxpool 16x64x64 fwd", time_ms([&] { k::maxpool2d_forward(g, x, y1); }, reps),
        time_ms([&] { ref::maxpool2d_forward(g, x, y2); }, reps), max_diff(y1, y2));
    row("maxpool 16x64x64 bwd", time_ms([&] { k::maxpool2d_backward(g, x, gy, gx1); }, reps),
        time_ms([&] { ref::maxpool2d_backward(g, x, gy, gx2); }, reps), max_diff(gx1, gx2));
  }
  {
    const std::size_t in = 800, out = 500;
    const auto x = rand_vec(in, rng);
    const auto w = rand_vec(in * out, rng);
    const auto b = rand_vec(out, rng);
    const auto gy = rand_vec(out, rng);
    std::vector<double> y1(out), y2(out), gx1(in), gx2(in);
    row("linear 800->500 fwd", time_ms([&] { k::linear_forward(in, out, x, w, b, y1); }, reps),
        time_ms([&] { ref::linear_forward(in, out, x, w, b, y2); }, reps), max_diff(y1, y2));
    row("linear 800->500 bwd-in", time_ms([&] { k::linear_backward_input(in, out, w, gy, gx1); }, reps),
        time_ms([&] { ref::linear_backward_input(in, out, w, gy, gx2); }, reps), max_diff(gx1, gx2));
  }
  {
    const k::UpsampleGeometry g{4, 8, 8, 64, 64};
    const auto x = rand_vec(4 * 8 * 8, rng);
    const auto gy = rand_vec(4 * 64 * 64, rng);
    std::vector<double> y1(gy.size()), y2(gy.size()), gx1(x.size()), gx2(x.size());
    row("upsample 4x8x8->64 fwd", time_ms([&] { k::bilinear_upsample_forward(g, x, y1); }, reps),
        time_ms([&] { ref::bilinear_upsample_forward(g, x, y2); }, reps), max_diff(y1, y2));
    row("upsample 4x8x8->64 bwd", time_ms([&] { k::bilinear_upsample_backward(g, gy, gx1); }, reps),
        time_ms([&] { ref::bilinear_upsample_backward(g, gy, gx2); }, reps), max_diff(gx1, gx2));
  }
  return 0;
}
