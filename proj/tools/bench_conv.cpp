// Measures the direct conv2d forward/backward throughput on shapes used by
// the denoiser, so training budgets can be sanity-checked on one core.
#include <chrono>
#include <cstdio>

#include "redraw/rng.hpp"
#include "redraw/tensor.hpp"

using namespace redraw;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * 0.1;
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void bench(const char* label, int N, int C, int F, int H, int reps) {
  Rng rng(7);
  Tensor x = random_tensor({N, C, H, H}, rng, true);
  Tensor w = random_tensor({F, C, 3, 3}, rng, true);
  // flops: fwd 2*N*F*C*9*H*H, bwd roughly twice that again
  double fwd_flops = 2.0 * N * F * C * 9.0 * H * H * reps;

  auto t0 = std::chrono::steady_clock::now();
  {
    NoGradGuard ng;
    for (int i = 0; i < reps; ++i) {
      Tensor y = conv2d(x, w, 1, 1);
      (void)y;
    }
  }
  double fwd_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) {
    Tensor y = conv2d(x, w, 1, 1);
    Tensor l = mse(y, Tensor::zeros(y.shape()));
    backward(l);
    x.zero_grad();
    w.zero_grad();
  }
  double train_s = seconds_since(t0);

  std::printf("%-28s fwd %7.1f ms/rep  %6.2f GFLOP/s   fwd+bwd %7.1f ms/rep\n",
              label, 1e3 * fwd_s / reps, fwd_flops / fwd_s / 1e9,
              1e3 * train_s / reps);
}

}  // namespace

int main() {
  bench("denoiser e0 4->16 64x64", 4, 4, 16, 64, 20);
  bench("denoiser e1 16->32 32x32", 4, 16, 32, 32, 20);
  bench("denoiser mid 32->32 16x16", 4, 32, 32, 16, 20);
  bench("seg 8->16 32x32 b8", 8, 8, 16, 32, 20);
  return 0;
}
