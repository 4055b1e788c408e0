// Hot-path kernels: GEMM and the im2col convolution built on it.

#include <benchmark/benchmark.h>

#include "istr/ops.hpp"
#include "istr/rng.hpp"
#include "istr/tensor.hpp"

namespace {

istr::Tensor random_tensor(istr::Shape shape, uint64_t seed) {
  istr::Tensor t(shape);
  istr::Rng rng(seed);
  for (int i = 0; i < t.numel(); ++i) t.data()[i] = rng.next_float() - 0.5f;
  return t;
}

void BM_Matmul(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  istr::Tensor a = random_tensor({n, n}, 1);
  istr::Tensor b = random_tensor({n, n}, 2);
  for (auto _ : state) {
    istr::Tensor c = istr::ops::matmul(a, b);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2dForward(benchmark::State& state) {
  int batch = static_cast<int>(state.range(0));
  istr::Tensor input = random_tensor({batch, 16, 28, 28}, 3);
  istr::Tensor kernel = random_tensor({32, 16, 3, 3}, 4);
  for (auto _ : state) {
    istr::Tensor out = istr::ops::conv2d(input, kernel, 1, 1);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dForward)->Arg(1)->Arg(16)->Arg(64);

void BM_Conv2dBackward(benchmark::State& state) {
  int batch = static_cast<int>(state.range(0));
  istr::Tensor input = random_tensor({batch, 16, 28, 28}, 5);
  istr::Tensor kernel = random_tensor({32, 16, 3, 3}, 6);
  istr::Tensor d_out = random_tensor({batch, 32, 28, 28}, 7);
  istr::Tensor d_input(input.shape());
  istr::Tensor d_kernel(kernel.shape());
  for (auto _ : state) {
    d_input.fill(0.0f);
    d_kernel.fill(0.0f);
    istr::ops::conv2d_backward(input, kernel, d_out, 1, 1, &d_input, &d_kernel);
    benchmark::DoNotOptimize(d_input.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_Conv2dBackward)->Arg(1)->Arg(16)->Arg(64);

}  // namespace
