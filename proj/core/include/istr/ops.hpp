#pragma once

#include <cstdint>
#include <vector>

#include "istr/tensor.hpp"

namespace istr::ops {

// C[m,n] (beta=0: =, beta=1: +=) op(A) * op(B). Row-major, tight leading
// dims. Accumulation order over k is fixed, so results are reproducible
// run-to-run for a given build.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a,
          const float* b, float beta, float* c);

// Rank-2 product with shape checks.
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dDims {
  int n, in_c, in_h, in_w;
  int out_c, k_h, k_w;
  int stride, pad;
  int out_h, out_w;
};

// Validates [N,C,H,W] x [O,C,kh,kw] and computes output extents; throws
// DimensionError when channels disagree or the output would be empty.
Conv2dDims conv2d_dims(const Shape& input, const Shape& kernel, int stride, int pad);

// Cross-correlation (no kernel flip), zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad);
void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& d_out,
                     int stride, int pad, Tensor* d_input, Tensor* d_kernel);

// out[n,c,h,w] += bias[c]
void bias_add_channels(Tensor& out, const Tensor& bias);

Tensor relu(const Tensor& x);
// d_in = d_out where x > 0, else 0 (subgradient at the kink is 0).
Tensor relu_backward(const Tensor& x, const Tensor& d_out);

// Non-overlapping or strided max pooling, no padding. `argmax`, when given,
// receives one flat input index per output element; ties resolve to the
// lowest index.
Tensor maxpool2d(const Tensor& x, int kernel, int stride,
                 std::vector<int32_t>* argmax = nullptr);
Tensor maxpool2d_backward(const Shape& in_shape, const std::vector<int32_t>& argmax,
                          const Tensor& d_out);

// Row-wise stable softmax for [N,C].
Tensor softmax_rows(const Tensor& logits);

// Mean or summed cross entropy straight from logits (log-sum-exp form, no
// intermediate probabilities, finite for any finite logits).
enum class Reduction { Mean, Sum };
float cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels,
                           Reduction r);

// v = momentum * v + g ; p -= lr * v
void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, float lr,
              float momentum);

// Row-wise argmax; ties resolve to the lower class id.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace istr::ops
