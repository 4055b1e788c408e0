#include "istr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "istr/threading.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace istr::ops {

namespace {

void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c) {
  // c[i,:] += a[i,l] * b[l,:] — saxpy form, vectorizes over j.
#pragma omp parallel for schedule(static) num_threads(istr::thread_count())
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<int64_t>(i) * n;
    const float* arow = a + static_cast<int64_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const float av = arow[l];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<int64_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(int m, int n, int k, const float* a, const float* b, float* c) {
  // c[i,j] += dot(a[i,:], b[j,:])
#pragma omp parallel for schedule(static) num_threads(istr::thread_count())
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<int64_t>(i) * k;
    float* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<int64_t>(j) * k;
      float acc = 0.0f;
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

void gemm_tn(int m, int n, int k, const float* a, const float* b, float* c) {
  // a is [k,m]; c[i,:] += a[l,i] * b[l,:]
#pragma omp parallel for schedule(static) num_threads(istr::thread_count())
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<int64_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const float av = a[static_cast<int64_t>(l) * m + i];
      if (av == 0.0f) continue;
      const float* brow = b + static_cast<int64_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tt(int m, int n, int k, const float* a, const float* b, float* c) {
  // c[i,j] += sum_l a[l,i] * b[j,l]
#pragma omp parallel for schedule(static) num_threads(istr::thread_count())
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (int l = 0; l < k; ++l) {
        acc += a[static_cast<int64_t>(l) * m + i] * b[static_cast<int64_t>(j) * k + l];
      }
      crow[j] += acc;
    }
  }
}

void im2col(const Tensor& in, int n_idx, const Conv2dDims& d, float* cols) {
  // cols is [C*kh*kw, OH*OW]
  const int out_hw = d.out_h * d.out_w;
  for (int c = 0; c < d.in_c; ++c) {
    for (int kh = 0; kh < d.k_h; ++kh) {
      for (int kw = 0; kw < d.k_w; ++kw) {
        float* dst = cols + (static_cast<int64_t>(c) * d.k_h * d.k_w +
                             kh * d.k_w + kw) * out_hw;
        for (int oh = 0; oh < d.out_h; ++oh) {
          const int ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.in_h) {
            std::memset(dst + static_cast<int64_t>(oh) * d.out_w, 0,
                        sizeof(float) * static_cast<size_t>(d.out_w));
            continue;
          }
          const float* src = &in.at4(n_idx, c, ih, 0);
          float* drow = dst + static_cast<int64_t>(oh) * d.out_w;
          for (int ow = 0; ow < d.out_w; ++ow) {
            const int iw = ow * d.stride - d.pad + kw;
            drow[ow] = (iw < 0 || iw >= d.in_w) ? 0.0f : src[iw];
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, int n_idx, const Conv2dDims& d, Tensor& out) {
  const int out_hw = d.out_h * d.out_w;
  for (int c = 0; c < d.in_c; ++c) {
    for (int kh = 0; kh < d.k_h; ++kh) {
      for (int kw = 0; kw < d.k_w; ++kw) {
        const float* src = cols + (static_cast<int64_t>(c) * d.k_h * d.k_w +
                                   kh * d.k_w + kw) * out_hw;
        for (int oh = 0; oh < d.out_h; ++oh) {
          const int ih = oh * d.stride - d.pad + kh;
          if (ih < 0 || ih >= d.in_h) continue;
          const float* srow = src + static_cast<int64_t>(oh) * d.out_w;
          float* drow = &out.at4(n_idx, c, ih, 0);
          for (int ow = 0; ow < d.out_w; ++ow) {
            const int iw = ow * d.stride - d.pad + kw;
            if (iw >= 0 && iw < d.in_w) drow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const float* a,
          const float* b, float beta, float* c) {
  if (m < 0 || n < 0 || k < 0) throw ArgumentError("gemm: negative extent");
  if (beta == 0.0f) {
    std::memset(c, 0, sizeof(float) * static_cast<size_t>(m) * static_cast<size_t>(n));
  } else if (beta != 1.0f) {
    throw ArgumentError("gemm: beta must be 0 or 1");
  }
  if (m == 0 || n == 0) return;
  if (k == 0) return;
  if (!trans_a && !trans_b) gemm_nn(m, n, k, a, b, c);
  else if (!trans_a && trans_b) gemm_nt(m, n, k, a, b, c);
  else if (trans_a && !trans_b) gemm_tn(m, n, k, a, b, c);
  else gemm_tt(m, n, k, a, b, c);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), a.data(), b.data(), 0.0f, c.data());
  return c;
}

Conv2dDims conv2d_dims(const Shape& input, const Shape& kernel, int stride, int pad) {
  if (input.size() != 4 || kernel.size() != 4) {
    throw DimensionError("conv2d expects input [N,C,H,W] and kernel [O,C,kh,kw]");
  }
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
  if (pad < 0) throw ArgumentError("conv2d: pad must be >= 0");
  Conv2dDims d;
  d.n = input[0]; d.in_c = input[1]; d.in_h = input[2]; d.in_w = input[3];
  d.out_c = kernel[0]; d.k_h = kernel[2]; d.k_w = kernel[3];
  d.stride = stride; d.pad = pad;
  if (kernel[1] != d.in_c) {
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(d.in_c) +
                         ", kernel expects " + std::to_string(kernel[1]));
  }
  d.out_h = (d.in_h + 2 * pad - d.k_h) / stride + 1;
  d.out_w = (d.in_w + 2 * pad - d.k_w) / stride + 1;
  if (d.in_h + 2 * pad < d.k_h || d.in_w + 2 * pad < d.k_w || d.out_h < 1 || d.out_w < 1) {
    throw DimensionError("conv2d output would be empty for input " + shape_str(input) +
                         " kernel " + shape_str(kernel));
  }
  return d;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  Conv2dDims d = conv2d_dims(input.shape(), kernel.shape(), stride, pad);
  Tensor out({d.n, d.out_c, d.out_h, d.out_w});
  const int cols_rows = d.in_c * d.k_h * d.k_w;
  const int out_hw = d.out_h * d.out_w;
#pragma omp parallel for schedule(static) num_threads(istr::thread_count())
  for (int n = 0; n < d.n; ++n) {
    std::vector<float> cols(static_cast<size_t>(cols_rows) * out_hw);
    im2col(input, n, d, cols.data());
    gemm(false, false, d.out_c, out_hw, cols_rows, kernel.data(), cols.data(), 0.0f,
         &out.at4(n, 0, 0, 0));
  }
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& d_out,
                     int stride, int pad, Tensor* d_input, Tensor* d_kernel) {
  Conv2dDims d = conv2d_dims(input.shape(), kernel.shape(), stride, pad);
  Shape want = {d.n, d.out_c, d.out_h, d.out_w};
  if (d_out.shape() != want) {
    throw DimensionError("conv2d_backward: upstream gradient is " + shape_str(d_out.shape()) +
                         ", expected " + shape_str(want));
  }
  const int cols_rows = d.in_c * d.k_h * d.k_w;
  const int out_hw = d.out_h * d.out_w;
  if (d_input) *d_input = Tensor(input.shape());
  if (d_kernel) *d_kernel = Tensor(kernel.shape());
  // Batch loop kept serial so d_kernel accumulates in one fixed order.
  std::vector<float> cols(static_cast<size_t>(cols_rows) * out_hw);
  std::vector<float> dcols(static_cast<size_t>(cols_rows) * out_hw);
  for (int n = 0; n < d.n; ++n) {
    if (d_kernel) {
      im2col(input, n, d, cols.data());
      // dK[o,r] += dOut_n[o,:] . cols[r,:]
      gemm(false, true, d.out_c, cols_rows, out_hw, &d_out.at4(n, 0, 0, 0), cols.data(),
           1.0f, d_kernel->data());
    }
    if (d_input) {
      // dcols = K^T [r, o] * dOut_n [o, hw]
      gemm(true, false, cols_rows, out_hw, d.out_c, kernel.data(),
           &d_out.at4(n, 0, 0, 0), 0.0f, dcols.data());
      col2im_add(dcols.data(), n, d, *d_input);
    }
  }
}

void bias_add_channels(Tensor& out, const Tensor& bias) {
  if (out.rank() != 4 || bias.rank() != 1 || bias.dim(0) != out.dim(1)) {
    throw DimensionError("bias_add_channels: bias " + shape_str(bias.shape()) +
                         " does not match output " + shape_str(out.shape()));
  }
  const int n = out.dim(0), c = out.dim(1);
  const int hw = out.dim(2) * out.dim(3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < c; ++j) {
      float b = bias[j];
      float* p = &out.at4(i, j, 0, 0);
      for (int k = 0; k < hw; ++k) p[k] += b;
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const float* src = x.data();
  float* dst = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& d_out) {
  if (!x.same_shape(d_out)) {
    throw DimensionError("relu_backward: gradient shape " + shape_str(d_out.shape()) +
                         " does not match input " + shape_str(x.shape()));
  }
  Tensor d_in(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) d_in[i] = x[i] > 0.0f ? d_out[i] : 0.0f;
  return d_in;
}

Tensor maxpool2d(const Tensor& x, int kernel, int stride,
                 std::vector<int32_t>* argmax) {
  if (x.rank() != 4) throw DimensionError("maxpool2d expects [N,C,H,W]");
  if (kernel < 1 || stride < 1) throw ArgumentError("maxpool2d: kernel and stride must be >= 1");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = (h - kernel) / stride + 1;
  const int ow = (w - kernel) / stride + 1;
  if (h < kernel || w < kernel || oh < 1 || ow < 1) {
    throw DimensionError("maxpool2d window " + std::to_string(kernel) +
                         " does not fit input " + shape_str(x.shape()));
  }
  Tensor out({n, c, oh, ow});
  if (argmax) argmax->assign(static_cast<size_t>(out.numel()), -1);
  int64_t oi = 0;
  for (int in = 0; in < n; ++in) {
    for (int ic = 0; ic < c; ++ic) {
      for (int r = 0; r < oh; ++r) {
        for (int col = 0; col < ow; ++col, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          int64_t best_idx = -1;
          for (int kr = 0; kr < kernel; ++kr) {
            for (int kc = 0; kc < kernel; ++kc) {
              const int ih = r * stride + kr;
              const int iw = col * stride + kc;
              const int64_t flat =
                  ((static_cast<int64_t>(in) * c + ic) * h + ih) * w + iw;
              const float v = x[flat];
              if (v > best) {  // strict: ties keep the first (lowest) index
                best = v;
                best_idx = flat;
              }
            }
          }
          out[oi] = best;
          if (argmax) (*argmax)[static_cast<size_t>(oi)] = static_cast<int32_t>(best_idx);
        }
      }
    }
  }
  return out;
}

Tensor maxpool2d_backward(const Shape& in_shape, const std::vector<int32_t>& argmax,
                          const Tensor& d_out) {
  if (static_cast<int64_t>(argmax.size()) != d_out.numel()) {
    throw DimensionError("maxpool2d_backward: argmax cache does not match gradient");
  }
  Tensor d_in(in_shape);
  const int64_t n = d_out.numel();
  for (int64_t i = 0; i < n; ++i) d_in[argmax[static_cast<size_t>(i)]] += d_out[i];
  return d_in;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows expects [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  if (c < 1) throw DimensionError("softmax_rows: empty class dimension");
  Tensor out(logits.shape());
  for (int i = 0; i < n; ++i) {
    const float* row = &logits.at2(i, 0);
    float* orow = &out.at2(i, 0);
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    float sum = 0.0f;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= sum;
  }
  return out;
}

float cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels,
                           Reduction r) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects [N,C] logits");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y < 0 || y >= c) {
      throw ArgumentError("cross_entropy: label " + std::to_string(y) +
                          " out of range for " + std::to_string(c) + " classes");
    }
    const float* row = &logits.at2(i, 0);
    float mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (int j = 0; j < c; ++j) lse += std::exp(static_cast<double>(row[j] - mx));
    total += std::log(lse) - static_cast<double>(row[y] - mx);
  }
  if (r == Reduction::Mean && n > 0) total /= n;
  return static_cast<float>(total);
}

void sgd_step(Tensor& param, const Tensor& grad, Tensor& velocity, float lr,
              float momentum) {
  if (!param.same_shape(grad) || !param.same_shape(velocity)) {
    throw DimensionError("sgd_step: param/grad/velocity shapes disagree");
  }
  if (!(lr > 0.0f)) throw ArgumentError("sgd_step: lr must be > 0");
  if (momentum < 0.0f || momentum >= 1.0f) {
    throw ArgumentError("sgd_step: momentum must be in [0, 1)");
  }
  const int64_t n = param.numel();
  float* p = param.data();
  const float* g = grad.data();
  float* v = velocity.data();
  for (int64_t i = 0; i < n; ++i) {
    v[i] = momentum * v[i] + g[i];
    p[i] -= lr * v[i];
  }
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows expects [N,C]");
  const int n = logits.dim(0), c = logits.dim(1);
  if (c < 1) throw DimensionError("argmax_rows: empty class dimension");
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float* row = &logits.at2(i, 0);
    int best = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace istr::ops
