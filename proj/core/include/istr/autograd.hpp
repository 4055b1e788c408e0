#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "istr/ops.hpp"
#include "istr/tensor.hpp"

namespace istr {

using ops::Reduction;

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Eager reverse-mode tape. Records every op as it executes; backward()
// walks the records once in reverse and accumulates gradients into every
// node on a differentiable path. One backward per recording; reset() clears
// the tape for reuse.
class Tape {
public:
  Var leaf(Tensor value, bool requires_grad = false);

  Var matmul(Var a, Var b);
  // x[N,in] * w[out,in]^T + b[out]
  Var linear(Var x, Var w, Var b);
  // Cross-correlation; pass an invalid Var as bias to skip it.
  Var conv2d(Var input, Var kernel, Var bias, int stride, int pad);
  Var relu(Var x);
  Var maxpool2d(Var x, int kernel, int stride);
  Var reshape(Var x, Shape shape);
  Var add(Var a, Var b);  // same shape
  Var scale(Var x, float s);
  Var sigmoid(Var x);
  // out[r,k] = x[r,k] + m[k] * (p[k] - x[r,k]) with constant rows x:
  // a blend of each row toward pattern p under mask m.
  Var blend_rows(const Tensor& x_rows, Var mask, Var pattern);
  Var sum_abs(Var x);  // scalar L1 norm
  Var softmax_cross_entropy(Var logits, std::vector<int> labels,
                            Reduction r = Reduction::Mean);

  void backward(Var loss);

  const Tensor& value(Var v) const;
  bool has_grad(Var v) const;
  const Tensor& grad(Var v) const;

  // Hash of every data-dependent branch taken during forward (relu sign
  // patterns, pool argmax picks). Two forwards with equal signatures lie on
  // the same smooth piece of the function.
  uint64_t branch_signature() const { return sig_; }

  void reset();
  int node_count() const { return static_cast<int>(nodes_.size()); }

private:
  enum class Kind {
    Leaf, Matmul, Linear, Conv2d, Relu, Maxpool, Reshape, Add, Scale,
    Sigmoid, BlendRows, SumAbs, SoftmaxCE
  };

  struct Node {
    Kind kind;
    int in0 = -1, in1 = -1, in2 = -1;
    Tensor value;
    Tensor grad;          // allocated on first accumulation
    bool needs_grad = false;
    // op payloads
    int i_arg0 = 0, i_arg1 = 0;            // stride/pad or kernel/stride
    float f_arg = 0.0f;                    // scale factor
    std::vector<int32_t> argmax;           // maxpool
    Tensor aux;                            // BlendRows x_rows, SoftmaxCE probs
    std::vector<int> labels;               // SoftmaxCE
    Reduction reduction = Reduction::Mean; // SoftmaxCE
    Shape in_shape;                        // Reshape/Maxpool input shape
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
  uint64_t sig_ = 1469598103934665603ull;

  const Node& node(Var v) const;
  Node& mutate(Var v);
  int push(Node n);
  void check_open() const;
  void accumulate(int id, const Tensor& g);
  void fold_sig(const void* bytes, size_t len);
};

// Report from a central-difference gradient audit.
struct FdReport {
  float max_rel_err = 0.0f;
  int checked = 0;
  int skipped = 0;  // coordinates rejected for crossing a relu/pool branch
};

// Compares analytic d(loss)/dx against (f(x+eps) - f(x-eps)) / (2 eps) on up
// to max_coords coordinates of x (sampled without replacement when x is
// larger). Coordinates whose +/- probes land on different branch signatures
// are skipped rather than scored. build must map (tape, x leaf) to a scalar
// loss var using only ops of that tape.
FdReport finite_difference_check(
    const std::function<Var(Tape&, Var)>& build, const Tensor& x0, float eps,
    int max_coords = 200, uint64_t seed = 17);

}  // namespace istr
