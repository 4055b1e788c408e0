#include "istr/autograd.hpp"

#include <cmath>
#include <cstring>

#include "istr/rng.hpp"

namespace istr {

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw ArgumentError("unknown var id " + std::to_string(v.id));
  }
  return nodes_[static_cast<size_t>(v.id)];
}

Tape::Node& Tape::mutate(Var v) {
  return const_cast<Node&>(node(v));
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::check_open() const {
  if (consumed_) {
    throw StateError("tape already consumed by backward(); call reset() first");
  }
}

void Tape::fold_sig(const void* bytes, size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = sig_;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  sig_ = h;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_open();
  Node n;
  n.kind = Kind::Leaf;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  return Var{push(std::move(n))};
}

Var Tape::matmul(Var a, Var b) {
  check_open();
  const Node& na = node(a);
  const Node& nb = node(b);
  Node n;
  n.kind = Kind::Matmul;
  n.in0 = a.id;
  n.in1 = b.id;
  n.value = ops::matmul(na.value, nb.value);
  n.needs_grad = na.needs_grad || nb.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::linear(Var x, Var w, Var b) {
  check_open();
  const Node& nx = node(x);
  const Node& nw = node(w);
  const Node& nb = node(b);
  if (nx.value.rank() != 2 || nw.value.rank() != 2 || nb.value.rank() != 1) {
    throw DimensionError("linear expects x [N,in], w [out,in], b [out]");
  }
  if (nx.value.dim(1) != nw.value.dim(1) || nw.value.dim(0) != nb.value.dim(0)) {
    throw DimensionError("linear shape mismatch: x " + shape_str(nx.value.shape()) +
                         " w " + shape_str(nw.value.shape()) + " b " +
                         shape_str(nb.value.shape()));
  }
  const int rows = nx.value.dim(0), out = nw.value.dim(0), in = nw.value.dim(1);
  Node n;
  n.kind = Kind::Linear;
  n.in0 = x.id;
  n.in1 = w.id;
  n.in2 = b.id;
  n.value = Tensor({rows, out});
  ops::gemm(false, true, rows, out, in, nx.value.data(), nw.value.data(), 0.0f,
            n.value.data());
  for (int r = 0; r < rows; ++r) {
    float* row = &n.value.at2(r, 0);
    for (int j = 0; j < out; ++j) row[j] += nb.value[j];
  }
  n.needs_grad = nx.needs_grad || nw.needs_grad || nb.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::conv2d(Var input, Var kernel, Var bias, int stride, int pad) {
  check_open();
  const Node& ni = node(input);
  const Node& nk = node(kernel);
  Node n;
  n.kind = Kind::Conv2d;
  n.in0 = input.id;
  n.in1 = kernel.id;
  n.i_arg0 = stride;
  n.i_arg1 = pad;
  n.value = ops::conv2d(ni.value, nk.value, stride, pad);
  n.needs_grad = ni.needs_grad || nk.needs_grad;
  if (bias.valid()) {
    const Node& nb = node(bias);
    ops::bias_add_channels(n.value, nb.value);
    n.in2 = bias.id;
    n.needs_grad = n.needs_grad || nb.needs_grad;
  }
  return Var{push(std::move(n))};
}

Var Tape::relu(Var x) {
  check_open();
  const Node& nx = node(x);
  Node n;
  n.kind = Kind::Relu;
  n.in0 = x.id;
  n.value = ops::relu(nx.value);
  n.needs_grad = nx.needs_grad;
  // Branch signature: the active/inactive pattern.
  {
    const int64_t count = nx.value.numel();
    std::vector<unsigned char> bits(static_cast<size_t>((count + 7) / 8), 0);
    for (int64_t i = 0; i < count; ++i) {
      if (nx.value[i] > 0.0f) {
        bits[static_cast<size_t>(i >> 3)] |= static_cast<unsigned char>(1u << (i & 7));
      }
    }
    fold_sig(bits.data(), bits.size());
  }
  return Var{push(std::move(n))};
}

Var Tape::maxpool2d(Var x, int kernel, int stride) {
  check_open();
  const Node& nx = node(x);
  Node n;
  n.kind = Kind::Maxpool;
  n.in0 = x.id;
  n.i_arg0 = kernel;
  n.i_arg1 = stride;
  n.in_shape = nx.value.shape();
  n.value = ops::maxpool2d(nx.value, kernel, stride, &n.argmax);
  n.needs_grad = nx.needs_grad;
  fold_sig(n.argmax.data(), n.argmax.size() * sizeof(int32_t));
  return Var{push(std::move(n))};
}

Var Tape::reshape(Var x, Shape shape) {
  check_open();
  const Node& nx = node(x);
  Node n;
  n.kind = Kind::Reshape;
  n.in0 = x.id;
  n.in_shape = nx.value.shape();
  n.value = nx.value.reshaped(std::move(shape));
  n.needs_grad = nx.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::add(Var a, Var b) {
  check_open();
  const Node& na = node(a);
  const Node& nb = node(b);
  if (!na.value.same_shape(nb.value)) {
    throw DimensionError("add shape mismatch: " + shape_str(na.value.shape()) + " vs " +
                         shape_str(nb.value.shape()));
  }
  Node n;
  n.kind = Kind::Add;
  n.in0 = a.id;
  n.in1 = b.id;
  n.value = Tensor(na.value.shape());
  const int64_t count = n.value.numel();
  for (int64_t i = 0; i < count; ++i) n.value[i] = na.value[i] + nb.value[i];
  n.needs_grad = na.needs_grad || nb.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::scale(Var x, float s) {
  check_open();
  const Node& nx = node(x);
  Node n;
  n.kind = Kind::Scale;
  n.in0 = x.id;
  n.f_arg = s;
  n.value = Tensor(nx.value.shape());
  const int64_t count = n.value.numel();
  for (int64_t i = 0; i < count; ++i) n.value[i] = s * nx.value[i];
  n.needs_grad = nx.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::sigmoid(Var x) {
  check_open();
  const Node& nx = node(x);
  Node n;
  n.kind = Kind::Sigmoid;
  n.in0 = x.id;
  n.value = Tensor(nx.value.shape());
  const int64_t count = n.value.numel();
  for (int64_t i = 0; i < count; ++i) {
    n.value[i] = 1.0f / (1.0f + std::exp(-nx.value[i]));
  }
  n.needs_grad = nx.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::blend_rows(const Tensor& x_rows, Var mask, Var pattern) {
  check_open();
  const Node& nm = node(mask);
  const Node& np = node(pattern);
  if (x_rows.rank() != 2 || nm.value.rank() != 1 || np.value.rank() != 1 ||
      nm.value.dim(0) != x_rows.dim(1) || np.value.dim(0) != x_rows.dim(1)) {
    throw DimensionError("blend_rows expects x [N,K], mask [K], pattern [K]");
  }
  const int rows = x_rows.dim(0), k = x_rows.dim(1);
  Node n;
  n.kind = Kind::BlendRows;
  n.in0 = mask.id;
  n.in1 = pattern.id;
  n.aux = x_rows;
  n.value = Tensor(x_rows.shape());
  for (int r = 0; r < rows; ++r) {
    const float* xr = &x_rows.at2(r, 0);
    float* vr = &n.value.at2(r, 0);
    for (int j = 0; j < k; ++j) {
      vr[j] = xr[j] + nm.value[j] * (np.value[j] - xr[j]);
    }
  }
  n.needs_grad = nm.needs_grad || np.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::sum_abs(Var x) {
  check_open();
  const Node& nx = node(x);
  Node n;
  n.kind = Kind::SumAbs;
  n.in0 = x.id;
  double total = 0.0;
  const int64_t count = nx.value.numel();
  for (int64_t i = 0; i < count; ++i) total += std::fabs(nx.value[i]);
  n.value = Tensor::scalar(static_cast<float>(total));
  n.needs_grad = nx.needs_grad;
  return Var{push(std::move(n))};
}

Var Tape::softmax_cross_entropy(Var logits, std::vector<int> labels, Reduction r) {
  check_open();
  const Node& nl = node(logits);
  float loss = ops::cross_entropy_logits(nl.value, labels, r);
  Node n;
  n.kind = Kind::SoftmaxCE;
  n.in0 = logits.id;
  n.aux = ops::softmax_rows(nl.value);
  n.labels = std::move(labels);
  n.reduction = r;
  n.value = Tensor::scalar(loss);
  n.needs_grad = nl.needs_grad;
  return Var{push(std::move(n))};
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  if (!n.grad.same_shape(g)) {
    throw DimensionError("gradient shape mismatch while accumulating");
  }
  const int64_t count = g.numel();
  for (int64_t i = 0; i < count; ++i) n.grad[i] += g[i];
}

void Tape::backward(Var loss) {
  check_open();
  const Node& ln = node(loss);
  if (ln.value.numel() != 1) {
    throw DimensionError("backward expects a scalar loss, got " +
                         shape_str(ln.value.shape()));
  }
  if (!ln.needs_grad) {
    throw StateError("loss does not depend on any differentiable leaf");
  }
  consumed_ = true;
  mutate(loss).grad = Tensor::scalar(1.0f);

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.empty()) continue;
    const Tensor& g = n.grad;
    switch (n.kind) {
      case Kind::Leaf:
        break;
      case Kind::Matmul: {
        const Node& a = nodes_[static_cast<size_t>(n.in0)];
        const Node& b = nodes_[static_cast<size_t>(n.in1)];
        if (a.needs_grad) {
          Tensor da(a.value.shape());
          ops::gemm(false, true, a.value.dim(0), a.value.dim(1), b.value.dim(1),
                    g.data(), b.value.data(), 0.0f, da.data());
          accumulate(n.in0, da);
        }
        if (b.needs_grad) {
          Tensor db(b.value.shape());
          ops::gemm(true, false, b.value.dim(0), b.value.dim(1), a.value.dim(0),
                    a.value.data(), g.data(), 0.0f, db.data());
          accumulate(n.in1, db);
        }
        break;
      }
      case Kind::Linear: {
        const Node& x = nodes_[static_cast<size_t>(n.in0)];
        const Node& w = nodes_[static_cast<size_t>(n.in1)];
        const Node& b = nodes_[static_cast<size_t>(n.in2)];
        const int rows = x.value.dim(0), out = w.value.dim(0), in = w.value.dim(1);
        if (x.needs_grad) {
          Tensor dx({rows, in});
          ops::gemm(false, false, rows, in, out, g.data(), w.value.data(), 0.0f,
                    dx.data());
          accumulate(n.in0, dx);
        }
        if (w.needs_grad) {
          Tensor dw({out, in});
          ops::gemm(true, false, out, in, rows, g.data(), x.value.data(), 0.0f,
                    dw.data());
          accumulate(n.in1, dw);
        }
        if (b.needs_grad) {
          Tensor db({out});
          for (int r = 0; r < rows; ++r) {
            const float* grow = &g.at2(r, 0);
            for (int j = 0; j < out; ++j) db[j] += grow[j];
          }
          accumulate(n.in2, db);
        }
        break;
      }
      case Kind::Conv2d: {
        const Node& x = nodes_[static_cast<size_t>(n.in0)];
        const Node& k = nodes_[static_cast<size_t>(n.in1)];
        Tensor dx, dk;
        ops::conv2d_backward(x.value, k.value, g, n.i_arg0, n.i_arg1,
                             x.needs_grad ? &dx : nullptr,
                             k.needs_grad ? &dk : nullptr);
        if (x.needs_grad) accumulate(n.in0, dx);
        if (k.needs_grad) accumulate(n.in1, dk);
        if (n.in2 >= 0 && nodes_[static_cast<size_t>(n.in2)].needs_grad) {
          const int bn = g.dim(0), bc = g.dim(1);
          const int hw = g.dim(2) * g.dim(3);
          Tensor db({bc});
          for (int i = 0; i < bn; ++i) {
            for (int c = 0; c < bc; ++c) {
              const float* p = &g.at4(i, c, 0, 0);
              float acc = 0.0f;
              for (int j = 0; j < hw; ++j) acc += p[j];
              db[c] += acc;
            }
          }
          accumulate(n.in2, db);
        }
        break;
      }
      case Kind::Relu: {
        const Node& x = nodes_[static_cast<size_t>(n.in0)];
        accumulate(n.in0, ops::relu_backward(x.value, g));
        break;
      }
      case Kind::Maxpool: {
        accumulate(n.in0, ops::maxpool2d_backward(n.in_shape, n.argmax, g));
        break;
      }
      case Kind::Reshape: {
        accumulate(n.in0, g.reshaped(n.in_shape));
        break;
      }
      case Kind::Add: {
        accumulate(n.in0, g);
        accumulate(n.in1, g);
        break;
      }
      case Kind::Scale: {
        Tensor dx(g.shape());
        const int64_t count = g.numel();
        for (int64_t i = 0; i < count; ++i) dx[i] = n.f_arg * g[i];
        accumulate(n.in0, dx);
        break;
      }
      case Kind::Sigmoid: {
        Tensor dx(g.shape());
        const int64_t count = g.numel();
        for (int64_t i = 0; i < count; ++i) {
          dx[i] = g[i] * n.value[i] * (1.0f - n.value[i]);
        }
        accumulate(n.in0, dx);
        break;
      }
      case Kind::BlendRows: {
        const Node& m = nodes_[static_cast<size_t>(n.in0)];
        const Node& p = nodes_[static_cast<size_t>(n.in1)];
        const int rows = n.aux.dim(0), k = n.aux.dim(1);
        if (m.needs_grad) {
          Tensor dm({k});
          for (int r = 0; r < rows; ++r) {
            const float* grow = &g.at2(r, 0);
            const float* xr = &n.aux.at2(r, 0);
            for (int j = 0; j < k; ++j) dm[j] += grow[j] * (p.value[j] - xr[j]);
          }
          accumulate(n.in0, dm);
        }
        if (p.needs_grad) {
          Tensor dp({k});
          for (int r = 0; r < rows; ++r) {
            const float* grow = &g.at2(r, 0);
            for (int j = 0; j < k; ++j) dp[j] += grow[j] * m.value[j];
          }
          accumulate(n.in1, dp);
        }
        break;
      }
      case Kind::SumAbs: {
        const Node& x = nodes_[static_cast<size_t>(n.in0)];
        Tensor dx(x.value.shape());
        const float go = g[0];
        const int64_t count = x.value.numel();
        for (int64_t i = 0; i < count; ++i) {
          const float v = x.value[i];
          dx[i] = v > 0.0f ? go : (v < 0.0f ? -go : 0.0f);
        }
        accumulate(n.in0, dx);
        break;
      }
      case Kind::SoftmaxCE: {
        const float go = g[0];
        const int rows = n.aux.dim(0), classes = n.aux.dim(1);
        const float scale =
            n.reduction == Reduction::Mean && rows > 0 ? go / static_cast<float>(rows) : go;
        Tensor dl(n.aux.shape());
        for (int r = 0; r < rows; ++r) {
          const float* pr = &n.aux.at2(r, 0);
          float* dr = &dl.at2(r, 0);
          const int y = n.labels[static_cast<size_t>(r)];
          for (int j = 0; j < classes; ++j) {
            dr[j] = scale * (pr[j] - (j == y ? 1.0f : 0.0f));
          }
        }
        accumulate(n.in0, dl);
        break;
      }
    }
  }
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::has_grad(Var v) const { return !node(v).grad.empty(); }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!consumed_) throw StateError("grad() before backward()");
  if (n.grad.empty()) {
    throw StateError("no gradient recorded for var " + std::to_string(v.id));
  }
  return n.grad;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  sig_ = 1469598103934665603ull;
}

FdReport finite_difference_check(const std::function<Var(Tape&, Var)>& build,
                                 const Tensor& x0, float eps, int max_coords,
                                 uint64_t seed) {
  if (!(eps > 0.0f) || eps > 0.1f) {
    throw ArgumentError("finite_difference_check: eps must be in (0, 0.1]");
  }
  if (x0.numel() == 0) throw ArgumentError("finite_difference_check: empty input");

  Tape tape;
  Var x = tape.leaf(x0, true);
  Var loss = build(tape, x);
  const uint64_t base_sig = tape.branch_signature();
  tape.backward(loss);
  Tensor analytic = tape.grad(x);

  auto probe = [&](const Tensor& xp, uint64_t* sig) {
    Tape t;
    Var xv = t.leaf(xp, false);
    // Leaf without grad: build must tolerate it (forward only).
    Var lv = build(t, xv);
    if (sig) *sig = t.branch_signature();
    return t.value(lv)[0];
  };

  std::vector<int> coords;
  const int64_t n = x0.numel();
  if (n <= max_coords) {
    coords.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = static_cast<int>(i);
  } else {
    Rng rng(seed);
    coords = rng.sample_without_replacement(static_cast<int>(n), max_coords);
  }

  FdReport rep;
  for (int ci : coords) {
    Tensor xp = x0;
    xp[ci] += eps;
    uint64_t sig_plus = 0, sig_minus = 0;
    const float f_plus = probe(xp, &sig_plus);
    xp[ci] = x0[ci] - eps;
    const float f_minus = probe(xp, &sig_minus);
    if (sig_plus != base_sig || sig_minus != base_sig) {
      rep.skipped++;
      continue;
    }
    const double fd = (static_cast<double>(f_plus) - f_minus) / (2.0 * eps);
    const double an = analytic[ci];
    const double rel = std::fabs(an - fd) / std::max(std::fabs(an), 1e-8);
    rep.max_rel_err = std::max(rep.max_rel_err, static_cast<float>(rel));
    rep.checked++;
  }
  return rep;
}

}  // namespace istr
