#include "istr/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "istr/rng.hpp"

namespace istr {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<int> parse_ints(const std::string& s, char sep, const std::string& ctx) {
  std::vector<int> out;
  for (const std::string& tok : split(s, sep)) {
    try {
      size_t used = 0;
      int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ArchError("cannot parse '" + tok + "' in " + ctx);
    }
  }
  return out;
}

}  // namespace

ModelArch ModelArch::preset(const std::string& name, Shape input, int class_count) {
  ModelArch a;
  a.input = std::move(input);
  a.class_count = class_count;
  if (name == "3Conv+2FC") {
    a.layers = {ConvLayer{6, 3, 1, 1},  ReluLayer{}, PoolLayer{2, 2},
                ConvLayer{12, 3, 1, 1}, ReluLayer{}, PoolLayer{2, 2},
                ConvLayer{24, 3, 1, 1}, ReluLayer{}, PoolLayer{2, 2},
                FlattenLayer{},         FcLayer{48}, ReluLayer{},
                FcLayer{class_count}};
  } else if (name == "6Conv+2FC") {
    a.layers = {ConvLayer{16, 3, 1, 1}, ReluLayer{}, ConvLayer{16, 3, 1, 1},
                ReluLayer{},            PoolLayer{2, 2},
                ConvLayer{32, 3, 1, 1}, ReluLayer{}, ConvLayer{32, 3, 1, 1},
                ReluLayer{},            PoolLayer{2, 2},
                ConvLayer{64, 3, 1, 1}, ReluLayer{}, ConvLayer{64, 3, 1, 1},
                ReluLayer{},            PoolLayer{2, 2},
                FlattenLayer{},         FcLayer{128}, ReluLayer{},
                FcLayer{class_count}};
  } else {
    throw ArchError("unknown architecture preset '" + name +
                    "' (expected 3Conv+2FC or 6Conv+2FC)");
  }
  a.validate();
  return a;
}

ModelArch ModelArch::parse(const std::string& descriptor) {
  std::vector<std::string> tokens = split(descriptor, '|');
  if (tokens.size() < 3) throw ArchError("descriptor too short: '" + descriptor + "'");
  ModelArch a;
  if (tokens[0].rfind("in:", 0) != 0) {
    throw ArchError("descriptor must start with in:CxHxW");
  }
  {
    std::vector<int> dims = parse_ints(tokens[0].substr(3), 'x', "in: field");
    if (dims.size() != 3) throw ArchError("in: expects three extents CxHxW");
    a.input = {dims[0], dims[1], dims[2]};
  }
  if (tokens[1].rfind("classes:", 0) != 0) {
    throw ArchError("second descriptor field must be classes:N");
  }
  a.class_count = parse_ints(tokens[1].substr(8), ',', "classes: field").at(0);

  for (size_t i = 2; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (t == "relu") {
      a.layers.push_back(ReluLayer{});
    } else if (t == "flatten") {
      a.layers.push_back(FlattenLayer{});
    } else if (t.rfind("conv:", 0) == 0) {
      std::vector<int> v = parse_ints(t.substr(5), ',', "conv layer");
      if (v.size() != 4) throw ArchError("conv expects out,kernel,stride,pad");
      a.layers.push_back(ConvLayer{v[0], v[1], v[2], v[3]});
    } else if (t.rfind("pool:", 0) == 0) {
      std::vector<int> v = parse_ints(t.substr(5), ',', "pool layer");
      if (v.size() != 2) throw ArchError("pool expects kernel,stride");
      a.layers.push_back(PoolLayer{v[0], v[1]});
    } else if (t.rfind("fc:", 0) == 0) {
      std::vector<int> v = parse_ints(t.substr(3), ',', "fc layer");
      if (v.size() != 1) throw ArchError("fc expects a single width");
      a.layers.push_back(FcLayer{v[0]});
    } else {
      throw ArchError("unknown descriptor token '" + t + "'");
    }
  }
  a.validate();
  return a;
}

std::string ModelArch::descriptor() const {
  std::ostringstream os;
  os << "in:" << input.at(0) << "x" << input.at(1) << "x" << input.at(2);
  os << "|classes:" << class_count;
  for (const LayerSpec& l : layers) {
    if (std::holds_alternative<ConvLayer>(l)) {
      const auto& c = std::get<ConvLayer>(l);
      os << "|conv:" << c.out_channels << "," << c.kernel << "," << c.stride << ","
         << c.pad;
    } else if (std::holds_alternative<ReluLayer>(l)) {
      os << "|relu";
    } else if (std::holds_alternative<PoolLayer>(l)) {
      const auto& p = std::get<PoolLayer>(l);
      os << "|pool:" << p.kernel << "," << p.stride;
    } else if (std::holds_alternative<FlattenLayer>(l)) {
      os << "|flatten";
    } else {
      os << "|fc:" << std::get<FcLayer>(l).width;
    }
  }
  return os.str();
}

void ModelArch::validate() const {
  if (input.size() != 3 || input[0] < 1 || input[1] < 1 || input[2] < 1) {
    throw ArchError("input shape must be three positive extents, got " +
                    shape_str(input));
  }
  if (class_count < 2) throw ArchError("class_count must be >= 2");
  if (layers.empty()) throw ArchError("architecture has no layers");

  int c = input[0], h = input[1], w = input[2];
  bool flat = false;
  int width = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string at = "layer " + std::to_string(i);
    if (std::holds_alternative<ConvLayer>(l)) {
      if (flat) throw ArchError(at + ": conv after flatten");
      const auto& cv = std::get<ConvLayer>(l);
      if (cv.out_channels < 1 || cv.kernel < 1 || cv.stride < 1 || cv.pad < 0) {
        throw ArchError(at + ": bad conv parameters");
      }
      const int oh = (h + 2 * cv.pad - cv.kernel) / cv.stride + 1;
      const int ow = (w + 2 * cv.pad - cv.kernel) / cv.stride + 1;
      if (h + 2 * cv.pad < cv.kernel || w + 2 * cv.pad < cv.kernel || oh < 1 || ow < 1) {
        throw ArchError(at + ": conv kernel " + std::to_string(cv.kernel) +
                        " does not fit " + std::to_string(h) + "x" + std::to_string(w));
      }
      c = cv.out_channels; h = oh; w = ow;
    } else if (std::holds_alternative<PoolLayer>(l)) {
      if (flat) throw ArchError(at + ": pool after flatten");
      const auto& p = std::get<PoolLayer>(l);
      if (p.kernel < 1 || p.stride < 1) throw ArchError(at + ": bad pool parameters");
      if (h < p.kernel || w < p.kernel) {
        throw ArchError(at + ": pool window " + std::to_string(p.kernel) +
                        " does not fit " + std::to_string(h) + "x" + std::to_string(w));
      }
      h = (h - p.kernel) / p.stride + 1;
      w = (w - p.kernel) / p.stride + 1;
    } else if (std::holds_alternative<FlattenLayer>(l)) {
      if (flat) throw ArchError(at + ": repeated flatten");
      flat = true;
      width = c * h * w;
    } else if (std::holds_alternative<FcLayer>(l)) {
      if (!flat) throw ArchError(at + ": fc before flatten");
      const auto& f = std::get<FcLayer>(l);
      if (f.width < 1) throw ArchError(at + ": bad fc width");
      width = f.width;
    }
    // relu: shape preserved anywhere
  }
  if (!flat) throw ArchError("architecture never flattens");
  if (!std::holds_alternative<FcLayer>(layers.back())) {
    throw ArchError("architecture must end in a fc layer");
  }
  if (width != class_count) {
    throw ArchError("final width " + std::to_string(width) + " != class_count " +
                    std::to_string(class_count));
  }
}

Model Model::build(const ModelArch& arch, uint64_t seed) {
  arch.validate();
  Model m;
  m.arch_ = arch;
  m.seed_ = seed;
  Rng rng(seed);
  int c = arch.input[0], h = arch.input[1], w = arch.input[2];
  bool flat = false;
  int width = 0;
  int conv_idx = 0, fc_idx = 0;
  for (const LayerSpec& l : arch.layers) {
    if (std::holds_alternative<ConvLayer>(l)) {
      const auto& cv = std::get<ConvLayer>(l);
      ++conv_idx;
      const int fan_in = c * cv.kernel * cv.kernel;
      const float std_dev = std::sqrt(2.0f / static_cast<float>(fan_in));
      Param pw;
      pw.name = "conv" + std::to_string(conv_idx) + ".weight";
      pw.value = Tensor({cv.out_channels, c, cv.kernel, cv.kernel});
      for (int64_t i = 0; i < pw.value.numel(); ++i) {
        pw.value[i] = rng.normal(0.0f, std_dev);
      }
      pw.velocity = Tensor(pw.value.shape());
      m.params_.push_back(std::move(pw));
      Param pb;
      pb.name = "conv" + std::to_string(conv_idx) + ".bias";
      pb.value = Tensor({cv.out_channels});
      pb.velocity = Tensor(pb.value.shape());
      m.params_.push_back(std::move(pb));
      c = cv.out_channels;
      h = (h + 2 * cv.pad - cv.kernel) / cv.stride + 1;
      w = (w + 2 * cv.pad - cv.kernel) / cv.stride + 1;
    } else if (std::holds_alternative<PoolLayer>(l)) {
      const auto& p = std::get<PoolLayer>(l);
      h = (h - p.kernel) / p.stride + 1;
      w = (w - p.kernel) / p.stride + 1;
    } else if (std::holds_alternative<FlattenLayer>(l)) {
      flat = true;
      width = c * h * w;
    } else if (std::holds_alternative<FcLayer>(l)) {
      const auto& f = std::get<FcLayer>(l);
      ++fc_idx;
      const float std_dev = std::sqrt(2.0f / static_cast<float>(width));
      Param pw;
      pw.name = "fc" + std::to_string(fc_idx) + ".weight";
      pw.value = Tensor({f.width, width});
      for (int64_t i = 0; i < pw.value.numel(); ++i) {
        pw.value[i] = rng.normal(0.0f, std_dev);
      }
      pw.velocity = Tensor(pw.value.shape());
      m.params_.push_back(std::move(pw));
      Param pb;
      pb.name = "fc" + std::to_string(fc_idx) + ".bias";
      pb.value = Tensor({f.width});
      pb.velocity = Tensor(pb.value.shape());
      m.params_.push_back(std::move(pb));
      width = f.width;
    }
  }
  (void)flat;
  return m;
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const Param& p : params_) n += p.value.numel();
  return n;
}

Model::ForwardBind Model::forward(Tape& tape, Var input, bool with_param_grads) const {
  return forward_substituted(tape, input, with_param_grads, -1, Var{});
}

Model::ForwardBind Model::forward_substituted(Tape& tape, Var input,
                                              bool with_param_grads, int substitute_idx,
                                              Var substitute) const {
  if (substitute_idx >= static_cast<int>(params_.size())) {
    throw ArgumentError("forward_substituted: parameter index out of range");
  }
  ForwardBind bind;
  bind.param_vars.reserve(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    if (static_cast<int>(i) == substitute_idx) {
      if (!tape.value(substitute).same_shape(params_[i].value)) {
        throw DimensionError("forward_substituted: substitute shape mismatch");
      }
      bind.param_vars.push_back(substitute);
    } else {
      bind.param_vars.push_back(tape.leaf(params_[i].value, with_param_grads));
    }
  }

  Var x = input;
  const Tensor& in_val = tape.value(input);
  if (in_val.rank() == 3) {
    x = tape.reshape(x, {1, in_val.dim(0), in_val.dim(1), in_val.dim(2)});
  } else if (in_val.rank() != 4) {
    throw DimensionError("model input must be [C,H,W] or [N,C,H,W], got " +
                         shape_str(in_val.shape()));
  }
  if (tape.value(x).dim(1) != arch_.input[0] || tape.value(x).dim(2) != arch_.input[1] ||
      tape.value(x).dim(3) != arch_.input[2]) {
    throw DimensionError("model input " + shape_str(tape.value(x).shape()) +
                         " does not match architecture input " + shape_str(arch_.input));
  }

  size_t pi = 0;
  for (const LayerSpec& l : arch_.layers) {
    if (std::holds_alternative<ConvLayer>(l)) {
      const auto& cv = std::get<ConvLayer>(l);
      Var wv = bind.param_vars[pi++];
      Var bv = bind.param_vars[pi++];
      x = tape.conv2d(x, wv, bv, cv.stride, cv.pad);
    } else if (std::holds_alternative<ReluLayer>(l)) {
      x = tape.relu(x);
    } else if (std::holds_alternative<PoolLayer>(l)) {
      const auto& p = std::get<PoolLayer>(l);
      x = tape.maxpool2d(x, p.kernel, p.stride);
    } else if (std::holds_alternative<FlattenLayer>(l)) {
      const Tensor& v = tape.value(x);
      x = tape.reshape(x, {v.dim(0), v.dim(1) * v.dim(2) * v.dim(3)});
    } else {
      Var wv = bind.param_vars[pi++];
      Var bv = bind.param_vars[pi++];
      x = tape.linear(x, wv, bv);
    }
  }
  bind.logits = x;
  return bind;
}

Tensor Model::predict_logits(const Tensor& batch) const {
  const Tensor* in = &batch;
  Tensor promoted;
  if (batch.rank() == 3) {
    promoted = batch.reshaped({1, batch.dim(0), batch.dim(1), batch.dim(2)});
    in = &promoted;
  }
  if (in->rank() != 4) {
    throw DimensionError("predict expects [C,H,W] or [N,C,H,W]");
  }
  const int n = in->dim(0);
  const int chunk = 256;
  Tensor out({n, arch_.class_count});
  const int64_t row_stride = arch_.class_count;
  const int64_t img_stride = shape_numel({in->dim(1), in->dim(2), in->dim(3)});
  for (int start = 0; start < n; start += chunk) {
    const int count = std::min(chunk, n - start);
    Tensor slice({count, in->dim(1), in->dim(2), in->dim(3)});
    std::copy_n(in->data() + static_cast<int64_t>(start) * img_stride,
                static_cast<size_t>(count * img_stride), slice.data());
    Tape tape;
    Var x = tape.leaf(std::move(slice), false);
    ForwardBind bind = forward(tape, x, false);
    const Tensor& logits = tape.value(bind.logits);
    std::copy_n(logits.data(), static_cast<size_t>(count * row_stride),
                out.data() + static_cast<int64_t>(start) * row_stride);
  }
  return out;
}

std::vector<int> Model::predict(const Tensor& batch) const {
  return ops::argmax_rows(predict_logits(batch));
}

Model make_model_from_parts(ModelArch arch, std::vector<Param> params, uint64_t seed,
                            int epochs, std::map<std::string, std::string> meta) {
  Model m;
  m.arch_ = std::move(arch);
  m.params_ = std::move(params);
  m.seed_ = seed;
  m.epochs_trained_ = epochs;
  m.metadata_ = std::move(meta);
  return m;
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ArgumentError("train: epochs must be >= 0");
  if (cfg.batch < 1) throw ArgumentError("train: batch must be >= 1");
  if (data.size() < 1) throw ArgumentError("train: empty dataset");
  if (data.class_count != model.class_count()) {
    throw DimensionError("train: dataset has " + std::to_string(data.class_count) +
                         " classes, model expects " +
                         std::to_string(model.class_count()));
  }
  Shape img = data.image_shape();
  if (img != model.arch().input) {
    throw DimensionError("train: sample shape " + shape_str(img) +
                         " does not match model input " +
                         shape_str(model.arch().input));
  }

  TrainResult result;
  Rng rng(cfg.seed);
  const int n = data.size();
  const int64_t stride = shape_numel(img);
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t correct = 0;
    for (int start = 0; start < n; start += cfg.batch) {
      const int count = std::min(cfg.batch, n - start);
      Tensor batch({count, img[0], img[1], img[2]});
      std::vector<int> labels(static_cast<size_t>(count));
      for (int r = 0; r < count; ++r) {
        const int src = order[static_cast<size_t>(start + r)];
        std::copy_n(data.images.data() + static_cast<int64_t>(src) * stride,
                    static_cast<size_t>(stride),
                    batch.data() + static_cast<int64_t>(r) * stride);
        labels[static_cast<size_t>(r)] = data.labels[static_cast<size_t>(src)];
      }
      Tape tape;
      Var x = tape.leaf(std::move(batch), false);
      Model::ForwardBind bind = model.forward(tape, x, true);
      Var loss = tape.softmax_cross_entropy(bind.logits, labels, Reduction::Mean);
      loss_sum += static_cast<double>(tape.value(loss)[0]) * count;
      std::vector<int> preds = ops::argmax_rows(tape.value(bind.logits));
      for (int r = 0; r < count; ++r) {
        if (preds[static_cast<size_t>(r)] == labels[static_cast<size_t>(r)]) ++correct;
      }
      tape.backward(loss);
      for (size_t pi = 0; pi < model.params().size(); ++pi) {
        Param& p = model.params()[pi];
        ops::sgd_step(p.value, tape.grad(bind.param_vars[pi]), p.velocity, cfg.lr,
                      cfg.momentum);
      }
    }
    result.epoch_loss.push_back(static_cast<float>(loss_sum / n));
    result.epoch_accuracy.push_back(static_cast<float>(correct) / static_cast<float>(n));
  }
  model.set_epochs_trained(model.epochs_trained() + cfg.epochs);
  return result;
}

int64_t EvalResult::confusion_at(int truth, int pred) const {
  if (truth < 0 || truth >= classes || pred < 0 || pred >= classes) {
    throw ArgumentError("confusion index out of range");
  }
  return confusion[static_cast<size_t>(truth) * classes + pred];
}

EvalResult evaluate(const Model& model, const Dataset& data) {
  if (data.size() < 1) throw ArgumentError("evaluate: empty dataset");
  if (data.class_count != model.class_count()) {
    throw DimensionError("evaluate: class count mismatch");
  }
  EvalResult r;
  r.classes = model.class_count();
  r.confusion.assign(static_cast<size_t>(r.classes) * r.classes, 0);
  std::vector<int> preds = model.predict(data.images);
  int64_t correct = 0;
  for (int i = 0; i < data.size(); ++i) {
    const int y = data.labels[static_cast<size_t>(i)];
    const int p = preds[static_cast<size_t>(i)];
    r.confusion[static_cast<size_t>(y) * r.classes + p]++;
    if (y == p) ++correct;
  }
  r.accuracy = static_cast<float>(correct) / static_cast<float>(data.size());
  return r;
}

FdReport model_gradient_check(const Model& model, const Tensor& batch,
                              const std::vector<int>& labels, const std::string& wrt,
                              float eps, int max_coords, uint64_t seed) {
  if (wrt == "input") {
    auto build = [&](Tape& tape, Var x) {
      Model::ForwardBind bind = model.forward(tape, x, false);
      return tape.softmax_cross_entropy(bind.logits, labels, Reduction::Mean);
    };
    return finite_difference_check(build, batch, eps, max_coords, seed);
  }
  int idx = -1;
  for (size_t i = 0; i < model.params().size(); ++i) {
    if (model.params()[i].name == wrt) {
      idx = static_cast<int>(i);
      break;
    }
  }
  if (idx < 0) {
    throw ArgumentError("model_gradient_check: no parameter named '" + wrt + "'");
  }
  // Rebind the probed parameter as the checked leaf; everything else stays
  // a constant leaf.
  auto build = [&, idx](Tape& tape, Var theta) {
    Var x = tape.leaf(batch, false);
    Model::ForwardBind bind = model.forward_substituted(tape, x, false, idx, theta);
    return tape.softmax_cross_entropy(bind.logits, labels, Reduction::Mean);
  };
  return finite_difference_check(build, model.params()[static_cast<size_t>(idx)].value,
                                 eps, max_coords, seed);
}

}  // namespace istr
