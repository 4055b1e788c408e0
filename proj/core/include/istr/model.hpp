#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "istr/autograd.hpp"
#include "istr/dataset.hpp"
#include "istr/tensor.hpp"

namespace istr {

struct ConvLayer {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};
struct ReluLayer {};
struct PoolLayer {
  int kernel = 2;
  int stride = 2;
};
struct FlattenLayer {};
struct FcLayer {
  int width = 0;
};
using LayerSpec = std::variant<ConvLayer, ReluLayer, PoolLayer, FlattenLayer, FcLayer>;

// Feed-forward CNN description. Serializes to a single-line descriptor like
//   in:1x28x28|classes:10|conv:8,3,1,1|relu|pool:2,2|flatten|fc:10
// which round-trips exactly through parse()/descriptor().
struct ModelArch {
  Shape input;  // [C,H,W]
  int class_count = 0;
  std::vector<LayerSpec> layers;

  // Named presets:
  //  "3Conv+2FC": three conv/pool blocks and two dense layers (28x28-class scale)
  //  "6Conv+2FC": six conv layers in three blocks, two dense layers (32x32 scale)
  static ModelArch preset(const std::string& name, Shape input, int class_count);
  static ModelArch parse(const std::string& descriptor);
  std::string descriptor() const;

  // Walks the layer stack symbolically; throws ArchError when shapes do not
  // compose or the final width misses class_count.
  void validate() const;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor velocity;  // SGD momentum state, same shape
};

class Model {
public:
  Model() = default;

  // Seeded He-style init: conv/fc weights ~ N(0, sqrt(2/fan_in)), biases 0.
  static Model build(const ModelArch& arch, uint64_t seed);

  const ModelArch& arch() const { return arch_; }
  int class_count() const { return arch_.class_count; }
  uint64_t seed() const { return seed_; }
  int epochs_trained() const { return epochs_trained_; }
  void set_epochs_trained(int e) { epochs_trained_ = e; }
  std::map<std::string, std::string>& metadata() { return metadata_; }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  int64_t param_count() const;

  struct ForwardBind {
    Var logits;
    std::vector<Var> param_vars;  // same order as params()
  };
  // Records the forward pass of `input` ([N,C,H,W] or a single [C,H,W])
  // onto the tape. with_param_grads controls whether parameters are bound
  // as differentiable leaves.
  ForwardBind forward(Tape& tape, Var input, bool with_param_grads) const;

  // Same, but parameter substitute_idx is taken from an existing tape var
  // instead of this model's stored value (used by gradient audits).
  ForwardBind forward_substituted(Tape& tape, Var input, bool with_param_grads,
                                  int substitute_idx, Var substitute) const;

  // Grad-free conveniences. Large batches are processed in fixed-size
  // chunks, so memory stays bounded and results do not depend on N.
  Tensor predict_logits(const Tensor& batch) const;
  std::vector<int> predict(const Tensor& batch) const;

private:
  ModelArch arch_;
  std::vector<Param> params_;
  uint64_t seed_ = 0;
  int epochs_trained_ = 0;
  std::map<std::string, std::string> metadata_;

  friend Model make_model_from_parts(ModelArch arch, std::vector<Param> params,
                                     uint64_t seed, int epochs,
                                     std::map<std::string, std::string> meta);
};

// Internal factory used by the checkpoint reader.
Model make_model_from_parts(ModelArch arch, std::vector<Param> params, uint64_t seed,
                            int epochs, std::map<std::string, std::string> meta);

struct TrainConfig {
  int epochs = 10;
  float lr = 0.05f;
  float momentum = 0.9f;
  int batch = 64;
  uint64_t seed = 1;  // drives shuffling only; init seed lives in the model
  bool verbose = false;
};

struct TrainResult {
  std::vector<float> epoch_loss;      // mean CE per epoch
  std::vector<float> epoch_accuracy;  // training accuracy per epoch
};

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg);

struct EvalResult {
  float accuracy = 0.0f;
  int classes = 0;
  std::vector<int64_t> confusion;  // row = true label, col = prediction
  int64_t confusion_at(int truth, int pred) const;
};

EvalResult evaluate(const Model& model, const Dataset& data);

// Gradient audit over one named parameter (or "input") of a scalar CE loss
// on the given batch. See finite_difference_check in autograd.hpp.
FdReport model_gradient_check(const Model& model, const Tensor& batch,
                              const std::vector<int>& labels,
                              const std::string& wrt, float eps, int max_coords,
                              uint64_t seed);

}  // namespace istr
