#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlips/kernels.hpp"
#include "fedlips/tensor.hpp"

namespace fedlips::model {

enum class LayerKind { kLinear, kConv, kBatchNorm };

// Position of a weight layer in the network. Batch-norm layers are always
// kMiddle and never count toward the first/last partition.
enum class LayerRole { kFirst, kMiddle, kLast };

enum class Arch { kMlp, kVggMini, kResnetMini };

std::string_view to_string(LayerKind kind);
std::string_view to_string(LayerRole role);
std::string_view to_string(Arch arch);
Arch parse_arch(std::string_view id);
LayerKind parse_layer_kind(std::string_view id);
LayerRole parse_layer_role(std::string_view id);

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  numerics::RunningStats running;
  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

struct LayerParams {
  std::string name;
  LayerKind kind = LayerKind::kLinear;
  LayerRole role = LayerRole::kMiddle;
  // False for blocks that stay client-local under FedBN-style policies.
  bool shareable = true;
  Tensor weight;  // linear: out x in; conv: F x C x kh x kw; empty for batchnorm
  Tensor bias;    // empty when absent
  std::optional<BatchNormParams> bn;
  int stride = 1;
  int pad = 0;

  bool is_weight_layer() const noexcept { return kind != LayerKind::kBatchNorm; }
  bool is_batchnorm() const noexcept { return kind == LayerKind::kBatchNorm; }

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  std::string arch_id;
  Shape input_shape;  // per sample, without the batch dimension
  std::size_t num_classes = 0;
  std::size_t width = 0;
  std::vector<LayerParams> layers;

  std::size_t index_of(std::string_view name) const;  // throws ArgumentError
  const LayerParams& layer(std::string_view name) const { return layers[index_of(name)]; }
  LayerParams& layer(std::string_view name) { return layers[index_of(name)]; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Widths used when `width == 0`: hidden units for mlp, base channels for the
// convolutional models.
std::size_t default_width(Arch arch) noexcept;

// Kaiming fan-in normal weights, zero biases, gamma = 1 / beta = 0, running
// mean 0 / var 1. Deterministic in `seed`.
//
//   mlp          fc1 -> relu -> fc2 -> relu -> fc3
//   vgg_mini     [conv-bn-relu] x2 -> maxpool -> [conv-bn-relu] x2 -> maxpool -> fc
//   resnet_mini  conv-bn-relu -> 2 identity residual blocks -> avgpool -> fc
ModelParams build_model(Arch arch, const Shape& input_shape, std::size_t num_classes,
                        std::uint64_t seed, std::size_t width = 0);
ModelParams build_model(std::string_view arch_id, const Shape& input_shape,
                        std::size_t num_classes, std::uint64_t seed, std::size_t width = 0);

// Checks the structural invariants (unique names, one first and one last
// weight layer, BN never first/last). Throws ShapeError/ArgumentError.
void validate(const ModelParams& model);

// Per-layer gradient blocks, aligned one-to-one with ModelParams::layers.
struct LayerGrads {
  Tensor weight;
  Tensor bias;
  Tensor gamma;
  Tensor beta;
};

struct ForwardBackwardResult {
  double loss = 0.0;
  std::vector<LayerGrads> grads;
  // L2 norm of each layer's weight gradient; 0 for batch-norm layers.
  std::vector<double> grad_norms;
  // Updated running statistics for every batch-norm layer (nullopt elsewhere).
  std::vector<std::optional<numerics::RunningStats>> running;
};

// Train-mode pass over one mini-batch. `inputs` is B x input_shape.
ForwardBackwardResult forward_backward(const ModelParams& model, const Tensor& inputs,
                                       std::span<const int> labels);

// Loss only. kTrain uses batch statistics, kEval the running statistics.
double forward_loss(const ModelParams& model, const Tensor& inputs, std::span<const int> labels,
                    numerics::BatchNormMode mode);

// Eval-mode logits (B x num_classes).
Tensor predict(const ModelParams& model, const Tensor& inputs);

// w' = w - lr * g on every weight, bias, gamma and beta block. Running
// statistics are left untouched.
ModelParams sgd_step(const ModelParams& model, const std::vector<LayerGrads>& grads, double lr);

void set_running_stats(ModelParams& model,
                       const std::vector<std::optional<numerics::RunningStats>>& running);

// Row-major copy of the layer's weight block, bias excluded.
std::vector<double> layer_weight_vector(const ModelParams& model, std::string_view layer_name);

std::vector<std::string> weight_layer_names(const ModelParams& model);
std::vector<std::string> middle_weight_layer_names(const ModelParams& model);

}  // namespace fedlips::model
