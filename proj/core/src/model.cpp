#include "fedlips/model.hpp"

#include <cmath>
#include <random>
#include <set>

#include "fedlips/error.hpp"

namespace fedlips::model {

using numerics::BatchNormMode;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kLinear: return "linear";
    case LayerKind::kConv: return "conv";
    case LayerKind::kBatchNorm: return "batchnorm";
  }
  return "?";
}

std::string_view to_string(LayerRole role) {
  switch (role) {
    case LayerRole::kFirst: return "first";
    case LayerRole::kMiddle: return "middle";
    case LayerRole::kLast: return "last";
  }
  return "?";
}

std::string_view to_string(Arch arch) {
  switch (arch) {
    case Arch::kMlp: return "mlp";
    case Arch::kVggMini: return "vgg_mini";
    case Arch::kResnetMini: return "resnet_mini";
  }
  return "?";
}

Arch parse_arch(std::string_view id) {
  if (id == "mlp") return Arch::kMlp;
  if (id == "vgg_mini") return Arch::kVggMini;
  if (id == "resnet_mini") return Arch::kResnetMini;
  throw ArgumentError("unknown architecture '" + std::string(id) + "'");
}

LayerKind parse_layer_kind(std::string_view id) {
  if (id == "linear") return LayerKind::kLinear;
  if (id == "conv") return LayerKind::kConv;
  if (id == "batchnorm") return LayerKind::kBatchNorm;
  throw ArgumentError("unknown layer kind '" + std::string(id) + "'");
}

LayerRole parse_layer_role(std::string_view id) {
  if (id == "first") return LayerRole::kFirst;
  if (id == "middle") return LayerRole::kMiddle;
  if (id == "last") return LayerRole::kLast;
  throw ArgumentError("unknown layer role '" + std::string(id) + "'");
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  throw ArgumentError("unknown layer '" + std::string(name) + "' in " + arch_id);
}

std::size_t default_width(Arch arch) noexcept {
  switch (arch) {
    case Arch::kMlp: return 32;
    case Arch::kVggMini: return 8;
    case Arch::kResnetMini: return 8;
  }
  return 8;
}

namespace {

// Variance = gain / fan_in. No ReLU follows the classifier; its smaller scale
// matches the usual framework default for linear layers (uniform +-1/sqrt(fan_in)).
constexpr double kReluGain = 2.0;
constexpr double kClassifierGain = 1.0 / 3.0;

class Builder {
 public:
  explicit Builder(std::uint64_t seed) : rng_(seed) {}

  LayerParams linear(std::string name, std::size_t in, std::size_t out, double gain = kReluGain) {
    LayerParams l;
    l.name = std::move(name);
    l.kind = LayerKind::kLinear;
    l.weight = kaiming({out, in}, in, gain);
    l.bias = Tensor({out});
    return l;
  }

  LayerParams conv(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t k,
                   int pad) {
    LayerParams l;
    l.name = std::move(name);
    l.kind = LayerKind::kConv;
    l.weight = kaiming({out_ch, in_ch, k, k}, in_ch * k * k, kReluGain);
    l.bias = Tensor({out_ch});
    l.stride = 1;
    l.pad = pad;
    return l;
  }

  static LayerParams batchnorm(std::string name, std::size_t channels) {
    LayerParams l;
    l.name = std::move(name);
    l.kind = LayerKind::kBatchNorm;
    l.role = LayerRole::kMiddle;
    l.shareable = false;
    l.bn = BatchNormParams{Tensor({channels}, 1.0), Tensor({channels}, 0.0),
                           {Tensor({channels}, 0.0), Tensor({channels}, 1.0)}};
    return l;
  }

 private:
  Tensor kaiming(Shape shape, std::size_t fan_in, double gain) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
    for (double& v : t.values()) v = dist(rng_);
    return t;
  }

  std::mt19937_64 rng_;
};

void assign_roles(ModelParams& m) {
  std::size_t first = m.layers.size(), last = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!m.layers[i].is_weight_layer()) continue;
    if (first == m.layers.size()) first = i;
    last = i;
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    LayerParams& l = m.layers[i];
    l.role = LayerRole::kMiddle;
    if (l.is_weight_layer() && i == first) l.role = LayerRole::kFirst;
    if (l.is_weight_layer() && i == last) l.role = LayerRole::kLast;
  }
}

Shape require_image(const Shape& input_shape, std::string_view arch) {
  if (input_shape.size() != 3) {
    throw ShapeError(std::string(arch) + " expects C x H x W inputs, got " +
                     shape_to_string(input_shape));
  }
  return input_shape;
}

// ------------------------------------------------------------------ plans

enum class OpKind { kFlatten, kLinear, kConv, kBatchNorm, kRelu, kMaxPool, kAvgPool, kSaveSkip,
                    kAddSkip };

struct Op {
  OpKind kind;
  std::size_t layer = 0;
};

std::vector<Op> plan_for(const ModelParams& m) {
  std::vector<Op> ops;
  switch (parse_arch(m.arch_id)) {
    case Arch::kMlp:
      ops = {{OpKind::kFlatten}, {OpKind::kLinear, 0}, {OpKind::kRelu},   {OpKind::kLinear, 1},
             {OpKind::kRelu},    {OpKind::kLinear, 2}};
      break;
    case Arch::kVggMini:
      ops = {{OpKind::kConv, 0}, {OpKind::kBatchNorm, 1}, {OpKind::kRelu},
             {OpKind::kConv, 2}, {OpKind::kBatchNorm, 3}, {OpKind::kRelu},
             {OpKind::kMaxPool},
             {OpKind::kConv, 4}, {OpKind::kBatchNorm, 5}, {OpKind::kRelu},
             {OpKind::kConv, 6}, {OpKind::kBatchNorm, 7}, {OpKind::kRelu},
             {OpKind::kMaxPool}, {OpKind::kFlatten},      {OpKind::kLinear, 8}};
      break;
    case Arch::kResnetMini: {
      ops = {{OpKind::kConv, 0}, {OpKind::kBatchNorm, 1}, {OpKind::kRelu}};
      for (std::size_t block = 0; block < 2; ++block) {
        const std::size_t b = 2 + block * 4;
        ops.insert(ops.end(), {{OpKind::kSaveSkip},     {OpKind::kConv, b},
                               {OpKind::kBatchNorm, b + 1}, {OpKind::kRelu},
                               {OpKind::kConv, b + 2},  {OpKind::kBatchNorm, b + 3},
                               {OpKind::kAddSkip},      {OpKind::kRelu}});
      }
      ops.insert(ops.end(), {{OpKind::kAvgPool}, {OpKind::kLinear, 10}});
      break;
    }
  }
  for (const Op& op : ops) {
    const bool uses_layer = op.kind == OpKind::kLinear || op.kind == OpKind::kConv ||
                            op.kind == OpKind::kBatchNorm;
    if (uses_layer && op.layer >= m.layers.size()) {
      throw ShapeError("model '" + m.arch_id + "' is missing layer #" + std::to_string(op.layer));
    }
  }
  return ops;
}

struct Tape {
  std::vector<Tensor> inputs;
  std::vector<numerics::BatchNormCache> bn;
  std::vector<std::vector<std::size_t>> argmax;
};

Tensor run_forward(const ModelParams& m, const std::vector<Op>& ops, const Tensor& inputs,
                   BatchNormMode mode, Tape* tape,
                   std::vector<std::optional<numerics::RunningStats>>* running) {
  if (inputs.rank() != m.input_shape.size() + 1) {
    throw ShapeError("inputs " + shape_to_string(inputs.shape()) + " do not match model input " +
                     shape_to_string(m.input_shape));
  }
  for (std::size_t i = 0; i < m.input_shape.size(); ++i) {
    if (inputs.dim(i + 1) != m.input_shape[i]) {
      throw ShapeError("inputs " + shape_to_string(inputs.shape()) +
                       " do not match model input " + shape_to_string(m.input_shape));
    }
  }
  if (tape) {
    tape->inputs.resize(ops.size());
    tape->bn.resize(ops.size());
    tape->argmax.resize(ops.size());
  }
  if (running) running->assign(m.layers.size(), std::nullopt);

  Tensor cur = inputs;
  Tensor skip;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const Op& op = ops[k];
    if (tape) tape->inputs[k] = cur;
    switch (op.kind) {
      case OpKind::kFlatten: {
        const std::size_t n = cur.dim(0);
        cur = cur.reshaped({n, cur.size() / n});
        break;
      }
      case OpKind::kLinear: {
        const LayerParams& l = m.layers[op.layer];
        cur = numerics::linear_forward(cur, l.weight, l.bias);
        break;
      }
      case OpKind::kConv: {
        const LayerParams& l = m.layers[op.layer];
        cur = numerics::conv2d_forward(cur, l.weight, l.bias, l.stride, l.pad);
        break;
      }
      case OpKind::kBatchNorm: {
        const BatchNormParams& bn = *m.layers[op.layer].bn;
        auto r = numerics::batchnorm_forward(cur, bn.gamma, bn.beta, bn.running, mode);
        cur = std::move(r.output);
        if (running) (*running)[op.layer] = std::move(r.running);
        if (tape) tape->bn[k] = std::move(r.cache);
        break;
      }
      case OpKind::kRelu:
        cur = numerics::relu_forward(cur);
        break;
      case OpKind::kMaxPool: {
        auto r = numerics::maxpool2d_forward(cur, 2, 2);
        cur = std::move(r.output);
        if (tape) tape->argmax[k] = std::move(r.argmax);
        break;
      }
      case OpKind::kAvgPool:
        cur = numerics::global_avgpool_forward(cur);
        break;
      case OpKind::kSaveSkip:
        skip = cur;
        break;
      case OpKind::kAddSkip:
        numerics::add_inplace(cur, skip);
        break;
    }
  }
  return cur;
}

double squared_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

}  // namespace

ModelParams build_model(Arch arch, const Shape& input_shape, std::size_t num_classes,
                        std::uint64_t seed, std::size_t width) {
  if (num_classes < 2) throw ArgumentError("build_model: need at least 2 classes");
  if (input_shape.empty() || shape_size(input_shape) == 0) {
    throw ShapeError("build_model: empty input shape");
  }
  const std::size_t w = width ? width : default_width(arch);
  ModelParams m;
  m.arch_id = std::string(to_string(arch));
  m.input_shape = input_shape;
  m.num_classes = num_classes;
  m.width = w;
  Builder b(seed);

  switch (arch) {
    case Arch::kMlp: {
      const std::size_t d = shape_size(input_shape);
      m.layers.push_back(b.linear("fc1", d, w));
      m.layers.push_back(b.linear("fc2", w, w));
      m.layers.push_back(b.linear("fc3", w, num_classes, kClassifierGain));
      break;
    }
    case Arch::kVggMini: {
      const Shape s = require_image(input_shape, "vgg_mini");
      if (s[1] < 4 || s[2] < 4) {
        throw ShapeError("vgg_mini needs H, W >= 4, got " + shape_to_string(s));
      }
      const std::size_t c1 = w, c2 = 2 * w;
      m.layers.push_back(b.conv("conv1", s[0], c1, 3, 1));
      m.layers.push_back(Builder::batchnorm("bn1", c1));
      m.layers.push_back(b.conv("conv2", c1, c1, 3, 1));
      m.layers.push_back(Builder::batchnorm("bn2", c1));
      m.layers.push_back(b.conv("conv3", c1, c2, 3, 1));
      m.layers.push_back(Builder::batchnorm("bn3", c2));
      m.layers.push_back(b.conv("conv4", c2, c2, 3, 1));
      m.layers.push_back(Builder::batchnorm("bn4", c2));
      const std::size_t fh = s[1] / 2 / 2, fw = s[2] / 2 / 2;
      m.layers.push_back(b.linear("fc", c2 * fh * fw, num_classes, kClassifierGain));
      break;
    }
    case Arch::kResnetMini: {
      const Shape s = require_image(input_shape, "resnet_mini");
      m.layers.push_back(b.conv("stem", s[0], w, 3, 1));
      m.layers.push_back(Builder::batchnorm("stem_bn", w));
      for (int block = 1; block <= 2; ++block) {
        const std::string p = "block" + std::to_string(block) + "_";
        m.layers.push_back(b.conv(p + "conv1", w, w, 3, 1));
        m.layers.push_back(Builder::batchnorm(p + "bn1", w));
        m.layers.push_back(b.conv(p + "conv2", w, w, 3, 1));
        m.layers.push_back(Builder::batchnorm(p + "bn2", w));
      }
      m.layers.push_back(b.linear("fc", w, num_classes, kClassifierGain));
      break;
    }
  }
  assign_roles(m);
  return m;
}

ModelParams build_model(std::string_view arch_id, const Shape& input_shape,
                        std::size_t num_classes, std::uint64_t seed, std::size_t width) {
  return build_model(parse_arch(arch_id), input_shape, num_classes, seed, width);
}

void validate(const ModelParams& model) {
  std::set<std::string> names;
  int firsts = 0, lasts = 0;
  for (const LayerParams& l : model.layers) {
    if (!names.insert(l.name).second) throw ArgumentError("duplicate layer name '" + l.name + "'");
    if (l.is_batchnorm()) {
      if (l.role != LayerRole::kMiddle) {
        throw ArgumentError("batch-norm layer '" + l.name + "' cannot be first/last");
      }
      if (!l.bn) throw ShapeError("batch-norm layer '" + l.name + "' has no parameters");
      continue;
    }
    if (l.role == LayerRole::kFirst) ++firsts;
    if (l.role == LayerRole::kLast) ++lasts;
  }
  if (firsts != 1 || lasts != 1) {
    throw ArgumentError("model must have exactly one first and one last weight layer");
  }
  plan_for(model);
}

ForwardBackwardResult forward_backward(const ModelParams& model, const Tensor& inputs,
                                       std::span<const int> labels) {
  if (inputs.empty() || labels.empty()) throw ArgumentError("forward_backward: empty batch");
  const std::vector<Op> ops = plan_for(model);
  Tape tape;
  ForwardBackwardResult out;
  const Tensor logits =
      run_forward(model, ops, inputs, BatchNormMode::kTrain, &tape, &out.running);
  auto loss = numerics::softmax_cross_entropy(logits, labels);
  out.loss = loss.loss;
  out.grads.resize(model.layers.size());
  out.grad_norms.assign(model.layers.size(), 0.0);

  Tensor dy = std::move(loss.grad);
  Tensor skip_grad;
  for (std::size_t k = ops.size(); k-- > 0;) {
    const Op& op = ops[k];
    const Tensor& x = tape.inputs[k];
    switch (op.kind) {
      case OpKind::kFlatten:
        dy = dy.reshaped(x.shape());
        break;
      case OpKind::kLinear: {
        const LayerParams& l = model.layers[op.layer];
        auto g = numerics::linear_backward(x, l.weight, dy, !l.bias.empty());
        out.grads[op.layer].weight = std::move(g.weight);
        out.grads[op.layer].bias = std::move(g.bias);
        dy = std::move(g.input);
        break;
      }
      case OpKind::kConv: {
        const LayerParams& l = model.layers[op.layer];
        auto g = numerics::conv2d_backward(x, l.weight, dy, l.stride, l.pad, !l.bias.empty());
        out.grads[op.layer].weight = std::move(g.weight);
        out.grads[op.layer].bias = std::move(g.bias);
        dy = std::move(g.input);
        break;
      }
      case OpKind::kBatchNorm: {
        const BatchNormParams& bn = *model.layers[op.layer].bn;
        auto g = numerics::batchnorm_backward(tape.bn[k], bn.gamma, dy);
        out.grads[op.layer].gamma = std::move(g.gamma);
        out.grads[op.layer].beta = std::move(g.beta);
        dy = std::move(g.input);
        break;
      }
      case OpKind::kRelu:
        dy = numerics::relu_backward(x, dy);
        break;
      case OpKind::kMaxPool:
        dy = numerics::maxpool2d_backward(dy, tape.argmax[k], x.shape());
        break;
      case OpKind::kAvgPool:
        dy = numerics::global_avgpool_backward(dy, x.shape());
        break;
      case OpKind::kSaveSkip:
        numerics::add_inplace(dy, skip_grad);
        break;
      case OpKind::kAddSkip:
        skip_grad = dy;
        break;
    }
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].is_weight_layer()) {
      out.grad_norms[i] = std::sqrt(squared_norm(out.grads[i].weight));
    }
  }
  return out;
}

double forward_loss(const ModelParams& model, const Tensor& inputs, std::span<const int> labels,
                    BatchNormMode mode) {
  const Tensor logits = run_forward(model, plan_for(model), inputs, mode, nullptr, nullptr);
  return numerics::softmax_cross_entropy(logits, labels).loss;
}

Tensor predict(const ModelParams& model, const Tensor& inputs) {
  return run_forward(model, plan_for(model), inputs, BatchNormMode::kEval, nullptr, nullptr);
}

namespace {

void descend(Tensor& param, const Tensor& grad, double lr, const std::string& what) {
  if (param.empty()) return;
  if (grad.shape() != param.shape()) {
    throw ShapeError("sgd_step: gradient " + shape_to_string(grad.shape()) + " misaligned with " +
                     what + " " + shape_to_string(param.shape()));
  }
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

}  // namespace

ModelParams sgd_step(const ModelParams& model, const std::vector<LayerGrads>& grads, double lr) {
  if (grads.size() != model.layers.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradient blocks for " +
                     std::to_string(model.layers.size()) + " layers");
  }
  ModelParams next = model;
  for (std::size_t i = 0; i < next.layers.size(); ++i) {
    LayerParams& l = next.layers[i];
    const LayerGrads& g = grads[i];
    if (l.is_weight_layer()) {
      descend(l.weight, g.weight, lr, l.name + ".weight");
      descend(l.bias, g.bias, lr, l.name + ".bias");
    } else {
      descend(l.bn->gamma, g.gamma, lr, l.name + ".gamma");
      descend(l.bn->beta, g.beta, lr, l.name + ".beta");
    }
  }
  return next;
}

void set_running_stats(ModelParams& model,
                       const std::vector<std::optional<numerics::RunningStats>>& running) {
  if (running.size() != model.layers.size()) {
    throw ShapeError("set_running_stats: size mismatch");
  }
  for (std::size_t i = 0; i < running.size(); ++i) {
    if (running[i] && model.layers[i].bn) model.layers[i].bn->running = *running[i];
  }
}

std::vector<double> layer_weight_vector(const ModelParams& model, std::string_view layer_name) {
  const LayerParams& l = model.layer(layer_name);
  if (!l.is_weight_layer()) {
    throw ArgumentError("layer '" + l.name + "' has no weight block");
  }
  return {l.weight.values().begin(), l.weight.values().end()};
}

std::vector<std::string> weight_layer_names(const ModelParams& model) {
  std::vector<std::string> names;
  for (const auto& l : model.layers) {
    if (l.is_weight_layer()) names.push_back(l.name);
  }
  return names;
}

std::vector<std::string> middle_weight_layer_names(const ModelParams& model) {
  std::vector<std::string> names;
  for (const auto& l : model.layers) {
    if (l.is_weight_layer() && l.role == LayerRole::kMiddle) names.push_back(l.name);
  }
  return names;
}

}  // namespace fedlips::model
