#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedlips/tensor.hpp"

// Forward/backward kernels for the layers every model is assembled from.
// All functions are pure: they never mutate their inputs and hold no state.
namespace fedlips::numerics {

// c[i][j] = sum_t a[i][t] * b[t][j]. Throws ShapeError naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------- linear
// x: N x D, weight: O x D (row per output unit), bias: O or empty.
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;  // empty when the layer has no bias
};
LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy,
                            bool has_bias);

// ---------------------------------------------------------------- conv2d
// Cross-correlation with zero padding.
// x: N x C x H x W, weight: F x C x kh x kw, bias: F or empty.
// Output spatial size is floor((H + 2*pad - kh) / stride) + 1.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, int pad);

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                      int pad);

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, int stride,
                            int pad, bool has_bias);

// ---------------------------------------------------------------- relu
Tensor relu_forward(const Tensor& x);
// `x` is the forward input; the derivative at exactly 0 is taken as 0.
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// ---------------------------------------------------------------- pooling
struct MaxPoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index feeding each output element
};
// No padding. Ties resolve to the first element in row-major window order.
MaxPoolResult maxpool2d_forward(const Tensor& x, std::size_t kernel, std::size_t stride);
Tensor maxpool2d_backward(const Tensor& dy, std::span<const std::size_t> argmax,
                          const Shape& input_shape);

// N x C x H x W -> N x C.
Tensor global_avgpool_forward(const Tensor& x);
Tensor global_avgpool_backward(const Tensor& dy, const Shape& input_shape);

// ---------------------------------------------------------------- batchnorm
enum class BatchNormMode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct RunningStats {
  Tensor mean;
  Tensor var;
  friend bool operator==(const RunningStats&, const RunningStats&) = default;
};

struct BatchNormCache {
  BatchNormMode mode = BatchNormMode::kTrain;
  Tensor x_hat;
  std::vector<double> inv_std;  // per channel
};

struct BatchNormResult {
  Tensor output;
  RunningStats running;  // updated in train mode, copied through in eval mode
  BatchNormCache cache;
};

// x: N x C x ... (any trailing spatial dims). Train mode normalizes with the
// biased batch variance and folds the unbiased variance into the running
// estimate: running = (1 - momentum) * running + momentum * batch.
BatchNormResult batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  const RunningStats& running, BatchNormMode mode,
                                  double momentum = kBatchNormMomentum,
                                  double eps = kBatchNormEps);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                                  const Tensor& dy);

// ---------------------------------------------------------------- loss
struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d(mean loss)/d(logits)
};
// Mean over the batch of -log softmax(logits)[label], max-subtracted.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---------------------------------------------------------------- misc
void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace fedlips::numerics
