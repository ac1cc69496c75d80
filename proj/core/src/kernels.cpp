#include "fedlips/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fedlips/error.hpp"

namespace fedlips::numerics {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t f, kh, kw;
  std::size_t oh, ow;
  std::size_t stride, pad;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& weight, int stride, int pad) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input channels " + shape_to_string(x.shape()) +
                     " do not match weight " + shape_to_string(weight.shape()));
  }
  ConvGeometry g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.f = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.oh = conv_output_size(g.h, g.kh, stride, pad);
  g.ow = conv_output_size(g.w, g.kw, stride, pad);
  g.stride = static_cast<std::size_t>(stride);
  g.pad = static_cast<std::size_t>(pad);
  return g;
}

// Output columns [lo, hi) whose input column oj*stride + k - pad lies
// inside [0, w).
struct ValidRange {
  std::size_t lo = 0, hi = 0;
};

ValidRange valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                       std::size_t pad) {
  const auto o = static_cast<std::ptrdiff_t>(out), n = static_cast<std::ptrdiff_t>(in);
  const auto kk = static_cast<std::ptrdiff_t>(k), s = static_cast<std::ptrdiff_t>(stride),
             p = static_cast<std::ptrdiff_t>(pad);
  // smallest o with o*s + k - p >= 0, and first o with o*s + k - p >= n
  auto first_at_least = [s](std::ptrdiff_t target) {
    return target <= 0 ? std::ptrdiff_t{0} : (target + s - 1) / s;
  };
  const std::ptrdiff_t lo = std::min(o, first_at_least(p - kk));
  const std::ptrdiff_t hi = std::clamp(first_at_least(n + p - kk), lo, o);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Column matrix of shape (C*kh*kw) x (N*OH*OW), zero where the window leaves
// the padded image. Written into a per-thread scratch buffer that is reused
// across calls; the returned span is valid until the next im2col on the
// same thread.
std::span<const double> im2col(const Tensor& x, const ConvGeometry& g) {
  thread_local std::vector<double> scratch;
  const std::size_t cols = g.n * g.positions();
  if (scratch.size() < g.patch() * cols) scratch.resize(g.patch() * cols);
  const double* src = x.data();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const ValidRange rows = valid_range(g.oh, g.h, ki, g.stride, g.pad);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const ValidRange cr = valid_range(g.ow, g.w, kj, g.stride, g.pad);
        const std::size_t row = (ch * g.kh + ki) * g.kw + kj;
        double* dst = scratch.data() + row * cols;
        for (std::size_t n = 0; n < g.n; ++n) {
          const double* plane = src + (n * g.c + ch) * g.h * g.w;
          double* block = dst + n * g.positions();
          std::fill(block, block + rows.lo * g.ow, 0.0);
          std::fill(block + rows.hi * g.ow, block + g.oh * g.ow, 0.0);
          for (std::size_t oi = rows.lo; oi < rows.hi; ++oi) {
            double* out = block + oi * g.ow;
            const double* in_row = plane + (oi * g.stride + ki - g.pad) * g.w;
            std::fill(out, out + cr.lo, 0.0);
            if (g.stride == 1) {
              std::copy(in_row + cr.lo + kj - g.pad, in_row + cr.hi + kj - g.pad, out + cr.lo);
            } else {
              for (std::size_t oj = cr.lo; oj < cr.hi; ++oj) {
                out[oj] = in_row[oj * g.stride + kj - g.pad];
              }
            }
            std::fill(out + cr.hi, out + g.ow, 0.0);
          }
        }
      }
    }
  }
  return {scratch.data(), g.patch() * cols};
}

void col2im(std::span<const double> col, const ConvGeometry& g, Tensor& dx) {
  const std::size_t cols = g.n * g.positions();
  double* dst = dx.data();
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      const ValidRange rows = valid_range(g.oh, g.h, ki, g.stride, g.pad);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const ValidRange cr = valid_range(g.ow, g.w, kj, g.stride, g.pad);
        const std::size_t row = (ch * g.kh + ki) * g.kw + kj;
        const double* src = col.data() + row * cols;
        for (std::size_t n = 0; n < g.n; ++n) {
          double* plane = dst + (n * g.c + ch) * g.h * g.w;
          for (std::size_t oi = rows.lo; oi < rows.hi; ++oi) {
            const double* in = src + n * g.positions() + oi * g.ow;
            double* out_row = plane + (oi * g.stride + ki - g.pad) * g.w;
            for (std::size_t oj = cr.lo; oj < cr.hi; ++oj) {
              out_row[oj * g.stride + kj - g.pad] += in[oj];
            }
          }
        }
      }
    }
  }
}

// Sums with four interleaved accumulators. The grouping depends only on
// the length, never on alignment, so results are reproducible bit for bit.
struct Sum4 {
  double a[4] = {0.0, 0.0, 0.0, 0.0};
  double tail = 0.0;
  double total() const noexcept { return ((a[0] + a[1]) + (a[2] + a[3])) + tail; }
};

template <class F>
void accumulate4(Sum4& acc, std::size_t len, F term) {
  std::size_t j = 0;
  for (; j + 4 <= len; j += 4) {
    acc.a[0] += term(j);
    acc.a[1] += term(j + 1);
    acc.a[2] += term(j + 2);
    acc.a[3] += term(j + 3);
  }
  for (; j < len; ++j) acc.tail += term(j);
}

std::size_t channel_span(const Shape& shape) {
  std::size_t s = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) s *= shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  as_matrix(c, m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
  return c;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  if (weight.dim(1) != d) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  if (!bias.empty() && bias.size() != o) {
    throw ShapeError("linear: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  Tensor y({n, o});
  auto ym = as_matrix(y, n, o);
  ym.noalias() = as_matrix(x, n, d) * as_matrix(weight, o, d).transpose();
  if (!bias.empty()) {
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data(), static_cast<Eigen::Index>(o));
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy,
                            bool has_bias) {
  require_rank(dy, 2, "linear grad");
  const std::size_t n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  if (dy.dim(0) != n || dy.dim(1) != o) {
    throw ShapeError("linear backward: grad " + shape_to_string(dy.shape()) +
                     " inconsistent with input " + shape_to_string(x.shape()));
  }
  LinearGrads g{Tensor({n, d}), Tensor({o, d}), {}};
  auto dym = as_matrix(dy, n, o);
  as_matrix(g.input, n, d).noalias() = dym * as_matrix(weight, o, d);
  as_matrix(g.weight, o, d).noalias() = dym.transpose() * as_matrix(x, n, d);
  if (has_bias) {
    g.bias = Tensor({o});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < o; ++j) g.bias[j] += dy.at(i, j);
    }
  }
  return g;
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, int pad) {
  if (pad < 0) throw ArgumentError("conv2d: negative padding " + std::to_string(pad));
  if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  const std::size_t padded = in + 2 * static_cast<std::size_t>(pad);
  if (kernel > padded) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(padded));
  }
  return (padded - kernel) / static_cast<std::size_t>(stride) + 1;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                      int pad) {
  const ConvGeometry g = conv_geometry(x, weight, stride, pad);
  if (!bias.empty() && bias.size() != g.f) {
    throw ShapeError("conv2d: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                     shape_to_string(weight.shape()));
  }
  const std::size_t cols = g.n * g.positions();
  const std::span<const double> col = im2col(x, g);
  RowMat out = as_matrix(weight, g.f, g.patch()) *
               ConstMatMap(col.data(), static_cast<Eigen::Index>(g.patch()),
                           static_cast<Eigen::Index>(cols));

  Tensor y({g.n, g.f, g.oh, g.ow});
  double* dst = y.data();
  const std::size_t p = g.positions();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      const double b = bias.empty() ? 0.0 : bias[f];
      const double* src = out.data() + f * cols + n * p;
      double* o = dst + (n * g.f + f) * p;
      for (std::size_t i = 0; i < p; ++i) o[i] = src[i] + b;
    }
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, int stride,
                            int pad, bool has_bias) {
  const ConvGeometry g = conv_geometry(x, weight, stride, pad);
  const Shape expected{g.n, g.f, g.oh, g.ow};
  if (dy.shape() != expected) {
    throw ShapeError("conv2d backward: grad " + shape_to_string(dy.shape()) + " expected " +
                     shape_to_string(expected));
  }
  const std::size_t cols = g.n * g.positions();
  const std::size_t p = g.positions();

  // Reorder dy from N x F x P to F x (N*P).
  RowMat dym(static_cast<Eigen::Index>(g.f), static_cast<Eigen::Index>(cols));
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      const double* src = dy.data() + (n * g.f + f) * p;
      double* d = dym.data() + f * cols + n * p;
      std::copy(src, src + p, d);
    }
  }

  const std::span<const double> col = im2col(x, g);
  ConstMatMap colm(col.data(), static_cast<Eigen::Index>(g.patch()),
                   static_cast<Eigen::Index>(cols));

  Conv2dGrads grads{Tensor(x.shape()), Tensor(weight.shape()), {}};
  as_matrix(grads.weight, g.f, g.patch()).noalias() = dym * colm.transpose();
  if (has_bias) {
    grads.bias = Tensor({g.f});
    for (std::size_t f = 0; f < g.f; ++f) {
      const double* row = dym.data() + f * cols;
      Sum4 acc;
      accumulate4(acc, cols, [row](std::size_t i) { return row[i]; });
      grads.bias[f] = acc.total();
    }
  }
  thread_local std::vector<double> dcol;
  dcol.resize(g.patch() * cols);
  MatMap(dcol.data(), static_cast<Eigen::Index>(g.patch()), static_cast<Eigen::Index>(cols))
      .noalias() = as_matrix(weight, g.f, g.patch()).transpose() * dym;
  col2im(dcol, g, grads.input);
  return grads;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  require_same_shape(x, dy, "relu backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

MaxPoolResult maxpool2d_forward(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "maxpool input");
  if (kernel == 0 || stride == 0) throw ArgumentError("maxpool: kernel and stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h || kernel > w) {
    throw ShapeError("maxpool: kernel " + std::to_string(kernel) + " larger than input " +
                     shape_to_string(x.shape()));
  }
  const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  MaxPoolResult r{Tensor({n, c, oh, ow}), {}};
  r.argmax.resize(r.output.size());
  std::size_t out = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oi = 0; oi < oh; ++oi) {
      for (std::size_t oj = 0; oj < ow; ++oj, ++out) {
        std::size_t best = base + oi * stride * w + oj * stride;
        double best_v = x[best];
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const std::size_t idx = base + (oi * stride + ki) * w + oj * stride + kj;
            if (x[idx] > best_v) {
              best_v = x[idx];
              best = idx;
            }
          }
        }
        r.output[out] = best_v;
        r.argmax[out] = best;
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Tensor& dy, std::span<const std::size_t> argmax,
                          const Shape& input_shape) {
  if (argmax.size() != dy.size()) {
    throw ShapeError("maxpool backward: " + std::to_string(argmax.size()) +
                     " indices for grad " + shape_to_string(dy.shape()));
  }
  Tensor dx(input_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
  return dx;
}

Tensor global_avgpool_forward(const Tensor& x) {
  require_rank(x, 4, "avgpool input");
  const std::size_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < s; ++j) acc += x[i * s + j];
    y[i] = acc / static_cast<double>(s);
  }
  return y;
}

Tensor global_avgpool_backward(const Tensor& dy, const Shape& input_shape) {
  Tensor dx(input_shape);
  const std::size_t s = input_shape.at(2) * input_shape.at(3);
  if (dy.size() * s != dx.size()) {
    throw ShapeError("avgpool backward: grad " + shape_to_string(dy.shape()) +
                     " inconsistent with input " + shape_to_string(input_shape));
  }
  const double scale = 1.0 / static_cast<double>(s);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    for (std::size_t j = 0; j < s; ++j) dx[i * s + j] = dy[i] * scale;
  }
  return dx;
}

BatchNormResult batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                  const RunningStats& running, BatchNormMode mode,
                                  double momentum, double eps) {
  if (x.rank() < 2) {
    throw ShapeError("batchnorm: input must be N x C x ..., got " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), s = channel_span(x.shape());
  for (const Tensor* t : {&gamma, &beta, &running.mean, &running.var}) {
    if (t->size() != c) {
      throw ShapeError("batchnorm: per-channel parameter " + shape_to_string(t->shape()) +
                       " does not match input " + shape_to_string(x.shape()));
    }
  }
  const std::size_t m = n * s;
  if (mode == BatchNormMode::kTrain && m < 2) {
    throw ArgumentError("batchnorm: train mode needs more than one value per channel, got " +
                        shape_to_string(x.shape()));
  }

  BatchNormResult r{Tensor(x.shape()), running, {}};
  r.cache.mode = mode;
  r.cache.x_hat = Tensor(x.shape());
  r.cache.inv_std.resize(c);

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    if (mode == BatchNormMode::kTrain) {
      Sum4 sm;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * s;
        accumulate4(sm, s, [p](std::size_t j) { return p[j]; });
      }
      mean = sm.total() / static_cast<double>(m);
      Sum4 sv;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * s;
        accumulate4(sv, s, [p, mean](std::size_t j) { return (p[j] - mean) * (p[j] - mean); });
      }
      var = sv.total();
      var /= static_cast<double>(m);
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      r.running.mean[ch] = (1.0 - momentum) * running.mean[ch] + momentum * mean;
      r.running.var[ch] = (1.0 - momentum) * running.var[ch] + momentum * unbiased;
    } else {
      mean = running.mean[ch];
      var = running.var[ch];
    }
    const double inv_std = 1.0 / std::sqrt(var + eps);
    r.cache.inv_std[ch] = inv_std;
    const double gm = gamma[ch], bt = beta[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * s;
      const double* __restrict xp = x.data() + off;
      double* __restrict xh = r.cache.x_hat.data() + off;
      double* __restrict yp = r.output.data() + off;
      for (std::size_t j = 0; j < s; ++j) {
        xh[j] = (xp[j] - mean) * inv_std;
        yp[j] = gm * xh[j] + bt;
      }
    }
  }
  return r;
}

BatchNormGrads batchnorm_backward(const BatchNormCache& cache, const Tensor& gamma,
                                  const Tensor& dy) {
  require_same_shape(cache.x_hat, dy, "batchnorm backward");
  const std::size_t n = dy.dim(0), c = dy.dim(1), s = channel_span(dy.shape());
  const double m = static_cast<double>(n * s);
  BatchNormGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    Sum4 sd, sdx;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * s;
      const double* dp = dy.data() + off;
      const double* xh = cache.x_hat.data() + off;
      accumulate4(sd, s, [dp](std::size_t j) { return dp[j]; });
      accumulate4(sdx, s, [dp, xh](std::size_t j) { return dp[j] * xh[j]; });
    }
    const double sum_dy = sd.total(), sum_dy_xh = sdx.total();
    g.beta[ch] = sum_dy;
    g.gamma[ch] = sum_dy_xh;
    const double scale = gamma[ch] * cache.inv_std[ch];
    const bool train = cache.mode == BatchNormMode::kTrain;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * s;
      const double* __restrict dp = dy.data() + off;
      const double* __restrict xh = cache.x_hat.data() + off;
      double* __restrict dx = g.input.data() + off;
      if (train) {
        for (std::size_t j = 0; j < s; ++j) dx[j] = scale / m * (m * dp[j] - sum_dy - xh[j] * sum_dy_xh);
      } else {
        for (std::size_t j = 0; j < s; ++j) dx[j] = scale * dp[j];
      }
    }
  }
  return g;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_to_string(logits.shape()));
  }
  LossResult r{0.0, Tensor(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(label) +
                          " outside [0, " + std::to_string(c) + ")");
    }
    const double* row = logits.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    r.loss += -(row[label] - mx - log_z);
    double* g = r.grad.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      g[j] = std::exp(row[j] - mx - log_z) * inv_n;
    }
    g[label] -= inv_n;
  }
  r.loss *= inv_n;
  return r;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "add");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace fedlips::numerics
