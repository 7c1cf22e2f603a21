#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "csegnet/autograd.hpp"

namespace csegnet {

// ---- elementwise and reductions -------------------------------------------

enum class BinaryKind { Add, Sub, Mul, Div };

/// Divisors with magnitude below this raise DivisionDomain.
inline constexpr double kDivisionEpsilon = 1e-12;

/// `b` broadcasts to `a` under trailing-dimension rules; result has a's shape.
template <typename T>
Var<T> elementwise_binary(Var<T> a, Var<T> b, BinaryKind kind);

template <typename T>
Var<T> add(Var<T> a, Var<T> b) { return elementwise_binary(a, b, BinaryKind::Add); }
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) { return elementwise_binary(a, b, BinaryKind::Sub); }
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) { return elementwise_binary(a, b, BinaryKind::Mul); }
template <typename T>
Var<T> div(Var<T> a, Var<T> b) { return elementwise_binary(a, b, BinaryKind::Div); }

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> reduce_sum(Var<T> x, const std::vector<int>& axes, bool keep_dims = false);

template <typename T>
Var<T> sum_all(Var<T> x);

// ---- convolution ------------------------------------------------------------

enum class Padding { Same, Valid };

struct Conv2dSpec {
  int stride_h = 1;
  int stride_w = 1;
  int dilation_h = 1;
  int dilation_w = 1;
  Padding padding = Padding::Same;
  int groups = 1;

  static Conv2dSpec make(int stride, int dilation = 1, Padding padding = Padding::Same, int groups = 1) {
    return Conv2dSpec{stride, stride, dilation, dilation, padding, groups};
  }
};

/// Output extent and leading pad for one spatial axis.
struct ConvAxis {
  std::int64_t out = 0;
  std::int64_t pad_before = 0;
};

ConvAxis conv_axis(std::int64_t in, std::int64_t kernel, int stride, int dilation, Padding padding);

/// x: (B,C,H,W); weight: (O, C/groups, kH, kW); bias: (O).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, const Conv2dSpec& spec);

/// Depthwise conv (groups = C) followed by a 1x1 pointwise conv.
template <typename T>
Var<T> separable_conv2d(Var<T> x, Var<T> depthwise_weight, Var<T> pointwise_weight, int stride = 1,
                        int dilation = 1, Padding padding = Padding::Same);

// ---- resampling / structure -------------------------------------------------

/// Windows start at multiples of `stride`; partial windows at the far edge
/// average only the real pixels they cover.
template <typename T>
Var<T> avg_pool2d(Var<T> x, int window = 3, int stride = 3);

/// Half-pixel-center bilinear interpolation; identity when sizes match.
template <typename T>
Var<T> bilinear_resize(Var<T> x, std::int64_t out_h, std::int64_t out_w);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs);

// ---- normalization / activations -------------------------------------------

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEpsilon = 1e-5;

/// Updated running statistics produced by a training-mode batch_norm call.
template <typename T>
struct BatchNormUpdate {
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
};

/// Training mode normalizes with batch statistics (biased variance) and, when
/// `update` is non-null, writes momentum-blended running statistics (unbiased
/// variance) into it. Eval mode uses the running statistics.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const BasicTensor<T>& running_mean,
                  const BasicTensor<T>& running_var, bool training, BatchNormUpdate<T>* update = nullptr,
                  double momentum = kBatchNormMomentum, double epsilon = kBatchNormEpsilon);

template <typename T>
Var<T> relu(Var<T> x);

/// Softmax over axis 1 of a (B,N,H,W) tensor.
template <typename T>
Var<T> softmax_channels(Var<T> x);

// ---- plain-tensor helpers ---------------------------------------------------

/// Forward-only softmax over channels (no tape).
template <typename T>
BasicTensor<T> softmax_channels_value(const BasicTensor<T>& logits);

/// Nearest-neighbour downsampling of integer label maps (B,H,W) by an integer factor.
std::vector<std::uint8_t> downsample_labels(const std::vector<std::uint8_t>& labels, std::int64_t batch,
                                            std::int64_t h, std::int64_t w, std::int64_t factor);

/// One-hot encode labels (B,H,W) into (B,N,H,W).
template <typename T>
BasicTensor<T> one_hot(const std::vector<std::uint8_t>& labels, std::int64_t batch, std::int64_t h,
                       std::int64_t w, int num_classes);

}  // namespace csegnet
