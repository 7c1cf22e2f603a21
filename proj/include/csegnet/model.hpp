#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csegnet/autograd.hpp"
#include "csegnet/ops.hpp"

namespace csegnet {

enum class Variant { CSegNet, UNetBaseline };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view text);

struct ModelConfig {
  int num_classes = 4;
  int stages = 5;
  int base_channels = 16;
  std::vector<int> stem_strides{1, 2, 4};
  int pyramid_fuse_kernel = 1;
  /// Main head first, then one weight per auxiliary head (finest to coarsest).
  /// Empty selects the default ladder 1.0, 0.4, 0.2, 0.1, ...
  std::vector<double> deep_supervision_weights;
  std::int64_t input_height = 256;
  std::int64_t input_width = 256;
  Variant variant = Variant::CSegNet;
  /// Average upsampled auxiliary softmaxes into the main prediction at inference.
  bool aux_inference = false;

  /// Desk-scale setting: 4 stages, base 8, 128x128 input.
  static ModelConfig desk();
  /// Full-scale setting: 5 stages, base 64, 256x256 input.
  static ModelConfig full();

  /// base * 2^stage, capped at 16 * base.
  int channels(int stage) const;
  int num_aux_heads() const { return stages - 1; }
  std::vector<double> loss_weights() const;

  /// Throws InvalidConfig naming the violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
using BasicParamSet = std::map<std::string, BasicTensor<T>>;
using ParamSet = BasicParamSet<float>;

enum class ParamInit { FanInUniform, Ones, Zeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init = ParamInit::Zeros;
  std::int64_t fan_in = 1;
  bool trainable = true;  // false for batch-norm running statistics
};

/// Every named tensor of the model, in construction order.
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);

/// Deterministic for a fixed (config, seed).
ParamSet build(const ModelConfig& cfg, std::uint64_t seed);

bool is_buffer_name(const std::string& name);

/// Learnable scalar count (running statistics excluded unless requested).
std::int64_t count_parameters(const ParamSet& params, bool include_buffers = false);

template <typename T>
BasicParamSet<T> cast_params(const ParamSet& params) {
  BasicParamSet<T> out;
  for (const auto& [k, v] : params) out.emplace(k, v.template cast<T>());
  return out;
}

template <typename T>
using VarMap = std::map<std::string, Var<T>>;

/// Places every tensor on the tape; trainable ones require grad when `trainable` is set.
template <typename T>
VarMap<T> bind_params(Tape<T>& tape, const BasicParamSet<T>& params, bool trainable);

struct LayerRecord {
  std::string name;
  Shape shape;
  std::int64_t params = 0;
};

template <typename T>
struct ForwardContext {
  const ModelConfig* cfg = nullptr;
  const VarMap<T>* params = nullptr;
  bool training = false;
  /// Receives running-statistic updates keyed by batch-norm prefix.
  std::map<std::string, BatchNormUpdate<T>>* bn_updates = nullptr;
  std::vector<LayerRecord>* trace = nullptr;
};

template <typename T>
struct DppBranches {
  std::vector<Var<T>> outputs;  // 1x1, 3x3, 3x3 d1, 3x3 d2, pooled+resized
};

/// Multi-scale stem: parallel strided 3x3 convs, resized back and fused.
template <typename T>
Var<T> stem(const ForwardContext<T>& ctx, Var<T> x);

/// Dilated pyramid pooling block for skip `stage`; same shape in and out.
template <typename T>
Var<T> dpp_block(const ForwardContext<T>& ctx, int stage, Var<T> f, DppBranches<T>* branches = nullptr);

template <typename T>
struct ForwardOutput {
  Var<T> main;             // (B, N, H, W)
  std::vector<Var<T>> aux; // (B, N, H/2^s, W/2^s) for s = 1 .. stages-1
};

/// Throws ShapeMismatch when x is not (B, 1, input_height, input_width).
template <typename T>
ForwardOutput<T> forward(const ForwardContext<T>& ctx, Var<T> x);

/// Eval-mode class probabilities (B, N, H, W); honours cfg.aux_inference.
Tensor predict_probabilities(const ModelConfig& cfg, const ParamSet& params, const Tensor& x);

/// Plain-text table of layer name, output shape and parameter count.
std::string architecture_summary(const ModelConfig& cfg, const ParamSet& params);

}  // namespace csegnet
