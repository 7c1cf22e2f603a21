#pragma once

#include <cstdint>
#include <vector>

#include "csegnet/autograd.hpp"

namespace csegnet {

/// Weight cap for classes absent from the target: 1 / eps^2 with eps in pixels.
inline constexpr double kAbsentClassEpsilon = 1e-6;

struct GdlOptions {
  double absent_epsilon = kAbsentClassEpsilon;
  /// Tolerance on per-pixel channel sums of the prediction.
  double normalization_tol = 1e-4;
  /// Skip the one-hot / normalization checks (finite-difference probes need this).
  bool validate = true;
};

/// Per-class weights 1 / (sum_n r_ln)^2 over the whole batch.
template <typename T>
std::vector<double> gdl_class_weights(const BasicTensor<T>& target_onehot, double absent_epsilon = kAbsentClassEpsilon);

/// Generalized Dice Loss
///   1 - 2 * sum_l w_l sum_n r_ln p_ln / sum_l w_l sum_n (r_ln + p_ln)
/// on (B,N,H,W) softmax predictions and one-hot targets. Weights are treated as
/// constants of the target.
template <typename T>
Var<T> gdl(Var<T> pred_softmax, const BasicTensor<T>& target_onehot, const GdlOptions& options = {});

/// Integer label batch (B,H,W).
struct LabelBatch {
  std::vector<std::uint8_t> labels;
  std::int64_t batch = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
};

/// Argmax over channels of a one-hot (B,N,H,W) tensor.
template <typename T>
LabelBatch labels_from_onehot(const BasicTensor<T>& onehot);

/// Deep-supervision loss: weights[0] * GDL(main) + sum_k weights[k+1] * GDL(aux_k),
/// each head scored against the labels nearest-neighbour downsampled to its size.
template <typename T>
Var<T> combined_loss(Var<T> main_logits, const std::vector<Var<T>>& aux_logits, const LabelBatch& target,
                     const std::vector<double>& weights, const GdlOptions& options = {});

template <typename T>
Var<T> combined_loss(Var<T> main_logits, const std::vector<Var<T>>& aux_logits, const BasicTensor<T>& target_onehot,
                     const std::vector<double>& weights, const GdlOptions& options = {});

}  // namespace csegnet
