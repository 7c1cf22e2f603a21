#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csegnet/config.hpp"
#include "csegnet/dataset.hpp"
#include "csegnet/model.hpp"

namespace csegnet {

// ---- optimizer ------------------------------------------------------------------

template <typename T>
struct BasicAdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  BasicParamSet<T> m;
  BasicParamSet<T> v;
};
using AdamState = BasicAdamState<float>;

/// One bias-corrected Adam update over every parameter that has a gradient.
/// Throws NonFiniteGradient (leaving params and state untouched) when any
/// gradient entry is NaN/inf, and ShapeMismatch for mismatched shapes.
template <typename T>
void adam_step(BasicParamSet<T>& params, const BasicParamSet<T>& grads, BasicAdamState<T>& state);

// ---- checkpoints ----------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamSet params;
  std::optional<AdamState> adam;
  double val_dice = 0.0;
  int epoch = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// BadMagic, VersionUnsupported or CorruptEntry on malformed input; the name
/// set must match build(config).
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- top-k retention --------------------------------------------------------------

struct RegistryEntry {
  double score = 0.0;
  int epoch = 0;
  std::filesystem::path path;        // empty when kept in memory only
  std::shared_ptr<const Checkpoint> checkpoint;
};

/// Best-k entries by score; equal scores rank the earlier epoch first.
class TopKRegistry {
 public:
  explicit TopKRegistry(int k = 5);

  /// Returns whether the entry was retained. An evicted (or rejected) entry's
  /// path is reported through `dropped` so callers can delete the file.
  bool offer(RegistryEntry entry, std::optional<RegistryEntry>* dropped = nullptr);
  bool would_accept(double score, int epoch) const;

  const std::vector<RegistryEntry>& entries() const { return entries_; }
  int k() const { return k_; }
  std::size_t size() const { return entries_.size(); }

 private:
  int k_;
  std::vector<RegistryEntry> entries_;
};

// ---- inference ----------------------------------------------------------------------

/// Mean softmax probabilities (B,N,H,W) of the given parameter sets.
/// Throws ConfigMismatch when checkpoints disagree on the model config.
Tensor ensemble_probabilities(const std::vector<const Checkpoint*>& members, const Tensor& x);

/// Channel argmax (lowest index wins ties) of (B,N,H,W) probabilities -> (B,H,W) labels.
std::vector<std::uint8_t> argmax_labels(const Tensor& probs);

std::vector<std::uint8_t> ensemble_predict(const std::vector<const Checkpoint*>& members, const Tensor& x);

/// Segments every slice of a case (resampled, normalized and cropped like the
/// training data) and maps the labels back to the case's original grid.
Case predict_case(const std::vector<const Checkpoint*>& members, const Case& c, int batch_size = 8);

// ---- training --------------------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::array<double, 3> val_dice{};  // RVC, LVM, LVC
  double val_dice_mean = 0.0;
};

std::string format_training_log(const std::vector<EpochLog>& log);

struct TrainResult {
  TopKRegistry registry;
  std::vector<EpochLog> log;
  Split split;
  Checkpoint final_state;
  int rejected_steps = 0;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(int epoch, int step, int steps, double loss)> on_step;
};

/// Per-slice mean 2-D Dice for classes 1..3 (empty-vs-empty counts as 1).
std::array<double, 3> slice_dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                 std::int64_t slices, std::int64_t pixels_per_slice);

/// Patient-level split, seeded shuffled mini-batches with augmentation, Adam,
/// validation Dice per epoch and top-k retention. With a non-empty `out_dir`
/// checkpoints go to `<out_dir>/ckpt_epochNNN.cseg` and the log to
/// `<out_dir>/training_log.csv`; otherwise everything stays in memory.
TrainResult train(const RunConfig& cfg, const std::vector<Case>& cases, const std::filesystem::path& out_dir = {},
                  const TrainHooks& hooks = {});

/// Evaluation-mode class-mean Dice of `params` on preprocessed validation slices.
std::array<double, 3> validate_slices(const ModelConfig& cfg, const ParamSet& params, const std::vector<Slice>& slices,
                                      int batch_size);

}  // namespace csegnet
