#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "csegnet/augment.hpp"
#include "csegnet/model.hpp"

namespace csegnet {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double split_ratio = 0.8;  // fraction of patients used for training
  std::uint64_t seed = 0;
  int top_k = 5;
  bool augment = true;
  bool save_optimizer_state = false;

  void validate() const;
};

/// Everything a training run needs besides data.
struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  AugmentConfig augment;
  TrainConfig train;

  void validate() const;
};

/// Flat `key = value` lines using the struct field names; '#' starts a comment.
/// Unknown keys and unparsable values raise InvalidConfig with the line number.
RunConfig parse_config_text(std::string_view text, RunConfig base = {});
void apply_config_entry(RunConfig& cfg, std::string_view key, std::string_view value);

/// Every field, one per line, in a form parse_config_text() accepts.
std::string format_config(const RunConfig& cfg);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

}  // namespace csegnet
