#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "csegnet/metrics.hpp"
#include "csegnet/tensor.hpp"

namespace csegnet {

enum class Phase { ED, ES };

std::string_view phase_name(Phase phase);
Phase parse_phase(std::string_view text);

inline constexpr int kNumCardiacClasses = 4;

/// Label values: 0 background, 1 RVC, 2 LVM, 3 LVC.
enum CardiacLabel : std::uint8_t { kBackground = 0, kRvc = 1, kLvm = 2, kLvc = 3 };

/// One 3-D acquisition at a single cardiac phase.
struct Case {
  std::string case_id;
  Phase phase = Phase::ED;
  Tensor image;                     // (D, H, W)
  std::vector<std::uint8_t> label;  // (D, H, W)
  Spacing spacing;

  Dims3 dims() const;
  std::string key() const;  // "<case_id>_<ED|ES>"

  /// Throws ShapeMismatch / InvalidGeometry / CorruptEntry on violated invariants.
  void validate() const;
};

/// A 2-D training sample.
struct Slice {
  Tensor image;                     // (H, W)
  std::vector<std::uint8_t> label;  // (H, W)
  std::string case_id;
  Phase phase = Phase::ED;
  std::int64_t index = 0;

  std::int64_t height() const { return image.dim(0); }
  std::int64_t width() const { return image.dim(1); }
};

// ---- native format ------------------------------------------------------------
//
// <dir>/<case_id>_<phase>/meta.json    {case_id, phase, dims [D,H,W], spacing [slice,row,col], dtype}
// <dir>/<case_id>_<phase>/image.f32    little-endian float32, row-major (D,H,W)
// <dir>/<case_id>_<phase>/label.u8     uint8, row-major (D,H,W)

std::filesystem::path write_native(const Case& c, const std::filesystem::path& dataset_dir);
Case read_native(const std::filesystem::path& case_dir);

/// All case directories under `dataset_dir` (those holding meta.json), sorted by name.
std::vector<Case> load_dataset(const std::filesystem::path& dataset_dir);

// ---- splitting ----------------------------------------------------------------

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

/// Patient-level split: |train| = round(ratio * n), clamped so both sides are
/// non-empty. Throws TooFewCases for fewer than 2 distinct ids.
Split split_train_val(std::vector<std::string> case_ids, double ratio, std::uint64_t seed);

}  // namespace csegnet
