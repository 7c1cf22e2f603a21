#pragma once

#include <cstdint>

#include "csegnet/dataset.hpp"

namespace csegnet {

struct AugmentConfig {
  double affine_prob = 0.5;
  double rotation_deg = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double shift_px = 10.0;
  double shear_deg = 5.0;

  double elastic_prob = 0.3;
  double elastic_sigma = 10.0;  // smoothing of the displacement grid, px
  double elastic_alpha = 20.0;  // max displacement magnitude, px
  std::int64_t elastic_grid = 8;

  double sharpen_prob = 0.3;
  double sharpen_amount = 0.5;

  double contrast_prob = 0.3;
  double contrast_clip = 4.0;  // in standard deviations

  /// Throws InvalidConfig for probabilities outside [0,1] or non-finite ranges.
  void validate() const;

  static AugmentConfig none();
};

struct AffineParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double shift_row = 0.0;
  double shift_col = 0.0;
  double shear_deg = 0.0;
};

/// Affine warp about the slice centre: image bilinear, labels nearest, outside = 0.
Slice apply_affine(const Slice& s, const AffineParams& p);

/// Dense displacement warp; dy/dx are (H, W) fields in pixels.
Slice apply_displacement(const Slice& s, std::span<const float> dy, std::span<const float> dx);

/// Unsharp mask with a 3x3 Gaussian blur; image only.
Slice apply_sharpen(const Slice& s, double amount);

/// Z-score then clip to +/- clip; image only.
Slice apply_contrast_norm(const Slice& s, double clip);

/// Random augmentation, fully determined by (slice, cfg, seed). Geometric
/// transforms move image and label together; label values stay in the input set.
Slice augment(const Slice& s, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace csegnet
