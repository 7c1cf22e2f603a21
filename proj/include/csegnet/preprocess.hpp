#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "csegnet/dataset.hpp"

namespace csegnet {

inline constexpr double kTargetInPlaneSpacing = 1.25;

// ---- 2-D resampling primitives on row-major (H, W) buffers -------------------

std::vector<float> resize_bilinear(std::span<const float> src, std::int64_t h, std::int64_t w, std::int64_t out_h,
                                   std::int64_t out_w);
std::vector<std::uint8_t> resize_nearest(std::span<const std::uint8_t> src, std::int64_t h, std::int64_t w,
                                         std::int64_t out_h, std::int64_t out_w);

/// In-plane size after resampling from `spacing` to `target` mm.
std::int64_t resampled_extent(std::int64_t extent, double spacing, double target = kTargetInPlaneSpacing);

/// Resamples every slice in-plane to `target` mm (image bilinear, label nearest).
/// The slice axis is untouched. Identity when the spacing already matches.
Case resample_to_spacing(const Case& c, double target = kTargetInPlaneSpacing);

/// output[i][j] = input[i + row][j + col]; negative offsets mean padding.
struct CropOffsets {
  std::int64_t row = 0;
  std::int64_t col = 0;
};

/// Centred offsets; odd remainders leave the extra pixel on the high-index side.
CropOffsets center_offsets(std::int64_t h, std::int64_t w, std::int64_t out_h, std::int64_t out_w);

/// Centred crop / zero-pad (label pads with background) to (out_h, out_w).
Slice center_crop_pad(const Slice& s, std::int64_t out_h, std::int64_t out_w, CropOffsets* offsets = nullptr);

/// Places an (h, w) label map back onto an (orig_h, orig_w) grid given the
/// offsets used to crop it; uncovered pixels become background.
std::vector<std::uint8_t> uncrop_labels(std::span<const std::uint8_t> labels, std::int64_t h, std::int64_t w,
                                        std::int64_t orig_h, std::int64_t orig_w, CropOffsets offsets);

/// In-place per-slice z-score; constant slices become zero.
void zscore(std::span<float> pixels);

Slice extract_slice(const Case& c, std::int64_t index);

/// Resample to 1.25 mm, z-score each slice, centre crop/pad to (size, size).
std::vector<Slice> preprocess_case(const Case& c, std::int64_t size);

}  // namespace csegnet
