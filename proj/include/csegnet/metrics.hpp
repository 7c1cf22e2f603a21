#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace csegnet {

/// Physical voxel size in mm, ordered (slice, row, col) like the (D,H,W) layout.
struct Spacing {
  double slice = 1.0;
  double row = 1.0;
  double col = 1.0;

  double voxel_volume_mm3() const { return slice * row * col; }
};

struct Dims3 {
  std::int64_t depth = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;

  std::int64_t count() const { return depth * height * width; }
  friend bool operator==(const Dims3&, const Dims3&) = default;
};

/// Myocardial tissue density used for mass, g/ml.
inline constexpr double kMyocardialDensity = 1.05;

/// 2|a & b| / (|a| + |b|) over nonzero entries; 1.0 when both masks are empty.
double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Foreground voxels with a 6-connected background neighbour or on the volume edge.
std::vector<std::int64_t> boundary_voxels(std::span<const std::uint8_t> mask, const Dims3& dims);

/// Symmetric Hausdorff distance in mm between the boundary voxel centres of two
/// masks. Returns nullopt when either mask is empty.
std::optional<double> hausdorff_mm(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, const Dims3& dims,
                                   const Spacing& spacing);

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest seed.
/// Voxels with no reachable seed hold +inf.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> seeds, const Dims3& dims,
                                               const Spacing& spacing);

double volume_ml(std::span<const std::uint8_t> mask, const Spacing& spacing);

/// 100 * (EDV - ESV) / EDV. Throws ZeroEDV when edv <= 0.
double ef_percent(double edv_ml, double esv_ml);

double mass_g(double myocardium_volume_ml);

struct CohortStats {
  std::optional<double> corr;  // Pearson; nullopt when either side has zero variance
  double bias = 0.0;           // mean(pred - true)
};

/// Throws ShapeMismatch unless both lists have the same length >= 2.
CohortStats cohort_stats(std::span<const double> pred, std::span<const double> truth);

}  // namespace csegnet
