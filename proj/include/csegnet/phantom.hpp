#pragma once

#include <cstdint>
#include <vector>

#include "csegnet/dataset.hpp"

namespace csegnet {

/// Synthetic short-axis cardiac volumes with analytically known structure.
/// Geometric ranges are fractions of the in-plane image size.
struct PhantomConfig {
  std::int64_t size = 128;
  std::int64_t depth = 4;
  double slice_spacing_mm = 10.0;
  double pixel_spacing_mm = 1.25;

  double lvc_radius_min = 0.09;
  double lvc_radius_max = 0.14;
  double lvm_thickness_min = 0.035;
  double lvm_thickness_max = 0.055;
  double rvc_radius_min = 0.10;    // relative to the image size
  double rvc_radius_max = 0.15;
  double center_jitter = 0.06;
  double apex_shrink = 0.25;       // radius reduction from first to last slice

  double ef_min = 40.0;            // LV target ejection fraction range, percent
  double ef_max = 70.0;
  double rv_ef_min = 35.0;
  double rv_ef_max = 65.0;

  double intensity_background = 0.05;
  double intensity_body = 0.45;
  double intensity_lvm = 0.2;
  double intensity_lvc = 0.9;
  double intensity_rvc = 0.8;
  double noise_sigma = 0.06;

  std::uint64_t seed = 0;

  /// Throws InvalidGeometry when ranges are empty, non-positive, or do not fit.
  void validate() const;
};

struct PhantomCase {
  Case ed;
  Case es;
  double target_ef = 0.0;       // continuous-geometry LV ejection fraction
  double target_rv_ef = 0.0;
  // Volumes counted on the generated label masks.
  double lvc_ed_ml = 0.0, lvc_es_ml = 0.0;
  double rvc_ed_ml = 0.0, rvc_es_ml = 0.0;
  double lvm_ed_ml = 0.0, lvm_es_ml = 0.0;
};

/// `n` patients, each an ED/ES pair sharing geometry; case ids "phantom0000"...
std::vector<PhantomCase> generate_phantom(const PhantomConfig& cfg, std::int64_t n);

}  // namespace csegnet
