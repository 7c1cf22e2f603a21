#include "csegnet/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace csegnet {

void PhantomConfig::validate() const {
  auto ok_range = [](double lo, double hi) { return std::isfinite(lo) && std::isfinite(hi) && lo > 0 && lo <= hi; };
  require(size >= 16 && depth >= 1, ErrorKind::InvalidGeometry, "phantom size must be >= 16 and depth >= 1");
  require(slice_spacing_mm > 0 && pixel_spacing_mm > 0, ErrorKind::InvalidGeometry, "spacing must be positive");
  require(ok_range(lvc_radius_min, lvc_radius_max), ErrorKind::InvalidGeometry, "LVC radius range");
  require(ok_range(lvm_thickness_min, lvm_thickness_max), ErrorKind::InvalidGeometry, "LVM thickness range");
  require(ok_range(rvc_radius_min, rvc_radius_max), ErrorKind::InvalidGeometry, "RVC radius range");
  require(apex_shrink >= 0 && apex_shrink < 0.6, ErrorKind::InvalidGeometry, "apex shrink must be in [0, 0.6)");
  require(ef_min > 0 && ef_min <= ef_max && ef_max < 95, ErrorKind::InvalidGeometry, "EF range");
  require(rv_ef_min > 0 && rv_ef_min <= rv_ef_max && rv_ef_max < 95, ErrorKind::InvalidGeometry, "RV EF range");
  require(noise_sigma >= 0, ErrorKind::InvalidGeometry, "noise sigma must be non-negative");
  const double s = static_cast<double>(size);
  // The annulus must enclose the cavity with at least two pixels at ES (smallest slice).
  const double min_shrink = 1.0 - apex_shrink;
  require(lvm_thickness_min * s >= 2.0, ErrorKind::InvalidGeometry, "myocardium thinner than 2 px");
  require(lvc_radius_min * s * min_shrink * std::sqrt(1.0 - ef_max / 100.0) >= 2.0, ErrorKind::InvalidGeometry,
          "ES cavity radius below 2 px");
  const double extent = lvc_radius_max + lvm_thickness_max + rvc_radius_max + center_jitter;
  require(extent < 0.48, ErrorKind::InvalidGeometry, "structures do not fit inside the image");
}

namespace {

struct Geometry {
  double cy, cx;          // LV centre, px
  double lvc_r, lvm_r;    // cavity and outer myocardial radius at the base slice
  double rv_r;            // RV circle radius
  double rv_angle;        // direction of the RV from the LV centre
};

std::vector<std::uint8_t> rasterize(const PhantomConfig& cfg, const Geometry& g, double lv_scale, double rv_scale) {
  const auto S = cfg.size, D = cfg.depth;
  std::vector<std::uint8_t> lab(static_cast<std::size_t>(D * S * S), kBackground);
  const double myo_area = g.lvm_r * g.lvm_r - g.lvc_r * g.lvc_r;
  for (std::int64_t z = 0; z < D; ++z) {
    const double t = D > 1 ? static_cast<double>(z) / static_cast<double>(D - 1) : 0.0;
    const double taper = 1.0 - cfg.apex_shrink * t;
    const double r_in = g.lvc_r * taper * lv_scale;
    // Myocardial cross-section area is conserved between phases.
    const double r_out = std::sqrt(r_in * r_in + myo_area * taper * taper);
    const double rv_r = g.rv_r * taper * rv_scale;
    const double rv_d = r_out + 0.45 * rv_r;
    const double rcy = g.cy + rv_d * std::sin(g.rv_angle), rcx = g.cx + rv_d * std::cos(g.rv_angle);
    for (std::int64_t i = 0; i < S; ++i)
      for (std::int64_t j = 0; j < S; ++j) {
        const double y = static_cast<double>(i), x = static_cast<double>(j);
        const double d_lv = std::hypot(y - g.cy, x - g.cx);
        std::uint8_t v = kBackground;
        if (d_lv <= r_in) v = kLvc;
        else if (d_lv <= r_out) v = kLvm;
        else if (std::hypot(y - rcy, x - rcx) <= rv_r) v = kRvc;
        lab[static_cast<std::size_t>((z * S + i) * S + j)] = v;
      }
  }
  return lab;
}

Tensor render(const PhantomConfig& cfg, const std::vector<std::uint8_t>& lab, double gain,
              std::mt19937_64& rng) {
  const auto S = cfg.size, D = cfg.depth;
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  const double body_ry = 0.42 * static_cast<double>(S), body_rx = 0.46 * static_cast<double>(S);
  const double mid = static_cast<double>(S - 1) / 2.0;
  std::vector<float> img(lab.size());
  for (std::int64_t z = 0; z < D; ++z)
    for (std::int64_t i = 0; i < S; ++i)
      for (std::int64_t j = 0; j < S; ++j) {
        const auto k = static_cast<std::size_t>((z * S + i) * S + j);
        double base;
        switch (lab[k]) {
          case kLvc: base = cfg.intensity_lvc; break;
          case kLvm: base = cfg.intensity_lvm; break;
          case kRvc: base = cfg.intensity_rvc; break;
          default: {
            const double ey = (static_cast<double>(i) - mid) / body_ry, ex = (static_cast<double>(j) - mid) / body_rx;
            base = ey * ey + ex * ex <= 1.0 ? cfg.intensity_body : cfg.intensity_background;
          }
        }
        img[k] = static_cast<float>(gain * base + noise(rng));
      }
  return Tensor(Shape{D, S, S}, std::move(img));
}

double count_ml(const std::vector<std::uint8_t>& lab, std::uint8_t cls, const Spacing& sp) {
  std::int64_t n = 0;
  for (auto v : lab) n += v == cls;
  return static_cast<double>(n) * sp.voxel_volume_mm3() / 1000.0;
}

}  // namespace

std::vector<PhantomCase> generate_phantom(const PhantomConfig& cfg, std::int64_t n) {
  cfg.validate();
  require(n >= 0, ErrorKind::InvalidGeometry, "phantom count must be non-negative");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double S = static_cast<double>(cfg.size);
  const Spacing spacing{cfg.slice_spacing_mm, cfg.pixel_spacing_mm, cfg.pixel_spacing_mm};

  std::vector<PhantomCase> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t p = 0; p < n; ++p) {
    Geometry g;
    const double mid = (S - 1.0) / 2.0;
    g.lvc_r = range(cfg.lvc_radius_min, cfg.lvc_radius_max) * S;
    g.lvm_r = g.lvc_r + range(cfg.lvm_thickness_min, cfg.lvm_thickness_max) * S;
    g.rv_r = range(cfg.rvc_radius_min, cfg.rvc_radius_max) * S;
    g.rv_angle = std::numbers::pi + range(-0.35, 0.35);
    // Shift the LV away from the RV side so the pair stays centred.
    g.cy = mid + range(-cfg.center_jitter, cfg.center_jitter) * S;
    g.cx = mid + range(-cfg.center_jitter, cfg.center_jitter) * S + 0.5 * g.rv_r;
    const double ef = range(cfg.ef_min, cfg.ef_max);
    const double rv_ef = range(cfg.rv_ef_min, cfg.rv_ef_max);
    const double gain_ed = range(0.85, 1.15), gain_es = range(0.85, 1.15);
    const std::uint64_t noise_seed = rng();

    PhantomCase pc;
    pc.target_ef = ef;
    pc.target_rv_ef = rv_ef;
    char id[32];
    std::snprintf(id, sizeof id, "phantom%04lld", static_cast<long long>(p));
    std::mt19937_64 noise_rng(noise_seed);

    auto make = [&](Phase phase, double lv_scale, double rv_scale, double gain) {
      Case c;
      c.case_id = id;
      c.phase = phase;
      c.spacing = spacing;
      c.label = rasterize(cfg, g, lv_scale, rv_scale);
      c.image = render(cfg, c.label, gain, noise_rng);
      return c;
    };
    // Area scales with radius^2, so the cavity radius scales by sqrt(1 - EF).
    pc.ed = make(Phase::ED, 1.0, 1.0, gain_ed);
    pc.es = make(Phase::ES, std::sqrt(1.0 - ef / 100.0), std::sqrt(1.0 - rv_ef / 100.0), gain_es);
    pc.lvc_ed_ml = count_ml(pc.ed.label, kLvc, spacing);
    pc.lvc_es_ml = count_ml(pc.es.label, kLvc, spacing);
    pc.rvc_ed_ml = count_ml(pc.ed.label, kRvc, spacing);
    pc.rvc_es_ml = count_ml(pc.es.label, kRvc, spacing);
    pc.lvm_ed_ml = count_ml(pc.ed.label, kLvm, spacing);
    pc.lvm_es_ml = count_ml(pc.es.label, kLvm, spacing);
    out.push_back(std::move(pc));
  }
  return out;
}

}  // namespace csegnet
