#include "csegnet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "csegnet/preprocess.hpp"

namespace csegnet {

void AugmentConfig::validate() const {
  for (double p : {affine_prob, elastic_prob, sharpen_prob, contrast_prob})
    require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidConfig, "augmentation probabilities must be in [0,1]");
  for (double v : {rotation_deg, scale_min, scale_max, shift_px, shear_deg, elastic_sigma, elastic_alpha, sharpen_amount,
                   contrast_clip})
    require(std::isfinite(v), ErrorKind::InvalidConfig, "augmentation ranges must be finite");
  require(scale_min > 0 && scale_min <= scale_max, ErrorKind::InvalidConfig, "scale range must satisfy 0 < min <= max");
  require(elastic_sigma > 0 && elastic_alpha >= 0 && elastic_grid >= 2, ErrorKind::InvalidConfig,
          "elastic parameters out of range");
  require(sharpen_amount >= 0 && contrast_clip > 0, ErrorKind::InvalidConfig, "intensity parameters out of range");
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.affine_prob = c.elastic_prob = c.sharpen_prob = c.contrast_prob = 0.0;
  return c;
}

namespace {

float sample_bilinear(const Tensor& img, double y, double x) {
  const auto h = img.dim(0), w = img.dim(1);
  if (y < -0.5 || x < -0.5 || y > static_cast<double>(h) - 0.5 || x > static_cast<double>(w) - 0.5) return 0.0f;
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::int64_t>(std::floor(y)), x0 = static_cast<std::int64_t>(std::floor(x));
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const auto fy = static_cast<float>(y - static_cast<double>(y0)), fx = static_cast<float>(x - static_cast<double>(x0));
  const float a = img[y0 * w + x0], b = img[y0 * w + x1], c = img[y1 * w + x0], d = img[y1 * w + x1];
  const float top = a + fx * (b - a), bot = c + fx * (d - c);
  return top + fy * (bot - top);
}

std::uint8_t sample_nearest(const std::vector<std::uint8_t>& lab, std::int64_t h, std::int64_t w, double y, double x) {
  const auto yi = static_cast<std::int64_t>(std::llround(y)), xi = static_cast<std::int64_t>(std::llround(x));
  if (yi < 0 || yi >= h || xi < 0 || xi >= w) return kBackground;
  return lab[static_cast<std::size_t>(yi * w + xi)];
}

template <typename Map>
Slice warp(const Slice& s, Map&& source_of) {
  const auto h = s.height(), w = s.width();
  Slice out = s;
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      const auto [y, x] = source_of(i, j);
      out.image[i * w + j] = sample_bilinear(s.image, y, x);
      out.label[static_cast<std::size_t>(i * w + j)] = sample_nearest(s.label, h, w, y, x);
    }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (std::int64_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with edge clamping.
std::vector<double> blur(const std::vector<double>& src, std::int64_t h, std::int64_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<std::int64_t>(k.size() / 2);
  std::vector<double> tmp(src.size()), out(src.size());
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      double acc = 0;
      for (std::int64_t t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * src[static_cast<std::size_t>(i * w + std::clamp<std::int64_t>(j + t, 0, w - 1))];
      tmp[static_cast<std::size_t>(i * w + j)] = acc;
    }
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      double acc = 0;
      for (std::int64_t t = -r; t <= r; ++t)
        acc += k[static_cast<std::size_t>(t + r)] * tmp[static_cast<std::size_t>(std::clamp<std::int64_t>(i + t, 0, h - 1) * w + j)];
      out[static_cast<std::size_t>(i * w + j)] = acc;
    }
  return out;
}

// Coarse random grid -> Gaussian smoothing -> bilinear upsampling to (h, w).
std::vector<float> displacement_field(std::mt19937_64& rng, std::int64_t h, std::int64_t w, const AugmentConfig& cfg,
                                      double alpha) {
  const auto step = cfg.elastic_grid;
  const auto gh = h / step + 2, gw = w / step + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> grid(static_cast<std::size_t>(gh * gw));
  for (auto& v : grid) v = u(rng);
  grid = blur(grid, gh, gw, std::max(cfg.elastic_sigma / static_cast<double>(step), 0.5));
  double peak = 0;
  for (double v : grid) peak = std::max(peak, std::abs(v));
  std::vector<float> coarse(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) coarse[i] = static_cast<float>(peak > 0 ? alpha * grid[i] / peak : 0.0);
  return resize_bilinear(coarse, gh, gw, h, w);
}

}  // namespace

Slice apply_affine(const Slice& s, const AffineParams& p) {
  const double cy = static_cast<double>(s.height() - 1) / 2.0, cx = static_cast<double>(s.width() - 1) / 2.0;
  const double th = p.rotation_deg * std::numbers::pi / 180.0, sh = std::tan(p.shear_deg * std::numbers::pi / 180.0);
  // Forward map on centred (x, y): [x'; y'] = scale * R(th) * [[1, sh], [0, 1]] * [x; y] + t.
  const double c = std::cos(th), sn = std::sin(th);
  const double a00 = p.scale * c, a01 = p.scale * (c * sh - sn);
  const double a10 = p.scale * sn, a11 = p.scale * (sn * sh + c);
  const double det = a00 * a11 - a01 * a10;
  require(std::abs(det) > 1e-12, ErrorKind::InvalidConfig, "degenerate affine transform");
  const double i00 = a11 / det, i01 = -a01 / det, i10 = -a10 / det, i11 = a00 / det;
  return warp(s, [&](std::int64_t i, std::int64_t j) {
    const double x = static_cast<double>(j) - cx - p.shift_col;
    const double y = static_cast<double>(i) - cy - p.shift_row;
    return std::pair{i10 * x + i11 * y + cy, i00 * x + i01 * y + cx};
  });
}

Slice apply_displacement(const Slice& s, std::span<const float> dy, std::span<const float> dx) {
  const auto w = s.width();
  require(static_cast<std::int64_t>(dy.size()) == s.height() * w && dx.size() == dy.size(), ErrorKind::ShapeMismatch,
          "displacement field size");
  return warp(s, [&](std::int64_t i, std::int64_t j) {
    const auto k = static_cast<std::size_t>(i * w + j);
    return std::pair{static_cast<double>(i) + dy[k], static_cast<double>(j) + dx[k]};
  });
}

Slice apply_sharpen(const Slice& s, double amount) {
  const auto h = s.height(), w = s.width();
  Slice out = s;
  static constexpr double k[3] = {0.25, 0.5, 0.25};
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      double blurred = 0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          const auto y = std::clamp<std::int64_t>(i + a, 0, h - 1), x = std::clamp<std::int64_t>(j + b, 0, w - 1);
          blurred += k[a + 1] * k[b + 1] * s.image[y * w + x];
        }
      const double v = s.image[i * w + j];
      out.image[i * w + j] = static_cast<float>(v + amount * (v - blurred));
    }
  return out;
}

Slice apply_contrast_norm(const Slice& s, double clip) {
  Slice out = s;
  zscore(out.image.data());
  const auto lim = static_cast<float>(clip);
  for (auto& v : out.image.data()) v = std::clamp(v, -lim, lim);
  return out;
}

Slice augment(const Slice& s, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  // Draws happen in a fixed order regardless of which transforms fire.
  const bool do_affine = unit(rng) < cfg.affine_prob;
  const bool do_elastic = unit(rng) < cfg.elastic_prob;
  const bool do_sharpen = unit(rng) < cfg.sharpen_prob;
  const bool do_contrast = unit(rng) < cfg.contrast_prob;
  AffineParams ap;
  ap.rotation_deg = range(-cfg.rotation_deg, cfg.rotation_deg);
  ap.scale = range(cfg.scale_min, cfg.scale_max);
  ap.shift_row = range(-cfg.shift_px, cfg.shift_px);
  ap.shift_col = range(-cfg.shift_px, cfg.shift_px);
  ap.shear_deg = range(-cfg.shear_deg, cfg.shear_deg);
  const double alpha = range(0.0, cfg.elastic_alpha);
  const double amount = range(0.0, cfg.sharpen_amount);
  const std::uint64_t field_seed = rng();

  Slice out = s;
  if (do_affine) out = apply_affine(out, ap);
  if (do_elastic) {
    std::mt19937_64 frng(field_seed);
    const auto dy = displacement_field(frng, out.height(), out.width(), cfg, alpha);
    const auto dx = displacement_field(frng, out.height(), out.width(), cfg, alpha);
    out = apply_displacement(out, dy, dx);
  }
  if (do_sharpen) out = apply_sharpen(out, amount);
  if (do_contrast) out = apply_contrast_norm(out, cfg.contrast_clip);
  return out;
}

}  // namespace csegnet
