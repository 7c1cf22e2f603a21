#include "csegnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "csegnet/error.hpp"

namespace csegnet {

double dice(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch, "dice masks differ in size");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<std::int64_t> boundary_voxels(std::span<const std::uint8_t> mask, const Dims3& dims) {
  require(static_cast<std::int64_t>(mask.size()) == dims.count(), ErrorKind::ShapeMismatch, "mask size vs dims");
  const auto D = dims.depth, H = dims.height, W = dims.width;
  std::vector<std::int64_t> out;
  auto fg = [&](std::int64_t z, std::int64_t y, std::int64_t x) { return mask[static_cast<std::size_t>((z * H + y) * W + x)] != 0; };
  for (std::int64_t z = 0; z < D; ++z)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        if (!fg(z, y, x)) continue;
        const bool edge = z == 0 || z == D - 1 || y == 0 || y == H - 1 || x == 0 || x == W - 1;
        if (edge || !fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) || !fg(z, y, x - 1) ||
            !fg(z, y, x + 1))
          out.push_back((z * H + y) * W + x);
      }
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas along one line: out[q] = min_p (step*(q-p))^2 + f[p].
void distance_1d(const double* f, std::int64_t n, std::int64_t stride, double step, double* out,
                 std::vector<std::int64_t>& v, std::vector<double>& z, std::vector<double>& buf) {
  buf.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = f[i * stride];
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n + 1));
  const double s2 = step * step;
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    const double fq = buf[static_cast<std::size_t>(q)];
    if (fq == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    // z[0] = -inf, so the pop loop always stops at k = 0.
    double s;
    while (true) {
      const auto p = v[static_cast<std::size_t>(k)];
      const double fp = buf[static_cast<std::size_t>(p)];
      s = ((fq + s2 * static_cast<double>(q * q)) - (fp + s2 * static_cast<double>(p * p))) /
          (2.0 * s2 * static_cast<double>(q - p));
      if (s > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k + 1)] = kInf;
  }
  if (k < 0) {
    for (std::int64_t q = 0; q < n; ++q) out[q * stride] = kInf;
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j + 1)] < static_cast<double>(q)) ++j;
    const auto p = v[static_cast<std::size_t>(j)];
    const double d = step * static_cast<double>(q - p);
    out[q * stride] = d * d + buf[static_cast<std::size_t>(p)];
  }
}

}  // namespace

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> seeds, const Dims3& dims,
                                               const Spacing& spacing) {
  require(static_cast<std::int64_t>(seeds.size()) == dims.count(), ErrorKind::ShapeMismatch, "seed size vs dims");
  const auto D = dims.depth, H = dims.height, W = dims.width;
  std::vector<double> f(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) f[i] = seeds[i] ? 0.0 : kInf;
  std::vector<std::int64_t> v;
  std::vector<double> z, buf;
  for (std::int64_t zz = 0; zz < D; ++zz)
    for (std::int64_t y = 0; y < H; ++y) {
      double* line = f.data() + (zz * H + y) * W;
      distance_1d(line, W, 1, spacing.col, line, v, z, buf);
    }
  for (std::int64_t zz = 0; zz < D; ++zz)
    for (std::int64_t x = 0; x < W; ++x) {
      double* line = f.data() + zz * H * W + x;
      distance_1d(line, H, W, spacing.row, line, v, z, buf);
    }
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      double* line = f.data() + y * W + x;
      distance_1d(line, D, H * W, spacing.slice, line, v, z, buf);
    }
  return f;
}

std::optional<double> hausdorff_mm(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, const Dims3& dims,
                                   const Spacing& spacing) {
  require(a.size() == b.size(), ErrorKind::ShapeMismatch, "hausdorff masks differ in size");
  const auto ba = boundary_voxels(a, dims);
  const auto bb = boundary_voxels(b, dims);
  if (ba.empty() || bb.empty()) return std::nullopt;

  auto directed = [&](const std::vector<std::int64_t>& from, const std::vector<std::int64_t>& to) {
    std::vector<std::uint8_t> seeds(static_cast<std::size_t>(dims.count()), 0);
    for (auto i : to) seeds[static_cast<std::size_t>(i)] = 1;
    const auto dt = squared_distance_transform(seeds, dims, spacing);
    double worst = 0.0;
    for (auto i : from) worst = std::max(worst, dt[static_cast<std::size_t>(i)]);
    return worst;
  };
  return std::sqrt(std::max(directed(ba, bb), directed(bb, ba)));
}

double volume_ml(std::span<const std::uint8_t> mask, const Spacing& spacing) {
  std::int64_t n = 0;
  for (auto v : mask) n += v != 0;
  return static_cast<double>(n) * spacing.voxel_volume_mm3() / 1000.0;
}

double ef_percent(double edv_ml, double esv_ml) {
  if (!(edv_ml > 0.0)) fail(ErrorKind::ZeroEdv, "end-diastolic volume must be positive");
  return 100.0 * (edv_ml - esv_ml) / edv_ml;
}

double mass_g(double myocardium_volume_ml) { return kMyocardialDensity * myocardium_volume_ml; }

CohortStats cohort_stats(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.size() < 2)
    fail(ErrorKind::ShapeMismatch, "cohort statistics need two equal-length lists of at least 2 values");
  // Single-pass co-moment accumulation.
  double mp = 0, mt = 0, cpp = 0, ctt = 0, cpt = 0, bias = 0;
  double n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    n += 1.0;
    const double dp = pred[i] - mp;
    const double dt = truth[i] - mt;
    mp += dp / n;
    mt += dt / n;
    cpp += dp * (pred[i] - mp);
    ctt += dt * (truth[i] - mt);
    cpt += dp * (truth[i] - mt);
    bias += ((pred[i] - truth[i]) - bias) / n;
  }
  CohortStats s;
  s.bias = bias;
  if (cpp > 0.0 && ctt > 0.0) s.corr = std::clamp(cpt / std::sqrt(cpp * ctt), -1.0, 1.0);
  return s;
}

}  // namespace csegnet
