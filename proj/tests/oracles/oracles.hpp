#pragma once
// Reference implementations used as test oracles. Each is written directly from
// the mathematical definition with plain loops and shares no code with the
// library beyond its public data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

// ---- convolution --------------------------------------------------------------

struct ConvCase {
  int B, C, H, W;      // input
  int O, k;            // output channels, square kernel size
  int stride, dilation, groups;
  bool same;           // zero "same" padding vs valid
};

inline int conv_out(int in, int k, int stride, int dilation, bool same) {
  if (same) return (in + stride - 1) / stride;
  return (in - ((k - 1) * dilation + 1)) / stride + 1;
}

inline int conv_pad_before(int in, int k, int stride, int dilation, bool same) {
  if (!same) return 0;
  const int out = conv_out(in, k, stride, dilation, same);
  const int needed = (out - 1) * stride + (k - 1) * dilation + 1 - in;
  return std::max(needed, 0) / 2;
}

/// Direct convolution. x (B,C,H,W), w (O,C/groups,k,k), bias (O) or empty.
inline std::vector<double> conv2d(const ConvCase& c, const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& bias) {
  const int OH = conv_out(c.H, c.k, c.stride, c.dilation, c.same);
  const int OW = conv_out(c.W, c.k, c.stride, c.dilation, c.same);
  const int ph = conv_pad_before(c.H, c.k, c.stride, c.dilation, c.same);
  const int pw = conv_pad_before(c.W, c.k, c.stride, c.dilation, c.same);
  const int cin_g = c.C / c.groups, cout_g = c.O / c.groups;
  std::vector<double> out(static_cast<std::size_t>(c.B) * c.O * OH * OW, 0.0);
  for (int b = 0; b < c.B; ++b)
    for (int o = 0; o < c.O; ++o) {
      const int g = o / cout_g;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < c.k; ++ky)
              for (int kx = 0; kx < c.k; ++kx) {
                const int iy = oy * c.stride - ph + ky * c.dilation;
                const int ix = ox * c.stride - pw + kx * c.dilation;
                if (iy < 0 || iy >= c.H || ix < 0 || ix >= c.W) continue;
                const int cin = g * cin_g + ci;
                acc += x[((static_cast<std::size_t>(b) * c.C + cin) * c.H + iy) * c.W + ix] *
                       w[((static_cast<std::size_t>(o) * cin_g + ci) * c.k + ky) * c.k + kx];
              }
          out[((static_cast<std::size_t>(b) * c.O + o) * OH + oy) * OW + ox] = acc;
        }
    }
  return out;
}

// ---- bilinear resize (half-pixel centres, edge clamped) -------------------------

inline double bilinear_at(const std::vector<double>& img, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  const double top = img[y0 * w + x0] * (1 - fx) + img[y0 * w + x1] * fx;
  const double bot = img[y1 * w + x0] * (1 - fx) + img[y1 * w + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

inline std::vector<double> bilinear(const std::vector<double>& img, int h, int w, int oh, int ow) {
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      const double y = (i + 0.5) * h / oh - 0.5;
      const double x = (j + 0.5) * w / ow - 0.5;
      out[i * ow + j] = bilinear_at(img, h, w, y, x);
    }
  return out;
}

// ---- generalized dice loss ------------------------------------------------------

/// p and r are (B,N,H,W); weights 1/(sum r)^2, absent classes use 1/eps^2.
inline double gdl(const std::vector<double>& p, const std::vector<double>& r, int B, int N, int HW,
                  double absent_eps = 1e-6) {
  double num = 0, den = 0;
  for (int l = 0; l < N; ++l) {
    double rs = 0, rp = 0, sum = 0;
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < HW; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(b) * N + l) * HW + i;
        rs += r[idx];
        rp += r[idx] * p[idx];
        sum += r[idx] + p[idx];
      }
    const double wl = rs > 0 ? 1.0 / (rs * rs) : 1.0 / (absent_eps * absent_eps);
    num += wl * rp;
    den += wl * sum;
  }
  return 1.0 - 2.0 * num / den;
}

// ---- metrics --------------------------------------------------------------------

inline double dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  long inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] != 0;
    nb += b[i] != 0;
    inter += a[i] != 0 && b[i] != 0;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

/// Boundary = foreground voxel with a 6-neighbour that is background or outside.
inline bool is_boundary(const std::vector<std::uint8_t>& m, int D, int H, int W, int z, int y, int x) {
  if (!m[(z * H + y) * W + x]) return false;
  const int dz[6] = {-1, 1, 0, 0, 0, 0}, dy[6] = {0, 0, -1, 1, 0, 0}, dx[6] = {0, 0, 0, 0, -1, 1};
  for (int n = 0; n < 6; ++n) {
    const int zz = z + dz[n], yy = y + dy[n], xx = x + dx[n];
    if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) return true;
    if (!m[(zz * H + yy) * W + xx]) return true;
  }
  return false;
}

/// Brute-force symmetric Hausdorff over boundary voxel centres; NaN when a mask is empty.
inline double hausdorff(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, int D, int H, int W,
                        double sz, double sy, double sx) {
  struct P { double z, y, x; };
  auto boundary = [&](const std::vector<std::uint8_t>& m) {
    std::vector<P> pts;
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (is_boundary(m, D, H, W, z, y, x)) pts.push_back({z * sz, y * sy, x * sx});
    return pts;
  };
  const auto pa = boundary(a), pb = boundary(b);
  if (pa.empty() || pb.empty()) return std::numeric_limits<double>::quiet_NaN();
  auto directed = [](const std::vector<P>& from, const std::vector<P>& to) {
    double worst = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double d = std::sqrt((p.z - q.z) * (p.z - q.z) + (p.y - q.y) * (p.y - q.y) + (p.x - q.x) * (p.x - q.x));
        best = std::min(best, d);
      }
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(pa, pb), directed(pb, pa));
}

/// Two-pass Pearson correlation.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double mean_difference(const std::vector<double>& pred, const std::vector<double>& truth) {
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += pred[i] - truth[i];
  return s / static_cast<double>(pred.size());
}

// ---- optimizer ------------------------------------------------------------------

/// Adam on f(w) = w^2 from w0; returns w after each step.
inline std::vector<double> adam_on_square(double w0, int steps, double lr = 1e-3, double b1 = 0.9, double b2 = 0.999,
                                          double eps = 1e-8) {
  std::vector<double> out;
  double w = w0, m = 0, v = 0;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2 * w;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
    out.push_back(w);
  }
  return out;
}

// ---- parameter-count audit ------------------------------------------------------

/// Trainable parameters per layer type, counted from the layer definitions:
///   conv+BN (no bias):   cin*cout*k*k + 2*cout
///   conv with bias:      cin*cout*k*k + cout
///   separable+BN:        cin*9 + cin*cout + 2*cout
inline std::int64_t audit_parameter_count(int stages, int base, int stem_branches, int classes, bool dpp) {
  auto ch = [&](int s) { return std::min<std::int64_t>(static_cast<std::int64_t>(base) << s, 16LL * base); };
  auto conv_bn = [](std::int64_t cin, std::int64_t cout, int k) { return cin * cout * k * k + 2 * cout; };
  auto conv_b = [](std::int64_t cin, std::int64_t cout, int k) { return cin * cout * k * k + cout; };
  auto sep_bn = [](std::int64_t cin, std::int64_t cout) { return cin * 9 + cin * cout + 2 * cout; };
  std::int64_t n = 0;
  const auto c0 = ch(0);
  n += stem_branches * conv_bn(1, c0, 3) + conv_bn(stem_branches * c0, c0, 1);
  for (int s = 0; s < stages; ++s) {
    const auto cin = s == 0 ? c0 : ch(s - 1), c = ch(s);
    n += sep_bn(cin, c) + sep_bn(c, c) + conv_b(cin, c, 1);
  }
  if (dpp)
    for (int s = 0; s < stages; ++s) {
      const auto c = ch(s);
      n += conv_bn(c, c, 1) + 3 * conv_bn(c, c, 3) + conv_b(5 * c, c, 1);
    }
  for (int s = 0; s + 1 < stages; ++s) n += sep_bn(ch(s + 1) + ch(s), ch(s)) + sep_bn(ch(s), ch(s));
  n += conv_b(c0, classes, 1);
  for (int s = 1; s < stages; ++s) n += conv_b(ch(s), classes, 1);
  return n;
}

}  // namespace oracle
