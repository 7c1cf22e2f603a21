#include "csegnet/preprocess.hpp"

#include <algorithm>
#include <cmath>

namespace csegnet {

std::vector<float> resize_bilinear(std::span<const float> src, std::int64_t h, std::int64_t w, std::int64_t out_h,
                                   std::int64_t out_w) {
  require(static_cast<std::int64_t>(src.size()) == h * w, ErrorKind::ShapeMismatch, "resize source size");
  if (h == out_h && w == out_w) return {src.begin(), src.end()};
  auto axis = [](std::int64_t in, std::int64_t out, std::vector<std::int64_t>& i0, std::vector<std::int64_t>& i1,
                 std::vector<float>& f) {
    i0.resize(static_cast<std::size_t>(out));
    i1.resize(static_cast<std::size_t>(out));
    f.resize(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      const double s = std::clamp((static_cast<double>(o) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::int64_t>(std::floor(s));
      i0[static_cast<std::size_t>(o)] = lo;
      i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in - 1);
      f[static_cast<std::size_t>(o)] = static_cast<float>(s - static_cast<double>(lo));
    }
  };
  std::vector<std::int64_t> y0, y1, x0, x1;
  std::vector<float> fy, fx;
  axis(h, out_h, y0, y1, fy);
  axis(w, out_w, x0, x1, fx);
  std::vector<float> out(static_cast<std::size_t>(out_h * out_w));
  for (std::int64_t i = 0; i < out_h; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    const float* r0 = src.data() + y0[ii] * w;
    const float* r1 = src.data() + y1[ii] * w;
    for (std::int64_t j = 0; j < out_w; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const float top = r0[x0[jj]] + fx[jj] * (r0[x1[jj]] - r0[x0[jj]]);
      const float bot = r1[x0[jj]] + fx[jj] * (r1[x1[jj]] - r1[x0[jj]]);
      out[static_cast<std::size_t>(i * out_w + j)] = top + fy[ii] * (bot - top);
    }
  }
  return out;
}

std::vector<std::uint8_t> resize_nearest(std::span<const std::uint8_t> src, std::int64_t h, std::int64_t w,
                                         std::int64_t out_h, std::int64_t out_w) {
  require(static_cast<std::int64_t>(src.size()) == h * w, ErrorKind::ShapeMismatch, "resize source size");
  if (h == out_h && w == out_w) return {src.begin(), src.end()};
  auto index = [](std::int64_t o, std::int64_t in, std::int64_t out) {
    const auto s = static_cast<std::int64_t>(std::floor((static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                                                        static_cast<double>(out)));
    return std::clamp<std::int64_t>(s, 0, in - 1);
  };
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_h * out_w));
  for (std::int64_t i = 0; i < out_h; ++i) {
    const auto si = index(i, h, out_h);
    for (std::int64_t j = 0; j < out_w; ++j)
      out[static_cast<std::size_t>(i * out_w + j)] = src[static_cast<std::size_t>(si * w + index(j, w, out_w))];
  }
  return out;
}

std::int64_t resampled_extent(std::int64_t extent, double spacing, double target) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(extent) * spacing / target));
}

Case resample_to_spacing(const Case& c, double target) {
  c.validate();
  constexpr double tol = 1e-9;
  if (std::abs(c.spacing.row - target) < tol && std::abs(c.spacing.col - target) < tol) return c;
  const auto d = c.dims();
  const auto nh = resampled_extent(d.height, c.spacing.row, target);
  const auto nw = resampled_extent(d.width, c.spacing.col, target);
  Case out;
  out.case_id = c.case_id;
  out.phase = c.phase;
  out.spacing = Spacing{c.spacing.slice, target, target};
  std::vector<float> img;
  img.reserve(static_cast<std::size_t>(d.depth * nh * nw));
  out.label.reserve(static_cast<std::size_t>(d.depth * nh * nw));
  const auto plane = d.height * d.width;
  for (std::int64_t z = 0; z < d.depth; ++z) {
    auto s = resize_bilinear(c.image.data().subspan(static_cast<std::size_t>(z * plane), static_cast<std::size_t>(plane)),
                             d.height, d.width, nh, nw);
    img.insert(img.end(), s.begin(), s.end());
    auto l = resize_nearest(std::span(c.label).subspan(static_cast<std::size_t>(z * plane), static_cast<std::size_t>(plane)),
                            d.height, d.width, nh, nw);
    out.label.insert(out.label.end(), l.begin(), l.end());
  }
  out.image = Tensor(Shape{d.depth, nh, nw}, std::move(img));
  return out;
}

CropOffsets center_offsets(std::int64_t h, std::int64_t w, std::int64_t out_h, std::int64_t out_w) {
  // floor division keeps the extra pixel on the high side for both crop and pad.
  auto off = [](std::int64_t in, std::int64_t out) {
    const auto diff = in - out;
    return diff >= 0 ? diff / 2 : -((-diff) / 2);
  };
  return CropOffsets{off(h, out_h), off(w, out_w)};
}

Slice center_crop_pad(const Slice& s, std::int64_t out_h, std::int64_t out_w, CropOffsets* offsets) {
  const auto h = s.height(), w = s.width();
  const auto o = center_offsets(h, w, out_h, out_w);
  if (offsets) *offsets = o;
  if (h == out_h && w == out_w) return s;
  Slice out;
  out.case_id = s.case_id;
  out.phase = s.phase;
  out.index = s.index;
  out.image = Tensor(Shape{out_h, out_w});
  out.label.assign(static_cast<std::size_t>(out_h * out_w), kBackground);
  for (std::int64_t i = 0; i < out_h; ++i) {
    const auto si = i + o.row;
    if (si < 0 || si >= h) continue;
    for (std::int64_t j = 0; j < out_w; ++j) {
      const auto sj = j + o.col;
      if (sj < 0 || sj >= w) continue;
      out.image[i * out_w + j] = s.image[si * w + sj];
      out.label[static_cast<std::size_t>(i * out_w + j)] = s.label[static_cast<std::size_t>(si * w + sj)];
    }
  }
  return out;
}

std::vector<std::uint8_t> uncrop_labels(std::span<const std::uint8_t> labels, std::int64_t h, std::int64_t w,
                                        std::int64_t orig_h, std::int64_t orig_w, CropOffsets offsets) {
  require(static_cast<std::int64_t>(labels.size()) == h * w, ErrorKind::ShapeMismatch, "uncrop label size");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(orig_h * orig_w), kBackground);
  for (std::int64_t i = 0; i < h; ++i) {
    const auto oi = i + offsets.row;
    if (oi < 0 || oi >= orig_h) continue;
    for (std::int64_t j = 0; j < w; ++j) {
      const auto oj = j + offsets.col;
      if (oj < 0 || oj >= orig_w) continue;
      out[static_cast<std::size_t>(oi * orig_w + oj)] = labels[static_cast<std::size_t>(i * w + j)];
    }
  }
  return out;
}

void zscore(std::span<float> pixels) {
  if (pixels.empty()) return;
  double s = 0;
  for (float v : pixels) s += v;
  const double mean = s / static_cast<double>(pixels.size());
  double ss = 0;
  for (float v : pixels) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(pixels.size()));
  if (sd < 1e-8) {
    std::fill(pixels.begin(), pixels.end(), 0.0f);
    return;
  }
  for (auto& v : pixels) v = static_cast<float>((v - mean) / sd);
}

Slice extract_slice(const Case& c, std::int64_t index) {
  const auto d = c.dims();
  require(index >= 0 && index < d.depth, ErrorKind::ShapeMismatch, "slice index out of range");
  const auto plane = d.height * d.width;
  Slice s;
  s.case_id = c.case_id;
  s.phase = c.phase;
  s.index = index;
  auto px = c.image.data().subspan(static_cast<std::size_t>(index * plane), static_cast<std::size_t>(plane));
  s.image = Tensor(Shape{d.height, d.width}, std::vector<float>(px.begin(), px.end()));
  s.label.assign(c.label.begin() + index * plane, c.label.begin() + (index + 1) * plane);
  return s;
}

std::vector<Slice> preprocess_case(const Case& c, std::int64_t size) {
  const Case r = resample_to_spacing(c);
  std::vector<Slice> out;
  for (std::int64_t z = 0; z < r.dims().depth; ++z) {
    Slice s = extract_slice(r, z);
    zscore(s.image.data());
    out.push_back(center_crop_pad(s, size, size));
  }
  return out;
}

}  // namespace csegnet
