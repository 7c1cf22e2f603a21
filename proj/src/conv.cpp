#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "csegnet/ops.hpp"

namespace csegnet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::int64_t B, C, H, W;    // input
  std::int64_t O, Cg, kh, kw; // weight
  std::int64_t groups, Og;
  std::int64_t Ho, Wo;
  std::int64_t pad_t, pad_l;
  int sh, sw, dh, dw;

  std::int64_t K() const { return Cg * kh * kw; }
  std::int64_t P() const { return Ho * Wo; }
  bool pointwise_direct() const { return kh == 1 && kw == 1 && sh == 1 && sw == 1 && pad_t == 0 && pad_l == 0; }
  bool depthwise() const { return groups == C && Cg == 1 && Og == 1; }
};

ConvGeometry make_geometry(const Shape& xs, const Shape& ws, const Conv2dSpec& spec) {
  if (xs.size() != 4) fail(ErrorKind::ShapeMismatch, "conv2d input must be (B,C,H,W), got " + shape_str(xs));
  if (ws.size() != 4) fail(ErrorKind::ShapeMismatch, "conv2d weight must be (O,C/g,kH,kW), got " + shape_str(ws));
  require(spec.stride_h >= 1 && spec.stride_w >= 1 && spec.dilation_h >= 1 && spec.dilation_w >= 1,
          ErrorKind::InvalidConfig, "stride and dilation must be positive");
  require(spec.groups >= 1, ErrorKind::InvalidConfig, "groups must be positive");
  ConvGeometry g{};
  g.B = xs[0];
  g.C = xs[1];
  g.H = xs[2];
  g.W = xs[3];
  g.O = ws[0];
  g.Cg = ws[1];
  g.kh = ws[2];
  g.kw = ws[3];
  g.groups = spec.groups;
  if (g.C % g.groups != 0 || g.O % g.groups != 0 || g.Cg * g.groups != g.C)
    fail(ErrorKind::ChannelMismatch, "input " + shape_str(xs) + " incompatible with weight " + shape_str(ws) +
                                         " and groups=" + std::to_string(spec.groups));
  g.Og = g.O / g.groups;
  g.sh = spec.stride_h;
  g.sw = spec.stride_w;
  g.dh = spec.dilation_h;
  g.dw = spec.dilation_w;
  auto ah = conv_axis(g.H, g.kh, g.sh, g.dh, spec.padding);
  auto aw = conv_axis(g.W, g.kw, g.sw, g.dw, spec.padding);
  g.Ho = ah.out;
  g.Wo = aw.out;
  g.pad_t = ah.pad_before;
  g.pad_l = aw.pad_before;
  return g;
}

// Range of output indices o for which o*stride - pad + tap lies inside [0, in).
inline void valid_range(std::int64_t in, std::int64_t out, int stride, std::int64_t pad, std::int64_t tap,
                        std::int64_t& lo, std::int64_t& hi) {
  // need 0 <= o*stride + (tap - pad) < in
  const std::int64_t shift = tap - pad;
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  const std::int64_t lim = in - shift;  // o*stride < lim
  hi = lim <= 0 ? 0 : std::min<std::int64_t>(out, (lim + stride - 1) / stride);
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const auto P = g.P();
  for (std::int64_t c = 0; c < g.Cg; ++c) {
    const T* xc = x + c * g.H * g.W;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        std::fill(row, row + P, T(0));
        std::int64_t oh_lo, oh_hi, ow_lo, ow_hi;
        valid_range(g.H, g.Ho, g.sh, g.pad_t, i * g.dh, oh_lo, oh_hi);
        valid_range(g.W, g.Wo, g.sw, g.pad_l, j * g.dw, ow_lo, ow_hi);
        for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
          const T* xr = xc + (oh * g.sh - g.pad_t + i * g.dh) * g.W;
          T* rr = row + oh * g.Wo;
          if (g.sw == 1) {
            const std::int64_t base = -g.pad_l + j * g.dw;
            std::copy(xr + ow_lo + base, xr + ow_hi + base, rr + ow_lo);
          } else {
            for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) rr[ow] = xr[ow * g.sw - g.pad_l + j * g.dw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* gx) {
  const auto P = g.P();
  for (std::int64_t c = 0; c < g.Cg; ++c) {
    T* xc = gx + c * g.H * g.W;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * P;
        std::int64_t oh_lo, oh_hi, ow_lo, ow_hi;
        valid_range(g.H, g.Ho, g.sh, g.pad_t, i * g.dh, oh_lo, oh_hi);
        valid_range(g.W, g.Wo, g.sw, g.pad_l, j * g.dw, ow_lo, ow_hi);
        for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
          T* xr = xc + (oh * g.sh - g.pad_t + i * g.dh) * g.W;
          const T* rr = row + oh * g.Wo;
          for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) xr[ow * g.sw - g.pad_l + j * g.dw] += rr[ow];
        }
      }
    }
  }
}

template <typename T>
void depthwise_forward(const T* x, const T* w, const ConvGeometry& g, T* out) {
  for (std::int64_t b = 0; b < g.B; ++b) {
    for (std::int64_t c = 0; c < g.C; ++c) {
      const T* xc = x + (b * g.C + c) * g.H * g.W;
      const T* wc = w + c * g.kh * g.kw;
      T* oc = out + (b * g.C + c) * g.Ho * g.Wo;
      for (std::int64_t i = 0; i < g.kh; ++i) {
        std::int64_t oh_lo, oh_hi;
        valid_range(g.H, g.Ho, g.sh, g.pad_t, i * g.dh, oh_lo, oh_hi);
        for (std::int64_t j = 0; j < g.kw; ++j) {
          const T wv = wc[i * g.kw + j];
          std::int64_t ow_lo, ow_hi;
          valid_range(g.W, g.Wo, g.sw, g.pad_l, j * g.dw, ow_lo, ow_hi);
          for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
            const T* xr = xc + (oh * g.sh - g.pad_t + i * g.dh) * g.W - g.pad_l + j * g.dw;
            T* orow = oc + oh * g.Wo;
            for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xr[ow * g.sw];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const T* x, const T* w, const T* gout, const ConvGeometry& g, T* gx, T* gw) {
  for (std::int64_t b = 0; b < g.B; ++b) {
    for (std::int64_t c = 0; c < g.C; ++c) {
      const T* xc = x + (b * g.C + c) * g.H * g.W;
      const T* wc = w + c * g.kh * g.kw;
      const T* goc = gout + (b * g.C + c) * g.Ho * g.Wo;
      T* gxc = gx ? gx + (b * g.C + c) * g.H * g.W : nullptr;
      T* gwc = gw ? gw + c * g.kh * g.kw : nullptr;
      for (std::int64_t i = 0; i < g.kh; ++i) {
        std::int64_t oh_lo, oh_hi;
        valid_range(g.H, g.Ho, g.sh, g.pad_t, i * g.dh, oh_lo, oh_hi);
        for (std::int64_t j = 0; j < g.kw; ++j) {
          const T wv = wc[i * g.kw + j];
          std::int64_t ow_lo, ow_hi;
          valid_range(g.W, g.Wo, g.sw, g.pad_l, j * g.dw, ow_lo, ow_hi);
          T acc = 0;
          for (std::int64_t oh = oh_lo; oh < oh_hi; ++oh) {
            const std::int64_t off = (oh * g.sh - g.pad_t + i * g.dh) * g.W - g.pad_l + j * g.dw;
            const T* gr = goc + oh * g.Wo;
            if (gwc) {
              const T* xr = xc + off;
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) acc += gr[ow] * xr[ow * g.sw];
            }
            if (gxc) {
              T* gxr = gxc + off;
              for (std::int64_t ow = ow_lo; ow < ow_hi; ++ow) gxr[ow * g.sw] += wv * gr[ow];
            }
          }
          if (gwc) gwc[i * g.kw + j] += acc;
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> conv_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const ConvGeometry& g) {
  BasicTensor<T> out(Shape{g.B, g.O, g.Ho, g.Wo});
  if (g.depthwise()) {
    depthwise_forward(x.ptr(), w.ptr(), g, out.ptr());
    return out;
  }
  const auto K = g.K(), P = g.P();
  std::vector<T> cols(g.pointwise_direct() ? 0 : static_cast<std::size_t>(K * P));
  for (std::int64_t b = 0; b < g.B; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const T* xg = x.ptr() + (b * g.C + grp * g.Cg) * g.H * g.W;
      const T* src = xg;
      if (!g.pointwise_direct()) {
        im2col(xg, g, cols.data());
        src = cols.data();
      }
      CMapMat<T> wm(w.ptr() + grp * g.Og * K, g.Og, K);
      CMapMat<T> cm(src, K, P);
      MapMat<T> om(out.ptr() + (b * g.O + grp * g.Og) * P, g.Og, P);
      om.noalias() = wm * cm;
    }
  }
  return out;
}

template <typename T>
void conv_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gout,
                   const ConvGeometry& g, BasicTensor<T>* gx, BasicTensor<T>* gw) {
  if (g.depthwise()) {
    depthwise_backward(x.ptr(), w.ptr(), gout.ptr(), g, gx ? gx->ptr() : nullptr, gw ? gw->ptr() : nullptr);
    return;
  }
  const auto K = g.K(), P = g.P();
  const bool direct = g.pointwise_direct();
  std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(K * P));
  std::vector<T> gcols(direct || !gx ? 0 : static_cast<std::size_t>(K * P));
  for (std::int64_t b = 0; b < g.B; ++b) {
    for (std::int64_t grp = 0; grp < g.groups; ++grp) {
      const T* xg = x.ptr() + (b * g.C + grp * g.Cg) * g.H * g.W;
      CMapMat<T> gom(gout.ptr() + (b * g.O + grp * g.Og) * P, g.Og, P);
      CMapMat<T> wm(w.ptr() + grp * g.Og * K, g.Og, K);
      if (gw) {
        const T* src = xg;
        if (!direct) {
          im2col(xg, g, cols.data());
          src = cols.data();
        }
        CMapMat<T> cm(src, K, P);
        MapMat<T> gwm(gw->ptr() + grp * g.Og * K, g.Og, K);
        gwm.noalias() += gom * cm.transpose();
      }
      if (gx) {
        T* gxg = gx->ptr() + (b * g.C + grp * g.Cg) * g.H * g.W;
        if (direct) {
          MapMat<T> gxm(gxg, K, P);
          gxm.noalias() += wm.transpose() * gom;
        } else {
          MapMat<T> gcm(gcols.data(), K, P);
          gcm.noalias() = wm.transpose() * gom;
          col2im_add(gcols.data(), g, gxg);
        }
      }
    }
  }
}

}  // namespace

ConvAxis conv_axis(std::int64_t in, std::int64_t kernel, int stride, int dilation, Padding padding) {
  const std::int64_t extent = (kernel - 1) * dilation + 1;
  ConvAxis a;
  if (padding == Padding::Same) {
    a.out = (in + stride - 1) / stride;
    const std::int64_t total = std::max<std::int64_t>((a.out - 1) * stride + extent - in, 0);
    a.pad_before = total / 2;
  } else {
    if (extent > in)
      fail(ErrorKind::KernelTooLarge, "effective kernel extent " + std::to_string(extent) +
                                          " exceeds input extent " + std::to_string(in));
    a.out = (in - extent) / stride + 1;
    a.pad_before = 0;
  }
  return a;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, const Conv2dSpec& spec) {
  const auto& xv = x.value();
  const auto& wv = weight.value();
  const ConvGeometry g = make_geometry(xv.shape(), wv.shape(), spec);
  BasicTensor<T> out = conv_forward(xv, wv, g);
  std::vector<std::size_t> inputs{x.id, weight.id};
  std::size_t bid = 0;
  const bool has_bias = bias.has_value();
  if (has_bias) {
    const auto& bv = bias->value();
    require(bv.numel() == g.O, ErrorKind::ChannelMismatch, "bias length must equal output channels");
    const auto P = g.P();
    for (std::int64_t b = 0; b < g.B; ++b)
      for (std::int64_t o = 0; o < g.O; ++o) {
        T* row = out.ptr() + (b * g.O + o) * P;
        const T bo = bv[o];
        for (std::int64_t p = 0; p < P; ++p) row[p] += bo;
      }
    bid = bias->id;
    inputs.push_back(bid);
  }
  const auto xid = x.id, wid = weight.id;
  return x.tape->record(std::move(out), std::move(inputs),
                        [xid, wid, bid, has_bias, g](Tape<T>& t, const BasicTensor<T>& gout) {
                          auto* gx = t.grad_buffer(xid);
                          auto* gw = t.grad_buffer(wid);
                          if (gx || gw) conv_backward(t.value_at(xid), t.value_at(wid), gout, g, gx, gw);
                          if (has_bias) {
                            if (auto* gb = t.grad_buffer(bid)) {
                              const auto P = g.P();
                              for (std::int64_t b = 0; b < g.B; ++b)
                                for (std::int64_t o = 0; o < g.O; ++o) {
                                  const T* row = gout.ptr() + (b * g.O + o) * P;
                                  T s = 0;
                                  for (std::int64_t p = 0; p < P; ++p) s += row[p];
                                  (*gb)[o] += s;
                                }
                            }
                          }
                        });
}

template <typename T>
Var<T> separable_conv2d(Var<T> x, Var<T> depthwise_weight, Var<T> pointwise_weight, int stride, int dilation,
                        Padding padding) {
  const auto& xv = x.value();
  const auto& dw = depthwise_weight.value();
  const auto& pw = pointwise_weight.value();
  require(xv.rank() == 4 && dw.rank() == 4 && pw.rank() == 4, ErrorKind::ShapeMismatch,
          "separable_conv2d expects 4-D tensors");
  const auto C = xv.dim(1);
  if (dw.dim(0) != C || dw.dim(1) != 1)
    fail(ErrorKind::ChannelMismatch, "depthwise weight " + shape_str(dw.shape()) + " for " + std::to_string(C) + " channels");
  if (pw.dim(1) != C || pw.dim(2) != 1 || pw.dim(3) != 1)
    fail(ErrorKind::ChannelMismatch, "pointwise weight " + shape_str(pw.shape()) + " for " + std::to_string(C) + " channels");
  auto mid = conv2d<T>(x, depthwise_weight, std::nullopt,
                    Conv2dSpec{stride, stride, dilation, dilation, padding, static_cast<int>(C)});
  return conv2d<T>(mid, pointwise_weight, std::nullopt, Conv2dSpec{});
}

template <typename T>
Var<T> avg_pool2d(Var<T> x, int window, int stride) {
  const auto& xv = x.value();
  require(xv.rank() == 4, ErrorKind::ShapeMismatch, "avg_pool2d expects (B,C,H,W)");
  require(window >= 1 && stride >= 1, ErrorKind::InvalidConfig, "window and stride must be positive");
  const auto B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H < window || W < window)
    fail(ErrorKind::InputTooSmall, "input " + shape_str(xv.shape()) + " smaller than pooling window " + std::to_string(window));
  const auto Ho = (H - window + stride - 1) / stride + 1;
  const auto Wo = (W - window + stride - 1) / stride + 1;
  BasicTensor<T> out(Shape{B, C, Ho, Wo});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = xv.ptr() + bc * H * W;
    T* oc = out.ptr() + bc * Ho * Wo;
    for (std::int64_t oh = 0; oh < Ho; ++oh) {
      const auto h0 = oh * stride, h1 = std::min<std::int64_t>(h0 + window, H);
      for (std::int64_t ow = 0; ow < Wo; ++ow) {
        const auto w0 = ow * stride, w1 = std::min<std::int64_t>(w0 + window, W);
        T s = 0;
        for (auto h = h0; h < h1; ++h)
          for (auto w = w0; w < w1; ++w) s += xc[h * W + w];
        oc[oh * Wo + ow] = s / static_cast<T>((h1 - h0) * (w1 - w0));
      }
    }
  }
  const auto xid = x.id;
  return x.tape->record(std::move(out), {xid}, [=](Tape<T>& t, const BasicTensor<T>& g) {
    auto* gx = t.grad_buffer(xid);
    if (!gx) return;
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      T* gxc = gx->ptr() + bc * H * W;
      const T* gc = g.ptr() + bc * Ho * Wo;
      for (std::int64_t oh = 0; oh < Ho; ++oh) {
        const auto h0 = oh * stride, h1 = std::min<std::int64_t>(h0 + window, H);
        for (std::int64_t ow = 0; ow < Wo; ++ow) {
          const auto w0 = ow * stride, w1 = std::min<std::int64_t>(w0 + window, W);
          const T share = gc[oh * Wo + ow] / static_cast<T>((h1 - h0) * (w1 - w0));
          for (auto h = h0; h < h1; ++h)
            for (auto w = w0; w < w1; ++w) gxc[h * W + w] += share;
        }
      }
    }
  });
}

namespace {

template <typename T>
struct LerpAxis {
  std::vector<std::int64_t> i0, i1;
  std::vector<T> frac;
};

template <typename T>
LerpAxis<T> lerp_axis(std::int64_t in, std::int64_t out) {
  LerpAxis<T> a;
  a.i0.resize(static_cast<std::size_t>(out));
  a.i1.resize(static_cast<std::size_t>(out));
  a.frac.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    const auto k = static_cast<std::size_t>(o);
    a.i0[k] = lo;
    a.i1[k] = std::min(lo + 1, in - 1);
    a.frac[k] = static_cast<T>(src - static_cast<double>(lo));
  }
  return a;
}

}  // namespace

template <typename T>
Var<T> bilinear_resize(Var<T> x, std::int64_t out_h, std::int64_t out_w) {
  const auto& xv = x.value();
  require(xv.rank() == 4, ErrorKind::ShapeMismatch, "bilinear_resize expects (B,C,H,W)");
  require(out_h >= 1 && out_w >= 1, ErrorKind::ShapeMismatch, "target size must be positive");
  const auto B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const auto xid = x.id;
  if (H == out_h && W == out_w) {
    return x.tape->record(xv, {xid}, [xid](Tape<T>& t, const BasicTensor<T>& g) { t.accumulate(xid, g); });
  }
  auto ay = lerp_axis<T>(H, out_h);
  auto ax = lerp_axis<T>(W, out_w);
  BasicTensor<T> out(Shape{B, C, out_h, out_w});
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* xc = xv.ptr() + bc * H * W;
    T* oc = out.ptr() + bc * out_h * out_w;
    for (std::int64_t oh = 0; oh < out_h; ++oh) {
      const auto yk = static_cast<std::size_t>(oh);
      const T* r0 = xc + ay.i0[yk] * W;
      const T* r1 = xc + ay.i1[yk] * W;
      const T fy = ay.frac[yk];
      for (std::int64_t ow = 0; ow < out_w; ++ow) {
        const auto xk = static_cast<std::size_t>(ow);
        const T fx = ax.frac[xk];
        const T top = r0[ax.i0[xk]] + fx * (r0[ax.i1[xk]] - r0[ax.i0[xk]]);
        const T bot = r1[ax.i0[xk]] + fx * (r1[ax.i1[xk]] - r1[ax.i0[xk]]);
        oc[oh * out_w + ow] = top + fy * (bot - top);
      }
    }
  }
  return x.tape->record(std::move(out), {xid},
                        [=, ay = std::move(ay), ax = std::move(ax)](Tape<T>& t, const BasicTensor<T>& g) {
                          auto* gx = t.grad_buffer(xid);
                          if (!gx) return;
                          for (std::int64_t bc = 0; bc < B * C; ++bc) {
                            T* gc = gx->ptr() + bc * H * W;
                            const T* goc = g.ptr() + bc * out_h * out_w;
                            for (std::int64_t oh = 0; oh < out_h; ++oh) {
                              const auto yk = static_cast<std::size_t>(oh);
                              T* r0 = gc + ay.i0[yk] * W;
                              T* r1 = gc + ay.i1[yk] * W;
                              const T fy = ay.frac[yk];
                              for (std::int64_t ow = 0; ow < out_w; ++ow) {
                                const auto xk = static_cast<std::size_t>(ow);
                                const T fx = ax.frac[xk];
                                const T v = goc[oh * out_w + ow];
                                const T top = v * (T(1) - fy), bot = v * fy;
                                r0[ax.i0[xk]] += top * (T(1) - fx);
                                r0[ax.i1[xk]] += top * fx;
                                r1[ax.i0[xk]] += bot * (T(1) - fx);
                                r1[ax.i1[xk]] += bot * fx;
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, const BasicTensor<T>& running_mean,
                  const BasicTensor<T>& running_var, bool training, BatchNormUpdate<T>* update, double momentum,
                  double epsilon) {
  const auto& xv = x.value();
  require(xv.rank() == 4, ErrorKind::ShapeMismatch, "batch_norm expects (B,C,H,W)");
  const auto B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  for (const auto* p : {&gamma.value(), &beta.value(), &running_mean, &running_var})
    if (p->numel() != C) fail(ErrorKind::ChannelMismatch, "batch_norm state has wrong channel count");
  require(epsilon > 0, ErrorKind::InvalidConfig, "batch_norm epsilon must be positive");

  const auto n = B * HW;
  std::vector<double> mean(static_cast<std::size_t>(C)), invstd(static_cast<std::size_t>(C));
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* xc = xv.ptr() + (b * C + c) * HW;
        for (std::int64_t p = 0; p < HW; ++p) s += xc[p];
      }
      const double mu = s / static_cast<double>(n);
      double ss = 0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* xc = xv.ptr() + (b * C + c) * HW;
        for (std::int64_t p = 0; p < HW; ++p) {
          const double d = xc[p] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(n);
      const auto k = static_cast<std::size_t>(c);
      mean[k] = mu;
      invstd[k] = 1.0 / std::sqrt(var + epsilon);
      if (update) {
        if (c == 0) {
          update->running_mean = running_mean;
          update->running_var = running_var;
        }
        const double unbiased = n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
        update->running_mean[c] = static_cast<T>(momentum * running_mean[c] + (1.0 - momentum) * mu);
        update->running_var[c] = static_cast<T>(momentum * running_var[c] + (1.0 - momentum) * unbiased);
      }
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      mean[k] = running_mean[c];
      invstd[k] = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + epsilon);
    }
  }

  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  BasicTensor<T> out(xv.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const auto k = static_cast<std::size_t>(c);
      const T scale_c = static_cast<T>(gv[c] * invstd[k]);
      const T shift_c = static_cast<T>(bv[c] - gv[c] * mean[k] * invstd[k]);
      const T* xc = xv.ptr() + (b * C + c) * HW;
      T* oc = out.ptr() + (b * C + c) * HW;
      for (std::int64_t p = 0; p < HW; ++p) oc[p] = xc[p] * scale_c + shift_c;
    }

  const auto xid = x.id, gid = gamma.id, bid = beta.id;
  return x.tape->record(
      std::move(out), {xid, gid, bid},
      [=, mean = std::move(mean), invstd = std::move(invstd)](Tape<T>& t, const BasicTensor<T>& g) {
        const auto& xv = t.value_at(xid);
        const auto& gv = t.value_at(gid);
        auto* gx = t.grad_buffer(xid);
        auto* gg = t.grad_buffer(gid);
        auto* gb = t.grad_buffer(bid);
        for (std::int64_t c = 0; c < C; ++c) {
          const auto k = static_cast<std::size_t>(c);
          double sum_g = 0, sum_gx = 0;
          for (std::int64_t b = 0; b < B; ++b) {
            const T* xc = xv.ptr() + (b * C + c) * HW;
            const T* gc = g.ptr() + (b * C + c) * HW;
            for (std::int64_t p = 0; p < HW; ++p) {
              sum_g += gc[p];
              sum_gx += gc[p] * ((xc[p] - mean[k]) * invstd[k]);
            }
          }
          if (gg) (*gg)[c] += static_cast<T>(sum_gx);
          if (gb) (*gb)[c] += static_cast<T>(sum_g);
          if (!gx) continue;
          const double gamma_c = gv[c];
          for (std::int64_t b = 0; b < B; ++b) {
            const T* xc = xv.ptr() + (b * C + c) * HW;
            const T* gc = g.ptr() + (b * C + c) * HW;
            T* gxc = gx->ptr() + (b * C + c) * HW;
            if (training) {
              const double a = gamma_c * invstd[k] / static_cast<double>(n);
              const double mg = sum_g, mgx = sum_gx;
              for (std::int64_t p = 0; p < HW; ++p) {
                const double xhat = (xc[p] - mean[k]) * invstd[k];
                gxc[p] += static_cast<T>(a * (static_cast<double>(n) * gc[p] - mg - xhat * mgx));
              }
            } else {
              const T a = static_cast<T>(gamma_c * invstd[k]);
              for (std::int64_t p = 0; p < HW; ++p) gxc[p] += a * gc[p];
            }
          }
        }
      });
}

#define CSEGNET_INSTANTIATE(T)                                                                                   \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, const Conv2dSpec&);                              \
  template Var<T> separable_conv2d(Var<T>, Var<T>, Var<T>, int, int, Padding);                                   \
  template Var<T> avg_pool2d(Var<T>, int, int);                                                                  \
  template Var<T> bilinear_resize(Var<T>, std::int64_t, std::int64_t);                                           \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, const BasicTensor<T>&, const BasicTensor<T>&, bool,         \
                             BatchNormUpdate<T>*, double, double);

CSEGNET_INSTANTIATE(float)
CSEGNET_INSTANTIATE(double)

}  // namespace csegnet
