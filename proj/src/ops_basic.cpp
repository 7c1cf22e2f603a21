#include <algorithm>
#include <cmath>
#include <set>

#include "csegnet/ops.hpp"

namespace csegnet {
namespace {

// For each flat index of `a`, the flat index of the broadcast `b` element.
std::vector<std::int64_t> broadcast_map(const Shape& a, const Shape& b) {
  const auto ra = a.size();
  const auto rb = b.size();
  bool ok = rb <= ra;
  for (std::size_t i = 0; ok && i < rb; ++i) {
    auto da = a[ra - rb + i];
    auto db = b[i];
    ok = db == da || db == 1;
  }
  if (!ok) fail(ErrorKind::ShapeMismatch, shape_str(b) + " is not broadcastable to " + shape_str(a));

  std::vector<std::int64_t> bstride(ra, 0);
  std::int64_t s = 1;
  for (std::size_t i = rb; i-- > 0;) {
    if (b[i] != 1) bstride[ra - rb + i] = s;
    s *= b[i];
  }
  const auto n = shape_numel(a);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(ra, 0);
  std::int64_t off = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    map[static_cast<std::size_t>(flat)] = off;
    for (std::size_t d = ra; d-- > 0;) {
      ++idx[d];
      off += bstride[d];
      if (idx[d] < a[d]) break;
      off -= bstride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Var<T> elementwise_binary(Var<T> a, Var<T> b, BinaryKind kind) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = av.shape() == bv.shape();
  const bool scalar_b = bv.numel() == 1;
  std::vector<std::int64_t> map;
  if (!same && !scalar_b) map = broadcast_map(av.shape(), bv.shape());
  auto bidx = [&](std::int64_t i) -> std::int64_t { return same ? i : (scalar_b ? 0 : map[static_cast<std::size_t>(i)]); };

  if (kind == BinaryKind::Div) {
    for (auto v : bv.data())
      if (std::abs(static_cast<double>(v)) < kDivisionEpsilon)
        fail(ErrorKind::DivisionDomain, "divisor magnitude below epsilon guard");
  }

  BasicTensor<T> out(av.shape());
  const auto n = av.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T x = av[i];
    const T y = bv[bidx(i)];
    switch (kind) {
      case BinaryKind::Add: out[i] = x + y; break;
      case BinaryKind::Sub: out[i] = x - y; break;
      case BinaryKind::Mul: out[i] = x * y; break;
      case BinaryKind::Div: out[i] = x / y; break;
    }
  }

  const auto aid = a.id;
  const auto bid = b.id;
  return tape.record(std::move(out), {aid, bid},
                     [aid, bid, kind, same, scalar_b, map = std::move(map)](Tape<T>& t, const BasicTensor<T>& g) {
                       const auto& av = t.value_at(aid);
                       const auto& bv = t.value_at(bid);
                       auto bi = [&](std::int64_t i) -> std::int64_t {
                         return same ? i : (scalar_b ? 0 : map[static_cast<std::size_t>(i)]);
                       };
                       const auto n = g.numel();
                       if (auto* ga = t.grad_buffer(aid)) {
                         for (std::int64_t i = 0; i < n; ++i) {
                           switch (kind) {
                             case BinaryKind::Add:
                             case BinaryKind::Sub: (*ga)[i] += g[i]; break;
                             case BinaryKind::Mul: (*ga)[i] += g[i] * bv[bi(i)]; break;
                             case BinaryKind::Div: (*ga)[i] += g[i] / bv[bi(i)]; break;
                           }
                         }
                       }
                       if (auto* gb = t.grad_buffer(bid)) {
                         for (std::int64_t i = 0; i < n; ++i) {
                           const auto j = bi(i);
                           switch (kind) {
                             case BinaryKind::Add: (*gb)[j] += g[i]; break;
                             case BinaryKind::Sub: (*gb)[j] -= g[i]; break;
                             case BinaryKind::Mul: (*gb)[j] += g[i] * av[i]; break;
                             case BinaryKind::Div: (*gb)[j] -= g[i] * av[i] / (bv[j] * bv[j]); break;
                           }
                         }
                       }
                     });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  const auto xid = x.id;
  return x.tape->record(std::move(out), {xid}, [xid, factor](Tape<T>& t, const BasicTensor<T>& g) {
    if (auto* gx = t.grad_buffer(xid))
      for (std::int64_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> reduce_sum(Var<T> x, const std::vector<int>& axes, bool keep_dims) {
  const auto& xv = x.value();
  const auto rank = static_cast<int>(xv.rank());
  std::set<int> reduced;
  for (int a : axes) {
    if (a < 0 || a >= rank)
      fail(ErrorKind::AxisOutOfRange, "axis " + std::to_string(a) + " out of range for " + shape_str(xv.shape()));
    reduced.insert(a);
  }

  Shape kept(xv.shape());
  Shape out_shape;
  for (int d = 0; d < rank; ++d) {
    if (reduced.count(d)) {
      kept[static_cast<std::size_t>(d)] = 1;
      if (keep_dims) out_shape.push_back(1);
    } else {
      out_shape.push_back(xv.dim(static_cast<std::size_t>(d)));
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Each input element maps onto the kept-dims layout, which shares flat order with out_shape.
  auto map = broadcast_map(xv.shape(), kept);
  BasicTensor<T> out(out_shape);
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[map[static_cast<std::size_t>(i)]] += xv[i];

  const auto xid = x.id;
  return x.tape->record(std::move(out), {xid}, [xid, map = std::move(map)](Tape<T>& t, const BasicTensor<T>& g) {
    if (auto* gx = t.grad_buffer(xid))
      for (std::int64_t i = 0; i < gx->numel(); ++i) (*gx)[i] += g[map[static_cast<std::size_t>(i)]];
  });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  std::vector<int> axes(x.value().rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce_sum(x, axes, false);
}

template <typename T>
Var<T> relu(Var<T> x) {
  BasicTensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  const auto xid = x.id;
  return x.tape->record(std::move(out), {xid}, [xid](Tape<T>& t, const BasicTensor<T>& g) {
    if (auto* gx = t.grad_buffer(xid)) {
      const auto& xv = t.value_at(xid);
      for (std::int64_t i = 0; i < g.numel(); ++i)
        if (xv[i] > T(0)) (*gx)[i] += g[i];
    }
  }, "relu");
}

template <typename T>
BasicTensor<T> softmax_channels_value(const BasicTensor<T>& logits) {
  if (logits.rank() != 4) fail(ErrorKind::ShapeMismatch, "softmax expects (B,N,H,W), got " + shape_str(logits.shape()));
  const auto B = logits.dim(0), N = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  require(N >= 2, ErrorKind::ShapeMismatch, "softmax needs at least 2 channels");
  BasicTensor<T> out(logits.shape());
  for (std::int64_t b = 0; b < B; ++b) {
    const T* in = logits.ptr() + b * N * HW;
    T* o = out.ptr() + b * N * HW;
    for (std::int64_t p = 0; p < HW; ++p) {
      T m = in[p];
      for (std::int64_t c = 1; c < N; ++c) m = std::max(m, in[c * HW + p]);
      T s = 0;
      for (std::int64_t c = 0; c < N; ++c) {
        const T e = std::exp(in[c * HW + p] - m);
        o[c * HW + p] = e;
        s += e;
      }
      const T inv = T(1) / s;
      for (std::int64_t c = 0; c < N; ++c) o[c * HW + p] *= inv;
    }
  }
  return out;
}

template <typename T>
Var<T> softmax_channels(Var<T> x) {
  BasicTensor<T> out = softmax_channels_value(x.value());
  const auto xid = x.id;
  const auto yid = x.tape->next_id();
  return x.tape->record(std::move(out), {xid}, [xid, yid](Tape<T>& t, const BasicTensor<T>& g) {
    auto* gx = t.grad_buffer(xid);
    if (!gx) return;
    const auto& yv = t.value_at(yid);
    const auto B = yv.dim(0), N = yv.dim(1), HW = yv.dim(2) * yv.dim(3);
    for (std::int64_t b = 0; b < B; ++b) {
      const T* yb = yv.ptr() + b * N * HW;
      const T* gb = g.ptr() + b * N * HW;
      T* gxb = gx->ptr() + b * N * HW;
      for (std::int64_t p = 0; p < HW; ++p) {
        T dot = 0;
        for (std::int64_t c = 0; c < N; ++c) dot += gb[c * HW + p] * yb[c * HW + p];
        for (std::int64_t c = 0; c < N; ++c) gxb[c * HW + p] += yb[c * HW + p] * (gb[c * HW + p] - dot);
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  require(!xs.empty(), ErrorKind::ShapeMismatch, "concat of zero tensors");
  const auto& first = xs.front().value();
  require(first.rank() == 4, ErrorKind::ShapeMismatch, "concat expects (B,C,H,W) tensors");
  const auto B = first.dim(0), H = first.dim(2), W = first.dim(3);
  std::int64_t total = 0;
  std::vector<std::int64_t> channels;
  std::vector<std::size_t> ids;
  for (const auto& x : xs) {
    const auto& v = x.value();
    if (v.rank() != 4 || v.dim(0) != B || v.dim(2) != H || v.dim(3) != W)
      fail(ErrorKind::SpatialMismatch, "cannot concat " + shape_str(v.shape()) + " with " + shape_str(first.shape()));
    channels.push_back(v.dim(1));
    ids.push_back(x.id);
    total += v.dim(1);
  }
  const auto HW = H * W;
  BasicTensor<T> out(Shape{B, total, H, W});
  for (std::int64_t b = 0; b < B; ++b) {
    std::int64_t c0 = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const auto& v = xs[k].value();
      std::copy_n(v.ptr() + b * channels[k] * HW, channels[k] * HW, out.ptr() + (b * total + c0) * HW);
      c0 += channels[k];
    }
  }
  auto id_copy = ids;
  return xs.front().tape->record(
      std::move(out), std::move(id_copy), [ids, channels, B, total, HW](Tape<T>& t, const BasicTensor<T>& g) {
        std::int64_t c0 = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (auto* gx = t.grad_buffer(ids[k])) {
            for (std::int64_t b = 0; b < B; ++b) {
              const T* src = g.ptr() + (b * total + c0) * HW;
              T* dst = gx->ptr() + b * channels[k] * HW;
              for (std::int64_t i = 0; i < channels[k] * HW; ++i) dst[i] += src[i];
            }
          }
          c0 += channels[k];
        }
      });
}

std::vector<std::uint8_t> downsample_labels(const std::vector<std::uint8_t>& labels, std::int64_t batch,
                                            std::int64_t h, std::int64_t w, std::int64_t factor) {
  require(factor >= 1 && h % factor == 0 && w % factor == 0, ErrorKind::ShapeMismatch,
          "label map not divisible by downsampling factor");
  require(static_cast<std::int64_t>(labels.size()) == batch * h * w, ErrorKind::ShapeMismatch, "label buffer size");
  if (factor == 1) return labels;
  const auto oh = h / factor, ow = w / factor, off = factor / 2;
  std::vector<std::uint8_t> out(static_cast<std::size_t>(batch * oh * ow));
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j)
        out[static_cast<std::size_t>((b * oh + i) * ow + j)] =
            labels[static_cast<std::size_t>((b * h + i * factor + off) * w + j * factor + off)];
  return out;
}

template <typename T>
BasicTensor<T> one_hot(const std::vector<std::uint8_t>& labels, std::int64_t batch, std::int64_t h, std::int64_t w,
                       int num_classes) {
  require(static_cast<std::int64_t>(labels.size()) == batch * h * w, ErrorKind::ShapeMismatch, "label buffer size");
  BasicTensor<T> out(Shape{batch, num_classes, h, w});
  const auto HW = h * w;
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t p = 0; p < HW; ++p) {
      const int l = labels[static_cast<std::size_t>(b * HW + p)];
      require(l < num_classes, ErrorKind::NotOneHot, "label " + std::to_string(l) + " >= num_classes");
      out[(b * num_classes + l) * HW + p] = T(1);
    }
  return out;
}

#define CSEGNET_INSTANTIATE(T)                                                                       \
  template Var<T> elementwise_binary(Var<T>, Var<T>, BinaryKind);                                    \
  template Var<T> scale(Var<T>, T);                                                                  \
  template Var<T> reduce_sum(Var<T>, const std::vector<int>&, bool);                                 \
  template Var<T> sum_all(Var<T>);                                                                   \
  template Var<T> relu(Var<T>);                                                                      \
  template BasicTensor<T> softmax_channels_value(const BasicTensor<T>&);                             \
  template Var<T> softmax_channels(Var<T>);                                                          \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                       \
  template BasicTensor<T> one_hot(const std::vector<std::uint8_t>&, std::int64_t, std::int64_t, std::int64_t, int);

CSEGNET_INSTANTIATE(float)
CSEGNET_INSTANTIATE(double)

}  // namespace csegnet
