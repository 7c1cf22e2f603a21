#include "csegnet/loss.hpp"

#include <cmath>

#include "csegnet/ops.hpp"

namespace csegnet {

template <typename T>
std::vector<double> gdl_class_weights(const BasicTensor<T>& target_onehot, double absent_epsilon) {
  require(target_onehot.rank() == 4, ErrorKind::ShapeMismatch, "target must be (B,N,H,W)");
  const auto B = target_onehot.dim(0), N = target_onehot.dim(1), HW = target_onehot.dim(2) * target_onehot.dim(3);
  std::vector<double> w(static_cast<std::size_t>(N));
  for (std::int64_t l = 0; l < N; ++l) {
    double count = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      const T* r = target_onehot.ptr() + (b * N + l) * HW;
      for (std::int64_t p = 0; p < HW; ++p) count += r[p];
    }
    const double denom = count > 0 ? count : absent_epsilon;
    w[static_cast<std::size_t>(l)] = 1.0 / (denom * denom);
  }
  return w;
}

template <typename T>
Var<T> gdl(Var<T> pred_softmax, const BasicTensor<T>& target_onehot, const GdlOptions& options) {
  const auto& pv = pred_softmax.value();
  require(pv.rank() == 4, ErrorKind::ShapeMismatch, "gdl prediction must be (B,N,H,W)");
  if (pv.shape() != target_onehot.shape())
    fail(ErrorKind::ShapeMismatch, "prediction " + shape_str(pv.shape()) + " vs target " + shape_str(target_onehot.shape()));
  const auto B = pv.dim(0), N = pv.dim(1), HW = pv.dim(2) * pv.dim(3);

  if (options.validate) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 0; p < HW; ++p) {
        double rs = 0, ps = 0;
        for (std::int64_t l = 0; l < N; ++l) {
          const auto k = (b * N + l) * HW + p;
          const T r = target_onehot[k];
          if (r != T(0) && r != T(1)) fail(ErrorKind::NotOneHot, "target entries must be 0 or 1");
          rs += r;
          ps += pv[k];
        }
        if (rs != 1.0) fail(ErrorKind::NotOneHot, "target channels must sum to exactly 1 per pixel");
        if (std::abs(ps - 1.0) > options.normalization_tol)
          fail(ErrorKind::NotNormalized, "prediction channels sum to " + std::to_string(ps));
      }
  }

  const auto w = gdl_class_weights(target_onehot, options.absent_epsilon);
  double inter = 0, uni = 0;
  for (std::int64_t l = 0; l < N; ++l) {
    double si = 0, su = 0;
    for (std::int64_t b = 0; b < B; ++b) {
      const T* r = target_onehot.ptr() + (b * N + l) * HW;
      const T* p = pv.ptr() + (b * N + l) * HW;
      for (std::int64_t n = 0; n < HW; ++n) {
        si += static_cast<double>(r[n]) * p[n];
        su += static_cast<double>(r[n]) + p[n];
      }
    }
    inter += w[static_cast<std::size_t>(l)] * si;
    uni += w[static_cast<std::size_t>(l)] * su;
  }
  const double loss = 1.0 - 2.0 * inter / uni;

  const auto pid = pred_softmax.id;
  return pred_softmax.tape->record(
      BasicTensor<T>::scalar(static_cast<T>(loss)), {pid},
      [pid, w, inter, uni, target_onehot, B, N, HW](Tape<T>& t, const BasicTensor<T>& g) {
        auto* gp = t.grad_buffer(pid);
        if (!gp) return;
        // dL/dp_ln = -2 w_l (r_ln U - I) / U^2
        const double u2 = uni * uni;
        const double go = g[0];
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t l = 0; l < N; ++l) {
            const double c = -2.0 * w[static_cast<std::size_t>(l)] / u2 * go;
            const T* r = target_onehot.ptr() + (b * N + l) * HW;
            T* gpl = gp->ptr() + (b * N + l) * HW;
            for (std::int64_t n = 0; n < HW; ++n) gpl[n] += static_cast<T>(c * (r[n] * uni - inter));
          }
      });
}

template <typename T>
LabelBatch labels_from_onehot(const BasicTensor<T>& onehot) {
  require(onehot.rank() == 4, ErrorKind::ShapeMismatch, "one-hot must be (B,N,H,W)");
  const auto B = onehot.dim(0), N = onehot.dim(1), H = onehot.dim(2), W = onehot.dim(3), HW = H * W;
  LabelBatch lb{std::vector<std::uint8_t>(static_cast<std::size_t>(B * HW)), B, H, W};
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < HW; ++p) {
      std::int64_t best = 0;
      for (std::int64_t l = 1; l < N; ++l)
        if (onehot[(b * N + l) * HW + p] > onehot[(b * N + best) * HW + p]) best = l;
      lb.labels[static_cast<std::size_t>(b * HW + p)] = static_cast<std::uint8_t>(best);
    }
  return lb;
}

template <typename T>
Var<T> combined_loss(Var<T> main_logits, const std::vector<Var<T>>& aux_logits, const LabelBatch& target,
                     const std::vector<double>& weights, const GdlOptions& options) {
  if (weights.size() != aux_logits.size() + 1)
    fail(ErrorKind::WeightLengthMismatch, "expected " + std::to_string(aux_logits.size() + 1) + " loss weights, got " +
                                              std::to_string(weights.size()));
  const auto& mv = main_logits.value();
  require(mv.rank() == 4 && mv.dim(0) == target.batch && mv.dim(2) == target.height && mv.dim(3) == target.width,
          ErrorKind::ShapeMismatch, "main head " + shape_str(mv.shape()) + " does not match the label batch");
  const int N = static_cast<int>(mv.dim(1));

  auto term = [&](Var<T> logits) {
    const auto& lv = logits.value();
    const auto h = lv.dim(2), wd = lv.dim(3);
    require(target.height % h == 0 && target.width % wd == 0 && target.height / h == target.width / wd,
            ErrorKind::ShapeMismatch, "head " + shape_str(lv.shape()) + " is not an integer downsampling of the labels");
    const auto factor = target.height / h;
    auto labels = downsample_labels(target.labels, target.batch, target.height, target.width, factor);
    auto onehot = one_hot<T>(labels, target.batch, h, wd, N);
    return gdl(softmax_channels(logits), onehot, options);
  };

  Var<T> total = scale(term(main_logits), static_cast<T>(weights[0]));
  for (std::size_t k = 0; k < aux_logits.size(); ++k)
    total = add(total, scale(term(aux_logits[k]), static_cast<T>(weights[k + 1])));
  return total;
}

template <typename T>
Var<T> combined_loss(Var<T> main_logits, const std::vector<Var<T>>& aux_logits, const BasicTensor<T>& target_onehot,
                     const std::vector<double>& weights, const GdlOptions& options) {
  return combined_loss(main_logits, aux_logits, labels_from_onehot(target_onehot), weights, options);
}

#define CSEGNET_INSTANTIATE(T)                                                                                  \
  template std::vector<double> gdl_class_weights(const BasicTensor<T>&, double);                                \
  template Var<T> gdl(Var<T>, const BasicTensor<T>&, const GdlOptions&);                                        \
  template LabelBatch labels_from_onehot(const BasicTensor<T>&);                                                \
  template Var<T> combined_loss(Var<T>, const std::vector<Var<T>>&, const LabelBatch&, const std::vector<double>&, \
                                const GdlOptions&);                                                             \
  template Var<T> combined_loss(Var<T>, const std::vector<Var<T>>&, const BasicTensor<T>&,                      \
                                const std::vector<double>&, const GdlOptions&);

CSEGNET_INSTANTIATE(float)
CSEGNET_INSTANTIATE(double)

}  // namespace csegnet
