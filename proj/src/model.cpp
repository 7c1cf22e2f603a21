#include "csegnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "csegnet/dataset.hpp"

namespace csegnet {

std::string_view variant_name(Variant v) { return v == Variant::CSegNet ? "csegnet" : "unet_baseline"; }

Variant parse_variant(std::string_view text) {
  if (text == "csegnet") return Variant::CSegNet;
  if (text == "unet_baseline" || text == "unet") return Variant::UNetBaseline;
  fail(ErrorKind::InvalidConfig, "unknown model variant '" + std::string(text) + "'");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.stages = 4;
  c.base_channels = 8;
  c.input_height = c.input_width = 128;
  return c;
}

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.stages = 5;
  c.base_channels = 64;
  c.input_height = c.input_width = 256;
  return c;
}

int ModelConfig::channels(int stage) const {
  return std::min(base_channels << std::min(stage, 4), 16 * base_channels);
}

std::vector<double> ModelConfig::loss_weights() const {
  if (!deep_supervision_weights.empty()) return deep_supervision_weights;
  std::vector<double> w{1.0};
  double aux = 0.4;
  for (int i = 0; i < num_aux_heads(); ++i, aux *= 0.5) w.push_back(aux);
  return w;
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& why) { fail(ErrorKind::InvalidConfig, why); };
  if (num_classes != kNumCardiacClasses) bad("num_classes must be 4 (background, RVC, LVM, LVC)");
  if (stages < 2 || stages > 8) bad("stages must be in [2, 8]");
  if (base_channels < 1) bad("base_channels must be >= 1");
  if (stem_strides.empty()) bad("stem_strides must not be empty");
  for (int s : stem_strides)
    if (s < 1) bad("stem strides must be positive");
  if (pyramid_fuse_kernel != 1 && pyramid_fuse_kernel != 3) bad("pyramid_fuse_kernel must be 1 or 3");
  const std::int64_t factor = std::int64_t{1} << (stages - 1);
  if (input_height % factor != 0 || input_width % factor != 0)
    bad("input size must be divisible by 2^(stages-1) = " + std::to_string(factor));
  if (input_height / factor < 3 || input_width / factor < 3)
    bad("deepest resolution must be at least 3x3 for the pooling branch");
  if (!deep_supervision_weights.empty()) {
    if (static_cast<int>(deep_supervision_weights.size()) != stages)
      bad("deep_supervision_weights needs one weight per head (" + std::to_string(stages) + ")");
    for (double w : deep_supervision_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) bad("deep supervision weights must be finite and >= 0");
  }
}

// ---- parameter layout -----------------------------------------------------------

namespace {

struct SpecBuilder {
  std::vector<ParamSpec> specs;

  void conv(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k, bool bias,
            std::int64_t groups = 1) {
    const std::int64_t per_group = cin / groups;
    specs.push_back({name + ".weight", {cout, per_group, k, k}, ParamInit::FanInUniform, per_group * k * k, true});
    if (bias) specs.push_back({name + ".bias", {cout}, ParamInit::Zeros, 1, true});
  }
  void bn(const std::string& name, std::int64_t c) {
    specs.push_back({name + ".bn.gamma", {c}, ParamInit::Ones, 1, true});
    specs.push_back({name + ".bn.beta", {c}, ParamInit::Zeros, 1, true});
    specs.push_back({name + ".bn.running_mean", {c}, ParamInit::Zeros, 1, false});
    specs.push_back({name + ".bn.running_var", {c}, ParamInit::Ones, 1, false});
  }
  void conv_bn(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k) {
    conv(name, cin, cout, k, false);
    bn(name, cout);
  }
  void sep_bn(const std::string& name, std::int64_t cin, std::int64_t cout) {
    conv(name + ".dw", cin, cin, 3, false, cin);
    conv(name + ".pw", cin, cout, 1, false);
    bn(name, cout);
  }
};

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::string stage_name(const char* group, int s) { return std::string(group) + "." + std::to_string(s); }

}  // namespace

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  SpecBuilder b;
  const int c0 = cfg.channels(0);
  for (std::size_t k = 0; k < cfg.stem_strides.size(); ++k) b.conv_bn("stem.b" + std::to_string(k), 1, c0, 3);
  b.conv_bn("stem.fuse", static_cast<std::int64_t>(cfg.stem_strides.size()) * c0, c0, 1);

  for (int s = 0; s < cfg.stages; ++s) {
    const int cin = s == 0 ? c0 : cfg.channels(s - 1);
    const int c = cfg.channels(s);
    const auto p = stage_name("enc", s);
    b.sep_bn(p + ".sep1", cin, c);
    b.sep_bn(p + ".sep2", c, c);
    b.conv(p + ".shortcut", cin, c, 1, true);
  }
  if (cfg.variant == Variant::CSegNet) {
    for (int s = 0; s < cfg.stages; ++s) {
      const int c = cfg.channels(s);
      const auto p = stage_name("dpp", s);
      b.conv_bn(p + ".b1x1", c, c, 1);
      b.conv_bn(p + ".b3x3", c, c, 3);
      b.conv_bn(p + ".b3x3_d1", c, c, 3);
      b.conv_bn(p + ".b3x3_d2", c, c, 3);
      b.conv(p + ".fuse", 5 * c, c, cfg.pyramid_fuse_kernel, true);
    }
  }
  for (int s = cfg.stages - 2; s >= 0; --s) {
    const auto p = stage_name("dec", s);
    b.sep_bn(p + ".sep1", cfg.channels(s + 1) + cfg.channels(s), cfg.channels(s));
    b.sep_bn(p + ".sep2", cfg.channels(s), cfg.channels(s));
  }
  b.conv("head.main", c0, cfg.num_classes, 1, true);
  for (int s = 1; s < cfg.stages; ++s) b.conv(stage_name("head.aux", s), cfg.channels(s), cfg.num_classes, 1, true);
  return std::move(b.specs);
}

ParamSet build(const ModelConfig& cfg, std::uint64_t seed) {
  ParamSet params;
  for (const auto& spec : parameter_specs(cfg)) {
    Tensor t(spec.shape, 0.0f);
    switch (spec.init) {
      case ParamInit::Ones: t.fill(1.0f); break;
      case ParamInit::Zeros: break;
      case ParamInit::FanInUniform: {
        // Per-name streams keep a layer's init independent of the layers around it.
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(fnv1a(spec.name)),
                          static_cast<std::uint32_t>(fnv1a(spec.name) >> 32)};
        std::mt19937_64 rng(seq);
        const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : t.data()) v = static_cast<float>(dist(rng));
        break;
      }
    }
    params.emplace(spec.name, std::move(t));
  }
  return params;
}

bool is_buffer_name(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

std::int64_t count_parameters(const ParamSet& params, bool include_buffers) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params)
    if (include_buffers || !is_buffer_name(name)) n += t.numel();
  return n;
}

template <typename T>
VarMap<T> bind_params(Tape<T>& tape, const BasicParamSet<T>& params, bool trainable) {
  VarMap<T> out;
  for (const auto& [name, t] : params) out.emplace(name, tape.leaf(t, trainable && !is_buffer_name(name)));
  return out;
}

// ---- forward --------------------------------------------------------------------

namespace {

template <typename T>
struct Net {
  const ForwardContext<T>& ctx;

  Var<T> p(const std::string& name) const {
    auto it = ctx.params->find(name);
    if (it == ctx.params->end()) fail(ErrorKind::ConfigMismatch, "missing parameter '" + name + "'");
    return it->second;
  }
  std::optional<Var<T>> maybe(const std::string& name) const {
    auto it = ctx.params->find(name);
    if (it == ctx.params->end()) return std::nullopt;
    return it->second;
  }

  Var<T> bn(const std::string& name, Var<T> x) const {
    BatchNormUpdate<T> update;
    const bool want_update = ctx.training && ctx.bn_updates;
    auto y = batch_norm(x, p(name + ".bn.gamma"), p(name + ".bn.beta"), p(name + ".bn.running_mean").value(),
                        p(name + ".bn.running_var").value(), ctx.training, want_update ? &update : nullptr);
    if (want_update) (*ctx.bn_updates)[name] = std::move(update);
    return y;
  }

  Var<T> conv(const std::string& name, Var<T> x, int stride = 1, int dilation = 1) const {
    return conv2d(x, p(name + ".weight"), maybe(name + ".bias"), Conv2dSpec::make(stride, dilation));
  }
  Var<T> conv_bn_relu(const std::string& name, Var<T> x, int stride = 1, int dilation = 1) const {
    return relu(bn(name, conv(name, x, stride, dilation)));
  }
  Var<T> sep_bn(const std::string& name, Var<T> x, int stride = 1) const {
    return bn(name, separable_conv2d(x, p(name + ".dw.weight"), p(name + ".pw.weight"), stride));
  }

  void trace(const std::string& name, Var<T> out) const {
    if (!ctx.trace) return;
    std::int64_t n = 0;
    const auto prefix = name + ".";
    for (const auto& [k, v] : *ctx.params)
      if (k.compare(0, prefix.size(), prefix) == 0 && !is_buffer_name(k)) n += v.value().numel();
    ctx.trace->push_back({name, out.shape(), n});
  }
};

}  // namespace

template <typename T>
Var<T> stem(const ForwardContext<T>& ctx, Var<T> x) {
  Net<T> net{ctx};
  const auto h = x.shape()[2], w = x.shape()[3];
  std::vector<Var<T>> branches;
  for (std::size_t k = 0; k < ctx.cfg->stem_strides.size(); ++k) {
    auto y = net.conv_bn_relu("stem.b" + std::to_string(k), x, ctx.cfg->stem_strides[k]);
    branches.push_back(bilinear_resize(y, h, w));
  }
  auto out = net.conv_bn_relu("stem.fuse", concat_channels(branches));
  net.trace("stem", out);
  return out;
}

template <typename T>
Var<T> dpp_block(const ForwardContext<T>& ctx, int stage, Var<T> f, DppBranches<T>* branches) {
  Net<T> net{ctx};
  const auto p = stage_name("dpp", stage);
  const auto h = f.shape()[2], w = f.shape()[3];
  std::vector<Var<T>> outs{
      net.conv_bn_relu(p + ".b1x1", f),
      net.conv_bn_relu(p + ".b3x3", f),
      net.conv_bn_relu(p + ".b3x3_d1", f, 1, 1),
      net.conv_bn_relu(p + ".b3x3_d2", f, 1, 2),
      bilinear_resize(avg_pool2d(f, 3, 3), h, w),
  };
  auto out = net.conv(p + ".fuse", concat_channels(outs));
  if (branches) branches->outputs = std::move(outs);
  net.trace(p, out);
  return out;
}

template <typename T>
ForwardOutput<T> forward(const ForwardContext<T>& ctx, Var<T> x) {
  const ModelConfig& cfg = *ctx.cfg;
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != cfg.input_height || xs[3] != cfg.input_width)
    fail(ErrorKind::ShapeMismatch, "model input must be (B,1," + std::to_string(cfg.input_height) + "," +
                                       std::to_string(cfg.input_width) + "), got " + shape_str(xs));
  Net<T> net{ctx};

  std::vector<Var<T>> enc;
  auto h = stem(ctx, x);
  for (int s = 0; s < cfg.stages; ++s) {
    const auto p = stage_name("enc", s);
    const int stride = s == 0 ? 1 : 2;
    auto main = net.sep_bn(p + ".sep2", relu(net.sep_bn(p + ".sep1", h, stride)));
    auto shortcut = net.conv(p + ".shortcut", h, stride);
    h = relu(add(main, shortcut));
    net.trace(p, h);
    enc.push_back(h);
  }

  std::vector<Var<T>> skips = enc;
  if (cfg.variant == Variant::CSegNet)
    for (int s = 0; s < cfg.stages; ++s) skips[s] = dpp_block(ctx, s, enc[s]);

  std::vector<Var<T>> dec(cfg.stages);
  dec[cfg.stages - 1] = skips[cfg.stages - 1];
  for (int s = cfg.stages - 2; s >= 0; --s) {
    const auto p = stage_name("dec", s);
    const auto& sk = skips[s].shape();
    auto up = bilinear_resize(dec[s + 1], sk[2], sk[3]);
    auto y = relu(net.sep_bn(p + ".sep1", concat_channels<T>({up, skips[s]})));
    dec[s] = relu(net.sep_bn(p + ".sep2", y));
    net.trace(p, dec[s]);
  }

  ForwardOutput<T> out;
  out.main = net.conv("head.main", dec[0]);
  net.trace("head.main", out.main);
  for (int s = 1; s < cfg.stages; ++s) {
    const auto name = stage_name("head.aux", s);
    out.aux.push_back(net.conv(name, dec[s]));
    net.trace(name, out.aux.back());
  }
  return out;
}

Tensor predict_probabilities(const ModelConfig& cfg, const ParamSet& params, const Tensor& x) {
  Tape<float> tape;
  const auto vars = bind_params(tape, params, false);
  ForwardContext<float> ctx{&cfg, &vars, false, nullptr, nullptr};
  auto out = forward(ctx, tape.constant(x));
  Tensor probs = softmax_channels_value(out.main.value());
  if (!cfg.aux_inference) return probs;
  const auto h = probs.dim(2), w = probs.dim(3);
  for (const auto& a : out.aux) {
    auto up = bilinear_resize(tape.constant(softmax_channels_value(a.value())), h, w);
    const auto& u = up.value();
    for (std::int64_t i = 0; i < probs.numel(); ++i) probs[i] += u[i];
  }
  const float inv = 1.0f / static_cast<float>(out.aux.size() + 1);
  for (auto& v : probs.data()) v *= inv;
  return probs;
}

std::string architecture_summary(const ModelConfig& cfg, const ParamSet& params) {
  Tape<float> tape;
  const auto vars = bind_params(tape, params, false);
  std::vector<LayerRecord> records;
  ForwardContext<float> ctx{&cfg, &vars, false, nullptr, &records};
  forward(ctx, tape.constant(Tensor::zeros({1, 1, cfg.input_height, cfg.input_width})));

  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %-22s %12s\n", "layer", "output", "params");
  os << line;
  std::int64_t listed = 0;
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%-16s %-22s %12lld\n", r.name.c_str(), shape_str(r.shape).c_str(),
                  static_cast<long long>(r.params));
    os << line;
    listed += r.params;
  }
  std::snprintf(line, sizeof line, "%-16s %-22s %12lld\n", "total", variant_name(cfg.variant).data(),
                static_cast<long long>(count_parameters(params)));
  os << line;
  if (listed != count_parameters(params)) fail(ErrorKind::Internal, "summary does not cover every parameter");
  return os.str();
}

#define CSEGNET_INSTANTIATE(T)                                                                      \
  template VarMap<T> bind_params(Tape<T>&, const BasicParamSet<T>&, bool);                         \
  template Var<T> stem(const ForwardContext<T>&, Var<T>);                                           \
  template Var<T> dpp_block(const ForwardContext<T>&, int, Var<T>, DppBranches<T>*);               \
  template ForwardOutput<T> forward(const ForwardContext<T>&, Var<T>);

CSEGNET_INSTANTIATE(float)
CSEGNET_INSTANTIATE(double)

}  // namespace csegnet
