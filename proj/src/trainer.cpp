#include "csegnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <json.hpp>
#include <numeric>
#include <random>
#include <set>

#include "csegnet/augment.hpp"
#include "csegnet/io.hpp"
#include "csegnet/loss.hpp"
#include "csegnet/preprocess.hpp"

namespace csegnet {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- Adam ---------------------------------------------------------------------------

template <typename T>
void adam_step(BasicParamSet<T>& params, const BasicParamSet<T>& grads, BasicAdamState<T>& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) fail(ErrorKind::ShapeMismatch, "gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape())
      fail(ErrorKind::ShapeMismatch, "gradient shape " + shape_str(g.shape()) + " for parameter '" + name + "' of shape " +
                                         shape_str(it->second.shape()));
    if (!g.all_finite()) fail(ErrorKind::NonFiniteGradient, "non-finite gradient for '" + name + "'");
  }
  const std::int64_t t = state.step + 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, BasicTensor<T>(g.shape(), T(0)));
    auto [vit, v_new] = state.v.try_emplace(name, BasicTensor<T>(g.shape(), T(0)));
    auto& m = mit->second;
    auto& v = vit->second;
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double gi = g[i];
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
  state.step = t;
}

template void adam_step(BasicParamSet<float>&, const BasicParamSet<float>&, BasicAdamState<float>&);
template void adam_step(BasicParamSet<double>&, const BasicParamSet<double>&, BasicAdamState<double>&);

// ---- checkpoint codec -------------------------------------------------------------------

namespace {

constexpr std::uint8_t kMagic[4] = {'C', 'S', 'E', 'G'};
constexpr std::uint8_t kDtypeF32 = 0;

void put_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  if (name.size() > 0xffff) fail(ErrorKind::Internal, "tensor name too long");
  if (t.rank() > 255) fail(ErrorKind::Internal, "tensor rank too large");
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
  w.u8(kDtypeF32);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f32s(t.data());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& [name, t] : ckpt.params) entries.emplace_back(name, &t);
  if (ckpt.adam) {
    for (const auto& [name, t] : ckpt.adam->m) entries.emplace_back("adam.m." + name, &t);
    for (const auto& [name, t] : ckpt.adam->v) entries.emplace_back("adam.v." + name, &t);
  }
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) put_tensor(w, name, *t);

  json meta = {
      {"config", json::parse(model_config_to_json(ckpt.config))},
      {"val_dice", ckpt.val_dice},
      {"epoch", ckpt.epoch},
      {"adam", nullptr},
  };
  if (ckpt.adam)
    meta["adam"] = {{"step", ckpt.adam->step},
                    {"lr", ckpt.adam->lr},
                    {"beta1", ckpt.adam->beta1},
                    {"beta2", ckpt.adam->beta2},
                    {"epsilon", ckpt.adam->epsilon}};
  const auto text = meta.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  return w.data();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) fail(ErrorKind::CorruptEntry, "checkpoint truncated before magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorKind::BadMagic, "not a checkpoint (magic mismatch)");
  ByteReader r(bytes.subspan(4));
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::VersionUnsupported, "checkpoint version " + std::to_string(version) + " (supported: " +
                                            std::to_string(kCheckpointVersion) + ")");
  const auto count = r.u32();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.u16();
    const auto nb = r.bytes(len);
    std::string name(reinterpret_cast<const char*>(nb.data()), nb.size());
    const auto dtype = r.u8();
    if (dtype != kDtypeF32) fail(ErrorKind::CorruptEntry, "entry '" + name + "': unknown dtype " + std::to_string(dtype));
    const auto ndim = r.u8();
    Shape shape;
    std::uint64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      shape.push_back(r.u32());
      n *= static_cast<std::uint64_t>(shape.back());
    }
    if (n * 4 > r.remaining()) fail(ErrorKind::CorruptEntry, "entry '" + name + "': payload truncated");
    const auto payload = r.bytes(static_cast<std::size_t>(n * 4));
    std::vector<float> values(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::uint32_t u = static_cast<std::uint32_t>(payload[4 * i]) |
                              static_cast<std::uint32_t>(payload[4 * i + 1]) << 8 |
                              static_cast<std::uint32_t>(payload[4 * i + 2]) << 16 |
                              static_cast<std::uint32_t>(payload[4 * i + 3]) << 24;
      std::memcpy(&values[i], &u, 4);
    }
    if (!tensors.emplace(name, Tensor(shape, std::move(values))).second)
      fail(ErrorKind::CorruptEntry, "duplicate entry '" + name + "'");
  }
  const auto meta_len = r.u32();
  const auto meta_bytes = r.bytes(meta_len);
  if (r.remaining() != 0) fail(ErrorKind::CorruptEntry, "trailing bytes after checkpoint metadata");

  Checkpoint ck;
  json meta;
  try {
    meta = json::parse(meta_bytes.begin(), meta_bytes.end());
    ck.config = model_config_from_json(meta.at("config").dump());
    ck.val_dice = meta.at("val_dice").get<double>();
    ck.epoch = meta.at("epoch").get<int>();
    if (!meta.at("adam").is_null()) {
      const auto& a = meta.at("adam");
      AdamState st;
      st.step = a.at("step").get<std::int64_t>();
      st.lr = a.at("lr").get<double>();
      st.beta1 = a.at("beta1").get<double>();
      st.beta2 = a.at("beta2").get<double>();
      st.epsilon = a.at("epsilon").get<double>();
      ck.adam = std::move(st);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptEntry, std::string("checkpoint metadata: ") + e.what());
  }

  for (auto& [name, t] : tensors) {
    if (name.rfind("adam.m.", 0) == 0 || name.rfind("adam.v.", 0) == 0) {
      if (!ck.adam) fail(ErrorKind::CorruptEntry, "optimizer entry '" + name + "' without optimizer metadata");
      auto& dst = name[5] == 'm' ? ck.adam->m : ck.adam->v;
      dst.emplace(name.substr(7), std::move(t));
    } else {
      ck.params.emplace(name, std::move(t));
    }
  }
  const auto specs = parameter_specs(ck.config);
  if (specs.size() != ck.params.size())
    fail(ErrorKind::ConfigMismatch, "checkpoint holds " + std::to_string(ck.params.size()) + " tensors, config expects " +
                                        std::to_string(specs.size()));
  for (const auto& s : specs) {
    auto it = ck.params.find(s.name);
    if (it == ck.params.end()) fail(ErrorKind::ConfigMismatch, "checkpoint lacks parameter '" + s.name + "'");
    if (it->second.shape() != s.shape) fail(ErrorKind::ConfigMismatch, "parameter '" + s.name + "' has wrong shape");
  }
  if (ck.adam)
    for (const auto* moments : {&ck.adam->m, &ck.adam->v})
      for (const auto& [name, t] : *moments) {
        auto it = ck.params.find(name);
        if (it == ck.params.end() || it->second.shape() != t.shape())
          fail(ErrorKind::ConfigMismatch, "optimizer state for unknown parameter '" + name + "'");
      }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const auto tmp = fs::path(path.string() + ".tmp");
  write_binary_file(tmp, encode_checkpoint(ckpt));
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  const auto bytes = read_binary_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.detail());
  }
}

// ---- registry -----------------------------------------------------------------------------

namespace {

bool ranks_before(double score_a, int epoch_a, double score_b, int epoch_b) {
  if (score_a != score_b) return score_a > score_b;
  return epoch_a < epoch_b;
}

}  // namespace

TopKRegistry::TopKRegistry(int k) : k_(k) {
  if (k < 1) fail(ErrorKind::InvalidConfig, "registry size must be >= 1");
}

bool TopKRegistry::would_accept(double score, int epoch) const {
  if (std::isnan(score)) return false;
  if (static_cast<int>(entries_.size()) < k_) return true;
  const auto& worst = entries_.back();
  return ranks_before(score, epoch, worst.score, worst.epoch);
}

bool TopKRegistry::offer(RegistryEntry entry, std::optional<RegistryEntry>* dropped) {
  if (dropped) dropped->reset();
  if (!would_accept(entry.score, entry.epoch)) {
    if (dropped) *dropped = std::move(entry);
    return false;
  }
  auto pos = std::find_if(entries_.begin(), entries_.end(), [&](const RegistryEntry& e) {
    return ranks_before(entry.score, entry.epoch, e.score, e.epoch);
  });
  entries_.insert(pos, std::move(entry));
  if (static_cast<int>(entries_.size()) > k_) {
    if (dropped) *dropped = std::move(entries_.back());
    entries_.pop_back();
  }
  return true;
}

// ---- inference ------------------------------------------------------------------------------

Tensor ensemble_probabilities(const std::vector<const Checkpoint*>& members, const Tensor& x) {
  if (members.empty()) fail(ErrorKind::InvalidConfig, "ensemble needs at least one checkpoint");
  for (const auto* m : members)
    if (!(m->config == members.front()->config))
      fail(ErrorKind::ConfigMismatch, "ensemble members were built from different model configs");
  std::vector<double> acc;
  Shape shape;
  for (const auto* m : members) {
    const Tensor p = predict_probabilities(m->config, m->params, x);
    if (acc.empty()) {
      acc.assign(static_cast<std::size_t>(p.numel()), 0.0);
      shape = p.shape();
    }
    for (std::int64_t i = 0; i < p.numel(); ++i) acc[static_cast<std::size_t>(i)] += p[i];
  }
  Tensor out(shape, 0.0f);
  const double k = static_cast<double>(members.size());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(acc[static_cast<std::size_t>(i)] / k);
  return out;
}

std::vector<std::uint8_t> argmax_labels(const Tensor& probs) {
  require(probs.rank() == 4, ErrorKind::ShapeMismatch, "argmax expects (B,N,H,W)");
  const auto B = probs.dim(0), N = probs.dim(1), HW = probs.dim(2) * probs.dim(3);
  require(N <= 256, ErrorKind::ShapeMismatch, "too many classes for uint8 labels");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(B * HW));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < HW; ++p) {
      const float* base = probs.ptr() + b * N * HW + p;
      std::int64_t best = 0;
      for (std::int64_t n = 1; n < N; ++n)
        if (base[n * HW] > base[best * HW]) best = n;
      out[static_cast<std::size_t>(b * HW + p)] = static_cast<std::uint8_t>(best);
    }
  return out;
}

std::vector<std::uint8_t> ensemble_predict(const std::vector<const Checkpoint*>& members, const Tensor& x) {
  return argmax_labels(ensemble_probabilities(members, x));
}

namespace {

Tensor stack_slices(const std::vector<Slice>& slices, std::size_t begin, std::size_t end) {
  const auto h = slices[begin].height(), w = slices[begin].width();
  Tensor x({static_cast<std::int64_t>(end - begin), 1, h, w}, 0.0f);
  for (std::size_t i = begin; i < end; ++i)
    std::copy(slices[i].image.ptr(), slices[i].image.ptr() + h * w, x.ptr() + static_cast<std::int64_t>(i - begin) * h * w);
  return x;
}

}  // namespace

Case predict_case(const std::vector<const Checkpoint*>& members, const Case& c, int batch_size) {
  if (members.empty()) fail(ErrorKind::InvalidConfig, "prediction needs at least one checkpoint");
  c.validate();
  const auto& mc = members.front()->config;
  require(mc.input_height == mc.input_width, ErrorKind::InvalidConfig, "prediction expects a square model input");
  const Case r = resample_to_spacing(c);
  const auto rd = r.dims();
  std::vector<Slice> slices;
  std::vector<CropOffsets> offsets;
  for (std::int64_t z = 0; z < rd.depth; ++z) {
    Slice s = extract_slice(r, z);
    zscore(s.image.data());
    CropOffsets off;
    slices.push_back(center_crop_pad(s, mc.input_height, mc.input_width, &off));
    offsets.push_back(off);
  }
  Case out = c;
  const auto od = c.dims();
  const auto plane = mc.input_height * mc.input_width;
  for (std::size_t b = 0; b < slices.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto e = std::min(slices.size(), b + static_cast<std::size_t>(batch_size));
    const auto labels = ensemble_predict(members, stack_slices(slices, b, e));
    for (std::size_t i = b; i < e; ++i) {
      std::span<const std::uint8_t> lab(labels.data() + static_cast<std::int64_t>(i - b) * plane,
                                        static_cast<std::size_t>(plane));
      auto grid = uncrop_labels(lab, mc.input_height, mc.input_width, rd.height, rd.width, offsets[i]);
      if (rd.height != od.height || rd.width != od.width)
        grid = resize_nearest(grid, rd.height, rd.width, od.height, od.width);
      std::copy(grid.begin(), grid.end(), out.label.begin() + static_cast<std::int64_t>(i) * od.height * od.width);
    }
  }
  return out;
}

// ---- training ------------------------------------------------------------------------------

std::string format_training_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_dice_rvc,val_dice_lvm,val_dice_lvc,val_dice_mean\n";
  char line[256];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_dice[0],
                  e.val_dice[1], e.val_dice[2], e.val_dice_mean);
    out += line;
  }
  return out;
}

std::array<double, 3> slice_dice(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                 std::int64_t slices, std::int64_t pixels_per_slice) {
  require(pred.size() == truth.size() && static_cast<std::int64_t>(pred.size()) == slices * pixels_per_slice,
          ErrorKind::ShapeMismatch, "prediction and truth sizes differ");
  std::array<double, 3> sum{};
  for (std::int64_t s = 0; s < slices; ++s) {
    const auto* p = pred.data() + s * pixels_per_slice;
    const auto* t = truth.data() + s * pixels_per_slice;
    for (int c = 1; c <= 3; ++c) {
      std::int64_t np = 0, nt = 0, both = 0;
      for (std::int64_t i = 0; i < pixels_per_slice; ++i) {
        const bool a = p[i] == c, b = t[i] == c;
        np += a;
        nt += b;
        both += a && b;
      }
      sum[c - 1] += np + nt == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(np + nt);
    }
  }
  for (auto& v : sum) v = slices > 0 ? v / static_cast<double>(slices) : 0.0;
  return sum;
}

std::array<double, 3> validate_slices(const ModelConfig& cfg, const ParamSet& params, const std::vector<Slice>& slices,
                                      int batch_size) {
  if (slices.empty()) return {0.0, 0.0, 0.0};
  const auto plane = slices.front().height() * slices.front().width();
  std::vector<std::uint8_t> pred, truth;
  pred.reserve(slices.size() * static_cast<std::size_t>(plane));
  truth.reserve(pred.capacity());
  for (std::size_t b = 0; b < slices.size(); b += static_cast<std::size_t>(batch_size)) {
    const auto e = std::min(slices.size(), b + static_cast<std::size_t>(batch_size));
    const auto labels = argmax_labels(predict_probabilities(cfg, params, stack_slices(slices, b, e)));
    pred.insert(pred.end(), labels.begin(), labels.end());
    for (std::size_t i = b; i < e; ++i) truth.insert(truth.end(), slices[i].label.begin(), slices[i].label.end());
  }
  return slice_dice(pred, truth, static_cast<std::int64_t>(slices.size()), plane);
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<Slice> slices_for(const std::vector<Case>& cases, const std::set<std::string>& ids, std::int64_t size) {
  std::vector<Slice> out;
  for (const auto& c : cases) {
    if (!ids.count(c.case_id)) continue;
    auto s = preprocess_case(c, size);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return out;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::vector<Case>& cases, const fs::path& out_dir,
                  const TrainHooks& hooks) {
  cfg.validate();
  const auto& mc = cfg.model;
  const auto& tc = cfg.train;
  require(mc.input_height == mc.input_width, ErrorKind::InvalidConfig, "training expects a square model input");
  for (const auto& c : cases) c.validate();

  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.case_id);
  TrainResult result{TopKRegistry(tc.top_k), {}, split_train_val(ids, tc.split_ratio, tc.seed), {}, 0};
  const std::set<std::string> train_ids(result.split.train.begin(), result.split.train.end());
  const std::set<std::string> val_ids(result.split.val.begin(), result.split.val.end());
  const auto train_slices = slices_for(cases, train_ids, mc.input_height);
  const auto val_slices = slices_for(cases, val_ids, mc.input_height);
  if (train_slices.empty()) fail(ErrorKind::TooFewCases, "no training slices");

  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  }

  ParamSet params = build(mc, tc.seed);
  AdamState adam;
  adam.lr = tc.lr;
  adam.beta1 = tc.beta1;
  adam.beta2 = tc.beta2;
  adam.epsilon = tc.adam_epsilon;
  const auto weights = mc.loss_weights();
  const auto H = mc.input_height, W = mc.input_width;
  const AugmentConfig aug = tc.augment ? cfg.augment : AugmentConfig::none();

  auto snapshot = [&](int epoch, double score) {
    Checkpoint ck{mc, params, std::nullopt, score, epoch};
    if (tc.save_optimizer_state) ck.adam = adam;
    return ck;
  };

  int consecutive_rejects = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(train_slices.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(mix(tc.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const int steps = static_cast<int>((order.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
                                       static_cast<std::size_t>(tc.batch_size));
    double loss_sum = 0.0;
    int accepted = 0;
    for (int step = 0; step < steps; ++step) {
      const auto b0 = static_cast<std::size_t>(step) * static_cast<std::size_t>(tc.batch_size);
      const auto b1 = std::min(order.size(), b0 + static_cast<std::size_t>(tc.batch_size));
      const auto B = static_cast<std::int64_t>(b1 - b0);
      Tensor x({B, 1, H, W}, 0.0f);
      LabelBatch labels{std::vector<std::uint8_t>(static_cast<std::size_t>(B * H * W)), B, H, W};
      for (std::size_t i = b0; i < b1; ++i) {
        const auto idx = order[i];
        const Slice s = augment(train_slices[idx], aug, mix(mix(tc.seed, static_cast<std::uint64_t>(epoch)), idx));
        const auto off = static_cast<std::int64_t>(i - b0) * H * W;
        std::copy(s.image.ptr(), s.image.ptr() + H * W, x.ptr() + off);
        std::copy(s.label.begin(), s.label.end(), labels.labels.begin() + off);
      }

      Tape<float> tape;
      const auto vars = bind_params(tape, params, true);
      std::map<std::string, BatchNormUpdate<float>> bn_updates;
      ForwardContext<float> ctx{&mc, &vars, true, &bn_updates, nullptr};
      const auto out = forward(ctx, tape.constant(std::move(x)));
      const auto loss = combined_loss(out.main, out.aux, labels, weights);
      const double loss_value = loss.value().item();

      bool ok = std::isfinite(loss_value);
      if (ok) {
        tape.backward(loss);
        ParamSet grads;
        for (const auto& [name, v] : vars)
          if (v.requires_grad()) grads.emplace(name, tape.grad(v));
        try {
          adam_step(params, grads, adam);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::NonFiniteGradient) throw;
          ok = false;
        }
      }
      if (!ok) {
        ++result.rejected_steps;
        if (++consecutive_rejects >= 2)
          fail(ErrorKind::NonFiniteGradient, "training aborted: two consecutive non-finite steps at epoch " +
                                                 std::to_string(epoch) + ", step " + std::to_string(step + 1));
        continue;
      }
      consecutive_rejects = 0;
      for (auto& [prefix, u] : bn_updates) {
        params.at(prefix + ".bn.running_mean") = std::move(u.running_mean);
        params.at(prefix + ".bn.running_var") = std::move(u.running_var);
      }
      loss_sum += loss_value;
      ++accepted;
      if (hooks.on_step) hooks.on_step(epoch, step + 1, steps, loss_value);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = accepted > 0 ? loss_sum / accepted : std::nan("");
    entry.val_dice = validate_slices(mc, params, val_slices, tc.batch_size);
    entry.val_dice_mean = (entry.val_dice[0] + entry.val_dice[1] + entry.val_dice[2]) / 3.0;
    result.log.push_back(entry);

    if (result.registry.would_accept(entry.val_dice_mean, epoch)) {
      RegistryEntry reg;
      reg.score = entry.val_dice_mean;
      reg.epoch = epoch;
      auto ck = std::make_shared<const Checkpoint>(snapshot(epoch, entry.val_dice_mean));
      if (!out_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof name, "ckpt_epoch%03d.cseg", epoch);
        reg.path = out_dir / name;
        save_checkpoint(*ck, reg.path);
      }
      reg.checkpoint = std::move(ck);
      std::optional<RegistryEntry> dropped;
      result.registry.offer(std::move(reg), &dropped);
      if (dropped && !dropped->path.empty()) {
        std::error_code ec;
        fs::remove(dropped->path, ec);
      }
    }
    if (!out_dir.empty()) write_text_file(out_dir / "training_log.csv", format_training_log(result.log));
    if (hooks.on_epoch) hooks.on_epoch(entry);
  }
  if (!out_dir.empty() && tc.epochs == 0) write_text_file(out_dir / "training_log.csv", format_training_log({}));
  result.final_state = snapshot(tc.epochs, result.log.empty() ? 0.0 : result.log.back().val_dice_mean);
  return result;
}

}  // namespace csegnet
