#include "csegnet/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <variant>

namespace csegnet {

using nlohmann::json;

void TrainConfig::validate() const {
  auto bad = [](const std::string& why) { fail(ErrorKind::InvalidConfig, why); };
  if (epochs < 0) bad("epochs must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) bad("lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("beta1/beta2 must be in [0,1)");
  if (!(adam_epsilon > 0)) bad("adam_epsilon must be positive");
  if (!(split_ratio > 0 && split_ratio < 1)) bad("split_ratio must be in (0,1)");
  if (top_k < 1) bad("top_k must be >= 1");
}

void RunConfig::validate() const {
  model.validate();
  augment.validate();
  train.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
  N v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end)
    fail(ErrorKind::InvalidConfig, "bad value '" + std::string(text) + "' for " + std::string(key));
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorKind::InvalidConfig, "bad boolean '" + std::string(text) + "' for " + std::string(key));
}

template <typename N>
std::vector<N> parse_list(std::string_view key, std::string_view text) {
  std::vector<N> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto comma = text.find(',', pos);
    if (comma == std::string_view::npos) comma = text.size();
    const auto item = trim(text.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(parse_number<N>(key, item));
    pos = comma + 1;
  }
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename N>
std::string fmt_list(const std::vector<N>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<N>)
      s += fmt_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

using Field = std::variant<int*, std::int64_t*, std::uint64_t*, double*, bool*, std::vector<int>*,
                           std::vector<double>*, Variant*>;

std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  auto& m = c.model;
  auto& a = c.augment;
  auto& t = c.train;
  return {
      {"num_classes", &m.num_classes},
      {"stages", &m.stages},
      {"base_channels", &m.base_channels},
      {"stem_strides", &m.stem_strides},
      {"pyramid_fuse_kernel", &m.pyramid_fuse_kernel},
      {"deep_supervision_weights", &m.deep_supervision_weights},
      {"input_height", &m.input_height},
      {"input_width", &m.input_width},
      {"variant", &m.variant},
      {"aux_inference", &m.aux_inference},
      {"affine_prob", &a.affine_prob},
      {"rotation_deg", &a.rotation_deg},
      {"scale_min", &a.scale_min},
      {"scale_max", &a.scale_max},
      {"shift_px", &a.shift_px},
      {"shear_deg", &a.shear_deg},
      {"elastic_prob", &a.elastic_prob},
      {"elastic_sigma", &a.elastic_sigma},
      {"elastic_alpha", &a.elastic_alpha},
      {"elastic_grid", &a.elastic_grid},
      {"sharpen_prob", &a.sharpen_prob},
      {"sharpen_amount", &a.sharpen_amount},
      {"contrast_prob", &a.contrast_prob},
      {"contrast_clip", &a.contrast_clip},
      {"epochs", &t.epochs},
      {"batch_size", &t.batch_size},
      {"lr", &t.lr},
      {"beta1", &t.beta1},
      {"beta2", &t.beta2},
      {"adam_epsilon", &t.adam_epsilon},
      {"split_ratio", &t.split_ratio},
      {"seed", &t.seed},
      {"top_k", &t.top_k},
      {"augment", &t.augment},
      {"save_optimizer_state", &t.save_optimizer_state},
  };
}

}  // namespace

void apply_config_entry(RunConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "input_size") {  // shorthand for a square input
    cfg.model.input_height = cfg.model.input_width = parse_number<std::int64_t>(key, value);
    return;
  }
  for (auto& [name, field] : fields(cfg)) {
    if (name != key) continue;
    std::visit(
        [&](auto* p) {
          using P = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<P, bool>)
            *p = parse_bool(key, value);
          else if constexpr (std::is_same_v<P, Variant>)
            *p = parse_variant(value);
          else if constexpr (std::is_same_v<P, std::vector<int>>)
            *p = parse_list<int>(key, value);
          else if constexpr (std::is_same_v<P, std::vector<double>>)
            *p = parse_list<double>(key, value);
          else
            *p = parse_number<P>(key, value);
        },
        field);
    return;
  }
  fail(ErrorKind::InvalidConfig, "unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config_text(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::InvalidConfig, "config line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_config_entry(base, trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    } catch (const Error& e) {
      fail(e.kind(), "config line " + std::to_string(lineno) + ": " + e.detail());
    }
  }
  base.validate();
  return base;
}

std::string format_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  for (auto& [name, field] : fields(copy)) {
    out += name + " = ";
    std::visit(
        [&](auto* p) {
          using P = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<P, bool>)
            out += *p ? "true" : "false";
          else if constexpr (std::is_same_v<P, Variant>)
            out += variant_name(*p);
          else if constexpr (std::is_same_v<P, std::vector<int>> || std::is_same_v<P, std::vector<double>>)
            out += fmt_list(*p);
          else if constexpr (std::is_floating_point_v<P>)
            out += fmt_double(*p);
          else
            out += std::to_string(*p);
        },
        field);
    out += "\n";
  }
  return out;
}

std::string model_config_to_json(const ModelConfig& c) {
  json j = {
      {"num_classes", c.num_classes},
      {"stages", c.stages},
      {"base_channels", c.base_channels},
      {"stem_strides", c.stem_strides},
      {"pyramid_fuse_kernel", c.pyramid_fuse_kernel},
      {"deep_supervision_weights", c.deep_supervision_weights},
      {"input_height", c.input_height},
      {"input_width", c.input_width},
      {"variant", variant_name(c.variant)},
      {"aux_inference", c.aux_inference},
  };
  return j.dump();
}

ModelConfig model_config_from_json(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = json::parse(text);
    c.num_classes = j.at("num_classes").get<int>();
    c.stages = j.at("stages").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.stem_strides = j.at("stem_strides").get<std::vector<int>>();
    c.pyramid_fuse_kernel = j.at("pyramid_fuse_kernel").get<int>();
    c.deep_supervision_weights = j.at("deep_supervision_weights").get<std::vector<double>>();
    c.input_height = j.at("input_height").get<std::int64_t>();
    c.input_width = j.at("input_width").get<std::int64_t>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.aux_inference = j.at("aux_inference").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptEntry, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace csegnet
