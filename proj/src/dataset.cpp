#include "csegnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <set>

#include "csegnet/io.hpp"

namespace csegnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view phase_name(Phase phase) { return phase == Phase::ED ? "ED" : "ES"; }

Phase parse_phase(std::string_view text) {
  if (text == "ED" || text == "ed") return Phase::ED;
  if (text == "ES" || text == "es") return Phase::ES;
  fail(ErrorKind::CorruptEntry, "unknown cardiac phase '" + std::string(text) + "'");
}

Dims3 Case::dims() const { return Dims3{image.dim(0), image.dim(1), image.dim(2)}; }

std::string Case::key() const { return case_id + "_" + std::string(phase_name(phase)); }

void Case::validate() const {
  if (image.rank() != 3) fail(ErrorKind::ShapeMismatch, "case image must be (D,H,W), got " + shape_str(image.shape()));
  require(static_cast<std::int64_t>(label.size()) == image.numel(), ErrorKind::ShapeMismatch,
          "case " + key() + ": label size differs from image size");
  require(spacing.slice > 0 && spacing.row > 0 && spacing.col > 0 && std::isfinite(spacing.voxel_volume_mm3()),
          ErrorKind::InvalidGeometry, "case " + key() + ": spacing must be positive");
  for (auto v : label)
    if (v >= kNumCardiacClasses) fail(ErrorKind::CorruptEntry, "case " + key() + ": label value " + std::to_string(v));
}

fs::path write_native(const Case& c, const fs::path& dataset_dir) {
  c.validate();
  const auto dir = dataset_dir / c.key();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const auto d = c.dims();
  json meta = {
      {"case_id", c.case_id},
      {"phase", phase_name(c.phase)},
      {"dims", {d.depth, d.height, d.width}},
      {"spacing", {c.spacing.slice, c.spacing.row, c.spacing.col}},
      {"dtype", {{"image", "f32"}, {"label", "u8"}}},
  };
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
  write_f32_le(dir / "image.f32", c.image.data());
  write_binary_file(dir / "label.u8", c.label);
  return dir;
}

Case read_native(const fs::path& case_dir) {
  json meta;
  try {
    meta = json::parse(read_text_file(case_dir / "meta.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptEntry, (case_dir / "meta.json").string() + ": " + e.what());
  }
  Case c;
  try {
    c.case_id = meta.at("case_id").get<std::string>();
    c.phase = parse_phase(meta.at("phase").get<std::string>());
    const auto dims = meta.at("dims").get<std::vector<std::int64_t>>();
    const auto sp = meta.at("spacing").get<std::vector<double>>();
    require(dims.size() == 3 && sp.size() == 3, ErrorKind::CorruptEntry, "dims and spacing must have 3 entries");
    for (auto v : dims) require(v >= 1 && v <= (1 << 16), ErrorKind::CorruptEntry, "dimension out of range");
    c.spacing = Spacing{sp[0], sp[1], sp[2]};
    const Shape shape{dims[0], dims[1], dims[2]};
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    auto pixels = read_f32_le(case_dir / "image.f32");
    if (pixels.size() != n)
      fail(ErrorKind::CorruptEntry, (case_dir / "image.f32").string() + ": expected " + std::to_string(n) + " voxels");
    c.image = Tensor(shape, std::move(pixels));
    c.label = read_binary_file(case_dir / "label.u8");
    if (c.label.size() != n)
      fail(ErrorKind::CorruptEntry, (case_dir / "label.u8").string() + ": expected " + std::to_string(n) + " voxels");
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptEntry, (case_dir / "meta.json").string() + ": " + e.what());
  }
  c.validate();
  return c;
}

std::vector<Case> load_dataset(const fs::path& dataset_dir) {
  std::error_code ec;
  if (!fs::is_directory(dataset_dir, ec)) fail(ErrorKind::Io, dataset_dir.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dataset_dir))
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Case> cases;
  cases.reserve(dirs.size());
  for (const auto& d : dirs) cases.push_back(read_native(d));
  return cases;
}

Split split_train_val(std::vector<std::string> case_ids, double ratio, std::uint64_t seed) {
  std::sort(case_ids.begin(), case_ids.end());
  case_ids.erase(std::unique(case_ids.begin(), case_ids.end()), case_ids.end());
  const auto n = static_cast<std::int64_t>(case_ids.size());
  if (n < 2) fail(ErrorKind::TooFewCases, "need at least 2 distinct cases to split, got " + std::to_string(n));
  require(ratio > 0.0 && ratio < 1.0, ErrorKind::InvalidConfig, "split ratio must be in (0,1)");
  std::mt19937_64 rng(seed);
  std::shuffle(case_ids.begin(), case_ids.end(), rng);
  auto n_train = static_cast<std::int64_t>(std::llround(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::int64_t>(n_train, 1, n - 1);
  Split s;
  s.train.assign(case_ids.begin(), case_ids.begin() + n_train);
  s.val.assign(case_ids.begin() + n_train, case_ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

}  // namespace csegnet
