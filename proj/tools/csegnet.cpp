// csegnet: phantom / train / predict / evaluate / convert / gradcheck / summary.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csegnet/config.hpp"
#include "csegnet/dataset.hpp"
#include "csegnet/error.hpp"
#include "csegnet/gradsuite.hpp"
#include "csegnet/io.hpp"
#include "csegnet/model.hpp"
#include "csegnet/nifti.hpp"
#include "csegnet/phantom.hpp"
#include "csegnet/report.hpp"
#include "csegnet/trainer.hpp"
#include "csegnet/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace csegnet;

namespace {

constexpr const char* kReportSchema = R"(
Report CSV (one row per case, phase and foreground class):
  case_id         patient identifier
  phase           ED | ES
  class           RVC | LVM | LVC
  dice            3-D Dice overlap in [0,1]; 1 when both masks are empty
  hausdorff_mm    symmetric 3-D Hausdorff distance in mm; NA when either mask is empty
  volume_pred_ml  predicted structure volume in ml
  volume_true_ml  reference structure volume in ml
The summary table (stdout and <report>_summary.txt) lists mean Dice / Hausdorff per
class and phase, and correlation / bias of EF, EDV, ESV and myocardial mass.)";

json config_json(const RunConfig& cfg) {
  json j = json::object();
  const auto text = format_config(cfg);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    if (auto eq = line.find(" = "); eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
    pos = nl + 1;
  }
  return j;
}

/// Written before any long computation so an interrupted run is still described.
void write_manifest(const fs::path& path, const std::string& subcommand, const json& config,
                    std::optional<std::uint64_t> seed, const json& inputs, const json& outputs) {
  json m = {{"subcommand", subcommand},
            {"config", config},
            {"seed", seed ? json(*seed) : json(nullptr)},
            {"inputs", inputs},
            {"outputs", outputs},
            {"version", kVersion}};
  write_text_file(path, m.dump(2) + "\n");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
}

RunConfig resolve_config(const std::string& config_file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!config_file.empty()) cfg = parse_config_text(read_text_file(config_file));
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Usage, "--set expects key=value, got '" + kv + "'");
    apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::vector<fs::path> checkpoint_paths(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    if (fs::is_directory(a)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(a))
        if (e.path().extension() == ".cseg") found.push_back(e.path());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.emplace_back(a);
    }
  }
  if (out.empty()) fail(ErrorKind::Usage, "no checkpoints given");
  if (out.size() > 5) fail(ErrorKind::Usage, "at most 5 checkpoints may be ensembled, got " + std::to_string(out.size()));
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- subcommands ---------------------------------------------------------------

struct PhantomArgs {
  std::string out;
  std::int64_t count = 20;
  PhantomConfig cfg;
};

int run_phantom(const PhantomArgs& a) {
  a.cfg.validate();
  if (a.count < 0) fail(ErrorKind::Usage, "--count must be >= 0");
  const fs::path out = a.out;
  make_dir(out);
  const json gen_cfg = {{"size", a.cfg.size}, {"depth", a.cfg.depth}, {"seed", a.cfg.seed}, {"count", a.count},
                        {"slice_spacing_mm", a.cfg.slice_spacing_mm}, {"pixel_spacing_mm", a.cfg.pixel_spacing_mm},
                        {"noise_sigma", a.cfg.noise_sigma}};
  write_manifest(out / "manifest.json", "phantom", gen_cfg, a.cfg.seed, json::object(),
                 {{"dataset", out.string()}, {"generator", (out / "generator.json").string()}});

  const auto cases = generate_phantom(a.cfg, a.count);
  json rows = json::array();
  for (const auto& pc : cases) {
    write_native(pc.ed, out);
    write_native(pc.es, out);
    rows.push_back({{"case_id", pc.ed.case_id},
                    {"target_ef", pc.target_ef},
                    {"target_rv_ef", pc.target_rv_ef},
                    {"lvc_ed_ml", pc.lvc_ed_ml},
                    {"lvc_es_ml", pc.lvc_es_ml},
                    {"rvc_ed_ml", pc.rvc_ed_ml},
                    {"rvc_es_ml", pc.rvc_es_ml},
                    {"lvm_ed_ml", pc.lvm_ed_ml},
                    {"lvm_es_ml", pc.lvm_es_ml},
                    {"lvc_ef", pc.lvc_ed_ml > 0 ? 100.0 * (pc.lvc_ed_ml - pc.lvc_es_ml) / pc.lvc_ed_ml : 0.0},
                    {"rvc_ef", pc.rvc_ed_ml > 0 ? 100.0 * (pc.rvc_ed_ml - pc.rvc_es_ml) / pc.rvc_ed_ml : 0.0}});
  }
  write_text_file(out / "generator.json", json{{"config", gen_cfg}, {"cases", rows}}.dump(2) + "\n");
  std::printf("wrote %lld phantom patients (%lld cases) to %s\n", static_cast<long long>(a.count),
              static_cast<long long>(2 * a.count), out.string().c_str());
  return 0;
}

struct TrainArgs {
  std::string data, out, config;
  std::vector<std::string> set;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = resolve_config(a.config, a.set);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();
  const fs::path out = a.out;
  make_dir(out);
  write_text_file(out / "config.txt", format_config(cfg));
  write_manifest(out / "manifest.json", "train", config_json(cfg), cfg.train.seed, {{"data", a.data}},
                 {{"dir", out.string()}, {"log", (out / "training_log.csv").string()}});

  const auto cases = load_dataset(a.data);
  const auto t0 = std::chrono::steady_clock::now();
  TrainHooks hooks;
  if (!a.quiet)
    hooks.on_epoch = [&](const EpochLog& e) {
      std::printf("epoch %3d  loss %.5f  dice rvc %.4f lvm %.4f lvc %.4f mean %.4f  (%.0fs)\n", e.epoch, e.train_loss,
                  e.val_dice[0], e.val_dice[1], e.val_dice[2], e.val_dice_mean, seconds_since(t0));
      std::fflush(stdout);
    };
  const auto result = train(cfg, cases, out, hooks);

  json kept = json::array();
  for (const auto& e : result.registry.entries())
    kept.push_back({{"epoch", e.epoch}, {"val_dice", e.score}, {"path", e.path.filename().string()}});
  write_text_file(out / "topk.json",
                  json{{"entries", kept},
                       {"split", {{"train", result.split.train}, {"val", result.split.val}}},
                       {"rejected_steps", result.rejected_steps}}
                          .dump(2) + "\n");
  std::printf("kept %zu checkpoint(s) in %s\n", result.registry.size(), out.string().c_str());
  return 0;
}

struct PredictArgs {
  std::vector<std::string> ckpt;
  std::string in, out;
  int batch_size = 8;
};

int run_predict(const PredictArgs& a) {
  if (a.batch_size < 1) fail(ErrorKind::Usage, "--batch-size must be >= 1");
  const auto paths = checkpoint_paths(a.ckpt);
  const fs::path out = a.out;
  make_dir(out);
  json ckpts = json::array();
  for (const auto& p : paths) ckpts.push_back(p.string());
  write_manifest(out / "manifest.json", "predict", {{"batch_size", a.batch_size}}, std::nullopt,
                 {{"checkpoints", ckpts}, {"data", a.in}}, {{"dir", out.string()}});

  std::vector<Checkpoint> loaded;
  for (const auto& p : paths) loaded.push_back(load_checkpoint(p));
  std::vector<const Checkpoint*> members;
  for (const auto& c : loaded) members.push_back(&c);
  const auto cases = load_dataset(a.in);
  for (const auto& c : cases) write_native(predict_case(members, c, a.batch_size), out);
  std::printf("segmented %zu case(s) with a %zu-member ensemble into %s\n", cases.size(), members.size(),
              out.string().c_str());
  return 0;
}

struct EvaluateArgs {
  std::string pred, truth, out;
};

int run_evaluate(const EvaluateArgs& a) {
  const fs::path out = a.out;
  if (out.has_parent_path()) make_dir(out.parent_path());
  const auto stem = out.parent_path() / out.stem();
  const auto summary_path = fs::path(stem.string() + "_summary.txt");
  write_manifest(stem.string() + "_manifest.json", "evaluate", json::object(), std::nullopt,
                 {{"pred", a.pred}, {"truth", a.truth}}, {{"report", out.string()}, {"summary", summary_path.string()}});

  const auto report = evaluate_cases(load_dataset(a.pred), load_dataset(a.truth));
  write_text_file(out, report.to_csv());
  const auto summary = report.summary();
  write_text_file(summary_path, summary);
  std::fputs(summary.c_str(), stdout);
  return 0;
}

struct ConvertArgs {
  std::string nifti, label, id, phase = "ED", out;
};

int run_convert(const ConvertArgs& a) {
  const fs::path out = a.out;
  make_dir(out);
  const std::string id = a.id.empty() ? fs::path(a.nifti).stem().stem().string() : a.id;
  write_manifest(out / "manifest.json", "convert", {{"case_id", id}, {"phase", a.phase}}, std::nullopt,
                 {{"image", a.nifti}, {"label", a.label.empty() ? json(nullptr) : json(a.label)}},
                 {{"dir", out.string()}});
  const auto image = read_nifti(a.nifti);
  std::optional<NiftiVolume> label;
  if (!a.label.empty()) label = read_nifti(a.label);
  const auto c = case_from_nifti(image, label ? &*label : nullptr, id, parse_phase(a.phase));
  const auto dir = write_native(c, out);
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

struct GradcheckArgs {
  GradSuiteOptions opt;
  double tol = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = run_gradient_suite(a.opt);
  int failures = 0;
  for (const auto& e : entries) {
    const bool ok = e.max_rel_error < a.tol;
    failures += !ok;
    std::printf("%-4s %-15s %.3e  %s\n", ok ? "ok" : "FAIL", e.op.c_str(), e.max_rel_error, e.detail.c_str());
  }
  std::printf("%zu probes, %d above %.1e, %.1fs\n", entries.size(), failures, a.tol, seconds_since(t0));
  if (failures) {
    std::fprintf(stderr, "csegnet: error kind=GradientTolerance class=numeric message=\"%d probe(s) exceed %.1e\"\n",
                 failures, a.tol);
    return static_cast<int>(ErrorClass::Numeric);
  }
  return 0;
}

struct SummaryArgs {
  std::string config;
  std::vector<std::string> set;
  std::uint64_t seed = 0;
};

int run_summary(const SummaryArgs& a) {
  const auto cfg = resolve_config(a.config, a.set);
  std::fputs(architecture_summary(cfg.model, build(cfg.model, a.seed)).c_str(), stdout);
  return 0;
}

std::string json_quote(const std::string& s) { return json(s).dump(); }

int report_error(ErrorKind kind, const std::string& message) {
  const auto cls = error_class(kind);
  static const std::map<ErrorClass, const char*> names{{ErrorClass::Usage, "usage"},
                                                       {ErrorClass::Data, "data"},
                                                       {ErrorClass::Numeric, "numeric"},
                                                       {ErrorClass::Internal, "internal"}};
  std::fprintf(stderr, "csegnet: error kind=%s class=%s message=%s\n", std::string(kind_name(kind)).c_str(),
               names.at(cls), json_quote(message).c_str());
  return static_cast<int>(cls);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac MRI segmentation: synthetic data, training, ensembling and evaluation."};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.footer("Exit codes: 0 ok, 1 usage, 2 data, 3 numeric, 4 internal. Run `csegnet <command> --help` for details.");
  std::function<int()> action;

  PhantomArgs phantom;
  auto* ph = app.add_subcommand("phantom", "Generate synthetic ED/ES cardiac volumes with known ground truth");
  ph->add_option("--out", phantom.out, "Output dataset directory")->required();
  ph->add_option("--count", phantom.count, "Number of patients (each an ED/ES pair)")->capture_default_str();
  ph->add_option("--size", phantom.cfg.size, "In-plane size in pixels")->capture_default_str();
  ph->add_option("--depth", phantom.cfg.depth, "Slices per volume")->capture_default_str();
  ph->add_option("--seed", phantom.cfg.seed, "Generator seed")->capture_default_str();
  ph->add_option("--noise", phantom.cfg.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  ph->callback([&] { action = [&] { return run_phantom(phantom); }; });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model with top-k checkpoint retention");
  t->add_option("--data", tr.data, "Native-format dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory for checkpoints, log and manifest")->required();
  t->add_option("--config", tr.config, "key = value config file (see `csegnet summary`)");
  t->add_option("--set", tr.set, "Override a config key, e.g. --set lr=0.0005 (repeatable)");
  t->add_option("--epochs", tr.epochs, "Override epochs (default 15)");
  t->add_option("--seed", tr.seed, "Override the master seed (default 0)");
  t->add_flag("--quiet", tr.quiet, "Do not print per-epoch progress");
  t->callback([&] { action = [&] { return run_train(tr); }; });

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Segment a dataset with an ensemble of 1-5 checkpoints");
  p->add_option("--ckpt", pr.ckpt, "Checkpoint files, or a directory of *.cseg files")->required();
  p->add_option("--in", pr.in, "Native-format dataset to segment")->required();
  p->add_option("--out", pr.out, "Output dataset directory (labels replaced by predictions)")->required();
  p->add_option("--batch-size", pr.batch_size, "Slices per forward pass")->capture_default_str();
  p->callback([&] { action = [&] { return run_predict(pr); }; });

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Compare predicted and reference label volumes");
  e->add_option("--pred", ev.pred, "Predicted dataset directory")->required();
  e->add_option("--truth", ev.truth, "Reference dataset directory")->required();
  e->add_option("--out", ev.out, "Report CSV path")->required();
  e->footer(kReportSchema);
  e->callback([&] { action = [&] { return run_evaluate(ev); }; });

  ConvertArgs cv;
  auto* c = app.add_subcommand("convert", "Convert a NIfTI-1 volume (and optional label) to the native format");
  c->add_option("--nifti", cv.nifti, "Image volume (.nii or .hdr/.img)")->required();
  c->add_option("--label", cv.label, "Label volume with values 0..3");
  c->add_option("--id", cv.id, "Case id (default: file stem)");
  c->add_option("--phase", cv.phase, "ED or ES")->capture_default_str();
  c->add_option("--out", cv.out, "Output dataset directory")->required();
  c->callback([&] { action = [&] { return run_convert(cv); }; });

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op (64-bit)");
  g->add_option("--shapes", gc.opt.shapes_per_op, "Random shapes per op")->capture_default_str();
  g->add_option("--step", gc.opt.h, "Central-difference step")->capture_default_str();
  g->add_option("--tol", gc.tol, "Max relative error")->capture_default_str();
  g->add_option("--seed", gc.opt.seed, "Probe seed")->capture_default_str();
  g->callback([&] { action = [&] { return run_gradcheck(gc); }; });

  SummaryArgs sm;
  auto* s = app.add_subcommand("summary", "Print the layer table and parameter count of a configuration");
  s->add_option("--config", sm.config, "key = value config file");
  s->add_option("--set", sm.set, "Override a config key (repeatable)");
  s->add_option("--seed", sm.seed, "Initialization seed")->capture_default_str();
  s->callback([&] { action = [&] { return run_summary(sm); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    return report_error(ErrorKind::Usage, err.what());
  }

  try {
    return action();
  } catch (const Error& err) {
    return report_error(err.kind(), err.detail());
  } catch (const fs::filesystem_error& err) {
    return report_error(ErrorKind::Io, err.what());
  } catch (const std::exception& err) {
    return report_error(ErrorKind::Internal, err.what());
  }
}
