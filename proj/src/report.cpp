#include "csegnet/report.hpp"

#include <cmath>
#include <cstdio>
#include <map>

namespace csegnet {

std::string_view structure_name(int label) {
  switch (label) {
    case kRvc: return "RVC";
    case kLvm: return "LVM";
    case kLvc: return "LVC";
    default: return "BG";
  }
}

namespace {

std::vector<std::uint8_t> mask_of(const std::vector<std::uint8_t>& labels, int label) {
  std::vector<std::uint8_t> m(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) m[i] = labels[i] == label;
  return m;
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, const char* spec = "%.6f") { return v ? fmt(*v, spec) : "NA"; }

}  // namespace

MetricsReport evaluate_cases(const std::vector<Case>& pred, const std::vector<Case>& truth) {
  std::map<std::string, const Case*> by_key;
  for (const auto& t : truth) by_key[t.key()] = &t;
  MetricsReport report;

  // per-patient volumes for the cohort indices: [case_id][label][phase]
  std::map<std::string, std::map<int, std::map<Phase, std::pair<double, double>>>> volumes;
  for (const auto& p : pred) {
    auto it = by_key.find(p.key());
    if (it == by_key.end()) fail(ErrorKind::ShapeMismatch, "prediction " + p.key() + " has no ground truth");
    const Case& t = *it->second;
    if (!(p.dims() == t.dims())) fail(ErrorKind::ShapeMismatch, "prediction " + p.key() + " grid differs from truth");
    const auto dims = t.dims();
    for (int label = 1; label <= 3; ++label) {
      const auto pm = mask_of(p.label, label), tm = mask_of(t.label, label);
      ClassPhaseMetrics row;
      row.case_id = t.case_id;
      row.phase = t.phase;
      row.label = label;
      row.dice = dice(pm, tm);
      row.hausdorff_mm = hausdorff_mm(pm, tm, dims, t.spacing);
      row.volume_pred_ml = volume_ml(pm, t.spacing);
      row.volume_true_ml = volume_ml(tm, t.spacing);
      volumes[t.case_id][label][t.phase] = {row.volume_pred_ml, row.volume_true_ml};
      report.rows.push_back(std::move(row));
    }
  }

  auto add_index = [&](const char* structure, const char* quantity, int label, auto value_of) {
    CohortIndex idx{structure, quantity, {}, {}, std::nullopt};
    for (const auto& [id, per_label] : volumes) {
      auto lit = per_label.find(label);
      if (lit == per_label.end()) continue;
      const auto& phases = lit->second;
      auto v = value_of(phases);
      if (!v) continue;
      idx.pred.push_back(v->first);
      idx.truth.push_back(v->second);
    }
    if (idx.pred.size() >= 2) idx.stats = cohort_stats(idx.pred, idx.truth);
    report.cohort.push_back(std::move(idx));
  };
  using Phases = std::map<Phase, std::pair<double, double>>;
  auto ef = [](const Phases& ph) -> std::optional<std::pair<double, double>> {
    auto ed = ph.find(Phase::ED), es = ph.find(Phase::ES);
    if (ed == ph.end() || es == ph.end()) return std::nullopt;
    if (ed->second.first <= 0 || ed->second.second <= 0) return std::nullopt;
    return std::pair{ef_percent(ed->second.first, es->second.first), ef_percent(ed->second.second, es->second.second)};
  };
  auto at_phase = [](Phase phase, double factor) {
    return [phase, factor](const Phases& ph) -> std::optional<std::pair<double, double>> {
      auto it = ph.find(phase);
      if (it == ph.end()) return std::nullopt;
      return std::pair{factor * it->second.first, factor * it->second.second};
    };
  };
  add_index("LVC", "EF", kLvc, ef);
  add_index("LVC", "EDV", kLvc, at_phase(Phase::ED, 1.0));
  add_index("RVC", "EF", kRvc, ef);
  add_index("RVC", "EDV", kRvc, at_phase(Phase::ED, 1.0));
  add_index("LVM", "ESV", kLvm, at_phase(Phase::ES, 1.0));
  add_index("LVM", "mass_ED", kLvm, at_phase(Phase::ED, kMyocardialDensity));
  return report;
}

std::string MetricsReport::to_csv() const {
  std::string out = "case_id,phase,class,dice,hausdorff_mm,volume_pred_ml,volume_true_ml\n";
  for (const auto& r : rows) {
    out += r.case_id + "," + std::string(phase_name(r.phase)) + "," + std::string(structure_name(r.label)) + "," +
           fmt(r.dice, "%.9g") + "," + fmt_opt(r.hausdorff_mm, "%.9g") + "," + fmt(r.volume_pred_ml, "%.9g") + "," +
           fmt(r.volume_true_ml, "%.9g") + "\n";
  }
  return out;
}

double MetricsReport::mean_dice(int label, std::optional<Phase> phase) const {
  double sum = 0;
  int n = 0;
  for (const auto& r : rows)
    if (r.label == label && (!phase || r.phase == *phase)) {
      sum += r.dice;
      ++n;
    }
  return n ? sum / n : std::nan("");
}

const CohortIndex* MetricsReport::index(const std::string& structure, const std::string& quantity) const {
  for (const auto& c : cohort)
    if (c.structure == structure && c.quantity == quantity) return &c;
  return nullptr;
}

std::string MetricsReport::summary() const {
  auto mean_hd = [&](int label, Phase phase) -> std::optional<double> {
    double sum = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.label == label && r.phase == phase && r.hausdorff_mm) {
        sum += *r.hausdorff_mm;
        ++n;
      }
    if (!n) return std::nullopt;
    return sum / n;
  };
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-5s %9s %9s %11s %11s   %-8s %8s %9s\n", "", "Dice ED", "Dice ES", "HD ED (mm)",
                "HD ES (mm)", "index", "corr", "bias");
  out += line;
  for (int label : {kLvc, kRvc, kLvm}) {
    const auto name = std::string(structure_name(label));
    std::vector<const CohortIndex*> idx;
    for (const auto& c : cohort)
      if (c.structure == name) idx.push_back(&c);
    for (std::size_t i = 0; i < std::max<std::size_t>(idx.size(), 1); ++i) {
      std::string left(49, ' ');
      if (i == 0) {
        std::snprintf(line, sizeof line, "%-5s %9s %9s %11s %11s", name.c_str(), fmt(mean_dice(label, Phase::ED), "%.3f").c_str(),
                      fmt(mean_dice(label, Phase::ES), "%.3f").c_str(), fmt_opt(mean_hd(label, Phase::ED), "%.2f").c_str(),
                      fmt_opt(mean_hd(label, Phase::ES), "%.2f").c_str());
        left = line;
      }
      std::string right;
      if (i < idx.size()) {
        const auto* c = idx[i];
        std::snprintf(line, sizeof line, "   %-8s %8s %9s", c->quantity.c_str(),
                      c->stats ? fmt_opt(c->stats->corr, "%.3f").c_str() : "NA",
                      c->stats ? fmt(c->stats->bias, "%.3f").c_str() : "NA");
        right = line;
      }
      out += left + right + "\n";
    }
  }
  return out;
}

}  // namespace csegnet
