#pragma once

#include <optional>
#include <string>
#include <vector>

#include "csegnet/dataset.hpp"
#include "csegnet/metrics.hpp"

namespace csegnet {

struct ClassPhaseMetrics {
  std::string case_id;
  Phase phase = Phase::ED;
  int label = 0;  // 1 RVC, 2 LVM, 3 LVC
  double dice = 0.0;
  std::optional<double> hausdorff_mm;  // undefined when either mask is empty
  double volume_pred_ml = 0.0;
  double volume_true_ml = 0.0;
};

/// One clinical index compared across the cohort (e.g. LVC ejection fraction).
struct CohortIndex {
  std::string structure;  // "LVC", "RVC", "LVM"
  std::string quantity;   // "EF", "EDV", "ESV", "mass_ED"
  std::vector<double> pred;
  std::vector<double> truth;
  std::optional<CohortStats> stats;  // needs at least two patients
};

struct MetricsReport {
  std::vector<ClassPhaseMetrics> rows;
  std::vector<CohortIndex> cohort;

  /// case_id,phase,class,dice,hausdorff_mm,volume_pred_ml,volume_true_ml
  std::string to_csv() const;
  /// Per-structure Dice/Hausdorff by phase followed by cohort correlation and bias.
  std::string summary() const;

  double mean_dice(int label, std::optional<Phase> phase = std::nullopt) const;
  const CohortIndex* index(const std::string& structure, const std::string& quantity) const;
};

std::string_view structure_name(int label);

/// Pairs predictions with ground truth by case key. Throws ShapeMismatch for
/// unmatched keys or differing grids.
MetricsReport evaluate_cases(const std::vector<Case>& pred, const std::vector<Case>& truth);

}  // namespace csegnet
