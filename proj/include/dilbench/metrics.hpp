#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace dilbench {

// Mann-Whitney statistic P(s+ > s-) + P(tie)/2, average ranks for ties.
double auc_roc(std::span<const double> scores, std::span<const double> labels);

// Area under the precision-recall step curve: sum over distinct thresholds
// (descending) of precision * recall increment.
double auc_pr(std::span<const double> scores, std::span<const double> labels);

struct MacroMicro {
  double macro = 0.0;
  double micro = 0.0;
  // Columns skipped from the macro average (only one class present).
  std::vector<std::size_t> skipped;
};

// Row-major n x k score and label matrices.
MacroMicro macro_micro_auc(std::span<const double> scores, std::span<const double> labels, std::size_t columns);

enum class KappaWeighting { none, linear };

double cohen_kappa(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
                   KappaWeighting weighting = KappaWeighting::linear, std::size_t classes = 10);

enum class MadUnits { class_index, hours };

// Mean absolute deviation between LOS classes. Hour units compare the class
// midpoints 12, 36, ..., 180, 264, 420.
double mad(std::span<const std::size_t> predicted, std::span<const std::size_t> truth,
           MadUnits units = MadUnits::class_index);
double los_class_midpoint(std::size_t cls);

// Per-source average over the first s sources.
double psa(std::span<const double> per_source, std::size_t s);

}  // namespace dilbench
