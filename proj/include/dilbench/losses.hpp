#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "dilbench/seq_model.hpp"
#include "dilbench/tasks.hpp"
#include "dilbench/tensor.hpp"

namespace dilbench {

// Probabilities are clamped to [eps, 1 - eps] before any log.
inline constexpr double kProbabilityFloor = 1e-12;

// -(1/N) sum [y log p + (1-y) log(1-p)] over all entries.
double bce_loss(std::span<const double> probs, std::span<const double> targets);

// Per-class binary form over rows of `classes` probabilities:
//   -(1/N) sum_n sum_c [y_nc log p_nc + (1 - y_nc) log(1 - p_nc)]
// with one-hot y. Rows must sum to 1 within 1e-9.
double ce_loss(std::span<const double> probs, std::span<const double> one_hot, std::size_t classes);
double ce_loss(std::span<const double> probs, std::span<const std::size_t> targets, std::size_t classes);
// -(1/N) sum_n log p_n,y_n
double categorical_log_loss(std::span<const double> probs, std::span<const std::size_t> targets,
                            std::size_t classes);

enum class LosLoss { per_class_binary, categorical };

struct LossOptions {
  LosLoss los = LosLoss::per_class_binary;
};

// Recorded losses (value and gradient w.r.t. `probs` fused into one node).
Var bce_loss(Tape& tape, Var probs, std::span<const double> targets);
Var ce_loss(Tape& tape, Var probs, std::span<const std::size_t> targets, LosLoss form = LosLoss::per_class_binary);

// Units packed into one padded batch plus the (sample, step) position of every
// label in unit order.
struct UnitBatch {
  TaskKind task = TaskKind::ihm;
  SequenceBatch batch;
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  std::vector<double> targets;  // per label; phenotyping: 25 per sample
};

UnitBatch make_unit_batch(std::span<const SampleUnit> units);

// Mean task loss of `model` over every label in the batch.
Var task_loss(Tape& tape, SequenceModel& model, const UnitBatch& batch, Mode mode, Rng& rng,
              const LossOptions& options = {});

}  // namespace dilbench
