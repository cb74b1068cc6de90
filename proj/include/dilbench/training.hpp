#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dilbench/losses.hpp"
#include "dilbench/seq_model.hpp"
#include "dilbench/strategies.hpp"
#include "dilbench/tasks.hpp"

namespace dilbench {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  AdamConfig config;

  AdamState() = default;
  AdamState(std::size_t parameter_count, AdamConfig cfg)
      : m(parameter_count, 0.0), v(parameter_count, 0.0), config(cfg) {}
};

// Bias-corrected Adam update of `params` in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

struct TrainConfig {
  TaskKind task = TaskKind::ihm;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  // Labels used per epoch (hourly labels for per-step tasks).
  std::optional<std::size_t> sample_cap;
  AdamConfig adam;
  std::uint64_t seed = 0;
  LossOptions loss;

  void validate() const;
};

// Deterministic subset of `units` holding exactly min(cap, total) labels; a
// per-step episode straddling the cap keeps only its first labels.
std::vector<SampleUnit> cap_units(const std::vector<SampleUnit>& units, std::optional<std::size_t> cap,
                                  std::uint64_t seed);

struct Predictions {
  TaskKind task = TaskKind::ihm;
  std::size_t width = 1;
  std::vector<double> scores;   // labels x width
  std::vector<double> targets;  // labels (phenotyping: labels x 25)
};

// Eval-mode scores for every label of every unit.
Predictions predict_units(const SequenceModel& model, const std::vector<SampleUnit>& units,
                          std::size_t batch_size = 32);

struct MetricValue {
  std::string name;
  double value = 0.0;
};

// Primary metric first: auc_roc/auc_pr (ihm, decompensation),
// macro_auc/micro_auc (phenotyping), kappa/mad (los).
std::vector<MetricValue> task_metrics(const Predictions& predictions);
std::string primary_metric(TaskKind task);

struct ValidationSet {
  std::string name;
  std::size_t source = 0;
  std::vector<SampleUnit> units;
};

struct ValidationRecord {
  std::size_t source = 0;  // source being trained
  std::size_t epoch = 0;
  std::string evaluated;   // validation set name
  std::string metric;
  double value = 0.0;
};

struct TrainResult {
  std::vector<ValidationRecord> log;
  // Units trained on (after the sample cap).
  std::vector<SampleUnit> units;
  std::size_t steps = 0;
  std::size_t labels_per_epoch = 0;
  double final_epoch_loss = 0.0;
};

// Trains on one source: seeded shuffle per epoch, batches, strategy-weighted
// loss, Adam. Every validation set is scored after each epoch (eval mode).
// Each record is also written as a JSON line to `log` when given.
TrainResult train_on_source(SequenceModel& model, const std::vector<SampleUnit>& source, std::size_t source_index,
                            const TrainConfig& config, StrategyState& strategy,
                            const std::vector<ValidationSet>& validation, std::ostream* log = nullptr);

// Mean task loss over `units` in eval mode.
double evaluate_loss(const SequenceModel& model, const std::vector<SampleUnit>& units, const LossOptions& options = {},
                     std::size_t batch_size = 32);

}  // namespace dilbench
