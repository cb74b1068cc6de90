#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dilbench/cohort.hpp"
#include "dilbench/schema.hpp"
#include "dilbench/seq_model.hpp"
#include "dilbench/strategies.hpp"
#include "dilbench/tasks.hpp"
#include "dilbench/training.hpp"

namespace dilbench {

// Per-task protocol constants and model defaults.
struct TaskDefaults {
  std::size_t buffer_capacity = 500;
  double importance = 6.0;
  std::size_t epochs = 1;
  std::size_t hidden_width = 16;
  std::size_t num_layers = 1;
  bool bidirectional = false;
};

TaskDefaults task_defaults(TaskKind task);

// Labels per epoch for a source: whole-stay tasks use every sample; the
// per-step tasks cap MIMIC-III, South and Midwest at 100k, West at 50k and
// Northeast at 25k.
std::optional<std::size_t> region_sample_cap(TaskKind task, const std::string& region);

struct ExperimentConfig {
  TaskKind task = TaskKind::ihm;
  Method method = Method::baseline;
  std::vector<std::string> sources = {"MIMIC-III", "South"};
  std::size_t seeds = 5;
  std::uint64_t seed = 1;

  std::size_t epochs = 4;
  std::size_t batch_size = 8;
  // 0 = per-region default (region_sample_cap).
  std::size_t sample_cap = 0;
  double learning_rate = 1e-3;

  std::size_t hidden_width = 16;
  std::size_t num_layers = 2;
  bool bidirectional = true;
  double dropout = 0.3;

  std::size_t buffer_capacity = 500;
  double importance = 6.0;
  FisherMode fisher = FisherMode::per_sample;
  LosLoss los_loss = LosLoss::per_class_binary;

  // Synthetic data; a profile file <profile_dir>/<source>.profile replaces the
  // built-in profile of that name. With ingest_dir set, episodes are read from
  // <ingest_dir>/<source>/ instead.
  std::uint64_t data_seed = 2024;
  std::size_t cohort_size = 0;  // 0 = profile value
  std::optional<double> shift;  // applied to every source after the first
  std::filesystem::path profile_dir;
  std::filesystem::path ingest_dir;
  std::filesystem::path schema_file;
  std::filesystem::path normal_values_file;

  std::vector<std::size_t> epochs_grid = {2, 4, 6, 8, 10};
  std::vector<double> importance_grid = {2, 4, 6, 8};

  std::filesystem::path output_dir = "results";

  // Table I values and model defaults for `task`.
  static ExperimentConfig defaults(TaskKind task);
  // "key = value" file; `task` is applied first so its defaults can be overridden.
  static ExperimentConfig load(const std::filesystem::path& path,
                               const std::vector<std::pair<std::string, std::string>>& overrides = {});
  static ExperimentConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);

  void set(const std::string& key, const std::string& value);
  void validate() const;

  [[nodiscard]] SequenceModelConfig model_config() const;
  [[nodiscard]] TrainConfig train_config(std::uint64_t run_seed, const std::string& source) const;
  [[nodiscard]] StrategyConfig strategy_config() const;
  // Run seed of the k-th repetition (seed, seed + 1, ...).
  [[nodiscard]] std::uint64_t run_seed(std::size_t k) const noexcept { return seed + k; }

  // Every field as sorted "key = value" lines; the digest hashes this text.
  [[nodiscard]] std::string canonical() const;
  [[nodiscard]] std::string digest() const;
};

struct PreparedData {
  ChannelSchema schema;
  std::vector<SourceData> sources;
  std::vector<std::vector<ChannelSummary>> distributions;  // per source, training cohort
};

PreparedData prepare_data(const ExperimentConfig& config);

struct MetricEntry {
  std::size_t stage = 0;  // evaluated after training on source `stage` (1-based)
  std::string source;     // evaluated source, or "PSA"
  std::string metric;
  double value = 0.0;
};

struct SeedRecord {
  std::uint64_t seed = 0;
  std::vector<MetricEntry> entries;
  std::vector<ValidationRecord> validation;
};

struct Aggregate {
  std::size_t stage = 0;
  std::string source;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
};

struct ResultsRecord {
  ExperimentConfig config;
  std::vector<SeedRecord> seeds;
  std::vector<Aggregate> aggregates;
  // Evaluations of test splits (one per finished source and seed).
  std::size_t test_reads = 0;

  [[nodiscard]] const Aggregate* find(std::size_t stage, const std::string& source, const std::string& metric) const;
  // PSA of `metric` after the last source.
  [[nodiscard]] const Aggregate& final_psa(const std::string& metric) const;
};

std::vector<Aggregate> aggregate(const std::vector<SeedRecord>& seeds);

enum class EvalSplit { validation, test };

// The sequential protocol for every seed: train on each source in turn, then
// score every source's `split` and the PSA over the sources seen so far.
ResultsRecord run_experiment(const ExperimentConfig& config, const PreparedData& data,
                             EvalSplit split = EvalSplit::test);
ResultsRecord run_experiment(const ExperimentConfig& config);

// Same protocol for several methods; training on the first source is shared
// since no strategy acts before the second source. Results match separate
// run_experiment calls exactly.
std::vector<ResultsRecord> run_methods(const ExperimentConfig& config, const std::vector<Method>& methods,
                                       const PreparedData& data, EvalSplit split = EvalSplit::test);

struct GridCell {
  std::size_t epochs = 0;
  double importance = 0.0;
  double validation_psa = 0.0;
};

struct GridResult {
  std::vector<GridCell> cells;
  GridCell best;
  std::size_t test_reads = 0;
};

// Exhaustive search scored by primary-metric validation PSA after the last
// source (mean over seeds). Ties go to the smaller importance, then fewer
// epochs. The epoch grid is ignored for per-step tasks, which train 1 epoch.
GridResult grid_search(const ExperimentConfig& config, const PreparedData& data);

// results.json, results.csv, summary.csv, validation_log.jsonl and
// distributions/<source>.csv.
void write_results(const ResultsRecord& record, const PreparedData& data, const std::filesystem::path& dir);
void write_grid(const GridResult& grid, const ExperimentConfig& config, const std::filesystem::path& dir);

// "0.864 (0.005)"
std::string format_mean_std(double mean, double std);

struct ReportFiles {
  std::filesystem::path table;
  std::filesystem::path histograms;
  std::size_t rows = 0;
};

// Scans `results_dir` recursively for results.json files and writes a
// method x region table of final PSA values plus merged histogram data.
ReportFiles report_emit(const std::filesystem::path& results_dir, const std::filesystem::path& out_dir);

}  // namespace dilbench
