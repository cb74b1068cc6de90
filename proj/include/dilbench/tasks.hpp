#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dilbench/cohort.hpp"
#include "dilbench/schema.hpp"
#include "dilbench/tensor.hpp"

namespace dilbench {

enum class TaskKind { ihm, decompensation, los, phenotyping };

std::string_view to_string(TaskKind task) noexcept;
TaskKind parse_task(std::string_view name);
// Decompensation and LOS predict at every hour from hour 5 on.
bool is_per_step(TaskKind task) noexcept;
std::size_t output_width(TaskKind task) noexcept;

inline constexpr double kIhmWindowHours = 48.0;
inline constexpr double kMinStayHours = 5.0;
inline constexpr std::size_t kMinRecords = 15;
inline constexpr double kMinAge = 18.0;
inline constexpr std::size_t kLosClasses = 10;

// Drops events outside [0, LOS) and then every episode that fails the task's
// criteria: age < 18, fewer than 15 records, inconsistent discharge labels,
// LOS < 48h (ihm) or LOS < 5h (per-step tasks).
Cohort apply_exclusions(const Cohort& cohort, TaskKind task);

// Hourly bins [k, k+1) for k < horizon. Each bin holds the last value recorded
// in it, else the previous bin's value, else the channel's normal value; the
// mask column is 1 only when a measurement landed in the bin. Values are raw
// (see Normalizer).
Tensor discretize_episode(const EpisodeRecord& episode, const ChannelSchema& schema, std::size_t horizon);

// Remaining-stay class: <24h -> 0, [24d, 24(d+1)) -> d for d=1..7,
// [192, 336) -> 8, >= 336 -> 9.
std::size_t los_class(double remaining_hours) noexcept;

struct TaskSample {
  TaskKind task = TaskKind::ihm;
  Tensor input;  // T x schema width
  // ihm: {mortality}; phenotyping: 25 flags; per-step tasks: one entry per
  // labelled row (see label_rows), a {0,1} flag or a LOS class index.
  std::vector<double> targets;
  // Per-step tasks: row t-1 carries the prediction for hour t = 5..floor(LOS).
  std::vector<std::size_t> label_rows;
  std::string episode;
  std::string patient;
  std::size_t source = 0;

  [[nodiscard]] std::size_t steps() const noexcept { return input.shape().empty() ? 0 : input.shape()[0]; }
  // Number of training units (labels) this sample contributes.
  [[nodiscard]] std::size_t label_count() const noexcept;
};

TaskSample extract_ihm(const EpisodeRecord& episode, const ChannelSchema& schema);
TaskSample extract_decompensation(const EpisodeRecord& episode, const ChannelSchema& schema);
TaskSample extract_los(const EpisodeRecord& episode, const ChannelSchema& schema);
TaskSample extract_phenotyping(const EpisodeRecord& episode, const ChannelSchema& schema);
TaskSample extract_task(const EpisodeRecord& episode, TaskKind task, const ChannelSchema& schema);

using SamplePtr = std::shared_ptr<const TaskSample>;

// A slice of one sample's labels: [label_begin, label_end) indexes targets.
// Whole-stay tasks always use [0, 1); per-step samples may be split so caps
// and buffers count individual hourly labels.
struct SampleUnit {
  SamplePtr sample;
  std::size_t label_begin = 0;
  std::size_t label_end = 0;

  [[nodiscard]] std::size_t labels() const noexcept { return label_end - label_begin; }
  // Input rows needed to score the last label in the slice.
  [[nodiscard]] std::size_t rows_needed() const;
};

// One unit per sample covering all of its labels.
std::vector<SampleUnit> whole_units(const std::vector<SamplePtr>& samples);
// Per-step samples split into one unit per hourly label; whole-stay tasks unchanged.
std::vector<SampleUnit> label_units(const std::vector<SampleUnit>& units);
std::size_t total_labels(const std::vector<SampleUnit>& units) noexcept;

enum class Split { train, validation, test };
std::string_view to_string(Split split) noexcept;

struct SplitAssignment {
  std::map<std::string, Split> by_patient;

  [[nodiscard]] Split of(const std::string& patient_id) const;
  [[nodiscard]] std::size_t count(Split split) const noexcept;
};

// Patient-level shuffle (seeded), then the first 70% train, next 15%
// validation, rest test.
SplitAssignment make_splits(const Cohort& cohort, std::uint64_t seed);

// z-normalization of the continuous value columns. Constants come from the
// rows of the fitting samples; a zero spread leaves the column centred only.
class Normalizer {
 public:
  Normalizer() = default;
  static Normalizer fit(const std::vector<TaskSample>& samples, const ChannelSchema& schema);

  void apply(Tensor& input) const;
  [[nodiscard]] const std::vector<std::size_t>& columns() const noexcept { return columns_; }
  [[nodiscard]] const std::vector<double>& means() const noexcept { return means_; }
  [[nodiscard]] const std::vector<double>& scales() const noexcept { return scales_; }

 private:
  std::vector<std::size_t> columns_;
  std::vector<double> means_;
  std::vector<double> scales_;
};

// One source ready for training: task samples per split, already normalized.
struct SourceData {
  std::string name;
  std::size_t index = 0;
  std::vector<SamplePtr> train;
  std::vector<SamplePtr> validation;
  std::vector<SamplePtr> test;
};

struct RawSplits {
  std::vector<TaskSample> train;
  std::vector<TaskSample> validation;
  std::vector<TaskSample> test;
};

// Exclusions, extraction and split assignment for one cohort.
RawSplits prepare_task_samples(const Cohort& cohort, TaskKind task, const ChannelSchema& schema,
                               std::uint64_t split_seed, std::size_t source_index);

// Normalizes every split in place with `norm` and freezes them into shared samples.
SourceData finalize_source(RawSplits raw, const Normalizer& norm, std::string name, std::size_t index);

}  // namespace dilbench
