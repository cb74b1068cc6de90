#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dilbench/cohort.hpp"
#include "dilbench/losses.hpp"
#include "dilbench/seq_model.hpp"
#include "dilbench/tasks.hpp"

namespace dilbench {

enum class Method { baseline, ewc, replay, adjusted_replay, combined };

std::string_view to_string(Method method) noexcept;
Method parse_method(std::string_view name);
std::vector<Method> all_methods();
bool uses_buffer(Method method) noexcept;
bool uses_ewc(Method method) noexcept;
bool uses_adjusted_schedule(Method method) noexcept;

// (1/s) L_curr + (1 - 1/s) L_rep
double traditional_replay_loss(double loss_curr, double loss_rep, std::size_t s);
// (1 - 1/s) L_curr + (1/s) L_rep
double adjusted_replay_loss(double loss_curr, double loss_rep, std::size_t s);

// p = floor(N / buffer_size); InvalidPeriod when that is 0.
std::size_t schedule_period(std::size_t steps, std::size_t buffer_size);
// Buffer index j = floor(i / p) when i mod p == 0 and j < buffer_length.
std::optional<std::size_t> adjusted_schedule(std::size_t i, std::size_t steps, std::size_t buffer_size,
                                             std::size_t buffer_length);
inline std::optional<std::size_t> adjusted_schedule(std::size_t i, std::size_t steps, std::size_t buffer_size) {
  return adjusted_schedule(i, steps, buffer_size, buffer_size);
}

// lambda * sum 1/2 F_i (theta_i - theta*_i)^2
double ewc_penalty(std::span<const double> theta, std::span<const double> theta_star, std::span<const double> fisher,
                   double lambda);
// grads += weight * lambda * F_i (theta_i - theta*_i)
void add_ewc_gradient(std::span<const double> theta, std::span<const double> theta_star,
                      std::span<const double> fisher, double lambda, double weight, std::span<double> grads);

// Coefficients of one optimizer step's loss:
//   weight_current * L_curr + weight_replay * L_rep + weight_penalty * penalty
struct StepWeights {
  double current = 1.0;
  double replay = 0.0;
  double penalty = 0.0;
  // Buffer entries replayed this step; L_rep is their mean loss.
  std::vector<std::size_t> replay_indices;

  [[nodiscard]] double combine(double loss_curr, double loss_rep, double penalty_value) const;
};

// Weights for `method` with s sources seen (s counts the current one).
// `adjust_index` is the adjusted-schedule decision for this step and
// `random_index` the uniform draw used by traditional replay.
StepWeights step_weights(Method method, std::size_t s, std::optional<std::size_t> adjust_index,
                         std::optional<std::size_t> random_index);

struct BufferEntry {
  SampleUnit unit;
  std::size_t source = 0;
};

// Fixed-capacity store with equal per-source shares. Each source keeps a
// random ordering of its candidates drawn when it was added; shrinking a
// share drops entries from the tail of that ordering.
class MemoryBuffer {
 public:
  MemoryBuffer() = default;
  explicit MemoryBuffer(std::size_t capacity) : capacity_(capacity) {}

  void update(const std::vector<SampleUnit>& finished_source, std::size_t source_id, Rng& rng);

  [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
  [[nodiscard]] std::size_t size() const noexcept;
  [[nodiscard]] bool empty() const noexcept { return size() == 0; }
  // Entries grouped by source in insertion order.
  [[nodiscard]] std::vector<BufferEntry> entries() const;
  [[nodiscard]] BufferEntry at(std::size_t index) const;
  [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> per_source_counts() const;

  // Rebuilds a buffer holding exactly `entries` (grouped by source).
  static MemoryBuffer restore(std::size_t capacity, const std::vector<BufferEntry>& entries);

  // Shares for the given per-source availability: equal split of the
  // capacity, undersized sources keep everything, leftovers go to the others
  // (earlier sources first).
  static std::vector<std::size_t> shares(std::size_t capacity, const std::vector<std::size_t>& available);

 private:
  struct Allocation {
    std::size_t source = 0;
    std::vector<SampleUnit> ordered;
    std::size_t kept = 0;
  };
  std::size_t capacity_ = 0;
  std::vector<Allocation> allocations_;
};

enum class FisherMode { per_sample, aggregate };

// F_i = (1/N_b) sum_b (dL_b/dtheta_i)^2 (per_sample), or the square of the
// mean-loss gradient (aggregate). Eval mode; leaves model gradients zeroed.
std::vector<double> fisher_diagonal(SequenceModel& model, const std::vector<BufferEntry>& buffer,
                                    FisherMode mode = FisherMode::per_sample, const LossOptions& options = {});

struct StrategyConfig {
  Method method = Method::baseline;
  std::size_t buffer_capacity = 500;
  double importance = 6.0;
  FisherMode fisher = FisherMode::per_sample;
};

class StrategyState {
 public:
  StrategyState() = default;
  explicit StrategyState(StrategyConfig config);

  [[nodiscard]] const StrategyConfig& config() const noexcept { return config_; }
  [[nodiscard]] Method method() const noexcept { return config_.method; }
  [[nodiscard]] std::size_t sources_seen() const noexcept { return s_; }
  [[nodiscard]] std::size_t step_index() const noexcept { return step_; }
  [[nodiscard]] std::size_t period() const noexcept { return period_; }
  [[nodiscard]] const MemoryBuffer& buffer() const noexcept { return buffer_; }
  [[nodiscard]] const std::optional<std::vector<double>>& theta_star() const noexcept { return theta_star_; }
  [[nodiscard]] const std::optional<std::vector<double>>& fisher() const noexcept { return fisher_; }

  // Start of a source whose schedule runs over `total_steps` steps (all
  // epochs). A step is one batch of `batch_size` labels, so per-step tasks
  // that batch whole sequences count ceil(labels / batch_size) per epoch.
  void begin_source(std::size_t total_steps);
  // Weights for the next optimizer step, which covers `span` schedule steps;
  // every replay decision falling in that span is merged into it. Advances
  // the step index by `span`.
  StepWeights next_step(Rng& rng, std::size_t span = 1);

  [[nodiscard]] bool penalty_active() const noexcept;
  [[nodiscard]] double penalty(std::span<const double> theta) const;
  void add_penalty_gradient(std::span<const double> theta, double weight, std::span<double> grads) const;

  // Buffer update (seeded by `seed`), theta* snapshot and Fisher refresh,
  // then s += 1. Baseline only counts the source.
  void finish_source(SequenceModel& model, const std::vector<SampleUnit>& source_units, std::size_t source_id,
                     std::uint64_t seed, const LossOptions& options = {});

  static StrategyState restore(StrategyConfig config, std::size_t sources_seen, MemoryBuffer buffer,
                               std::optional<std::vector<double>> theta_star,
                               std::optional<std::vector<double>> fisher);

 private:
  StrategyConfig config_;
  MemoryBuffer buffer_;
  std::optional<std::vector<double>> theta_star_;
  std::optional<std::vector<double>> fisher_;
  std::size_t s_ = 1;
  std::size_t step_ = 0;
  std::size_t total_steps_ = 0;
  std::size_t period_ = 0;
};

// <stem>.json holds config, s and the buffer as (source, episode, label
// range) references; theta* and the Fisher diagonal go to <stem>.theta.bin and
// <stem>.fisher.bin. Loading resolves buffer references against `pool`.
void save_strategy_state(const std::filesystem::path& stem, const StrategyState& state);
StrategyState load_strategy_state(const std::filesystem::path& stem, const std::vector<SampleUnit>& pool);

// Writes the buffered episodes found in `episodes` in the episode file layout,
// plus buffer.csv listing every entry with its source and label range.
void export_buffer(const MemoryBuffer& buffer, const Cohort& episodes, const std::filesystem::path& directory,
                   const ChannelSchema& schema);

}  // namespace dilbench
