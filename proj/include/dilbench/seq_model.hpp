#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dilbench/rng.hpp"
#include "dilbench/tensor.hpp"

namespace dilbench {

enum class HeadMode { last_step, per_step };
enum class OutputActivation { sigmoid, softmax };

struct SequenceModelConfig {
  std::size_t input_width = 76;
  std::size_t hidden_width = 16;
  std::size_t num_layers = 1;
  bool bidirectional = false;
  double dropout_rate = 0.3;
  std::size_t output_width = 1;
  HeadMode head = HeadMode::last_step;
  OutputActivation activation = OutputActivation::sigmoid;

  [[nodiscard]] std::size_t directions() const noexcept { return bidirectional ? 2 : 1; }
  // Width of the per-step representation fed to the head.
  [[nodiscard]] std::size_t feature_width() const noexcept { return hidden_width * directions(); }
  void validate() const;
};

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
};

// All trainable values in one contiguous vector. Flattened order:
//   for layer 0..L-1, for direction fwd then bwd:
//     layer{l}.{fwd,bwd}.w_ih   input_width(l) x 4H
//     layer{l}.{fwd,bwd}.w_hh   H x 4H
//     layer{l}.{fwd,bwd}.bias   1 x 4H
//   head.weight                 feature_width x output_width
//   head.bias                   1 x output_width
// Gate columns inside each 4H block are ordered input, forget, cell, output.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const SequenceModelConfig& config);

  [[nodiscard]] std::span<double> values() noexcept { return values_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] std::span<double> grads() noexcept { return grads_; }
  [[nodiscard]] std::span<const double> grads() const noexcept { return grads_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  [[nodiscard]] const ParamBlock& block(const std::string& name) const;
  [[nodiscard]] std::span<double> block_values(const std::string& name);
  void zero_grad();

  // Records block `index` on the tape with gradients routed to grads().
  Var record(Tape& tape, std::size_t index);

 private:
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<ParamBlock> blocks_;
};

// Input batch in batch-major layout B x T x input_width. Sequences shorter
// than T are right-padded; lengths[b] gives the valid prefix.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::size_t width = 0;
  std::vector<double> data;
  std::vector<std::size_t> lengths;

  static SequenceBatch from_tensor(const Tensor& b_t_w);
  [[nodiscard]] bool uniform_lengths() const;
};

// Scores recorded on a tape. For per_step heads the rows are time-major:
// row t * batch + b holds sample b at step t.
struct ModelOutput {
  Var scores;
  std::size_t batch = 0;
  std::size_t steps = 0;
  HeadMode head = HeadMode::last_step;

  [[nodiscard]] std::size_t row(std::size_t b, std::size_t t) const noexcept {
    return head == HeadMode::per_step ? t * batch + b : b;
  }
};

struct LstmStepResult {
  std::vector<double> h;
  std::vector<double> c;
};

// One LSTM step on a single example, gate order input, forget, cell, output.
// w_ih: in x 4H, w_hh: H x 4H, bias: 4H.
LstmStepResult lstm_cell_step(std::span<const double> x, std::span<const double> h_prev,
                              std::span<const double> c_prev, std::span<const double> w_ih,
                              std::span<const double> w_hh, std::span<const double> bias);

class SequenceModel {
 public:
  SequenceModel() = default;
  SequenceModel(SequenceModelConfig config, std::uint64_t init_seed);

  [[nodiscard]] const SequenceModelConfig& config() const noexcept { return config_; }
  [[nodiscard]] ModelParams& params() noexcept { return params_; }
  [[nodiscard]] const ModelParams& params() const noexcept { return params_; }

  // Builds the forward graph. `rng` drives dropout in train mode only.
  ModelOutput forward(Tape& tape, const SequenceBatch& batch, Mode mode, Rng& rng);

  // Eval-mode scores: B x output_width (last_step) or B x T x output_width.
  [[nodiscard]] Tensor predict(const SequenceBatch& batch) const;

 private:
  SequenceModelConfig config_;
  ModelParams params_;
};

struct CheckpointManifest {
  SequenceModelConfig config;
  std::uint64_t seed = 0;
  std::vector<std::string> source_history;
};

// Writes <stem>.json (manifest) and <stem>.bin (little-endian float64 blob in
// flattened parameter order).
void save_checkpoint(const std::filesystem::path& stem, const SequenceModel& model,
                     const CheckpointManifest& manifest);
std::pair<SequenceModel, CheckpointManifest> load_checkpoint(const std::filesystem::path& stem);

void write_float64_blob(const std::filesystem::path& path, std::span<const double> values);
std::vector<double> read_float64_blob(const std::filesystem::path& path);

}  // namespace dilbench
