#include "dilbench/seq_model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "dilbench/error.hpp"

namespace dilbench {

void SequenceModelConfig::validate() const {
  if (input_width == 0 || hidden_width == 0 || num_layers == 0 || output_width == 0) {
    throw Error(ErrorKind::ShapeMismatch, "model widths and layer count must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorKind::InvalidRate, "dropout rate " + std::to_string(dropout_rate));
  }
}

ModelParams::ModelParams(const SequenceModelConfig& config) {
  config.validate();
  const std::size_t H = config.hidden_width;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    blocks_.push_back(ParamBlock{std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::size_t in = l == 0 ? config.input_width : config.feature_width();
    for (std::size_t d = 0; d < config.directions(); ++d) {
      const std::string prefix = "layer" + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
      add(prefix + ".w_ih", in, 4 * H);
      add(prefix + ".w_hh", H, 4 * H);
      add(prefix + ".bias", 1, 4 * H);
    }
  }
  add("head.weight", config.feature_width(), config.output_width);
  add("head.bias", 1, config.output_width);
  values_.assign(offset, 0.0);
  grads_.assign(offset, 0.0);
}

const ParamBlock& ModelParams::block(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw Error(ErrorKind::ShapeMismatch, "no parameter block " + name);
}

std::span<double> ModelParams::block_values(const std::string& name) {
  const auto& b = block(name);
  return std::span<double>(values_).subspan(b.offset, b.size());
}

void ModelParams::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

Var ModelParams::record(Tape& tape, std::size_t index) {
  const auto& b = blocks_.at(index);
  return tape.parameter(std::span<const double>(values_).subspan(b.offset, b.size()), Shape{b.rows, b.cols},
                        std::span<double>(grads_).subspan(b.offset, b.size()));
}

SequenceBatch SequenceBatch::from_tensor(const Tensor& b_t_w) {
  if (b_t_w.shape().size() != 3) throw Error(ErrorKind::ShapeMismatch, "batch tensor must be B x T x W");
  SequenceBatch out;
  out.batch = b_t_w.shape()[0];
  out.steps = b_t_w.shape()[1];
  out.width = b_t_w.shape()[2];
  out.data.assign(b_t_w.values().begin(), b_t_w.values().end());
  out.lengths.assign(out.batch, out.steps);
  return out;
}

bool SequenceBatch::uniform_lengths() const {
  return std::all_of(lengths.begin(), lengths.end(), [&](std::size_t l) { return l == steps; });
}

namespace {

struct CellState {
  Var h;
  Var c;
};

CellState cell_from_gates(Tape& tape, Var gates, Var c_prev, std::size_t H) {
  const Var i = tape.sigmoid(tape.slice_last(gates, 0, H));
  const Var f = tape.sigmoid(tape.slice_last(gates, H, 2 * H));
  const Var g = tape.tanh(tape.slice_last(gates, 2 * H, 3 * H));
  const Var o = tape.sigmoid(tape.slice_last(gates, 3 * H, 4 * H));
  const Var c = tape.add(tape.mul(f, c_prev), tape.mul(i, g));
  const Var h = tape.mul(o, tape.tanh(c));
  return {h, c};
}

struct BlockVars {
  Var w_ih, w_hh, bias;
};

// Records parameters either with gradient sinks (training) or as constants.
class ParamRecorder {
 public:
  ParamRecorder(Tape& tape, std::span<const double> values, std::span<double> grads,
                const std::vector<ParamBlock>& blocks)
      : tape_(tape), values_(values), grads_(grads), blocks_(blocks) {}

  Var operator()(std::size_t index) {
    const auto& b = blocks_[index];
    std::span<double> sink;
    if (!grads_.empty()) sink = grads_.subspan(b.offset, b.size());
    return tape_.parameter(values_.subspan(b.offset, b.size()), Shape{b.rows, b.cols}, sink);
  }

 private:
  Tape& tape_;
  std::span<const double> values_;
  std::span<double> grads_;
  const std::vector<ParamBlock>& blocks_;
};

ModelOutput run_model(const SequenceModelConfig& config, const std::vector<ParamBlock>& blocks,
                      std::span<const double> values, std::span<double> grads, Tape& tape,
                      const SequenceBatch& batch, Mode mode, Rng& rng) {
  const std::size_t B = batch.batch, T = batch.steps, H = config.hidden_width;
  if (T == 0) throw Error(ErrorKind::EmptySequence, "sequence with zero steps");
  if (B == 0) throw Error(ErrorKind::ShapeMismatch, "empty batch");
  if (batch.width != config.input_width || batch.data.size() != B * T * batch.width ||
      batch.lengths.size() != B) {
    throw Error(ErrorKind::ShapeMismatch, "batch width " + std::to_string(batch.width) + " but model expects " +
                                              std::to_string(config.input_width));
  }
  for (const auto len : batch.lengths) {
    if (len == 0 || len > T) throw Error(ErrorKind::EmptySequence, "sequence length outside [1, T]");
  }

  // Time-major copy of the input: row t * B + b.
  std::vector<double> tm(B * T * batch.width);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      std::copy_n(batch.data.begin() + (b * T + t) * batch.width, batch.width,
                  tm.begin() + (t * B + b) * batch.width);
  Var layer_input = tape.constant(Tensor(Shape{T * B, batch.width}, std::move(tm)));

  // Step masks keep padded positions from advancing the recurrent state.
  const bool masked = !batch.uniform_lengths();
  std::vector<Var> step_masks;
  if (masked) {
    step_masks.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      Tensor m(Shape{B, H});
      for (std::size_t b = 0; b < B; ++b)
        if (t < batch.lengths[b]) std::fill_n(m.values().begin() + b * H, H, 1.0);
      step_masks.push_back(tape.constant(std::move(m)));
    }
  }

  ParamRecorder param(tape, values, grads, blocks);
  std::size_t block_index = 0;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    std::vector<Var> direction_outputs;
    for (std::size_t d = 0; d < config.directions(); ++d) {
      BlockVars w{param(block_index), param(block_index + 1), param(block_index + 2)};
      block_index += 3;
      const Var proj = tape.affine(layer_input, w.w_ih, w.bias);
      Var h = tape.constant(Tensor(Shape{B, H}));
      Var c = tape.constant(Tensor(Shape{B, H}));
      std::vector<Var> outputs(T);
      for (std::size_t k = 0; k < T; ++k) {
        const std::size_t t = d == 0 ? k : T - 1 - k;
        const Var gates = tape.add(tape.slice_rows(proj, t * B, (t + 1) * B), tape.matmul(h, w.w_hh));
        CellState next = cell_from_gates(tape, gates, c, H);
        if (masked) {
          next.h = tape.add(h, tape.mul(step_masks[t], tape.sub(next.h, h)));
          next.c = tape.add(c, tape.mul(step_masks[t], tape.sub(next.c, c)));
        }
        h = next.h;
        c = next.c;
        outputs[t] = h;
      }
      direction_outputs.push_back(tape.concat_rows(outputs));
    }
    Var layer_out = direction_outputs[0];
    if (direction_outputs.size() == 2) layer_out = tape.concat_last(direction_outputs[0], direction_outputs[1]);
    // Dropout sits between stacked layers and before the head, only for deep stacks.
    if (config.num_layers > 1) layer_out = tape.dropout(layer_out, config.dropout_rate, mode, rng);
    layer_input = layer_out;
  }

  const Var head_w = param(block_index);
  const Var head_b = param(block_index + 1);
  ModelOutput out;
  out.batch = B;
  out.steps = T;
  out.head = config.head;
  Var features = layer_input;
  if (config.head == HeadMode::last_step) {
    std::vector<std::size_t> rows(B);
    for (std::size_t b = 0; b < B; ++b) rows[b] = (batch.lengths[b] - 1) * B + b;
    features = tape.gather_rows(layer_input, std::move(rows));
  }
  const Var logits = tape.affine(features, head_w, head_b);
  out.scores = config.activation == OutputActivation::softmax ? tape.softmax_last(logits) : tape.sigmoid(logits);
  return out;
}

}  // namespace

LstmStepResult lstm_cell_step(std::span<const double> x, std::span<const double> h_prev,
                              std::span<const double> c_prev, std::span<const double> w_ih,
                              std::span<const double> w_hh, std::span<const double> bias) {
  const std::size_t H = h_prev.size();
  const std::size_t in = x.size();
  if (c_prev.size() != H || w_ih.size() != in * 4 * H || w_hh.size() != H * 4 * H || bias.size() != 4 * H) {
    throw Error(ErrorKind::ShapeMismatch, "lstm cell dimensions inconsistent");
  }
  Tape tape;
  const Var xv = tape.constant(Tensor(Shape{1, in}, std::vector<double>(x.begin(), x.end())));
  const Var hv = tape.constant(Tensor(Shape{1, H}, std::vector<double>(h_prev.begin(), h_prev.end())));
  const Var cv = tape.constant(Tensor(Shape{1, H}, std::vector<double>(c_prev.begin(), c_prev.end())));
  const Var wi = tape.constant(Tensor(Shape{in, 4 * H}, std::vector<double>(w_ih.begin(), w_ih.end())));
  const Var wh = tape.constant(Tensor(Shape{H, 4 * H}, std::vector<double>(w_hh.begin(), w_hh.end())));
  const Var bv = tape.constant(Tensor(Shape{1, 4 * H}, std::vector<double>(bias.begin(), bias.end())));
  const Var gates = tape.add(tape.affine(xv, wi, bv), tape.matmul(hv, wh));
  const CellState next = cell_from_gates(tape, gates, cv, H);
  const auto hs = tape.values(next.h);
  const auto cs = tape.values(next.c);
  return {std::vector<double>(hs.begin(), hs.end()), std::vector<double>(cs.begin(), cs.end())};
}

SequenceModel::SequenceModel(SequenceModelConfig config, std::uint64_t init_seed)
    : config_(config), params_(config) {
  Rng rng(init_seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config_.hidden_width));
  std::uniform_real_distribution<double> init(-bound, bound);
  for (auto& v : params_.values()) v = init(rng);
}

ModelOutput SequenceModel::forward(Tape& tape, const SequenceBatch& batch, Mode mode, Rng& rng) {
  return run_model(config_, params_.blocks(), params_.values(), params_.grads(), tape, batch, mode, rng);
}

Tensor SequenceModel::predict(const SequenceBatch& batch) const {
  Tape tape;
  Rng unused(0);
  const ModelOutput out = run_model(config_, params_.blocks(), params_.values(), {}, tape, batch, Mode::eval, unused);
  const auto scores = tape.values(out.scores);
  const std::size_t C = config_.output_width;
  if (out.head == HeadMode::last_step) {
    return Tensor(Shape{out.batch, C}, std::vector<double>(scores.begin(), scores.end()));
  }
  Tensor result(Shape{out.batch, out.steps, C});
  for (std::size_t b = 0; b < out.batch; ++b)
    for (std::size_t t = 0; t < out.steps; ++t)
      std::copy_n(scores.begin() + out.row(b, t) * C, C, result.values().begin() + (b * out.steps + t) * C);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json config_to_json(const SequenceModelConfig& c) {
  return {{"input_width", c.input_width},
          {"hidden_width", c.hidden_width},
          {"num_layers", c.num_layers},
          {"bidirectional", c.bidirectional},
          {"dropout_rate", c.dropout_rate},
          {"output_width", c.output_width},
          {"head", c.head == HeadMode::last_step ? "last_step" : "per_step"},
          {"activation", c.activation == OutputActivation::sigmoid ? "sigmoid" : "softmax"}};
}

SequenceModelConfig config_from_json(const nlohmann::json& j) {
  SequenceModelConfig c;
  c.input_width = j.at("input_width").get<std::size_t>();
  c.hidden_width = j.at("hidden_width").get<std::size_t>();
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.bidirectional = j.at("bidirectional").get<bool>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.output_width = j.at("output_width").get<std::size_t>();
  c.head = j.at("head").get<std::string>() == "per_step" ? HeadMode::per_step : HeadMode::last_step;
  c.activation = j.at("activation").get<std::string>() == "softmax" ? OutputActivation::softmax
                                                                     : OutputActivation::sigmoid;
  return c;
}

std::filesystem::path with_ext(std::filesystem::path stem, const char* ext) {
  stem += ext;
  return stem;
}

}  // namespace

void write_float64_blob(const std::filesystem::path& path, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  for (const double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw Error(ErrorKind::IoFailure, "short write to " + path.string());
}

std::vector<double> read_float64_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + path.string());
  std::vector<double> values;
  unsigned char bytes[8];
  while (in.read(reinterpret_cast<char*>(bytes), 8)) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    values.push_back(std::bit_cast<double>(bits));
  }
  if (in.gcount() != 0) throw Error(ErrorKind::MalformedFile, path.string() + ": trailing partial value");
  return values;
}

void save_checkpoint(const std::filesystem::path& stem, const SequenceModel& model,
                     const CheckpointManifest& manifest) {
  nlohmann::json j;
  j["config"] = config_to_json(model.config());
  j["seed"] = manifest.seed;
  j["source_history"] = manifest.source_history;
  j["parameter_count"] = model.params().size();
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : model.params().blocks()) {
    blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  }
  j["blocks"] = blocks;
  std::ofstream out(with_ext(stem, ".json"));
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + with_ext(stem, ".json").string());
  out << j.dump(2) << '\n';
  write_float64_blob(with_ext(stem, ".bin"), model.params().values());
}

std::pair<SequenceModel, CheckpointManifest> load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream in(with_ext(stem, ".json"));
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + with_ext(stem, ".json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedFile, with_ext(stem, ".json").string() + ": " + e.what());
  }
  CheckpointManifest manifest;
  manifest.config = config_from_json(j.at("config"));
  manifest.seed = j.at("seed").get<std::uint64_t>();
  manifest.source_history = j.at("source_history").get<std::vector<std::string>>();
  SequenceModel model(manifest.config, manifest.seed);
  const auto blob = read_float64_blob(with_ext(stem, ".bin"));
  if (blob.size() != model.params().size()) {
    throw Error(ErrorKind::MalformedFile, "parameter blob holds " + std::to_string(blob.size()) +
                                              " values, model needs " + std::to_string(model.params().size()));
  }
  std::copy(blob.begin(), blob.end(), model.params().values().begin());
  return {std::move(model), std::move(manifest)};
}

}  // namespace dilbench
