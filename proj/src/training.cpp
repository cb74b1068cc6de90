#include "dilbench/training.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dilbench/error.hpp"
#include "dilbench/metrics.hpp"

namespace dilbench {

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorKind::MissingGradient, "gradient/moment buffers do not cover every parameter");
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = state.m[i] / bias1;
    const double v_hat = state.v[i] / bias2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be at least 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch size must be at least 1");
  if (sample_cap && *sample_cap == 0) throw Error(ErrorKind::InvalidConfig, "sample cap must be positive");
  if (!(adam.learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning rate must be positive");
}

std::vector<SampleUnit> cap_units(const std::vector<SampleUnit>& units, std::optional<std::size_t> cap,
                                  std::uint64_t seed) {
  if (!cap || total_labels(units) <= *cap) return units;
  std::vector<SampleUnit> shuffled = units;
  Rng rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::vector<SampleUnit> out;
  std::size_t left = *cap;
  for (auto u : shuffled) {
    if (left == 0) break;
    if (u.labels() > left) u.label_end = u.label_begin + left;
    left -= u.labels();
    out.push_back(u);
  }
  return out;
}

Predictions predict_units(const SequenceModel& model, const std::vector<SampleUnit>& units, std::size_t batch_size) {
  if (units.empty()) throw Error(ErrorKind::EmptySource, "nothing to predict");
  Predictions p;
  p.task = units.front().sample->task;
  p.width = model.config().output_width;
  const std::size_t C = p.width;
  for (std::size_t begin = 0; begin < units.size(); begin += batch_size) {
    const std::size_t end = std::min(units.size(), begin + batch_size);
    const UnitBatch batch = make_unit_batch(std::span<const SampleUnit>(units.data() + begin, end - begin));
    const Tensor scores = model.predict(batch.batch);
    const auto v = scores.values();
    const bool per_step = scores.shape().size() == 3;
    for (const auto& [b, t] : batch.positions) {
      const std::size_t offset = per_step ? (b * batch.batch.steps + t) * C : b * C;
      p.scores.insert(p.scores.end(), v.begin() + static_cast<std::ptrdiff_t>(offset),
                      v.begin() + static_cast<std::ptrdiff_t>(offset + C));
    }
    p.targets.insert(p.targets.end(), batch.targets.begin(), batch.targets.end());
  }
  return p;
}

std::string primary_metric(TaskKind task) {
  switch (task) {
    case TaskKind::ihm:
    case TaskKind::decompensation: return "auc_roc";
    case TaskKind::phenotyping: return "macro_auc";
    case TaskKind::los: return "kappa";
  }
  return "?";
}

namespace {

std::vector<std::size_t> argmax_rows(const std::vector<double>& scores, std::size_t width) {
  std::vector<std::size_t> out(scores.size() / width);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto row = scores.begin() + static_cast<std::ptrdiff_t>(r * width);
    out[r] = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(width)) - row);
  }
  return out;
}

}  // namespace

std::vector<MetricValue> task_metrics(const Predictions& p) {
  switch (p.task) {
    case TaskKind::ihm:
    case TaskKind::decompensation:
      return {{"auc_roc", auc_roc(p.scores, p.targets)}, {"auc_pr", auc_pr(p.scores, p.targets)}};
    case TaskKind::phenotyping: {
      const auto mm = macro_micro_auc(p.scores, p.targets, p.width);
      return {{"macro_auc", mm.macro}, {"micro_auc", mm.micro}};
    }
    case TaskKind::los: {
      const auto predicted = argmax_rows(p.scores, p.width);
      std::vector<std::size_t> truth(p.targets.size());
      std::transform(p.targets.begin(), p.targets.end(), truth.begin(),
                     [](double y) { return static_cast<std::size_t>(y); });
      return {{"kappa", cohen_kappa(predicted, truth, KappaWeighting::linear, p.width)},
              {"mad", mad(predicted, truth)}};
    }
  }
  return {};
}

double evaluate_loss(const SequenceModel& model, const std::vector<SampleUnit>& units, const LossOptions& options,
                     std::size_t batch_size) {
  const Predictions p = predict_units(model, units, batch_size);
  if (p.task == TaskKind::los) {
    std::vector<std::size_t> truth(p.targets.size());
    std::transform(p.targets.begin(), p.targets.end(), truth.begin(),
                   [](double y) { return static_cast<std::size_t>(y); });
    return options.los == LosLoss::categorical ? categorical_log_loss(p.scores, truth, p.width)
                                               : ce_loss(p.scores, truth, p.width);
  }
  return bce_loss(p.scores, p.targets);
}

TrainResult train_on_source(SequenceModel& model, const std::vector<SampleUnit>& source, std::size_t source_index,
                            const TrainConfig& config, StrategyState& strategy,
                            const std::vector<ValidationSet>& validation, std::ostream* log) {
  config.validate();
  if (source.empty()) throw Error(ErrorKind::EmptySource, "source " + std::to_string(source_index) + " has no samples");

  std::vector<SampleUnit> units = cap_units(source, config.sample_cap, derive_seed(config.seed, {source_index, 1}));
  const std::size_t per_epoch = (units.size() + config.batch_size - 1) / config.batch_size;
  TrainResult result;
  result.labels_per_epoch = total_labels(units);
  // Schedule steps count batches of batch_size labels; whole-stay units
  // carry one label each, so there they equal optimizer steps.
  const std::size_t schedule_per_epoch = (result.labels_per_epoch + config.batch_size - 1) / config.batch_size;
  strategy.begin_source(schedule_per_epoch * config.epochs);

  auto& params = model.params();
  AdamState adam(params.size(), config.adam);
  Rng dropout_rng(derive_seed(config.seed, {source_index, 2}));
  Rng replay_rng(derive_seed(config.seed, {source_index, 3}));

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, {source_index, 4, epoch}));
    std::shuffle(units.begin(), units.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t labels_done = 0, schedule_done = 0;
    for (std::size_t begin = 0; begin < units.size(); begin += config.batch_size) {
      const std::size_t end = std::min(units.size(), begin + config.batch_size);
      const std::span<const SampleUnit> slice(units.data() + begin, end - begin);
      const UnitBatch batch = make_unit_batch(slice);
      for (const auto& u : slice) labels_done += u.labels();
      const std::size_t schedule_at = (labels_done + config.batch_size - 1) / config.batch_size;
      const StepWeights w = strategy.next_step(replay_rng, schedule_at - schedule_done);
      schedule_done = schedule_at;

      params.zero_grad();
      Tape tape;
      const Var curr = task_loss(tape, model, batch, Mode::train, dropout_rng, config.loss);
      Var total = w.current == 1.0 ? curr : tape.scale(curr, w.current);
      if (!w.replay_indices.empty()) {
        std::vector<SampleUnit> replayed;
        for (const std::size_t j : w.replay_indices) replayed.push_back(strategy.buffer().at(j).unit);
        const UnitBatch rep = make_unit_batch(replayed);
        const Var rep_loss = task_loss(tape, model, rep, Mode::train, dropout_rng, config.loss);
        total = tape.add(total, tape.scale(rep_loss, w.replay));
      }
      tape.backward(total);
      strategy.add_penalty_gradient(params.values(), w.penalty, params.grads());
      loss_sum += tape.item(curr);
      adam_step(params.values(), params.grads(), adam);
      ++result.steps;
    }
    result.final_epoch_loss = loss_sum / static_cast<double>(per_epoch);

    for (const auto& set : validation) {
      const auto metrics = task_metrics(predict_units(model, set.units));
      for (const auto& m : metrics) {
        result.log.push_back({source_index, epoch, set.name, m.name, m.value});
        if (log) {
          nlohmann::json line = {{"source", source_index}, {"epoch", epoch}, {"set", set.name},
                                 {"metric", m.name},       {"value", m.value}};
          *log << line.dump() << '\n';
        }
      }
    }
  }
  params.zero_grad();
  result.units = std::move(units);
  return result;
}

}  // namespace dilbench
