#include "dilbench/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dilbench/error.hpp"

namespace dilbench {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbabilityFloor, 1.0 - kProbabilityFloor); }

// Term y log p + (1-y) log(1-p) and its derivative w.r.t. p (0 where clamped).
std::pair<double, double> binary_term(double p, double y) {
  const double q = clamp_prob(p);
  const double value = y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  const double d = (p < kProbabilityFloor || p > 1.0 - kProbabilityFloor) ? 0.0 : y / q - (1.0 - y) / (1.0 - q);
  return {value, d};
}

void check_rows(std::span<const double> probs, std::size_t classes) {
  if (classes == 0 || probs.size() % classes != 0) {
    throw Error(ErrorKind::ShapeMismatch, "probabilities are not rows of " + std::to_string(classes));
  }
  for (std::size_t r = 0; r < probs.size() / classes; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += probs[r * classes + c];
    if (std::abs(sum - 1.0) > 1e-9) {
      throw Error(ErrorKind::NotNormalized, "row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
  }
}

void check_classes(std::span<const std::size_t> targets, std::size_t rows, std::size_t classes) {
  if (targets.size() != rows) throw Error(ErrorKind::ShapeMismatch, "one target per row expected");
  for (const auto t : targets) {
    if (t >= classes) throw Error(ErrorKind::ShapeMismatch, "target class out of range");
  }
}

}  // namespace

double bce_loss(std::span<const double> probs, std::span<const double> targets) {
  if (probs.size() != targets.size() || probs.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "bce_loss needs equal, non-empty shapes");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) sum += binary_term(probs[i], targets[i]).first;
  return -sum / static_cast<double>(probs.size());
}

double ce_loss(std::span<const double> probs, std::span<const double> one_hot, std::size_t classes) {
  if (probs.size() != one_hot.size() || probs.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "ce_loss needs equal, non-empty shapes");
  }
  check_rows(probs, classes);
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) sum += binary_term(probs[i], one_hot[i]).first;
  return -sum / static_cast<double>(probs.size() / classes);
}

double ce_loss(std::span<const double> probs, std::span<const std::size_t> targets, std::size_t classes) {
  check_rows(probs, classes);
  check_classes(targets, probs.size() / classes, classes);
  std::vector<double> one_hot(probs.size(), 0.0);
  for (std::size_t r = 0; r < targets.size(); ++r) one_hot[r * classes + targets[r]] = 1.0;
  return ce_loss(probs, one_hot, classes);
}

double categorical_log_loss(std::span<const double> probs, std::span<const std::size_t> targets,
                            std::size_t classes) {
  check_rows(probs, classes);
  check_classes(targets, probs.size() / classes, classes);
  if (targets.empty()) throw Error(ErrorKind::ShapeMismatch, "categorical_log_loss of no rows");
  double sum = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) sum += std::log(clamp_prob(probs[r * classes + targets[r]]));
  return -sum / static_cast<double>(targets.size());
}

Var bce_loss(Tape& tape, Var probs, std::span<const double> targets) {
  const auto p = tape.values(probs);
  if (p.size() != targets.size() || p.empty()) throw Error(ErrorKind::ShapeMismatch, "bce_loss shapes differ");
  const double n = static_cast<double>(p.size());
  double sum = 0.0;
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto [v, d] = binary_term(p[i], targets[i]);
    sum += v;
    grad[i] = -d / n;
  }
  return tape.scalar_function(probs, -sum / n, std::move(grad));
}

Var ce_loss(Tape& tape, Var probs, std::span<const std::size_t> targets, LosLoss form) {
  const auto p = tape.values(probs);
  const auto& shape = tape.shape(probs);
  if (shape.size() != 2) throw Error(ErrorKind::ShapeMismatch, "ce_loss expects rows x classes");
  const std::size_t rows = shape[0], classes = shape[1];
  check_rows(p, classes);
  check_classes(targets, rows, classes);
  if (rows == 0) throw Error(ErrorKind::ShapeMismatch, "ce_loss of no rows");
  const double n = static_cast<double>(rows);
  double sum = 0.0;
  std::vector<double> grad(p.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (form == LosLoss::categorical) {
      const double q = p[r * classes + targets[r]];
      sum += std::log(clamp_prob(q));
      if (q >= kProbabilityFloor) grad[r * classes + targets[r]] = -1.0 / (n * clamp_prob(q));
      continue;
    }
    for (std::size_t c = 0; c < classes; ++c) {
      const auto [v, d] = binary_term(p[r * classes + c], c == targets[r] ? 1.0 : 0.0);
      sum += v;
      grad[r * classes + c] = -d / n;
    }
  }
  return tape.scalar_function(probs, -sum / n, std::move(grad));
}

UnitBatch make_unit_batch(std::span<const SampleUnit> units) {
  if (units.empty()) throw Error(ErrorKind::EmptySource, "empty batch");
  UnitBatch out;
  out.task = units.front().sample->task;
  const std::size_t width = units.front().sample->input.last_dim();
  std::size_t steps = 0;
  for (const auto& u : units) {
    if (u.sample->task != out.task) throw Error(ErrorKind::ShapeMismatch, "batch mixes tasks");
    if (u.sample->input.last_dim() != width) throw Error(ErrorKind::ShapeMismatch, "batch mixes input widths");
    if (u.labels() == 0) throw Error(ErrorKind::ShapeMismatch, "unit without labels");
    steps = std::max(steps, u.rows_needed());
  }
  auto& b = out.batch;
  b.batch = units.size();
  b.steps = steps;
  b.width = width;
  b.data.assign(b.batch * steps * width, 0.0);
  b.lengths.resize(b.batch);
  const bool per_step = is_per_step(out.task);
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    const std::size_t rows = u.rows_needed();
    b.lengths[i] = rows;
    const auto src = u.sample->input.values();
    std::copy_n(src.begin(), rows * width, b.data.begin() + i * steps * width);
    if (per_step) {
      for (std::size_t k = u.label_begin; k < u.label_end; ++k) {
        out.positions.emplace_back(i, u.sample->label_rows[k]);
        out.targets.push_back(u.sample->targets[k]);
      }
    } else {
      out.positions.emplace_back(i, rows - 1);
      out.targets.insert(out.targets.end(), u.sample->targets.begin(), u.sample->targets.end());
    }
  }
  return out;
}

Var task_loss(Tape& tape, SequenceModel& model, const UnitBatch& batch, Mode mode, Rng& rng,
              const LossOptions& options) {
  const ModelOutput out = model.forward(tape, batch.batch, mode, rng);
  Var scores = out.scores;
  if (out.head == HeadMode::per_step) {
    std::vector<std::size_t> rows;
    rows.reserve(batch.positions.size());
    for (const auto& [b, t] : batch.positions) rows.push_back(out.row(b, t));
    scores = tape.gather_rows(scores, std::move(rows));
  }
  if (batch.task == TaskKind::los) {
    std::vector<std::size_t> cls(batch.targets.size());
    std::transform(batch.targets.begin(), batch.targets.end(), cls.begin(),
                   [](double y) { return static_cast<std::size_t>(y); });
    return ce_loss(tape, scores, cls, options.los);
  }
  return bce_loss(tape, scores, batch.targets);
}

}  // namespace dilbench
