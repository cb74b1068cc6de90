#include "dilbench/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dilbench/error.hpp"
#include "dilbench/rng.hpp"

namespace dilbench {

std::string_view to_string(TaskKind task) noexcept {
  switch (task) {
    case TaskKind::ihm: return "ihm";
    case TaskKind::decompensation: return "decompensation";
    case TaskKind::los: return "los";
    case TaskKind::phenotyping: return "phenotyping";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  if (name == "ihm" || name == "mortality") return TaskKind::ihm;
  if (name == "decompensation" || name == "decomp") return TaskKind::decompensation;
  if (name == "los" || name == "length-of-stay") return TaskKind::los;
  if (name == "phenotyping" || name == "pheno") return TaskKind::phenotyping;
  throw Error(ErrorKind::InvalidConfig, "unknown task '" + std::string(name) + "'");
}

bool is_per_step(TaskKind task) noexcept { return task == TaskKind::decompensation || task == TaskKind::los; }

std::size_t output_width(TaskKind task) noexcept {
  switch (task) {
    case TaskKind::ihm:
    case TaskKind::decompensation: return 1;
    case TaskKind::los: return kLosClasses;
    case TaskKind::phenotyping: return kPhenotypeCount;
  }
  return 1;
}

Cohort apply_exclusions(const Cohort& cohort, TaskKind task) {
  Cohort kept;
  for (const auto& ep : cohort) {
    if (ep.age < kMinAge || !ep.label_consistent) continue;
    if (task == TaskKind::ihm && ep.los_hours < kIhmWindowHours) continue;
    if (is_per_step(task) && ep.los_hours < kMinStayHours) continue;
    EpisodeRecord copy = ep;
    std::erase_if(copy.events, [&](const Event& e) { return e.hours < 0.0 || e.hours >= ep.los_hours; });
    if (copy.events.size() < kMinRecords) continue;
    kept.push_back(std::move(copy));
  }
  return kept;
}

Tensor discretize_episode(const EpisodeRecord& episode, const ChannelSchema& schema, std::size_t horizon) {
  if (static_cast<double>(horizon) > std::ceil(episode.los_hours)) {
    throw Error(ErrorKind::TooShort, episode.stay_name() + ": horizon " + std::to_string(horizon) +
                                         "h exceeds the stay");
  }
  const std::size_t width = schema.total_width();
  const std::size_t channels = schema.size();
  Tensor out(Shape{horizon, width});
  auto data = out.values();

  // Current (possibly carried) value per channel; NaN = never recorded yet.
  std::vector<double> current(channels, NAN);
  std::vector<char> measured(channels);
  std::size_t next = 0;
  const auto& events = episode.events;
  for (std::size_t row = 0; row < horizon; ++row) {
    std::fill(measured.begin(), measured.end(), 0);
    const double bin_end = static_cast<double>(row + 1);
    while (next < events.size() && events[next].hours < bin_end) {
      const Event& ev = events[next++];
      if (ev.hours < static_cast<double>(row)) continue;  // before the first bin
      if (ev.channel >= channels) {
        throw Error(ErrorKind::SchemaMismatch, episode.stay_name() + ": event channel outside the schema");
      }
      current[ev.channel] = ev.value;
      measured[ev.channel] = 1;
    }
    double* r = data.data() + row * width;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto& spec = schema.channel(c);
      const double v = std::isnan(current[c]) ? spec.normal_value : current[c];
      const std::size_t off = schema.value_offset(c);
      if (spec.kind == ChannelKind::categorical) {
        const auto idx = static_cast<std::size_t>(v);
        if (v < 0 || idx >= spec.labels.size() || static_cast<double>(idx) != v) {
          throw Error(ErrorKind::SchemaMismatch, episode.stay_name() + ": bad label index for " + spec.name);
        }
        r[off + idx] = 1.0;
      } else {
        r[off] = v;
      }
      r[schema.mask_offset(c)] = measured[c];
    }
  }
  return out;
}

std::size_t los_class(double remaining) noexcept {
  if (remaining < 24.0) return 0;
  if (remaining < 192.0) return static_cast<std::size_t>(std::floor(remaining / 24.0));
  if (remaining < 336.0) return 8;
  return 9;
}

std::size_t TaskSample::label_count() const noexcept {
  return is_per_step(task) ? label_rows.size() : 1;
}

namespace {

TaskSample base_sample(const EpisodeRecord& ep, TaskKind task) {
  TaskSample s;
  s.task = task;
  s.episode = ep.stay_name();
  s.patient = ep.patient_id;
  return s;
}

// Rows t-1 for t = 5..floor(LOS).
TaskSample per_step_frame(const EpisodeRecord& ep, const ChannelSchema& schema, TaskKind task) {
  if (ep.los_hours < kMinStayHours) {
    throw Error(ErrorKind::TooShort, ep.stay_name() + ": stay shorter than 5h");
  }
  TaskSample s = base_sample(ep, task);
  const auto last = static_cast<std::size_t>(std::floor(ep.los_hours));
  s.input = discretize_episode(ep, schema, last);
  for (std::size_t t = 5; t <= last; ++t) s.label_rows.push_back(t - 1);
  return s;
}

}  // namespace

TaskSample extract_ihm(const EpisodeRecord& ep, const ChannelSchema& schema) {
  if (ep.los_hours < kIhmWindowHours) {
    throw Error(ErrorKind::TooShort, ep.stay_name() + ": stay shorter than 48h");
  }
  TaskSample s = base_sample(ep, TaskKind::ihm);
  s.input = discretize_episode(ep, schema, static_cast<std::size_t>(kIhmWindowHours));
  s.targets = {ep.mortality ? 1.0 : 0.0};
  return s;
}

TaskSample extract_decompensation(const EpisodeRecord& ep, const ChannelSchema& schema) {
  TaskSample s = per_step_frame(ep, schema, TaskKind::decompensation);
  for (const std::size_t row : s.label_rows) {
    const double t = static_cast<double>(row + 1);
    const bool event = ep.death_time && *ep.death_time > t && *ep.death_time <= t + 24.0;
    s.targets.push_back(event ? 1.0 : 0.0);
  }
  return s;
}

TaskSample extract_los(const EpisodeRecord& ep, const ChannelSchema& schema) {
  TaskSample s = per_step_frame(ep, schema, TaskKind::los);
  for (const std::size_t row : s.label_rows) {
    const double t = static_cast<double>(row + 1);
    s.targets.push_back(static_cast<double>(los_class(ep.los_hours - t)));
  }
  return s;
}

TaskSample extract_phenotyping(const EpisodeRecord& ep, const ChannelSchema& schema) {
  TaskSample s = base_sample(ep, TaskKind::phenotyping);
  const auto horizon = static_cast<std::size_t>(std::max(1.0, std::ceil(ep.los_hours)));
  s.input = discretize_episode(ep, schema, horizon);
  s.targets.assign(ep.phenotypes.begin(), ep.phenotypes.end());
  return s;
}

TaskSample extract_task(const EpisodeRecord& episode, TaskKind task, const ChannelSchema& schema) {
  switch (task) {
    case TaskKind::ihm: return extract_ihm(episode, schema);
    case TaskKind::decompensation: return extract_decompensation(episode, schema);
    case TaskKind::los: return extract_los(episode, schema);
    case TaskKind::phenotyping: return extract_phenotyping(episode, schema);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown task");
}

std::size_t SampleUnit::rows_needed() const {
  if (!is_per_step(sample->task)) return sample->steps();
  return sample->label_rows.at(label_end - 1) + 1;
}

std::vector<SampleUnit> whole_units(const std::vector<SamplePtr>& samples) {
  std::vector<SampleUnit> units;
  units.reserve(samples.size());
  for (const auto& s : samples) {
    if (s->label_count() > 0) units.push_back({s, 0, s->label_count()});
  }
  return units;
}

std::vector<SampleUnit> label_units(const std::vector<SampleUnit>& units) {
  std::vector<SampleUnit> out;
  for (const auto& u : units) {
    if (!is_per_step(u.sample->task)) {
      out.push_back(u);
      continue;
    }
    for (std::size_t k = u.label_begin; k < u.label_end; ++k) out.push_back({u.sample, k, k + 1});
  }
  return out;
}

std::size_t total_labels(const std::vector<SampleUnit>& units) noexcept {
  std::size_t n = 0;
  for (const auto& u : units) n += u.labels();
  return n;
}

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

Split SplitAssignment::of(const std::string& patient_id) const {
  const auto it = by_patient.find(patient_id);
  if (it == by_patient.end()) throw Error(ErrorKind::InvalidConfig, "patient " + patient_id + " has no split");
  return it->second;
}

std::size_t SplitAssignment::count(Split split) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(by_patient.begin(), by_patient.end(), [&](const auto& kv) { return kv.second == split; }));
}

SplitAssignment make_splits(const Cohort& cohort, std::uint64_t seed) {
  const std::set<std::string> unique = [&] {
    std::set<std::string> ids;
    for (const auto& ep : cohort) ids.insert(ep.patient_id);
    return ids;
  }();
  std::vector<std::string> patients(unique.begin(), unique.end());
  Rng rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  const std::size_t n = patients.size();
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n)));
  SplitAssignment a;
  for (std::size_t i = 0; i < n; ++i) {
    const Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::validation : Split::test);
    a.by_patient.emplace(patients[i], s);
  }
  return a;
}

Normalizer Normalizer::fit(const std::vector<TaskSample>& samples, const ChannelSchema& schema) {
  Normalizer n;
  n.columns_ = schema.continuous_columns();
  const std::size_t k = n.columns_.size();
  std::vector<double> sum(k, 0.0), sumsq(k, 0.0);
  double rows = 0.0;
  for (const auto& s : samples) {
    const std::size_t width = s.input.last_dim();
    if (width != schema.total_width()) throw Error(ErrorKind::SchemaMismatch, "sample width differs from schema");
    const auto v = s.input.values();
    for (std::size_t r = 0; r < s.steps(); ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const double x = v[r * width + n.columns_[j]];
        sum[j] += x;
        sumsq[j] += x * x;
      }
    }
    rows += static_cast<double>(s.steps());
  }
  n.means_.assign(k, 0.0);
  n.scales_.assign(k, 1.0);
  if (rows == 0.0) return n;
  for (std::size_t j = 0; j < k; ++j) {
    const double mean = sum[j] / rows;
    const double var = std::max(0.0, sumsq[j] / rows - mean * mean);
    n.means_[j] = mean;
    n.scales_[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return n;
}

void Normalizer::apply(Tensor& input) const {
  if (columns_.empty()) return;
  const std::size_t width = input.last_dim();
  auto v = input.values();
  const std::size_t rows = input.size() / width;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < columns_.size(); ++j) {
      double& x = v[r * width + columns_[j]];
      x = (x - means_[j]) / scales_[j];
    }
  }
}

RawSplits prepare_task_samples(const Cohort& cohort, TaskKind task, const ChannelSchema& schema,
                               std::uint64_t split_seed, std::size_t source_index) {
  const Cohort kept = apply_exclusions(cohort, task);
  const SplitAssignment splits = make_splits(kept, split_seed);
  RawSplits raw;
  for (const auto& ep : kept) {
    TaskSample s = extract_task(ep, task, schema);
    if (s.label_count() == 0) continue;
    s.source = source_index;
    switch (splits.of(ep.patient_id)) {
      case Split::train: raw.train.push_back(std::move(s)); break;
      case Split::validation: raw.validation.push_back(std::move(s)); break;
      case Split::test: raw.test.push_back(std::move(s)); break;
    }
  }
  return raw;
}

SourceData finalize_source(RawSplits raw, const Normalizer& norm, std::string name, std::size_t index) {
  SourceData d;
  d.name = std::move(name);
  d.index = index;
  auto freeze = [&](std::vector<TaskSample>& in, std::vector<SamplePtr>& out) {
    out.reserve(in.size());
    for (auto& s : in) {
      norm.apply(s.input);
      s.source = index;
      out.push_back(std::make_shared<const TaskSample>(std::move(s)));
    }
    in.clear();
  };
  freeze(raw.train, d.train);
  freeze(raw.validation, d.validation);
  freeze(raw.test, d.test);
  return d;
}

}  // namespace dilbench
