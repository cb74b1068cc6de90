#include "dilbench/strategies.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <tuple>

#include <json.hpp>

#include "dilbench/error.hpp"

namespace dilbench {

std::string_view to_string(Method method) noexcept {
  switch (method) {
    case Method::baseline: return "baseline";
    case Method::ewc: return "ewc";
    case Method::replay: return "replay";
    case Method::adjusted_replay: return "adjusted_replay";
    case Method::combined: return "combined";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (const Method m : all_methods()) {
    if (to_string(m) == name) return m;
  }
  if (name == "adjusted") return Method::adjusted_replay;
  if (name == "traditional_replay") return Method::replay;
  throw Error(ErrorKind::InvalidConfig, "unknown method '" + std::string(name) + "'");
}

std::vector<Method> all_methods() {
  return {Method::baseline, Method::ewc, Method::replay, Method::adjusted_replay, Method::combined};
}

bool uses_buffer(Method m) noexcept { return m == Method::replay || m == Method::adjusted_replay || m == Method::combined; }
bool uses_ewc(Method m) noexcept { return m == Method::ewc || m == Method::combined; }
bool uses_adjusted_schedule(Method m) noexcept { return m == Method::adjusted_replay || m == Method::combined; }

double traditional_replay_loss(double loss_curr, double loss_rep, std::size_t s) {
  if (s <= 1) return loss_curr;
  const double sd = static_cast<double>(s);
  return (1.0 / sd) * loss_curr + (1.0 - 1.0 / sd) * loss_rep;
}

double adjusted_replay_loss(double loss_curr, double loss_rep, std::size_t s) {
  if (s <= 1) return loss_curr;
  const double sd = static_cast<double>(s);
  return (1.0 - 1.0 / sd) * loss_curr + (1.0 / sd) * loss_rep;
}

std::size_t schedule_period(std::size_t steps, std::size_t buffer_size) {
  if (buffer_size == 0 || buffer_size >= steps) {
    throw Error(ErrorKind::InvalidPeriod, "buffer size " + std::to_string(buffer_size) + " must be below the " +
                                              std::to_string(steps) + " steps of the source");
  }
  return steps / buffer_size;
}

std::optional<std::size_t> adjusted_schedule(std::size_t i, std::size_t steps, std::size_t buffer_size,
                                             std::size_t buffer_length) {
  const std::size_t p = schedule_period(steps, buffer_size);
  if (i % p != 0) return std::nullopt;
  const std::size_t j = i / p;
  if (j >= buffer_length) return std::nullopt;
  return j;
}

double ewc_penalty(std::span<const double> theta, std::span<const double> theta_star, std::span<const double> fisher,
                   double lambda) {
  if (theta.size() != theta_star.size() || theta.size() != fisher.size()) {
    throw Error(ErrorKind::LengthMismatch, "ewc_penalty vectors differ in length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - theta_star[i];
    sum += 0.5 * fisher[i] * d * d;
  }
  return lambda * sum;
}

void add_ewc_gradient(std::span<const double> theta, std::span<const double> theta_star,
                      std::span<const double> fisher, double lambda, double weight, std::span<double> grads) {
  if (theta.size() != theta_star.size() || theta.size() != fisher.size() || theta.size() != grads.size()) {
    throw Error(ErrorKind::LengthMismatch, "ewc gradient vectors differ in length");
  }
  const double k = weight * lambda;
  for (std::size_t i = 0; i < theta.size(); ++i) grads[i] += k * fisher[i] * (theta[i] - theta_star[i]);
}

double StepWeights::combine(double loss_curr, double loss_rep, double penalty_value) const {
  return current * loss_curr + replay * loss_rep + penalty * penalty_value;
}

StepWeights step_weights(Method method, std::size_t s, std::optional<std::size_t> adjust_index,
                         std::optional<std::size_t> random_index) {
  StepWeights w;
  if (s <= 1 || method == Method::baseline) return w;
  const double sd = static_cast<double>(s);
  switch (method) {
    case Method::baseline: break;
    case Method::ewc: w.penalty = 1.0; break;
    case Method::replay:
      if (!random_index) throw Error(ErrorKind::NoBuffer, "replay step without a buffer sample");
      w.current = 1.0 / sd;
      w.replay = 1.0 - 1.0 / sd;
      w.replay_indices = {*random_index};
      break;
    case Method::adjusted_replay:
    case Method::combined:
      if (adjust_index) {
        w.current = 1.0 - 1.0 / sd;
        w.replay = 1.0 / sd;
        w.replay_indices = {*adjust_index};
      }
      // Combined swaps L_curr for L_curr + penalty in both branches.
      if (method == Method::combined) w.penalty = w.current;
      break;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Memory buffer

std::vector<std::size_t> MemoryBuffer::shares(std::size_t capacity, const std::vector<std::size_t>& available) {
  const std::size_t k = available.size();
  std::vector<std::size_t> share(k, 0);
  std::vector<bool> fixed(k, false);
  std::size_t remaining = capacity;
  while (true) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < k; ++i) {
      if (!fixed[i]) open.push_back(i);
    }
    if (open.empty()) break;
    const std::size_t base = remaining / open.size();
    const std::size_t extra = remaining % open.size();
    bool changed = false;
    for (std::size_t n = 0; n < open.size(); ++n) {
      const std::size_t i = open[n];
      const std::size_t want = base + (n < extra ? 1 : 0);
      if (available[i] <= want) {
        share[i] = available[i];
        fixed[i] = true;
        remaining -= available[i];
        changed = true;
      }
    }
    if (changed) continue;
    for (std::size_t n = 0; n < open.size(); ++n) share[open[n]] = base + (n < extra ? 1 : 0);
    break;
  }
  return share;
}

void MemoryBuffer::update(const std::vector<SampleUnit>& finished_source, std::size_t source_id, Rng& rng) {
  Allocation a;
  a.source = source_id;
  // Partial Fisher-Yates: a uniformly random ordered prefix of `capacity` units.
  std::vector<std::size_t> idx(finished_source.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min(capacity_, idx.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  a.ordered.reserve(take);
  for (std::size_t i = 0; i < take; ++i) a.ordered.push_back(finished_source[idx[i]]);
  allocations_.push_back(std::move(a));

  std::vector<std::size_t> available;
  for (const auto& al : allocations_) available.push_back(al.ordered.size());
  const auto share = shares(capacity_, available);
  for (std::size_t i = 0; i < allocations_.size(); ++i) {
    allocations_[i].kept = std::min(share[i], allocations_[i].ordered.size());
  }
}

std::size_t MemoryBuffer::size() const noexcept {
  std::size_t n = 0;
  for (const auto& a : allocations_) n += a.kept;
  return n;
}

std::vector<BufferEntry> MemoryBuffer::entries() const {
  std::vector<BufferEntry> out;
  out.reserve(size());
  for (const auto& a : allocations_) {
    for (std::size_t i = 0; i < a.kept; ++i) out.push_back({a.ordered[i], a.source});
  }
  return out;
}

BufferEntry MemoryBuffer::at(std::size_t index) const {
  for (const auto& a : allocations_) {
    if (index < a.kept) return {a.ordered[index], a.source};
    index -= a.kept;
  }
  throw Error(ErrorKind::NoBuffer, "buffer index out of range");
}

std::vector<std::pair<std::size_t, std::size_t>> MemoryBuffer::per_source_counts() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& a : allocations_) out.emplace_back(a.source, a.kept);
  return out;
}

MemoryBuffer MemoryBuffer::restore(std::size_t capacity, const std::vector<BufferEntry>& entries) {
  if (entries.size() > capacity) throw Error(ErrorKind::InvalidConfig, "buffer entries exceed the capacity");
  MemoryBuffer b(capacity);
  for (const auto& e : entries) {
    if (b.allocations_.empty() || b.allocations_.back().source != e.source) {
      b.allocations_.push_back(Allocation{e.source, {}, 0});
    }
    b.allocations_.back().ordered.push_back(e.unit);
    b.allocations_.back().kept += 1;
  }
  return b;
}

// ---------------------------------------------------------------------------
// Fisher diagonal

std::vector<double> fisher_diagonal(SequenceModel& model, const std::vector<BufferEntry>& buffer, FisherMode mode,
                                    const LossOptions& options) {
  if (buffer.empty()) throw Error(ErrorKind::NoBuffer, "Fisher diagonal needs buffer samples");
  auto& params = model.params();
  const std::size_t n = params.size();
  std::vector<double> fisher(n, 0.0);
  Rng unused(0);
  params.zero_grad();
  for (const auto& entry : buffer) {
    const UnitBatch batch = make_unit_batch(std::span<const SampleUnit>(&entry.unit, 1));
    Tape tape;
    const Var loss = task_loss(tape, model, batch, Mode::eval, unused, options);
    if (mode == FisherMode::per_sample) {
      tape.backward(loss);
      const auto g = params.grads();
      for (std::size_t i = 0; i < n; ++i) fisher[i] += g[i] * g[i];
      params.zero_grad();
    } else {
      // Gradients accumulate across entries into the summed-loss gradient.
      tape.backward(loss);
    }
  }
  const double nb = static_cast<double>(buffer.size());
  if (mode == FisherMode::per_sample) {
    for (auto& f : fisher) f /= nb;
  } else {
    const auto g = params.grads();
    for (std::size_t i = 0; i < n; ++i) {
      const double mean_grad = g[i] / nb;
      fisher[i] = mean_grad * mean_grad;
    }
    params.zero_grad();
  }
  return fisher;
}

// ---------------------------------------------------------------------------
// Strategy state

StrategyState::StrategyState(StrategyConfig config) : config_(config), buffer_(config.buffer_capacity) {
  if (config_.importance < 0.0) throw Error(ErrorKind::InvalidConfig, "importance must be non-negative");
}

void StrategyState::begin_source(std::size_t total_steps) {
  step_ = 0;
  total_steps_ = total_steps;
  period_ = 0;
  if (s_ >= 2 && uses_adjusted_schedule(config_.method)) {
    if (buffer_.empty()) throw Error(ErrorKind::NoBuffer, "adjusted replay with an empty buffer");
    period_ = schedule_period(total_steps, buffer_.size());
  }
}

StepWeights StrategyState::next_step(Rng& rng, std::size_t span) {
  std::vector<std::size_t> picks;
  if (s_ >= 2 && uses_buffer(config_.method)) {
    if (buffer_.empty()) throw Error(ErrorKind::NoBuffer, "replay with an empty buffer");
    if (config_.method == Method::replay) {
      std::uniform_int_distribution<std::size_t> draw(0, buffer_.size() - 1);
      for (std::size_t k = 0; k < std::max<std::size_t>(span, 1); ++k) picks.push_back(draw(rng));
    } else {
      for (std::size_t i = step_; i < step_ + span; ++i) {
        if (i % period_ == 0 && i / period_ < buffer_.size()) picks.push_back(i / period_);
      }
    }
  }
  step_ += span;
  std::optional<std::size_t> first;
  if (!picks.empty()) first = picks.front();
  StepWeights w = config_.method == Method::replay ? step_weights(config_.method, s_, std::nullopt, first)
                                                   : step_weights(config_.method, s_, first, std::nullopt);
  if (!w.replay_indices.empty()) w.replay_indices = std::move(picks);
  return w;
}

bool StrategyState::penalty_active() const noexcept {
  return s_ >= 2 && uses_ewc(config_.method) && theta_star_ && fisher_ && config_.importance != 0.0;
}

double StrategyState::penalty(std::span<const double> theta) const {
  if (!penalty_active()) return 0.0;
  return ewc_penalty(theta, *theta_star_, *fisher_, config_.importance);
}

void StrategyState::add_penalty_gradient(std::span<const double> theta, double weight, std::span<double> grads) const {
  if (!penalty_active() || weight == 0.0) return;
  add_ewc_gradient(theta, *theta_star_, *fisher_, config_.importance, weight, grads);
}

void StrategyState::finish_source(SequenceModel& model, const std::vector<SampleUnit>& source_units,
                                  std::size_t source_id, std::uint64_t seed, const LossOptions& options) {
  if (config_.method != Method::baseline) {
    if (uses_buffer(config_.method) || uses_ewc(config_.method)) {
      Rng rng(derive_seed(seed, {source_id, 0xb0ffe7}));
      buffer_.update(label_units(source_units), source_id, rng);
    }
    if (uses_ewc(config_.method)) {
      const auto values = model.params().values();
      theta_star_ = std::vector<double>(values.begin(), values.end());
      fisher_ = fisher_diagonal(model, buffer_.entries(), config_.fisher, options);
    }
  }
  ++s_;
  step_ = 0;
  period_ = 0;
}

StrategyState StrategyState::restore(StrategyConfig config, std::size_t sources_seen, MemoryBuffer buffer,
                                     std::optional<std::vector<double>> theta_star,
                                     std::optional<std::vector<double>> fisher) {
  if (sources_seen < 1) throw Error(ErrorKind::InvalidConfig, "sources seen must be at least 1");
  if (theta_star.has_value() != fisher.has_value() || (theta_star && theta_star->size() != fisher->size())) {
    throw Error(ErrorKind::LengthMismatch, "theta* and Fisher diagonal must be restored together");
  }
  StrategyState state(config);
  state.s_ = sources_seen;
  state.buffer_ = std::move(buffer);
  state.theta_star_ = std::move(theta_star);
  state.fisher_ = std::move(fisher);
  return state;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

std::filesystem::path with_suffix(const std::filesystem::path& stem, const std::string& suffix) {
  return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

void save_strategy_state(const std::filesystem::path& stem, const StrategyState& state) {
  const auto& c = state.config();
  nlohmann::json j;
  j["method"] = std::string(to_string(c.method));
  j["buffer_capacity"] = c.buffer_capacity;
  j["importance"] = c.importance;
  j["fisher_mode"] = c.fisher == FisherMode::per_sample ? "per_sample" : "aggregate";
  j["sources_seen"] = state.sources_seen();
  j["buffer"] = nlohmann::json::array();
  for (const auto& e : state.buffer().entries()) {
    j["buffer"].push_back({{"source", e.source},
                           {"episode", e.unit.sample->episode},
                           {"label_begin", e.unit.label_begin},
                           {"label_end", e.unit.label_end}});
  }
  j["has_snapshot"] = state.theta_star().has_value();
  std::ofstream out(with_suffix(stem, ".json"));
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + with_suffix(stem, ".json").string());
  out << j.dump(2) << '\n';
  if (state.theta_star()) {
    write_float64_blob(with_suffix(stem, ".theta.bin"), *state.theta_star());
    write_float64_blob(with_suffix(stem, ".fisher.bin"), *state.fisher());
  }
}

StrategyState load_strategy_state(const std::filesystem::path& stem, const std::vector<SampleUnit>& pool) {
  const auto path = with_suffix(stem, ".json");
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    StrategyConfig c;
    c.method = parse_method(j.at("method").get<std::string>());
    c.buffer_capacity = j.at("buffer_capacity").get<std::size_t>();
    c.importance = j.at("importance").get<double>();
    c.fisher = j.at("fisher_mode").get<std::string>() == "aggregate" ? FisherMode::aggregate : FisherMode::per_sample;

    std::map<std::tuple<std::size_t, std::string, std::size_t, std::size_t>, const SampleUnit*> index;
    for (const auto& u : pool) {
      for (const auto& lu : label_units({u})) {
        index.emplace(std::make_tuple(u.sample->source, u.sample->episode, lu.label_begin, lu.label_end), &u);
      }
      index.emplace(std::make_tuple(u.sample->source, u.sample->episode, u.label_begin, u.label_end), &u);
    }
    std::vector<BufferEntry> entries;
    for (const auto& e : j.at("buffer")) {
      const auto key = std::make_tuple(e.at("source").get<std::size_t>(), e.at("episode").get<std::string>(),
                                       e.at("label_begin").get<std::size_t>(), e.at("label_end").get<std::size_t>());
      const auto it = index.find(key);
      if (it == index.end()) {
        throw Error(ErrorKind::MalformedFile, "buffer entry " + std::get<1>(key) + " not found in the sample pool");
      }
      SampleUnit unit = *it->second;
      unit.label_begin = std::get<2>(key);
      unit.label_end = std::get<3>(key);
      entries.push_back({unit, std::get<0>(key)});
    }
    std::optional<std::vector<double>> theta, fisher;
    if (j.at("has_snapshot").get<bool>()) {
      theta = read_float64_blob(with_suffix(stem, ".theta.bin"));
      fisher = read_float64_blob(with_suffix(stem, ".fisher.bin"));
    }
    return StrategyState::restore(c, j.at("sources_seen").get<std::size_t>(),
                                  MemoryBuffer::restore(c.buffer_capacity, entries), std::move(theta),
                                  std::move(fisher));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedFile, path.string() + ": " + e.what());
  }
}

void export_buffer(const MemoryBuffer& buffer, const Cohort& episodes, const std::filesystem::path& directory,
                   const ChannelSchema& schema) {
  const auto entries = buffer.entries();
  std::map<std::string, const EpisodeRecord*> by_name;
  for (const auto& ep : episodes) by_name.emplace(ep.stay_name(), &ep);
  Cohort selected;
  std::vector<std::string> seen;
  for (const auto& e : entries) {
    const std::string& name = e.unit.sample->episode;
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorKind::MalformedFile, "buffered episode " + name + " not in cohort");
    if (std::find(seen.begin(), seen.end(), name) == seen.end()) {
      seen.push_back(name);
      selected.push_back(*it->second);
    }
  }
  write_episodes(selected, directory, schema);
  std::ofstream out(directory / "buffer.csv");
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + (directory / "buffer.csv").string());
  out << "index,source,stay,label_begin,label_end\n";
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out << i << ',' << entries[i].source << ',' << entries[i].unit.sample->episode << ','
        << entries[i].unit.label_begin << ',' << entries[i].unit.label_end << '\n';
  }
}

}  // namespace dilbench
