#include "dilbench/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dilbench/error.hpp"
#include "dilbench/kv.hpp"
#include "dilbench/metrics.hpp"

namespace dilbench {

namespace fs = std::filesystem;
using nlohmann::json;

TaskDefaults task_defaults(TaskKind task) {
  switch (task) {
    case TaskKind::ihm: return {500, 6.0, 4, 16, 2, true};
    case TaskKind::phenotyping: return {500, 4.0, 6, 256, 1, true};
    case TaskKind::decompensation: return {3500, 6.0, 1, 64, 1, false};
    case TaskKind::los: return {3500, 6.0, 1, 64, 1, false};
  }
  return {};
}

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Built-in spelling of a region name, or the name unchanged.
std::string canonical_region(const std::string& name) {
  const std::string l = lower(name);
  if (l == "mimic" || l == "mimic3" || l == "mimic-iii") return "MIMIC-III";
  for (const auto& b : RegionProfile::builtin_names()) {
    if (lower(b) == l) return b;
  }
  return name;
}

bool parse_bool(const std::string& v, const std::string& key) {
  const std::string l = lower(v);
  if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
  if (l == "false" || l == "0" || l == "no" || l == "off") return false;
  throw Error(ErrorKind::InvalidConfig, key + ": expected a boolean, got '" + v + "'");
}

std::size_t parse_count(const std::string& v, const std::string& key) {
  long long n = 0;
  try {
    n = parse_int(v, key);
  } catch (const Error&) {
    throw Error(ErrorKind::InvalidConfig, key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (n < 0) throw Error(ErrorKind::InvalidConfig, key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(n);
}

double parse_number(const std::string& v, const std::string& key) {
  try {
    return parse_double(v, key);
  } catch (const Error&) {
    throw Error(ErrorKind::InvalidConfig, key + ": expected a number, got '" + v + "'");
  }
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& item : split(v, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += items[i];
    } else if constexpr (std::is_floating_point_v<T>) {
      out += format_double(items[i]);
    } else {
      out += std::to_string(items[i]);
    }
  }
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::optional<std::size_t> region_sample_cap(TaskKind task, const std::string& region) {
  if (!is_per_step(task)) return std::nullopt;
  const std::string r = canonical_region(region);
  if (r == "West") return 50000;
  if (r == "Northeast") return 25000;
  return 100000;
}

ExperimentConfig ExperimentConfig::defaults(TaskKind task) {
  ExperimentConfig c;
  const TaskDefaults d = task_defaults(task);
  c.task = task;
  c.epochs = d.epochs;
  c.buffer_capacity = d.buffer_capacity;
  c.importance = d.importance;
  c.hidden_width = d.hidden_width;
  c.num_layers = d.num_layers;
  c.bidirectional = d.bidirectional;
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "task") {
    // Only valid before other keys; see from_pairs.
    const TaskKind t = parse_task(v);
    if (t != task) *this = defaults(t);
  } else if (key == "method") {
    method = parse_method(v);
  } else if (key == "sources") {
    sources.clear();
    for (const auto& s : parse_list(v)) sources.push_back(canonical_region(s));
  } else if (key == "region") {
    sources = {"MIMIC-III", canonical_region(v)};
  } else if (key == "seeds") {
    seeds = parse_count(v, key);
  } else if (key == "seed") {
    seed = parse_count(v, key);
  } else if (key == "epochs") {
    epochs = parse_count(v, key);
  } else if (key == "batch_size") {
    batch_size = parse_count(v, key);
  } else if (key == "sample_cap") {
    sample_cap = (v == "auto" || v == "default") ? 0 : parse_count(v, key);
  } else if (key == "learning_rate") {
    learning_rate = parse_number(v, key);
  } else if (key == "hidden_width") {
    hidden_width = parse_count(v, key);
  } else if (key == "num_layers") {
    num_layers = parse_count(v, key);
  } else if (key == "bidirectional") {
    bidirectional = parse_bool(v, key);
  } else if (key == "dropout") {
    dropout = parse_number(v, key);
  } else if (key == "buffer_capacity") {
    buffer_capacity = parse_count(v, key);
  } else if (key == "importance") {
    importance = parse_number(v, key);
  } else if (key == "fisher") {
    if (v == "per_sample") {
      fisher = FisherMode::per_sample;
    } else if (v == "aggregate") {
      fisher = FisherMode::aggregate;
    } else {
      throw Error(ErrorKind::InvalidConfig, "fisher: expected per_sample or aggregate");
    }
  } else if (key == "los_loss") {
    if (v == "per_class_binary") {
      los_loss = LosLoss::per_class_binary;
    } else if (v == "categorical") {
      los_loss = LosLoss::categorical;
    } else {
      throw Error(ErrorKind::InvalidConfig, "los_loss: expected per_class_binary or categorical");
    }
  } else if (key == "data_seed") {
    data_seed = parse_count(v, key);
  } else if (key == "cohort_size") {
    cohort_size = parse_count(v, key);
  } else if (key == "shift") {
    if (v.empty() || v == "default") {
      shift.reset();
    } else {
      shift = parse_number(v, key);
    }
  } else if (key == "profile_dir") {
    profile_dir = v;
  } else if (key == "ingest_dir") {
    ingest_dir = v;
  } else if (key == "schema_file") {
    schema_file = v;
  } else if (key == "normal_values_file") {
    normal_values_file = v;
  } else if (key == "epochs_grid") {
    epochs_grid.clear();
    for (const auto& s : parse_list(v)) epochs_grid.push_back(parse_count(s, key));
  } else if (key == "importance_grid") {
    importance_grid.clear();
    for (const auto& s : parse_list(v)) importance_grid.push_back(parse_number(s, key));
  } else if (key == "output_dir") {
    output_dir = v;
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown configuration key '" + key + "'");
  }
}

ExperimentConfig ExperimentConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  ExperimentConfig c;
  // The last `task` wins and resets the task defaults before anything else.
  for (const auto& [k, v] : pairs) {
    if (k == "task") c = defaults(parse_task(trim(v)));
  }
  for (const auto& [k, v] : pairs) {
    if (k != "task") c.set(k, v);
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path,
                                        const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& kv : read_key_values(path)) pairs.emplace_back(kv.key, kv.value);
  pairs.insert(pairs.end(), overrides.begin(), overrides.end());
  ExperimentConfig c = from_pairs(pairs);
  // Relative data paths are taken relative to the config file.
  const fs::path base = path.parent_path();
  for (fs::path* p : {&c.profile_dir, &c.ingest_dir, &c.schema_file, &c.normal_values_file}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  return c;
}

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (seeds < 1) bad("seeds must be at least 1");
  if (sources.empty()) bad("at least one source is required");
  if (epochs < 1) bad("epochs must be at least 1");
  if (batch_size < 1) bad("batch_size must be at least 1");
  if (hidden_width < 1 || num_layers < 1) bad("hidden_width and num_layers must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (importance < 0.0) bad("importance must be non-negative");
  if (uses_buffer(method) || uses_ewc(method)) {
    if (buffer_capacity < 1) bad("buffer_capacity must be positive for " + std::string(to_string(method)));
  }
  if (shift && !(*shift >= 0.0 && *shift <= 1.0)) bad("shift must be in [0, 1]");
  if (epochs_grid.empty() || importance_grid.empty()) bad("grids must not be empty");
  if (!schema_file.empty() && !fs::exists(schema_file)) bad("schema file " + schema_file.string() + " not found");
  if (!normal_values_file.empty() && !fs::exists(normal_values_file)) {
    bad("normal values file " + normal_values_file.string() + " not found");
  }
  const auto builtin = RegionProfile::builtin_names();
  for (const auto& s : sources) {
    if (!ingest_dir.empty()) {
      if (!fs::is_directory(ingest_dir / s)) bad("no episode directory " + (ingest_dir / s).string());
      continue;
    }
    const bool from_file = !profile_dir.empty() && fs::exists(profile_dir / (s + ".profile"));
    if (!from_file && std::find(builtin.begin(), builtin.end(), s) == builtin.end()) {
      bad("no profile named '" + s + "' (built-in or in profile_dir)");
    }
  }
}

SequenceModelConfig ExperimentConfig::model_config() const {
  SequenceModelConfig m;
  m.input_width = 76;
  m.hidden_width = hidden_width;
  m.num_layers = num_layers;
  m.bidirectional = bidirectional;
  m.dropout_rate = dropout;
  m.output_width = output_width(task);
  m.head = is_per_step(task) ? HeadMode::per_step : HeadMode::last_step;
  m.activation = task == TaskKind::los ? OutputActivation::softmax : OutputActivation::sigmoid;
  return m;
}

TrainConfig ExperimentConfig::train_config(std::uint64_t run_seed, const std::string& source) const {
  TrainConfig t;
  t.task = task;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.sample_cap = sample_cap > 0 ? std::optional<std::size_t>(sample_cap) : region_sample_cap(task, source);
  t.adam.learning_rate = learning_rate;
  t.seed = run_seed;
  t.loss.los = los_loss;
  return t;
}

StrategyConfig ExperimentConfig::strategy_config() const {
  return StrategyConfig{method, buffer_capacity, importance, fisher};
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["task"] = std::string(to_string(task));
  kv["method"] = std::string(to_string(method));
  kv["sources"] = join(sources);
  kv["seeds"] = std::to_string(seeds);
  kv["seed"] = std::to_string(seed);
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["sample_cap"] = sample_cap ? std::to_string(sample_cap) : "auto";
  kv["learning_rate"] = format_double(learning_rate);
  kv["hidden_width"] = std::to_string(hidden_width);
  kv["num_layers"] = std::to_string(num_layers);
  kv["bidirectional"] = bidirectional ? "true" : "false";
  kv["dropout"] = format_double(dropout);
  kv["buffer_capacity"] = std::to_string(buffer_capacity);
  kv["importance"] = format_double(importance);
  kv["fisher"] = fisher == FisherMode::per_sample ? "per_sample" : "aggregate";
  kv["los_loss"] = los_loss == LosLoss::per_class_binary ? "per_class_binary" : "categorical";
  kv["data_seed"] = std::to_string(data_seed);
  kv["cohort_size"] = std::to_string(cohort_size);
  kv["shift"] = shift ? format_double(*shift) : "default";
  kv["profile_dir"] = profile_dir.generic_string();
  kv["ingest_dir"] = ingest_dir.generic_string();
  kv["schema_file"] = schema_file.generic_string();
  kv["normal_values_file"] = normal_values_file.generic_string();
  kv["epochs_grid"] = join(epochs_grid);
  kv["importance_grid"] = join(importance_grid);
  kv["output_dir"] = output_dir.generic_string();
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string ExperimentConfig::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

// ---------------------------------------------------------------------------
// Data

PreparedData prepare_data(const ExperimentConfig& config) {
  config.validate();
  PreparedData data;
  if (config.schema_file.empty()) {
    data.schema = ChannelSchema::standard();
  } else {
    data.schema = ChannelSchema::load(config.schema_file,
                                      config.normal_values_file.empty()
                                          ? std::nullopt
                                          : std::optional<fs::path>(config.normal_values_file));
  }
  Normalizer norm;
  for (std::size_t idx = 0; idx < config.sources.size(); ++idx) {
    const std::string& name = config.sources[idx];
    Cohort cohort;
    if (!config.ingest_dir.empty()) {
      cohort = read_episodes(config.ingest_dir / name, data.schema);
    } else {
      const fs::path file = config.profile_dir / (name + ".profile");
      RegionProfile profile =
          !config.profile_dir.empty() && fs::exists(file) ? RegionProfile::load(file) : RegionProfile::builtin(name);
      if (config.cohort_size) profile.cohort_size = config.cohort_size;
      if (idx > 0 && config.shift) profile.shift = *config.shift;
      cohort = generate_cohort(profile, derive_seed(config.data_seed, {idx}), data.schema);
    }
    if (cohort.empty()) throw Error(ErrorKind::EmptyCohort, "source " + name + " has no episodes");
    data.distributions.push_back(distribution_summary(cohort, data.schema));
    RawSplits raw = prepare_task_samples(cohort, config.task, data.schema, derive_seed(config.data_seed, {idx, 77}), idx);
    if (raw.train.empty() || raw.validation.empty() || raw.test.empty()) {
      throw Error(ErrorKind::EmptySource, "source " + name + " leaves an empty split after exclusions");
    }
    if (idx == 0) norm = Normalizer::fit(raw.train, data.schema);
    data.sources.push_back(finalize_source(std::move(raw), norm, name, idx));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Protocol

const Aggregate* ResultsRecord::find(std::size_t stage, const std::string& source, const std::string& metric) const {
  for (const auto& a : aggregates) {
    if (a.stage == stage && a.source == source && a.metric == metric) return &a;
  }
  return nullptr;
}

const Aggregate& ResultsRecord::final_psa(const std::string& metric) const {
  const Aggregate* a = find(config.sources.size(), "PSA", metric);
  if (!a) throw Error(ErrorKind::NoResults, "no final PSA for " + metric);
  return *a;
}

std::vector<Aggregate> aggregate(const std::vector<SeedRecord>& seeds) {
  std::vector<Aggregate> out;
  std::map<std::tuple<std::size_t, std::string, std::string>, std::vector<double>> values;
  for (const auto& s : seeds) {
    for (const auto& e : s.entries) {
      auto key = std::make_tuple(e.stage, e.source, e.metric);
      if (!values.count(key)) out.push_back({e.stage, e.source, e.metric, 0.0, 0.0});
      values[key].push_back(e.value);
    }
  }
  for (auto& a : out) {
    const auto& v = values[{a.stage, a.source, a.metric}];
    double sum = 0.0;
    for (const double x : v) sum += x;
    a.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (const double x : v) ss += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(v.size()));
  }
  return out;
}

namespace {

std::vector<SampleUnit> split_units(const SourceData& s, EvalSplit split) {
  return whole_units(split == EvalSplit::test ? s.test : s.validation);
}

void evaluate_stage(const SequenceModel& model, const PreparedData& data, std::size_t stage, EvalSplit split,
                    SeedRecord& record) {
  std::map<std::string, std::vector<double>> seen;
  std::vector<std::string> order;
  for (const auto& src : data.sources) {
    const auto metrics = task_metrics(predict_units(model, split_units(src, split)));
    for (const auto& m : metrics) {
      record.entries.push_back({stage, src.name, m.name, m.value});
      if (src.index < stage) {
        if (!seen.count(m.name)) order.push_back(m.name);
        seen[m.name].push_back(m.value);
      }
    }
  }
  for (const auto& name : order) record.entries.push_back({stage, "PSA", name, psa(seen[name], stage)});
}

std::vector<ValidationSet> validation_sets(const PreparedData& data, std::size_t upto) {
  std::vector<ValidationSet> sets;
  for (std::size_t i = 0; i <= upto; ++i) {
    sets.push_back({data.sources[i].name, i, whole_units(data.sources[i].validation)});
  }
  return sets;
}

// Runs the protocol for several variants that share everything up to the end
// of the first source (same seed, model and first-source training settings).
std::vector<ResultsRecord> run_shared(const ExperimentConfig& base, const std::vector<ExperimentConfig>& variants,
                                      const PreparedData& data, EvalSplit split) {
  base.validate();
  if (data.sources.size() != base.sources.size()) {
    throw Error(ErrorKind::InvalidConfig, "prepared data does not match the configured sources");
  }
  std::vector<ResultsRecord> results(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    variants[v].validate();
    results[v].config = variants[v];
  }
  const std::size_t n_sources = data.sources.size();
  for (std::size_t k = 0; k < base.seeds; ++k) {
    const std::uint64_t run_seed = base.run_seed(k);
    SequenceModelConfig mc = base.model_config();
    mc.input_width = data.schema.total_width();
    SequenceModel first(mc, derive_seed(run_seed, {0x1417}));
    SeedRecord first_record;
    first_record.seed = run_seed;

    {
      StrategyState none(StrategyConfig{Method::baseline, 0, 0.0, FisherMode::per_sample});
      const TrainConfig tc = base.train_config(run_seed, data.sources[0].name);
      auto r = train_on_source(first, whole_units(data.sources[0].train), 0, tc, none, validation_sets(data, 0));
      first_record.validation = std::move(r.log);
      evaluate_stage(first, data, 1, split, first_record);
      if (n_sources == 1) {
        for (auto& res : results) {
          res.seeds.push_back(first_record);
          if (split == EvalSplit::test) ++res.test_reads;
        }
        continue;
      }
      for (std::size_t v = 0; v < variants.size(); ++v) {
        const ExperimentConfig& cfg = variants[v];
        SequenceModel model = first;
        SeedRecord record = first_record;
        std::size_t reads = split == EvalSplit::test ? 1 : 0;
        StrategyState strategy(cfg.strategy_config());
        strategy.finish_source(model, r.units, 0, run_seed, tc.loss);
        for (std::size_t idx = 1; idx < n_sources; ++idx) {
          const TrainConfig tci = cfg.train_config(run_seed, data.sources[idx].name);
          auto ri = train_on_source(model, whole_units(data.sources[idx].train), idx, tci, strategy,
                                    validation_sets(data, idx));
          record.validation.insert(record.validation.end(), ri.log.begin(), ri.log.end());
          evaluate_stage(model, data, idx + 1, split, record);
          if (split == EvalSplit::test) ++reads;
          if (idx + 1 < n_sources) strategy.finish_source(model, ri.units, idx, run_seed, tci.loss);
        }
        results[v].seeds.push_back(std::move(record));
        results[v].test_reads += reads;
      }
    }
  }
  for (auto& r : results) r.aggregates = aggregate(r.seeds);
  return results;
}

}  // namespace

std::vector<ResultsRecord> run_methods(const ExperimentConfig& config, const std::vector<Method>& methods,
                                       const PreparedData& data, EvalSplit split) {
  std::vector<ExperimentConfig> variants;
  for (const Method m : methods) {
    ExperimentConfig c = config;
    c.method = m;
    variants.push_back(c);
  }
  return run_shared(config, variants, data, split);
}

ResultsRecord run_experiment(const ExperimentConfig& config, const PreparedData& data, EvalSplit split) {
  return run_shared(config, {config}, data, split).front();
}

ResultsRecord run_experiment(const ExperimentConfig& config) {
  const PreparedData data = prepare_data(config);
  return run_experiment(config, data);
}

GridResult grid_search(const ExperimentConfig& config, const PreparedData& data) {
  config.validate();
  GridResult out;
  const std::vector<std::size_t> epochs =
      is_per_step(config.task) ? std::vector<std::size_t>{config.epochs} : config.epochs_grid;
  const std::string metric = primary_metric(config.task);
  for (const std::size_t e : epochs) {
    ExperimentConfig base = config;
    base.epochs = e;
    std::vector<ExperimentConfig> variants;
    for (const double lambda : config.importance_grid) {
      ExperimentConfig c = base;
      c.importance = lambda;
      variants.push_back(c);
    }
    const auto results = run_shared(base, variants, data, EvalSplit::validation);
    for (std::size_t v = 0; v < results.size(); ++v) {
      out.test_reads += results[v].test_reads;
      out.cells.push_back({e, variants[v].importance, results[v].final_psa(metric).mean});
    }
  }
  std::vector<GridCell> ordered = out.cells;
  std::stable_sort(ordered.begin(), ordered.end(), [](const GridCell& a, const GridCell& b) {
    return a.importance != b.importance ? a.importance < b.importance : a.epochs < b.epochs;
  });
  out.best = ordered.front();
  for (const auto& c : ordered) {
    if (c.validation_psa > out.best.validation_psa) out.best = c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f (%.3f)", mean, std);
  return buf;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write " + path.string());
  return out;
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

std::string region_of(const ExperimentConfig& c) { return c.sources.back(); }

void write_distribution(const std::vector<ChannelSummary>& summary, const fs::path& path) {
  auto out = open_out(path);
  out << "channel,present,mean,q1,median,q3,bin,bin_low,bin_high,count\n";
  for (const auto& s : summary) {
    const std::size_t bins = s.counts.size();
    const double width = bins ? (s.bin_high - s.bin_low) / static_cast<double>(bins) : 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      out << s.channel << ',' << (s.present ? 1 : 0) << ',' << format_double(s.mean) << ','
          << format_double(s.q1) << ',' << format_double(s.median) << ',' << format_double(s.q3) << ',' << b << ','
          << format_double(s.bin_low + width * static_cast<double>(b)) << ','
          << format_double(s.bin_low + width * static_cast<double>(b + 1)) << ',' << s.counts[b] << '\n';
    }
  }
}

}  // namespace

void write_results(const ResultsRecord& record, const PreparedData& data, const fs::path& dir) {
  make_dirs(dir);
  const auto& c = record.config;
  const std::string task(to_string(c.task));
  const std::string method(to_string(c.method));
  const std::string region = region_of(c);

  json j;
  j["digest"] = c.digest();
  j["task"] = task;
  j["method"] = method;
  j["region"] = region;
  j["sources"] = c.sources;
  j["test_reads"] = record.test_reads;
  json cfg = json::object();
  for (const auto& kv : parse_key_values(c.canonical(), "config")) cfg[kv.key] = kv.value;
  j["config"] = cfg;
  j["seeds"] = json::array();
  for (const auto& s : record.seeds) {
    json entries = json::array();
    for (const auto& e : s.entries) {
      entries.push_back({{"stage", e.stage}, {"source", e.source}, {"metric", e.metric}, {"value", e.value}});
    }
    j["seeds"].push_back({{"seed", s.seed}, {"entries", entries}});
  }
  j["aggregates"] = json::array();
  for (const auto& a : record.aggregates) {
    j["aggregates"].push_back({{"stage", a.stage},
                               {"source", a.source},
                               {"metric", a.metric},
                               {"mean", a.mean},
                               {"std", a.std},
                               {"formatted", format_mean_std(a.mean, a.std)}});
  }
  open_out(dir / "results.json") << j.dump(2) << '\n';

  auto csv = open_out(dir / "results.csv");
  csv << "task,region,method,seed,source,metric,value\n";
  for (const auto& s : record.seeds) {
    for (const auto& e : s.entries) {
      csv << task << ',' << region << ',' << method << ',' << s.seed << ',' << e.source << ',' << e.metric << '@'
          << e.stage << ',' << format_double(e.value) << '\n';
    }
  }

  auto summary = open_out(dir / "summary.csv");
  summary << "task,region,method,stage,source,metric,mean,std,formatted\n";
  for (const auto& a : record.aggregates) {
    summary << task << ',' << region << ',' << method << ',' << a.stage << ',' << a.source << ',' << a.metric << ','
            << format_double(a.mean) << ',' << format_double(a.std) << ',' << format_mean_std(a.mean, a.std)
            << '\n';
  }

  auto log = open_out(dir / "validation_log.jsonl");
  for (const auto& s : record.seeds) {
    for (const auto& v : s.validation) {
      log << json{{"seed", s.seed}, {"source", v.source}, {"epoch", v.epoch}, {"set", v.evaluated},
                  {"metric", v.metric}, {"value", v.value}}
                 .dump()
          << '\n';
    }
  }

  make_dirs(dir / "distributions");
  for (std::size_t i = 0; i < data.distributions.size() && i < data.sources.size(); ++i) {
    write_distribution(data.distributions[i], dir / "distributions" / (data.sources[i].name + ".csv"));
  }
}

void write_grid(const GridResult& grid, const ExperimentConfig& config, const fs::path& dir) {
  make_dirs(dir);
  auto out = open_out(dir / "grid.csv");
  out << "task,region,method,epochs,importance,validation_psa\n";
  for (const auto& c : grid.cells) {
    out << to_string(config.task) << ',' << region_of(config) << ',' << to_string(config.method) << ',' << c.epochs
        << ',' << format_double(c.importance) << ',' << format_double(c.validation_psa) << '\n';
  }
  json j = {{"task", to_string(config.task)},
            {"region", region_of(config)},
            {"method", to_string(config.method)},
            {"best", {{"epochs", grid.best.epochs}, {"importance", grid.best.importance}}},
            {"validation_psa", grid.best.validation_psa},
            {"test_reads", grid.test_reads}};
  open_out(dir / "grid_best.json") << j.dump(2) << '\n';
}

ReportFiles report_emit(const fs::path& results_dir, const fs::path& out_dir) {
  std::vector<fs::path> files;
  if (fs::is_directory(results_dir)) {
    for (const auto& e : fs::recursive_directory_iterator(results_dir)) {
      if (e.is_regular_file() && e.path().filename() == "results.json") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::NoResults, "no results.json under " + results_dir.string());

  struct Cell {
    double mean;
    double std;
  };
  // (method, region) -> column -> cell
  std::map<std::pair<int, std::string>, std::map<std::string, Cell>> table;
  std::set<std::pair<int, std::string>> columns;  // (task order, column name)
  std::vector<std::string> region_order;
  std::map<std::string, fs::path> distributions;

  for (const auto& f : files) {
    json j;
    try {
      std::ifstream in(f);
      j = json::parse(in);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::MalformedFile, f.string() + ": " + e.what());
    }
    const auto task = parse_task(j.at("task").get<std::string>());
    const auto method = parse_method(j.at("method").get<std::string>());
    const std::string region = j.at("region").get<std::string>();
    const std::size_t final_stage = j.at("sources").size();
    if (std::find(region_order.begin(), region_order.end(), region) == region_order.end()) {
      region_order.push_back(region);
    }
    auto& row = table[{static_cast<int>(method), region}];
    for (const auto& a : j.at("aggregates")) {
      if (a.at("stage").get<std::size_t>() != final_stage || a.at("source").get<std::string>() != "PSA") continue;
      const std::string col = std::string(to_string(task)) + " " + a.at("metric").get<std::string>();
      columns.insert({static_cast<int>(task), col});
      row.emplace(col, Cell{a.at("mean").get<double>(), a.at("std").get<double>()});
    }
    const fs::path dist = f.parent_path() / "distributions";
    if (fs::is_directory(dist)) {
      std::vector<fs::path> csvs;
      for (const auto& e : fs::directory_iterator(dist)) {
        if (e.path().extension() == ".csv") csvs.push_back(e.path());
      }
      std::sort(csvs.begin(), csvs.end());
      for (const auto& p : csvs) distributions.emplace(p.stem().string(), p);
    }
  }

  make_dirs(out_dir);
  ReportFiles files_out;
  files_out.table = out_dir / "table_psa.csv";
  auto out = open_out(files_out.table);
  out << "method,region";
  for (const auto& [order, col] : columns) out << ',' << col;
  out << '\n';
  for (const auto& [key, row] : table) {
    out << to_string(static_cast<Method>(key.first)) << ',' << key.second;
    for (const auto& [order, col] : columns) {
      out << ',';
      if (const auto it = row.find(col); it != row.end()) out << format_mean_std(it->second.mean, it->second.std);
    }
    out << '\n';
    ++files_out.rows;
  }

  files_out.histograms = out_dir / "histograms.csv";
  auto hist = open_out(files_out.histograms);
  hist << "region,channel,present,mean,q1,median,q3,bin,bin_low,bin_high,count\n";
  for (const auto& [region, path] : distributions) {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (!line.empty()) hist << region << ',' << line << '\n';
    }
  }
  return files_out;
}

}  // namespace dilbench
