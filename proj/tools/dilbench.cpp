// dilbench: synthetic ICU cohorts, sequential-source training and reports.
//
// Exit status: 0 success, 1 usage or configuration error, 2 data error,
// 3 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dilbench/cohort.hpp"
#include "dilbench/error.hpp"
#include "dilbench/experiment.hpp"
#include "dilbench/kv.hpp"
#include "dilbench/rng.hpp"

namespace fs = std::filesystem;
using namespace dilbench;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kRuntime = 3;

fs::path default_output() {
  const char* env = std::getenv("DILBENCH_OUTPUT_DIR");
  return env && *env ? fs::path(env) : fs::path("results");
}

std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& items) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw CLI::ValidationError("--set", "expected key=value, got '" + item + "'");
    }
    out.emplace_back(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  return out;
}

// Options shared by train and grid.
struct RunOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string task;
  std::string method;
  std::string region;
  std::optional<std::size_t> seeds;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add_to(CLI::App* cmd, bool allow_all_methods) {
    cmd->add_option("--config", config, "Experiment config file (key = value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "Override a config key, e.g. --set learning_rate=0.0005 (repeatable)");
    cmd->add_option("--task", task, "ihm, decompensation, los or phenotyping");
    cmd->add_option("--method", method,
                    allow_all_methods ? "baseline, ewc, replay, adjusted_replay, combined or all"
                                      : "baseline, ewc, replay, adjusted_replay or combined");
    cmd->add_option("--region", region, "Target region trained after MIMIC-III (South, Midwest, West, Northeast)");
    cmd->add_option("--seeds", seeds, "Number of repetitions")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", seed, "First run seed");
    cmd->add_option("--out", out, "Output directory (default: $DILBENCH_OUTPUT_DIR or ./results)");
  }

  ExperimentConfig build() const {
    auto pairs = parse_overrides(sets);
    if (!task.empty()) pairs.insert(pairs.begin(), {"task", task});
    if (!region.empty()) pairs.emplace_back("region", region);
    if (seeds) pairs.emplace_back("seeds", std::to_string(*seeds));
    if (seed) pairs.emplace_back("seed", std::to_string(*seed));
    if (!method.empty() && method != "all") pairs.emplace_back("method", method);
    ExperimentConfig c = config.empty() ? ExperimentConfig::from_pairs(pairs) : ExperimentConfig::load(config, pairs);
    // --out, then output_dir from the config or --set, then the environment.
    bool configured = false;
    for (const auto& [k, v] : pairs) configured = configured || k == "output_dir";
    if (!config.empty()) {
      for (const auto& kv : read_key_values(config)) configured = configured || kv.key == "output_dir";
    }
    if (!out.empty()) {
      c.output_dir = out;
    } else if (!configured) {
      c.output_dir = default_output();
    }
    return c;
  }
};

fs::path run_dir(const ExperimentConfig& c) {
  return c.output_dir / std::string(to_string(c.task)) / c.sources.back() / std::string(to_string(c.method));
}

int cmd_train(const RunOptions& opt) {
  const ExperimentConfig config = opt.build();
  std::vector<Method> methods = opt.method == "all" ? all_methods() : std::vector<Method>{config.method};
  std::fprintf(stderr, "preparing %s data for %zu sources\n", std::string(to_string(config.task)).c_str(),
               config.sources.size());
  const PreparedData data = prepare_data(config);
  const auto results = run_methods(config, methods, data);
  const std::string primary = primary_metric(config.task);
  for (const auto& r : results) {
    const fs::path dir = run_dir(r.config);
    write_results(r, data, dir);
    const auto& a = r.final_psa(primary);
    std::printf("%-16s %-10s PSA %s = %s  -> %s\n", std::string(to_string(r.config.method)).c_str(),
                r.config.sources.back().c_str(), primary.c_str(), format_mean_std(a.mean, a.std).c_str(),
                dir.string().c_str());
  }
  return 0;
}

int cmd_grid(const RunOptions& opt) {
  const ExperimentConfig config = opt.build();
  const PreparedData data = prepare_data(config);
  const GridResult grid = grid_search(config, data);
  const fs::path dir = run_dir(config) / "grid";
  write_grid(grid, config, dir);
  for (const auto& c : grid.cells) {
    std::printf("epochs %2zu  importance %-4s validation PSA %.4f\n", c.epochs, format_double(c.importance).c_str(),
                c.validation_psa);
  }
  std::printf("best: epochs %zu, importance %s (test reads: %zu) -> %s\n", grid.best.epochs,
              format_double(grid.best.importance).c_str(), grid.test_reads, dir.string().c_str());
  return 0;
}

struct GenerateOptions {
  std::vector<std::string> regions;
  std::string profile_dir;
  std::vector<std::string> profiles;
  std::uint64_t seed = 2024;
  std::optional<std::size_t> cohort_size;
  std::optional<double> shift;
  std::string schema;
  std::string normal_values;
  std::string out;
  bool profiles_only = false;
};

ChannelSchema load_schema(const std::string& schema, const std::string& normal_values) {
  if (schema.empty()) {
    if (!normal_values.empty()) {
      throw CLI::ValidationError("--normal-values", "needs --schema");
    }
    return ChannelSchema::standard();
  }
  return ChannelSchema::load(schema, normal_values.empty() ? std::nullopt : std::optional<fs::path>(normal_values));
}

std::vector<RegionProfile> gather_profiles(const std::vector<std::string>& regions, const std::string& profile_dir,
                                           const std::vector<std::string>& files) {
  std::vector<RegionProfile> out;
  for (const auto& f : files) out.push_back(RegionProfile::load(f));
  std::vector<std::string> names = regions;
  if (names.empty() && files.empty()) names = RegionProfile::builtin_names();
  for (const auto& name : names) {
    const fs::path file = fs::path(profile_dir) / (name + ".profile");
    out.push_back(!profile_dir.empty() && fs::exists(file) ? RegionProfile::load(file) : RegionProfile::builtin(name));
  }
  return out;
}

int cmd_generate(const GenerateOptions& opt) {
  const ChannelSchema schema = load_schema(opt.schema, opt.normal_values);
  const fs::path out = opt.out.empty() ? default_output() / "cohorts" : fs::path(opt.out);
  fs::create_directories(out);
  auto profiles = gather_profiles(opt.regions, opt.profile_dir, opt.profiles);
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    auto& p = profiles[i];
    if (opt.cohort_size) p.cohort_size = *opt.cohort_size;
    if (opt.shift && p.shift != 0.0) p.shift = *opt.shift;
    p.validate();
    p.save(out / (p.name + ".profile"));
    if (opt.profiles_only) {
      std::printf("%s: profile written\n", p.name.c_str());
      continue;
    }
    const Cohort cohort = generate_cohort(p, derive_seed(opt.seed, {i}), schema);
    write_episodes(cohort, out / p.name, schema);
    std::printf("%s: %zu episodes -> %s\n", p.name.c_str(), cohort.size(), (out / p.name).string().c_str());
  }
  return 0;
}

struct AnalyzeOptions {
  std::vector<std::string> regions;
  std::string profile_dir;
  std::string ingest_dir;
  std::uint64_t seed = 2024;
  std::optional<std::size_t> cohort_size;
  std::size_t bins = 20;
  std::string schema;
  std::string normal_values;
  std::string out;
};

int cmd_analyze(const AnalyzeOptions& opt) {
  const ChannelSchema schema = load_schema(opt.schema, opt.normal_values);
  const fs::path out = opt.out.empty() ? default_output() / "analysis" : fs::path(opt.out);
  fs::create_directories(out / "distributions");

  std::vector<std::string> names;
  std::vector<Cohort> cohorts;
  if (!opt.ingest_dir.empty()) {
    names = opt.regions;
    if (names.empty()) {
      for (const auto& e : fs::directory_iterator(opt.ingest_dir)) {
        if (e.is_directory()) names.push_back(e.path().filename().string());
      }
      std::sort(names.begin(), names.end());
    }
    for (const auto& n : names) cohorts.push_back(read_episodes(fs::path(opt.ingest_dir) / n, schema));
  } else {
    auto profiles = gather_profiles(opt.regions, opt.profile_dir, {});
    for (std::size_t i = 0; i < profiles.size(); ++i) {
      if (opt.cohort_size) profiles[i].cohort_size = *opt.cohort_size;
      names.push_back(profiles[i].name);
      cohorts.push_back(generate_cohort(profiles[i], derive_seed(opt.seed, {i}), schema));
    }
  }
  if (names.empty()) throw Error(ErrorKind::EmptyCohort, "nothing to analyze");

  std::vector<std::vector<double>> freq;
  for (const auto& c : cohorts) freq.push_back(measurement_frequency(c, schema.size()));
  std::ofstream table(out / "frequency.csv");
  if (!table) throw Error(ErrorKind::IoFailure, "cannot write " + (out / "frequency.csv").string());
  table << "channel";
  for (const auto& n : names) table << ',' << n;
  table << '\n';
  std::printf("%-36s", "channel");
  for (const auto& n : names) std::printf(" %10s", n.c_str());
  std::printf("\n");
  for (std::size_t ch = 0; ch < schema.size(); ++ch) {
    table << schema.channel(ch).name;
    std::printf("%-36s", schema.channel(ch).name.c_str());
    for (std::size_t r = 0; r < names.size(); ++r) {
      table << ',' << format_double(freq[r][ch]);
      std::printf(" %10.4f", freq[r][ch]);
    }
    table << '\n';
    std::printf("\n");
  }

  // Shared histogram ranges so regions line up.
  std::vector<std::optional<std::pair<double, double>>> ranges(schema.size());
  for (const auto& c : cohorts) {
    for (const auto& ep : c) {
      for (std::size_t ch = 0; ch < schema.size(); ++ch) {
        const auto m = episode_channel_mean(ep, ch, schema);
        if (!m) continue;
        auto& r = ranges[ch];
        r = r ? std::make_pair(std::min(r->first, *m), std::max(r->second, *m)) : std::make_pair(*m, *m);
      }
    }
  }
  for (std::size_t r = 0; r < names.size(); ++r) {
    const auto summary = distribution_summary(cohorts[r], schema, opt.bins, ranges);
    std::ofstream d(out / "distributions" / (names[r] + ".csv"));
    if (!d) throw Error(ErrorKind::IoFailure, "cannot write distribution summary for " + names[r]);
    d << "channel,present,mean,q1,median,q3,bin,bin_low,bin_high,count\n";
    for (const auto& s : summary) {
      const std::size_t bins = s.counts.size();
      const double width = bins ? (s.bin_high - s.bin_low) / static_cast<double>(bins) : 0.0;
      for (std::size_t b = 0; b < bins; ++b) {
        d << s.channel << ',' << (s.present ? 1 : 0) << ',' << format_double(s.mean) << ',' << format_double(s.q1)
          << ',' << format_double(s.median) << ',' << format_double(s.q3) << ',' << b << ','
          << format_double(s.bin_low + width * static_cast<double>(b)) << ','
          << format_double(s.bin_low + width * static_cast<double>(b + 1)) << ',' << s.counts[b] << '\n';
      }
    }
  }
  std::printf("frequency table and distributions -> %s\n", out.string().c_str());
  return 0;
}

int cmd_report(const std::string& results, const std::string& out_dir) {
  const fs::path in = results.empty() ? default_output() : fs::path(results);
  const fs::path out = out_dir.empty() ? in / "report" : fs::path(out_dir);
  const ReportFiles files = report_emit(in, out);
  std::printf("%zu rows -> %s\nhistograms -> %s\n", files.rows, files.table.string().c_str(),
              files.histograms.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-incremental learning benchmark on synthetic multi-region ICU cohorts"};
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Generate synthetic cohorts from region profiles");
  generate->add_option("--region", gen.regions, "Built-in or profile-dir region (repeatable; default: all five)");
  generate->add_option("--profile-dir", gen.profile_dir, "Directory of <region>.profile files")
      ->check(CLI::ExistingDirectory);
  generate->add_option("--profile", gen.profiles, "Profile file to generate from (repeatable)")
      ->check(CLI::ExistingFile);
  generate->add_option("--seed", gen.seed, "Generator root seed");
  generate->add_option("--cohort-size", gen.cohort_size, "Patients per region")->check(CLI::PositiveNumber);
  generate->add_option("--shift", gen.shift, "Concept shift for the non-reference regions")
      ->check(CLI::Range(0.0, 1.0));
  generate->add_option("--schema", gen.schema, "Channel schema file")->check(CLI::ExistingFile);
  generate->add_option("--normal-values", gen.normal_values, "Normal-value table")->check(CLI::ExistingFile);
  generate->add_flag("--profiles-only", gen.profiles_only, "Write the resolved profiles without episodes");
  generate->add_option("--out", gen.out, "Output directory (default: <output dir>/cohorts)");

  RunOptions train_opt;
  auto* train = app.add_subcommand("train", "Run the two-source protocol and write results");
  train_opt.add_to(train, true);

  RunOptions grid_opt;
  auto* grid = app.add_subcommand("grid", "Grid search over epochs and importance on validation sets");
  grid_opt.add_to(grid, false);

  AnalyzeOptions an;
  auto* analyze = app.add_subcommand("analyze", "Measurement frequency table and per-channel distributions");
  analyze->add_option("--region", an.regions, "Region to include (repeatable; default: all five)");
  analyze->add_option("--profile-dir", an.profile_dir, "Directory of <region>.profile files")
      ->check(CLI::ExistingDirectory);
  analyze->add_option("--ingest-dir", an.ingest_dir, "Analyze episode directories <dir>/<region> instead")
      ->check(CLI::ExistingDirectory);
  analyze->add_option("--seed", an.seed, "Generator root seed");
  analyze->add_option("--cohort-size", an.cohort_size, "Patients per region")->check(CLI::PositiveNumber);
  analyze->add_option("--bins", an.bins, "Histogram bins")->check(CLI::PositiveNumber);
  analyze->add_option("--schema", an.schema, "Channel schema file")->check(CLI::ExistingFile);
  analyze->add_option("--normal-values", an.normal_values, "Normal-value table")->check(CLI::ExistingFile);
  analyze->add_option("--out", an.out, "Output directory (default: <output dir>/analysis)");

  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "Collect results into a method x region table");
  report->add_option("--results", report_in, "Directory scanned for results.json (default: output dir)");
  report->add_option("--out", report_out, "Output directory (default: <results>/report)");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known = known || sub->get_name() == name;
    if (!known) {
      std::cerr << "error: unknown subcommand '" << name << "'\nRun with --help for more information.\n";
      return kUsage;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen);
    if (train->parsed()) return cmd_train(train_opt);
    if (grid->parsed()) return cmd_grid(grid_opt);
    if (analyze->parsed()) return cmd_analyze(an);
    if (report->parsed()) return cmd_report(report_in, report_out);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.get_name() << ": " << e.what() << '\n';
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.kind() == ErrorKind::InvalidConfig) return kUsage;
    return e.is_data_error() ? kData : kRuntime;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
