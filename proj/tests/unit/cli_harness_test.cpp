#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dilbench/error.hpp"
#include "dilbench/experiment.hpp"

using namespace dilbench;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(Method method = Method::baseline) {
  auto c = ExperimentConfig::defaults(TaskKind::ihm);
  c.method = method;
  c.seeds = 2;
  c.epochs = 1;
  c.hidden_width = 4;
  c.num_layers = 1;
  c.bidirectional = false;
  c.cohort_size = 300;
  c.buffer_capacity = 8;
  return c;
}

const PreparedData& small_data() {
  static const PreparedData d = prepare_data(small_config());
  return d;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("dilbench_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DILBENCH_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<double> stage_values(const ResultsRecord& r, std::size_t stage) {
  std::vector<double> v;
  for (const auto& s : r.seeds)
    for (const auto& e : s.entries)
      if (e.stage == stage) v.push_back(e.value);
  return v;
}

}  // namespace

TEST_SUITE("cli_harness") {
  TEST_CASE("task defaults") {
    const auto ihm = task_defaults(TaskKind::ihm);
    CHECK(ihm.buffer_capacity == 500);
    CHECK(ihm.importance == 6.0);
    CHECK(ihm.epochs == 4);
    CHECK(ihm.hidden_width == 16);
    CHECK(ihm.num_layers == 2);
    CHECK(ihm.bidirectional);
    const auto ph = task_defaults(TaskKind::phenotyping);
    CHECK(ph.buffer_capacity == 500);
    CHECK(ph.importance == 4.0);
    CHECK(ph.epochs == 6);
    CHECK(ph.hidden_width == 256);
    CHECK(ph.num_layers == 1);
    CHECK(ph.bidirectional);
    for (const auto t : {TaskKind::decompensation, TaskKind::los}) {
      const auto d = task_defaults(t);
      CHECK(d.buffer_capacity == 3500);
      CHECK(d.importance == 6.0);
      CHECK(d.epochs == 1);
      CHECK(d.hidden_width == 64);
      CHECK(d.num_layers == 1);
      CHECK_FALSE(d.bidirectional);
    }
    const auto c = ExperimentConfig::defaults(TaskKind::phenotyping);
    CHECK(c.buffer_capacity == 500);
    CHECK(c.importance == 4.0);
    CHECK(c.epochs == 6);
    CHECK(c.seeds == 5);
    CHECK(c.sources == std::vector<std::string>{"MIMIC-III", "South"});
    CHECK(c.epochs_grid == std::vector<std::size_t>{2, 4, 6, 8, 10});
    CHECK(c.importance_grid == std::vector<double>{2, 4, 6, 8});
  }

  TEST_CASE("sample caps by region") {
    CHECK_FALSE(region_sample_cap(TaskKind::ihm, "South").has_value());
    CHECK_FALSE(region_sample_cap(TaskKind::phenotyping, "West").has_value());
    for (const auto t : {TaskKind::decompensation, TaskKind::los}) {
      CHECK(region_sample_cap(t, "MIMIC-III") == 100000u);
      CHECK(region_sample_cap(t, "South") == 100000u);
      CHECK(region_sample_cap(t, "Midwest") == 100000u);
      CHECK(region_sample_cap(t, "West") == 50000u);
      CHECK(region_sample_cap(t, "Northeast") == 25000u);
    }
  }

  TEST_CASE("config files and overrides") {
    const auto dir = scratch("config");
    fs::create_directories(dir);
    std::ofstream(dir / "a.cfg") << "# comment\nimportance = 2\ntask = los\nregion = west\n";
    const auto c = ExperimentConfig::load(dir / "a.cfg", {{"seeds", "3"}});
    CHECK(c.task == TaskKind::los);
    CHECK(c.importance == 2.0);  // task applied first, then the override
    CHECK(c.buffer_capacity == 3500);
    CHECK(c.sources == std::vector<std::string>{"MIMIC-III", "West"});
    CHECK(c.seeds == 3);
    std::ofstream(dir / "b.cfg") << "bogus_key = 1\n";
    try {
      ExperimentConfig::load(dir / "b.cfg");
      FAIL("expected InvalidConfig");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidConfig);
      CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
    }
    auto bad = ExperimentConfig::defaults(TaskKind::ihm);
    bad.set("seeds", "0");
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(bad.set("method", "magic"), Error);
    fs::remove_all(dir);
  }

  TEST_CASE("digest changes with every field") {
    const auto base = ExperimentConfig::defaults(TaskKind::ihm);
    const std::vector<std::pair<std::string, std::string>> changes = {
        {"task", "los"},          {"method", "ewc"},         {"sources", "MIMIC-III, West"},
        {"seeds", "4"},           {"seed", "9"},             {"epochs", "3"},
        {"batch_size", "16"},     {"sample_cap", "100"},     {"learning_rate", "0.01"},
        {"hidden_width", "8"},    {"num_layers", "1"},       {"bidirectional", "false"},
        {"dropout", "0.1"},       {"buffer_capacity", "50"}, {"importance", "2"},
        {"fisher", "aggregate"},  {"los_loss", "categorical"}, {"data_seed", "7"},
        {"cohort_size", "100"},   {"shift", "0.2"},          {"profile_dir", "/tmp"},
        {"ingest_dir", "/tmp"},   {"schema_file", "/tmp/s"}, {"normal_values_file", "/tmp/n"},
        {"epochs_grid", "2, 4"},  {"importance_grid", "6"},  {"output_dir", "elsewhere"},
    };
    std::set<std::string> digests{base.digest()};
    for (const auto& [k, v] : changes) {
      auto c = base;
      c.set(k, v);
      CHECK_MESSAGE(c.digest() != base.digest(), k);
      digests.insert(c.digest());
      auto same = base;
      CHECK(same.digest() == base.digest());
    }
    CHECK(digests.size() == changes.size() + 1);
    CHECK(base.digest().size() == 16);
  }

  TEST_CASE("mean (std) formatting") {
    CHECK(format_mean_std(0.8638, 0.0052) == "0.864 (0.005)");
    CHECK(format_mean_std(0.5, 0.0) == "0.500 (0.000)");
  }

  TEST_CASE("aggregate uses the population deviation over seeds") {
    std::vector<SeedRecord> seeds(2);
    seeds[0].entries.push_back({2, "PSA", "auc_roc", 0.8});
    seeds[1].entries.push_back({2, "PSA", "auc_roc", 0.9});
    const auto agg = aggregate(seeds);
    REQUIRE(agg.size() == 1);
    CHECK(agg[0].mean == doctest::Approx(0.85).epsilon(1e-15));
    CHECK(agg[0].std == doctest::Approx(0.05).epsilon(1e-12));
  }

  TEST_CASE("protocol: every seed runs, test sets are read once per source") {
    const auto cfg = small_config(Method::combined);
    const auto r = run_experiment(cfg, small_data());
    CHECK(r.seeds.size() == 2);
    CHECK(r.test_reads == 4);
    for (const auto& s : r.seeds) {
      // 2 stages x (2 sources + PSA) x 2 metrics
      CHECK(s.entries.size() == 12);
      CHECK_FALSE(s.validation.empty());
    }
    const auto& psa = r.final_psa("auc_roc");
    const auto* m = r.find(2, "MIMIC-III", "auc_roc");
    const auto* so = r.find(2, "South", "auc_roc");
    REQUIRE(m);
    REQUIRE(so);
    CHECK(psa.mean == doctest::Approx((m->mean + so->mean) / 2).epsilon(1e-12));
    // Pre-transfer PSA is the first source alone.
    CHECK(r.find(1, "PSA", "auc_roc")->mean == r.find(1, "MIMIC-III", "auc_roc")->mean);

    auto five = small_config();
    five.seeds = 5;
    const auto r5 = run_experiment(five, small_data());
    CHECK(r5.seeds.size() == 5);
    CHECK(r5.test_reads == 10);
  }

  TEST_CASE("methods share the first source and match separate runs") {
    const auto cfg = small_config();
    const auto all = run_methods(cfg, all_methods(), small_data());
    REQUIRE(all.size() == 5);
    for (const auto& r : all) CHECK(stage_values(r, 1) == stage_values(all[0], 1));
    for (std::size_t k : {1u, 4u}) {
      auto single = cfg;
      single.method = all_methods()[k];
      const auto r = run_experiment(single, small_data());
      CHECK(stage_values(r, 2) == stage_values(all[k], 2));
    }
  }

  TEST_CASE("same config, same results") {
    const auto cfg = small_config(Method::adjusted_replay);
    const auto a = run_experiment(cfg, small_data());
    const auto b = run_experiment(cfg, prepare_data(cfg));
    CHECK(stage_values(a, 2) == stage_values(b, 2));
    const auto da = scratch("det_a"), db = scratch("det_b");
    write_results(a, small_data(), da);
    write_results(b, small_data(), db);
    for (const char* f : {"results.csv", "summary.csv", "results.json", "validation_log.jsonl"})
      CHECK(slurp(da / f) == slurp(db / f));
    fs::remove_all(da);
    fs::remove_all(db);
  }

  TEST_CASE("grid search reads no test data") {
    auto cfg = small_config(Method::ewc);
    cfg.epochs_grid = {1, 2};
    cfg.importance_grid = {2, 4};
    const auto g = grid_search(cfg, small_data());
    CHECK(g.test_reads == 0);
    CHECK(g.cells.size() == 4);
    for (const auto& c : g.cells) CHECK(g.best.validation_psa >= c.validation_psa);

    cfg.epochs_grid = {1};
    cfg.importance_grid = {6};
    const auto one = grid_search(cfg, small_data());
    REQUIRE(one.cells.size() == 1);
    CHECK(one.best.epochs == 1);
    CHECK(one.best.importance == 6.0);
  }

  TEST_CASE("report table and NoResults") {
    const auto dir = scratch("report");
    const auto r = run_experiment(small_config(), small_data());
    write_results(r, small_data(), dir / "ihm" / "South" / "baseline");
    const auto files = report_emit(dir, dir / "report");
    CHECK(files.rows == 1);
    CHECK(fs::exists(files.table));
    CHECK(fs::exists(files.histograms));
    const std::string table = slurp(files.table);
    CHECK(table.find("baseline,South,") != std::string::npos);
    CHECK(table.find(format_mean_std(r.final_psa("auc_roc").mean, r.final_psa("auc_roc").std)) !=
          std::string::npos);

    const auto empty = scratch("report_empty");
    fs::create_directories(empty);
    try {
      report_emit(empty, empty / "out");
      FAIL("expected NoResults");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NoResults);
    }
    fs::remove_all(dir);
    fs::remove_all(empty);
  }

  TEST_CASE("cli exit codes and outputs") {
    const auto dir = scratch("exe");
    const std::string cfg = std::string(DILBENCH_CONFIG_DIR) + "/smoke.cfg";
    CHECK(run_cli("") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("train --no-such-flag") == 1);
    CHECK(run_cli("train --config " + cfg + " --seeds 0") == 1);
    CHECK(run_cli("train --config " + cfg + " --set bogus=1") == 1);
    CHECK(run_cli("report --results " + (dir / "nothing").string()) == 2);

    CHECK(run_cli("train --config " + cfg + " --method baseline --region south --seeds 2 --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "ihm" / "South" / "baseline" / "results.csv"));
    CHECK(run_cli("report --results " + dir.string() + " --out " + (dir / "report").string()) == 0);
    CHECK(fs::exists(dir / "report" / "table_psa.csv"));

    CHECK(run_cli("generate --region midwest --cohort-size 50 --out " + (dir / "cohorts").string()) == 0);
    CHECK(fs::exists(dir / "cohorts" / "Midwest" / "listfile.csv"));

    CHECK(run_cli("analyze --cohort-size 200 --out " + (dir / "analysis").string()) == 0);
    std::ifstream freq(dir / "analysis" / "frequency.csv");
    std::string header, line;
    std::getline(freq, header);
    CHECK(header.find("MIMIC-III") != std::string::npos);
    CHECK(header.find("Northeast") != std::string::npos);
    std::size_t rows = 0;
    while (std::getline(freq, line)) rows += line.empty() ? 0 : 1;
    CHECK(rows == 17);
    fs::remove_all(dir);
  }
}
