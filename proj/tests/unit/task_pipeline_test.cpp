#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "dilbench/cohort.hpp"
#include "dilbench/error.hpp"
#include "dilbench/tasks.hpp"
#include "oracles.hpp"

using namespace dilbench;

namespace {

const ChannelSchema& schema() {
  static const ChannelSchema s = ChannelSchema::standard();
  return s;
}

// Adult, consistent, with `records` heart-rate readings spread over the stay.
EpisodeRecord episode(double los, std::size_t records = 20, const std::string& id = "p") {
  EpisodeRecord ep;
  ep.patient_id = id;
  ep.region = "South";
  ep.age = 50;
  ep.los_hours = los;
  for (std::size_t i = 0; i < records; ++i) {
    ep.events.push_back({los * static_cast<double>(i) / static_cast<double>(records), channel::heart_rate, 80.0});
  }
  return ep;
}

double at(const Tensor& t, std::size_t row, std::size_t col) { return t.values()[row * t.last_dim() + col]; }

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::InvalidConfig;
}

void check_layout(const Tensor& x) {
  const auto& s = schema();
  REQUIRE(x.last_dim() == 76);
  for (std::size_t r = 0; r < x.shape()[0]; ++r) {
    for (std::size_t c = 0; c < s.size(); ++c) {
      const double m = at(x, r, s.mask_offset(c));
      CHECK((m == 0.0 || m == 1.0));
      const auto& spec = s.channel(c);
      if (spec.kind == ChannelKind::categorical) {
        double ones = 0, sum = 0;
        for (std::size_t k = 0; k < spec.labels.size(); ++k) {
          const double v = at(x, r, s.value_offset(c) + k);
          ones += v == 1.0;
          sum += v;
        }
        CHECK(ones == 1.0);
        CHECK(sum == 1.0);
      }
    }
  }
}

}  // namespace

TEST_SUITE("task_pipeline") {
  TEST_CASE("exclusion examples") {
    CHECK(apply_exclusions({episode(47.9)}, TaskKind::ihm).empty());
    CHECK(apply_exclusions({episode(48.0)}, TaskKind::ihm).size() == 1);
    CHECK(apply_exclusions({episode(47.9)}, TaskKind::los).size() == 1);
    for (const auto task : {TaskKind::ihm, TaskKind::decompensation, TaskKind::los, TaskKind::phenotyping}) {
      CHECK(apply_exclusions({episode(60, 14)}, task).empty());
      CHECK(apply_exclusions({episode(60, 15)}, task).size() == 1);
      auto adult = episode(60);
      adult.age = 18.0;
      CHECK(apply_exclusions({adult}, task).size() == 1);
      adult.age = 17.99;
      CHECK(apply_exclusions({adult}, task).empty());
      auto bad = episode(60);
      bad.label_consistent = false;
      CHECK(apply_exclusions({bad}, task).empty());
    }
    CHECK(apply_exclusions({episode(4.9)}, TaskKind::decompensation).empty());
    CHECK(apply_exclusions({episode(5.0)}, TaskKind::decompensation).size() == 1);
  }

  TEST_CASE("events outside the stay are dropped before counting") {
    auto ep = episode(60, 15);
    ep.events.back().hours = 60.0;  // at discharge, outside [0, LOS)
    CHECK(apply_exclusions({ep}, TaskKind::phenotyping).empty());
    auto ok = episode(60, 16);
    ok.events.push_back({75.0, channel::glucose, 1.0});
    const auto kept = apply_exclusions({ok}, TaskKind::phenotyping);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].events.size() == 16);
  }

  TEST_CASE("discretization: last value, forward fill, normal fallback") {
    const auto& s = schema();
    EpisodeRecord ep = episode(3.0, 0);
    ep.events = {{0.2, channel::glucose, 5.0}, {0.8, channel::glucose, 7.0}, {2.5, channel::capillary_refill, 1.0}};
    const Tensor x = discretize_episode(ep, s, 3);
    CHECK(x.shape() == Shape{3, 76});
    const auto g = s.value_offset(channel::glucose);
    CHECK(at(x, 0, g) == 7.0);
    CHECK(at(x, 0, s.mask_offset(channel::glucose)) == 1.0);
    CHECK(at(x, 1, g) == 7.0);
    CHECK(at(x, 1, s.mask_offset(channel::glucose)) == 0.0);
    const auto hr = s.value_offset(channel::heart_rate);
    for (std::size_t r = 0; r < 3; ++r) {
      CHECK(at(x, r, hr) == s.channel(channel::heart_rate).normal_value);
      CHECK(at(x, r, s.mask_offset(channel::heart_rate)) == 0.0);
    }
    CHECK(s.channel(channel::heart_rate).normal_value == 86.0);
    const auto cr = s.value_offset(channel::capillary_refill);
    CHECK(at(x, 0, cr) == 1.0);  // normal (0) before the reading
    CHECK(at(x, 2, cr + 1) == 1.0);
    CHECK(at(x, 2, cr) == 0.0);
    check_layout(x);
    CHECK(kind_of([&] { discretize_episode(ep, s, 4); }) == ErrorKind::TooShort);
    ep.events.push_back({2.9, 40, 1.0});
    CHECK(kind_of([&] { discretize_episode(ep, s, 3); }) == ErrorKind::SchemaMismatch);
  }

  TEST_CASE("layout invariants hold on generated episodes") {
    auto p = RegionProfile::builtin("West");
    p.cohort_size = 60;
    for (const auto& ep : apply_exclusions(generate_cohort(p, 2, schema()), TaskKind::phenotyping)) {
      const auto sample = extract_phenotyping(ep, schema());
      check_layout(sample.input);
      // Mask is 1 exactly when some event of that channel lands in the bin.
      for (std::size_t r = 0; r < sample.steps(); ++r) {
        std::vector<double> seen(17, 0.0);
        for (const auto& ev : ep.events)
          if (ev.hours >= r && ev.hours < r + 1.0) seen[ev.channel] = 1.0;
        for (std::size_t c = 0; c < 17; ++c) CHECK(at(sample.input, r, schema().mask_offset(c)) == seen[c]);
      }
    }
  }

  TEST_CASE("discretization survives a write/read cycle") {
    auto p = RegionProfile::builtin("South");
    p.cohort_size = 20;
    const auto cohort = generate_cohort(p, 6, schema());
    const auto dir = std::filesystem::temp_directory_path() / "dilbench_pipeline_rt";
    std::filesystem::remove_all(dir);
    write_episodes(cohort, dir, schema());
    const auto back = read_episodes(dir, schema());
    REQUIRE(back.size() == cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto h = static_cast<std::size_t>(std::floor(cohort[i].los_hours));
      if (h == 0) continue;
      const auto a = discretize_episode(cohort[i], schema(), h);
      const auto b = discretize_episode(back[i], schema(), h);
      CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("ihm extraction") {
    auto died = episode(60);
    died.mortality = true;
    died.death_time = 60;
    const auto s = extract_ihm(died, schema());
    CHECK(s.steps() == 48);
    CHECK(s.targets == std::vector<double>{1.0});
    CHECK(extract_ihm(episode(48.0), schema()).steps() == 48);
    CHECK(kind_of([&] { extract_ihm(episode(47.5), schema()); }) == ErrorKind::TooShort);
  }

  TEST_CASE("ihm positive rate tracks the profile") {
    auto p = RegionProfile::builtin("MIMIC-III");
    p.cohort_size = 4000;
    const auto kept = apply_exclusions(generate_cohort(p, 12, schema()), TaskKind::ihm);
    double pos = 0;
    for (const auto& ep : kept) pos += ep.mortality;
    // Mortality is generated on all stays; long stays are a biased subset, so
    // only a loose check applies here.
    CHECK(std::fabs(pos / kept.size() - p.ihm_prevalence) < 0.05);
  }

  TEST_CASE("decompensation window arithmetic") {
    auto ep = episode(30.0);
    ep.mortality = true;
    ep.death_time = 30.0;
    const auto s = extract_decompensation(ep, schema());
    REQUIRE(s.label_rows.size() == 26);  // hours 5..30
    CHECK(s.steps() == 30);
    for (std::size_t k = 0; k < s.label_rows.size(); ++k) {
      const std::size_t t = s.label_rows[k] + 1;
      CHECK(t == k + 5);
      CHECK(s.targets[k] == ((t >= 6 && t < 30) ? 1.0 : 0.0));
    }
    const auto survivor = extract_decompensation(episode(40.2), schema());
    CHECK(survivor.label_rows.size() == 36);
    for (const double y : survivor.targets) CHECK(y == 0.0);
    CHECK(kind_of([&] { extract_decompensation(episode(4.5), schema()); }) == ErrorKind::TooShort);
  }

  TEST_CASE("decompensation label rate tracks the profile") {
    auto p = RegionProfile::builtin("South");
    p.cohort_size = 6000;
    const auto cohort = generate_cohort(p, 31, schema());
    double pos = 0, n = 0;
    for (const auto& ep : apply_exclusions(cohort, TaskKind::decompensation)) {
      const auto s = extract_decompensation(ep, schema());
      for (const double y : s.targets) pos += y;
      n += static_cast<double>(s.targets.size());
    }
    CHECK(std::fabs(pos / n - p.decomp_rate) <= 0.005);
  }

  TEST_CASE("los classes") {
    CHECK(los_class(30) == 1);
    CHECK(los_class(400) == 9);
    CHECK(los_class(23.99) == 0);
    CHECK(los_class(24.0) == 1);
    CHECK(los_class(191.9) == 7);
    CHECK(los_class(192) == 8);
    CHECK(los_class(335.9) == 8);
    CHECK(los_class(336) == 9);
    // Class d covers [24d, 24(d+1)) for d = 1..7.
    oracle::Gen gen(4);
    for (int i = 0; i < 5000; ++i) {
      const double r = gen.uniform(0, 500);
      const std::size_t c = los_class(r);
      if (c >= 1 && c <= 7) {
        CHECK(r >= 24.0 * c);
        CHECK(r < 24.0 * (c + 1));
      }
    }
    const auto s = extract_los(episode(100.5), schema());
    CHECK(s.label_rows.size() == 96);
    for (std::size_t k = 0; k < s.label_rows.size(); ++k) {
      CHECK(s.targets[k] == static_cast<double>(los_class(100.5 - static_cast<double>(k + 5))));
    }
    CHECK(s.targets.front() == 3.0);  // 95.5h left
    CHECK(s.targets.back() == 0.0);
  }

  TEST_CASE("per-step tasks agree on their label count") {
    for (const double los : {5.0, 5.9, 17.3, 71.0}) {
      const auto ep = episode(los);
      const auto expected = static_cast<std::size_t>(std::floor(los)) - 4;
      CHECK(extract_decompensation(ep, schema()).label_rows.size() == expected);
      CHECK(extract_los(ep, schema()).label_rows.size() == expected);
    }
  }

  TEST_CASE("phenotyping labels") {
    auto ep = episode(12.5);
    const auto none = extract_phenotyping(ep, schema());
    CHECK(none.targets == std::vector<double>(25, 0.0));
    CHECK(none.steps() == 13);
    ep.phenotypes[0] = 1;
    ep.phenotypes[24] = 1;
    const auto some = extract_phenotyping(ep, schema());
    CHECK(some.targets.size() == 25);
    CHECK(some.targets[0] == 1.0);
    CHECK(some.targets[24] == 1.0);
    CHECK(phenotype_names().size() == 25);
  }

  TEST_CASE("splits: proportions, patient integrity and determinism") {
    Cohort cohort;
    for (int i = 0; i < 1000; ++i) {
      auto ep = episode(50, 20, "pt" + std::to_string(i));
      cohort.push_back(ep);
      if (i % 10 == 0) {
        ep.episode = 2;
        cohort.push_back(ep);
      }
    }
    const auto a = make_splits(cohort, 42);
    CHECK(a.by_patient.size() == 1000);
    CHECK(std::abs(static_cast<int>(a.count(Split::train)) - 700) <= 10);
    CHECK(std::abs(static_cast<int>(a.count(Split::validation)) - 150) <= 10);
    CHECK(std::abs(static_cast<int>(a.count(Split::test)) - 150) <= 10);
    CHECK(make_splits(cohort, 42).by_patient == a.by_patient);
    CHECK(make_splits(cohort, 43).by_patient != a.by_patient);

    const auto raw = prepare_task_samples(cohort, TaskKind::ihm, schema(), 42, 0);
    std::map<std::string, std::set<int>> where;
    for (const auto& s : raw.train) where[s.patient].insert(0);
    for (const auto& s : raw.validation) where[s.patient].insert(1);
    for (const auto& s : raw.test) where[s.patient].insert(2);
    for (const auto& [p, splits] : where) CHECK(splits.size() == 1);
    CHECK(raw.train.size() + raw.validation.size() + raw.test.size() == cohort.size());
  }

  TEST_CASE("normalizer: fitted constants and zero spread") {
    TaskSample a, b;
    a.input = Tensor(Shape{2, 76});
    b.input = Tensor(Shape{2, 76});
    const auto cols = schema().continuous_columns();
    const std::size_t c0 = cols[0];
    a.input.values()[c0] = 1.0;
    a.input.values()[76 + c0] = 3.0;
    b.input.values()[c0] = 5.0;
    b.input.values()[76 + c0] = 7.0;
    const auto n = Normalizer::fit({a, b}, schema());
    CHECK(n.means()[0] == 4.0);
    CHECK(n.scales()[0] == doctest::Approx(std::sqrt(5.0)).epsilon(1e-14));
    CHECK(n.scales()[1] == 1.0);  // constant zero column
    Tensor x = a.input;
    n.apply(x);
    CHECK(x.values()[c0] == doctest::Approx(-3.0 / std::sqrt(5.0)).epsilon(1e-14));
    // Mask columns are left alone.
    CHECK(x.values()[schema().mask_begin()] == 0.0);
    for (const std::size_t c : cols) CHECK(c < schema().mask_begin());
  }
}
