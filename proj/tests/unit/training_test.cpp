#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dilbench/error.hpp"
#include "dilbench/losses.hpp"
#include "dilbench/training.hpp"
#include "oracles.hpp"

using namespace dilbench;

namespace {

// Binary sequences whose label is the sign of the mean of column 0.
std::vector<SampleUnit> separable_source(std::uint64_t seed, std::size_t n, std::size_t steps = 5,
                                         std::size_t width = 3) {
  oracle::Gen gen(seed);
  std::vector<SampleUnit> units;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = std::make_shared<TaskSample>();
    s->task = TaskKind::ihm;
    const bool y = gen.coin();
    s->input = Tensor(Shape{steps, width});
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t c = 0; c < width; ++c) s->input[t * width + c] = gen.uniform(-1, 1);
      s->input[t * width] += y ? 0.8 : -0.8;
    }
    s->targets = {y ? 1.0 : 0.0};
    s->episode = "ep" + std::to_string(i);
    units.push_back({s, 0, 1});
  }
  return units;
}

// Per-step samples with `labels` hourly labels each.
std::vector<SampleUnit> per_step_source(std::size_t n, std::size_t labels) {
  std::vector<SampleUnit> units;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = std::make_shared<TaskSample>();
    s->task = TaskKind::decompensation;
    s->input = Tensor(Shape{labels + 4, 2}, 0.1 * static_cast<double>(i));
    for (std::size_t k = 0; k < labels; ++k) {
      s->label_rows.push_back(k + 4);
      s->targets.push_back(k % 3 == 0 ? 1.0 : 0.0);
    }
    s->episode = "ps" + std::to_string(i);
    units.push_back({s, 0, labels});
  }
  return units;
}

SequenceModelConfig small_model(std::size_t width = 3) {
  SequenceModelConfig cfg;
  cfg.input_width = width;
  cfg.hidden_width = 4;
  return cfg;
}

std::uint64_t checksum(const SequenceModel& m) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const double v : m.params().values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = (h ^ bits) * 1099511628211ULL;
  }
  return h;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("bce examples") {
    CHECK(bce_loss(std::vector<double>{0.5}, std::vector<double>{1.0}) == doctest::Approx(std::log(2.0)));
    CHECK(bce_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 0.0}) <= 1e-11);
    // -(log .9 + log .9) / 2
    CHECK(bce_loss(std::vector<double>{0.9, 0.1}, std::vector<double>{1.0, 0.0}) ==
          doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    CHECK(bce_loss(std::vector<double>{0.9, 0.1}, std::vector<double>{1.0, 0.0}) ==
          doctest::Approx(0.105361).epsilon(1e-5));
    CHECK_THROWS_AS(bce_loss(std::vector<double>{0.5}, std::vector<double>{1.0, 0.0}), Error);
  }

  TEST_CASE("per-class ce examples") {
    const std::vector<double> uniform(10, 0.1);
    for (std::size_t target = 0; target < 10; ++target) {
      const std::vector<std::size_t> y{target};
      // -log 0.1 - 9 log 0.9
      CHECK(ce_loss(uniform, y, 10) == doctest::Approx(-std::log(0.1) - 9.0 * std::log(0.9)).epsilon(1e-14));
    }
    CHECK(ce_loss(uniform, std::vector<std::size_t>{3}, 10) == doctest::Approx(3.25083).epsilon(1e-5));
    std::vector<double> onehot(10, 0.0);
    onehot[4] = 1.0;
    CHECK(ce_loss(onehot, std::vector<std::size_t>{4}, 10) <= 1e-10);
    CHECK(ce_loss(onehot, onehot, 10) <= 1e-10);
    // C = 2 is twice the bce of the positive-class score
    oracle::Gen gen(4);
    for (int rep = 0; rep < 20; ++rep) {
      const double p = gen.uniform(0.01, 0.99);
      const std::size_t y = gen.index(0, 1);
      const double two = ce_loss(std::vector<double>{1 - p, p}, std::vector<std::size_t>{y}, 2);
      CHECK(two == doctest::Approx(2.0 * oracle::bce({p}, {static_cast<double>(y)})).epsilon(1e-12));
    }
    try {
      ce_loss(std::vector<double>{0.5, 0.6}, std::vector<std::size_t>{0}, 2);
      FAIL("expected NotNormalized");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NotNormalized);
    }
  }

  TEST_CASE("losses are non-negative on random valid inputs") {
    oracle::Gen gen(8);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> p(6), y(6);
      for (std::size_t i = 0; i < 6; ++i) {
        p[i] = gen.uniform(0, 1);
        y[i] = gen.coin() ? 1.0 : 0.0;
      }
      CHECK(bce_loss(p, y) >= 0.0);
      std::vector<double> probs(10);
      double s = 0.0;
      for (auto& v : probs) s += (v = gen.uniform(0, 1));
      for (auto& v : probs) v /= s;
      const std::vector<std::size_t> t{gen.index(0, 9)};
      CHECK(ce_loss(probs, t, 10) >= 0.0);
      CHECK(categorical_log_loss(probs, t, 10) >= 0.0);
    }
  }

  TEST_CASE("tape losses match the pure versions and finite differences") {
    oracle::Gen gen(9);
    Tensor p(Shape{4, 10});
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 10; ++c) s += (p[r * 10 + c] = gen.uniform(0.05, 1));
      for (std::size_t c = 0; c < 10; ++c) p[r * 10 + c] /= s;
    }
    const std::vector<std::size_t> y{1, 9, 0, 4};
    for (const LosLoss form : {LosLoss::per_class_binary, LosLoss::categorical}) {
      p.set_requires_grad(true);
      p.zero_grad();
      Tape t;
      const Var l = ce_loss(t, t.leaf(p), y, form);
      const double pure = form == LosLoss::per_class_binary ? ce_loss(p.values(), y, 10)
                                                            : categorical_log_loss(p.values(), y, 10);
      CHECK(t.item(l) == doctest::Approx(pure).epsilon(1e-14));
      t.backward(l);
      const std::vector<double> g(p.grad().begin(), p.grad().end());
      // Perturb single entries without renormalizing: the gradient is of the
      // written formula, not of a constrained simplex.
      auto f = [&]() {
        double s = 0.0;
        for (std::size_t r = 0; r < 4; ++r)
          for (std::size_t c = 0; c < 10; ++c) {
            const double q = p[r * 10 + c];
            const double yy = c == y[r] ? 1.0 : 0.0;
            if (form == LosLoss::per_class_binary) {
              s -= yy * std::log(q) + (1 - yy) * std::log(1 - q);
            } else {
              s -= yy * std::log(q);
            }
          }
        return s / 4.0;
      };
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double fd = oracle::central_difference(f, p[i], 1e-6);
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }

  TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    std::vector<double> params{1.0, -2.0};
    AdamState st(2, AdamConfig{});
    st.m = {0.5, -0.5};
    st.v = {0.25, 0.25};
    adam_step(params, std::vector<double>{0.0, 0.0}, st);
    // moments decay toward zero
    CHECK(std::fabs(st.m[0]) < 0.5);
    std::vector<double> p2{1.0, -2.0};
    AdamState fresh(2, AdamConfig{});
    adam_step(p2, std::vector<double>{0.0, 0.0}, fresh);
    CHECK(p2 == std::vector<double>{1.0, -2.0});
    CHECK(fresh.step == 1);
  }

  TEST_CASE("adam: first step with constant gradient moves by the learning rate") {
    for (const double g : {0.3, -7.0, 1e-3}) {
      std::vector<double> p{0.0};
      AdamState st(1, AdamConfig{});
      adam_step(p, std::vector<double>{g}, st);
      CHECK(std::fabs(p[0]) == doctest::Approx(1e-3).epsilon(1e-4));
      CHECK((p[0] < 0) == (g > 0));
    }
  }

  TEST_CASE("adam on theta^2 matches a scalar loop and decreases |theta|") {
    AdamConfig cfg;
    cfg.learning_rate = 0.1;
    std::vector<double> p{1.0};
    AdamState st(1, cfg);
    double theta = 1.0, m = 0.0, v = 0.0;
    double prev = std::fabs(p[0]);
    for (int t = 1; t <= 10; ++t) {
      adam_step(p, std::vector<double>{2.0 * p[0]}, st);
      const double g = 2.0 * theta;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1.0 - std::pow(0.9, t));
      const double vh = v / (1.0 - std::pow(0.999, t));
      theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p[0] == doctest::Approx(theta).epsilon(1e-14));
      CHECK(std::fabs(p[0]) < prev);
      prev = std::fabs(p[0]);
    }
  }

  TEST_CASE("adam rejects misaligned gradients") {
    std::vector<double> p{1.0, 2.0};
    AdamState st(2, AdamConfig{});
    try {
      adam_step(p, std::vector<double>{1.0}, st);
      FAIL("expected MissingGradient");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::MissingGradient);
    }
  }

  TEST_CASE("train config validation") {
    TrainConfig c;
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c.epochs = 1;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), Error);
  }

  TEST_CASE("sample cap keeps exactly the capped number of labels") {
    const auto units = per_step_source(5000, 50);  // 250k labels
    const auto capped = cap_units(units, 100000, 42);
    CHECK(total_labels(capped) == 100000);
    CHECK(total_labels(cap_units(units, std::nullopt, 42)) == 250000);
    CHECK(total_labels(cap_units(units, 300000, 42)) == 250000);
    const auto again = cap_units(units, 100000, 42);
    REQUIRE(again.size() == capped.size());
    for (std::size_t i = 0; i < again.size(); ++i) CHECK(again[i].sample == capped[i].sample);
  }

  TEST_CASE("training lowers the loss and is bitwise reproducible") {
    const auto source = separable_source(1, 120);
    TrainConfig tc;
    tc.epochs = 3;
    tc.seed = 5;
    auto run = [&]() {
      SequenceModel m(small_model(), 77);
      StrategyState st(StrategyConfig{Method::baseline, 0, 0.0, FisherMode::per_sample});
      const double before = evaluate_loss(m, source);
      train_on_source(m, source, 0, tc, st, {});
      return std::make_pair(m, before);
    };
    auto [a, before] = run();
    auto [b, unused] = run();
    CHECK(evaluate_loss(a, source) < before);
    CHECK(std::equal(a.params().values().begin(), a.params().values().end(), b.params().values().begin()));
  }

  TEST_CASE("baseline at s=1 uses the plain current loss") {
    StrategyState st(StrategyConfig{Method::combined, 10, 6.0, FisherMode::per_sample});
    st.begin_source(20);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
      const auto w = st.next_step(rng);
      CHECK(w.current == 1.0);
      CHECK(w.replay == 0.0);
      CHECK(w.penalty == 0.0);
      CHECK(w.replay_indices.empty());
    }
  }

  TEST_CASE("validation never changes the parameters and logs every epoch") {
    const auto source = separable_source(2, 40);
    const auto val = separable_source(3, 20);
    SequenceModel m(small_model(), 5);
    const auto sum_before = checksum(m);
    (void)task_metrics(predict_units(m, val));
    CHECK(checksum(m) == sum_before);

    TrainConfig tc;
    tc.epochs = 2;
    StrategyState st(StrategyConfig{Method::baseline, 0, 0.0, FisherMode::per_sample});
    std::ostringstream log;
    const auto r = train_on_source(m, source, 0, tc, st, {{"A", 0, val}, {"B", 1, source}}, &log);
    CHECK(r.log.size() == 2 * 2 * 2);  // epochs x sets x metrics
    std::size_t lines = 0;
    std::string line;
    std::istringstream in(log.str());
    while (std::getline(in, line)) {
      ++lines;
      CHECK(line.find("\"epoch\"") != std::string::npos);
      CHECK(line.find("\"metric\"") != std::string::npos);
    }
    CHECK(lines == r.log.size());
    CHECK(r.steps == 2 * 5);
  }

  TEST_CASE("empty sources are rejected") {
    SequenceModel m(small_model(), 5);
    StrategyState st;
    try {
      train_on_source(m, {}, 0, TrainConfig{}, st, {});
      FAIL("expected EmptySource");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EmptySource);
    }
  }

  TEST_CASE("per-step predictions cover every label row") {
    const auto units = per_step_source(3, 6);
    SequenceModelConfig cfg;
    cfg.input_width = 2;
    cfg.head = HeadMode::per_step;
    SequenceModel m(cfg, 1);
    const auto p = predict_units(m, units, 2);
    CHECK(p.scores.size() == 18);
    CHECK(p.targets.size() == 18);
    // A unit ending early needs fewer rows and gives the same scores.
    std::vector<SampleUnit> shorter = units;
    for (auto& u : shorter) u.label_end = 2;
    const auto q = predict_units(m, shorter, 2);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 2; ++k) CHECK(q.scores[i * 2 + k] == doctest::Approx(p.scores[i * 6 + k]).epsilon(1e-13));
  }

  TEST_CASE("primary metric names") {
    CHECK(primary_metric(TaskKind::ihm) == "auc_roc");
    CHECK(primary_metric(TaskKind::decompensation) == "auc_roc");
    CHECK(primary_metric(TaskKind::phenotyping) == "macro_auc");
    CHECK(primary_metric(TaskKind::los) == "kappa");
  }
}
