#include <doctest.h>

#include <cstring>

#include "msrs/simulate.hpp"
#include "support.hpp"

using namespace msrs;
using namespace msrs::sim;

namespace {

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sd_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

// Single covariate value: one age, one origin day.
ScenarioConfig degenerate(const std::string& name = "exp.small") {
  auto c = ScenarioConfig::preset(name);
  c.age_min = c.age_max = 55.0;
  c.date_max = c.date_min + 1;
  return c;
}

TruthOptions quadrature(double tol = 1e-6) {
  TruthOptions o;
  o.method = TruthOptions::Method::quadrature;
  o.base_nodes = 8;
  o.rel_tol = tol;
  return o;
}

ReplicationResult fixed_replication(const std::vector<double>& est, double lo, double hi) {
  ReplicationResult r;
  r.estimate = {est};
  r.var_greenwood = {std::vector<double>(est.size(), 0.01)};
  r.var_boot = {std::vector<double>(est.size(), 0.04)};
  for (int m = 0; m < 4; ++m) {
    r.lower[m] = {std::vector<double>(est.size(), lo)};
    r.upper[m] = {std::vector<double>(est.size(), hi)};
  }
  return r;
}

}  // namespace

TEST_CASE("population death sampler matches Exp(c) under a constant table") {
  const double c = 2e-4;
  const auto table = RateTable::constant(c);
  const auto d = test::demo(60.0);
  Rng rng(101);
  std::vector<double> x, y;
  for (int i = 0; i < 100000; ++i) x.push_back(sample_population_death(d, table, 0.0, rng));
  const double se = (1.0 / c) / std::sqrt(static_cast<double>(x.size()));
  CHECK(std::abs(mean_of(x) - 1.0 / c) < 3.0 * se);
  // The standard deviation of Exp(c) is also 1/c; its sampling SE is about 1/c / sqrt(n).
  CHECK(std::abs(sd_of(x) - 1.0 / c) < 3.0 * se);

  for (int i = 0; i < 100000; ++i) y.push_back(sample_population_death(d, table, 1234.5, rng) - 1234.5);
  CHECK(std::abs(mean_of(y) - 1.0 / c) < 3.0 * se);
  const double D = test::ks_statistic(y, [&](double t) { return 1.0 - std::exp(-c * t); });
  CHECK(test::ks_pvalue(D, y.size()) > 0.001);
  for (double v : y) REQUIRE(v > 0.0);
}

TEST_CASE("population death sampler follows the rate-table cumulative hazard") {
  const auto table = demo_ratetable();
  const Demographics d{78.4 * kDaysPerYear, Sex::male, parse_date("1992-10-03")};
  Rng rng(55);
  std::vector<double> x;
  for (int i = 0; i < 20000; ++i) x.push_back(sample_population_death(d, table, 0.0, rng));
  const PopHazardTrajectory tr(table, d, 40000.0);
  const double D = test::ks_statistic(x, [&](double t) { return 1.0 - std::exp(-tr.cumulative(t)); });
  CHECK(test::ks_pvalue(D, x.size()) > 0.001);
}

TEST_CASE("population death sampler edge cases") {
  Rng rng(1);
  const auto d = test::demo(40.0);
  CHECK(std::isinf(sample_population_death(d, RateTable::zero(), 0.0, rng)));
  CHECK(std::isinf(sample_population_death(d, RateTable::constant(1e-9), 0.0, rng, 100.0)));
  CHECK_THROWS(sample_population_death(d, RateTable::zero(), -1.0, rng));
}

TEST_CASE("left-truncated Weibull sampler") {
  Rng rng(77);
  const int n = 100000;
  SUBCASE("r = 0 is a plain Weibull") {
    const double a = 0.3, b = 1.4;
    std::vector<double> x(n);
    for (auto& v : x) v = sample_weibull_left_truncated(a, b, 0.0, rng);
    const double D = test::ks_statistic(x, [&](double t) { return 1.0 - std::exp(-a * std::pow(t, b)); });
    CHECK(test::ks_pvalue(D, x.size()) > 0.001);
  }
  SUBCASE("conditional CDF given T > r") {
    const double a = 2.0, b = 1.2, r = 0.7;
    std::vector<double> x(n);
    for (auto& v : x) v = sample_weibull_left_truncated(a, b, r, rng);
    for (double v : x) REQUIRE(v > r);
    const double D = test::ks_statistic(
        x, [&](double t) { return 1.0 - std::exp(-a * (std::pow(t, b) - std::pow(r, b))); });
    CHECK(test::ks_pvalue(D, x.size()) > 0.001);
  }
  SUBCASE("b = 1 is r plus an exponential") {
    const double a = 0.5, r = 3.0;
    std::vector<double> x(n);
    for (auto& v : x) v = sample_weibull_left_truncated(a, 1.0, r, rng) - r;
    CHECK(std::abs(mean_of(x) - 1.0 / a) < 3.0 * (1.0 / a) / std::sqrt(static_cast<double>(n)));
    const double D = test::ks_statistic(x, [&](double t) { return 1.0 - std::exp(-a * t); });
    CHECK(test::ks_pvalue(D, x.size()) > 0.001);
  }
  SUBCASE("a misspecified CDF is rejected") {
    std::vector<double> x(n);
    for (auto& v : x) v = sample_weibull_left_truncated(1.0, 1.0, 0.0, rng);
    const double D = test::ks_statistic(x, [&](double t) { return 1.0 - std::exp(-1.05 * t); });
    CHECK(test::ks_pvalue(D, x.size()) < 0.001);
  }
  CHECK_THROWS(sample_weibull_left_truncated(0.0, 1.0, 0.0, rng));
  CHECK_THROWS(sample_weibull_left_truncated(1.0, 1.0, -1.0, rng));
}

TEST_CASE("generated subjects follow the observation scheme") {
  const auto table = demo_ratetable();
  SUBCASE("early censoring leaves one censored stay in ARF") {
    auto c = ScenarioConfig::preset("exp.small");
    Rng rng(3);
    int seen = 0;
    for (int i = 0; i < 200; ++i) {
      const auto s = generate_subject(c, table, 500.0, rng);
      if (!s.censored) continue;
      ++seen;
      CHECK(s.cause == Cause::none);
      REQUIRE(s.records.size() == 2);
      CHECK(s.records[0].status == 0);
      CHECK(s.records[1].status == 0);
      CHECK(s.records[0].t_stop == s.stop);
    }
    CHECK(seen > 150);
  }
  SUBCASE("population death shows up as plain NRM") {
    const auto deadly = RateTable::constant(0.5);
    auto c = ScenarioConfig::preset("exp.small");
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
      const auto s = generate_subject(c, deadly, 0.01, rng);
      CHECK(s.cause == Cause::nrm_population);
      REQUIRE(s.records.size() == 2);
      CHECK(s.records[1].trans_id == ids::nrm);
      CHECK(s.records[1].status == 1);
    }
  }
  SUBCASE("death after relapse happens after the relapse") {
    auto c = ScenarioConfig::preset("weibull");
    c.relapse.rate = 5.0;
    Rng rng(5);
    int relapses = 0;
    for (int i = 0; i < 500; ++i) {
      const auto s = generate_subject(c, table, 0.02, rng);
      if (!std::isfinite(s.relapse)) continue;
      ++relapses;
      CHECK(s.stop > s.relapse);
      REQUIRE(s.records.size() == 3);
      CHECK(s.records[2].t_start == s.relapse);
      CHECK(s.records[2].trans_id == ids::dar);
    }
    CHECK(relapses > 400);
  }
  SUBCASE("follow-up ends at ten years") {
    auto c = ScenarioConfig::preset("exp.small");
    Rng rng(6);
    for (int i = 0; i < 500; ++i) CHECK(generate_subject(c, table, 0.0, rng).stop <= c.horizon_days());
  }
}

TEST_CASE("generated datasets pass validation and match the calibrated censoring") {
  const auto table = demo_ratetable();
  for (const char* name : kScenarioNames) {
    auto c = ScenarioConfig::preset(name);
    const auto cal = calibrate_censoring(c, table, 19, 5000);
    CHECK(std::abs(cal.fraction - c.censored_target) <= 0.01);
    Rng rng(20);
    int censored = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) censored += generate_subject(c, table, cal.rate, rng).censored;
    // Fresh subjects: 1% tolerance plus sampling error of the two estimates.
    CHECK(std::abs(static_cast<double>(censored) / n - c.censored_target) <= 0.02);
    Rng drng(21);
    const auto d = generate_dataset(c, table, cal.rate, 300, drng);
    CHECK(d.n_subjects() == 300);
  }
}

TEST_CASE("true values reduce to closed forms for a single covariate value") {
  auto c = degenerate();
  const double lr = c.relapse.rate, ln = c.nrm_excess.rate, ld = c.dar_excess.rate;
  SUBCASE("zero population table") {
    const auto tv = true_values(c, RateTable::zero(), quadrature());
    for (std::size_t k = 0; k < tv.times.size(); ++k) {
      const double t = c.eval_years[k];
      const double s = lr + ln;
      CHECK(tv.prob[0][k] == doctest::Approx(std::exp(-s * t)).epsilon(1e-10));
      CHECK(tv.prob[1][k] == doctest::Approx(lr / (s - ld) * (std::exp(-ld * t) - std::exp(-s * t))).epsilon(1e-9));
      CHECK(tv.prob[2][k] == doctest::Approx(ln / s * (1 - std::exp(-s * t))).epsilon(1e-10));
      CHECK(tv.prob[3][k] == 0.0);
      CHECK(tv.prob[5][k] == 0.0);
      CHECK(tv.hazard[ids::relapse - 1][k] == doctest::Approx(lr * t).epsilon(1e-10));
      CHECK(tv.hazard[ids::nrm_e - 1][k] == doctest::Approx(ln * t).epsilon(1e-10));
      CHECK(tv.hazard[ids::dar_e - 1][k] == doctest::Approx(ld * t).epsilon(1e-10));
      CHECK(tv.hazard[ids::nrm_p - 1][k] == 0.0);
      double row = 0.0;
      for (int j = 0; j < 6; ++j) row += tv.prob[j][k];
      CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("constant population hazard") {
    const double cp = 1e-4;  // per day
    const double py = cp * kDaysPerYear;
    const auto tv = true_values(c, RateTable::constant(cp), quadrature());
    for (std::size_t k = 0; k < tv.times.size(); ++k) {
      const double t = c.eval_years[k];
      const double s = lr + ln + py;
      CHECK(tv.prob[0][k] == doctest::Approx(std::exp(-s * t)).epsilon(1e-10));
      CHECK(tv.prob[3][k] == doctest::Approx(py / s * (1 - std::exp(-s * t))).epsilon(1e-10));
      CHECK(tv.hazard[ids::nrm_p - 1][k] == doctest::Approx(py * t).epsilon(1e-10));
      CHECK(tv.hazard[ids::dar_p - 1][k] == doctest::Approx(py * t).epsilon(1e-10));
      CHECK(tv.hazard[ids::nrm - 1][k] == doctest::Approx((ln + py) * t).epsilon(1e-10));
    }
  }
  SUBCASE("Weibull transitions") {
    auto w = degenerate("weibull");
    const auto tv = true_values(w, RateTable::zero(), quadrature());
    for (std::size_t k = 0; k < tv.times.size(); ++k) {
      const double t = w.eval_years[k];
      const double H = w.relapse.rate * std::pow(t, w.relapse.shape) + w.nrm_excess.rate * std::pow(t, w.nrm_excess.shape);
      CHECK(tv.prob[0][k] == doctest::Approx(std::exp(-H)).epsilon(1e-10));
      CHECK(tv.hazard[ids::relapse - 1][k] == doctest::Approx(w.relapse.rate * std::pow(t, w.relapse.shape)).epsilon(1e-10));
    }
  }
}

TEST_CASE("covariate effects vanish at the mean age") {
  auto pos = degenerate("cov.eff.pos");
  pos.age_min = pos.age_max = 45.0;  // the preset mean age
  auto base = degenerate();
  base.age_min = base.age_max = 45.0;
  const auto a = true_values(pos, demo_ratetable(), quadrature());
  const auto b = true_values(base, demo_ratetable(), quadrature());
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t k = 0; k < a.times.size(); ++k) CHECK(a.prob[j][k] == doctest::Approx(b.prob[j][k]).epsilon(1e-12));
}

TEST_CASE("Monte Carlo and quadrature true values agree") {
  const auto c = ScenarioConfig::preset("exp.small");
  const auto table = demo_ratetable();
  TruthOptions mc;
  mc.mc_draws = 20000;
  TruthOptions q = quadrature(1e-3);
  q.base_nodes = 16;
  const auto a = true_values(c, table, mc);
  const auto b = true_values(c, table, q);
  for (std::size_t j = 0; j < 7; ++j)
    for (std::size_t k = 0; k < a.times.size(); ++k) CHECK(a.hazard[j][k] == doctest::Approx(b.hazard[j][k]).epsilon(0.03));
  for (std::size_t j = 0; j < 6; ++j) {
    for (std::size_t k = 0; k < a.times.size(); ++k) {
      CHECK(std::abs(a.prob[j][k] - b.prob[j][k]) < 0.005);
      CHECK(b.prob[j][k] >= 0.0);
    }
  }
  for (std::size_t k = 0; k < b.times.size(); ++k) {
    double row = 0.0;
    for (std::size_t j = 0; j < 6; ++j) row += b.prob[j][k];
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
  }
  TruthOptions strict = quadrature(1e-12);
  strict.base_nodes = 4;
  strict.max_level = 1;
  CHECK_THROWS_WITH(true_values(c, table, strict), doctest::Contains("did not converge"));
}

TEST_CASE("performance measures") {
  const std::vector<Target> targets(1, Target{Target::Kind::hazard, 1, 0, 0, TransitionKind::observed, "x"});
  SUBCASE("estimates equal to the truth") {
    std::vector<ReplicationResult> reps(5, fixed_replication({0.3, 0.6}, 0.0, 1.0));
    const auto rows = evaluate(reps, targets, {1, 2}, {{0.3, 0.6}});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].abs_bias == 0.0);
    CHECK(rows[0].rel_bias == 0.0);
    CHECK(rows[0].emp_se == 0.0);
    CHECK(rows[1].coverage[3] == 1.0);
    CHECK(rows[0].mean_se_greenwood == doctest::Approx(0.1));
    CHECK(rows[0].mean_se_boot == doctest::Approx(0.2));
  }
  SUBCASE("two-point estimates") {
    const double th = 0.4, delta = 0.05;
    std::vector<ReplicationResult> reps{fixed_replication({th + delta}, 1.0, 2.0),
                                        fixed_replication({th - delta}, 1.0, 2.0)};
    const auto rows = evaluate(reps, targets, {1}, {{th}});
    CHECK(std::abs(rows[0].abs_bias) < 1e-15);
    CHECK(rows[0].emp_se == doctest::Approx(delta * std::sqrt(2.0)).epsilon(1e-12));
    for (int m = 0; m < 4; ++m) CHECK(rows[0].coverage[m] == 0.0);
  }
  SUBCASE("zero truth and infinite Greenwood variance") {
    std::vector<ReplicationResult> reps(3, fixed_replication({0.1}, 0.0, 1.0));
    reps[0].var_greenwood[0][0] = INFINITY;
    reps[1].lower[2][0][0] = NAN;
    const auto rows = evaluate(reps, targets, {1}, {{0.0}});
    CHECK(std::isnan(rows[0].rel_bias));
    CHECK(rows[0].abs_bias == doctest::Approx(-0.1));
    CHECK(rows[0].n_infinite_greenwood == 1);
    CHECK(rows[0].mean_se_greenwood == doctest::Approx(0.1));
    CHECK(rows[0].n_defined[2] == 2);
    CHECK(rows[0].coverage[2] == doctest::Approx(2.0 / 3.0));
  }
}

TEST_CASE("simulation is deterministic across thread counts") {
  auto c = ScenarioConfig::preset("exp.small");
  c.n = 150;
  c.censoring_rate = 0.04;
  SimulationOptions o;
  o.n_sim = 4;
  o.bootstrap = 6;
  o.seed = 99;
  o.truth.mc_draws = 2000;
  const auto table = demo_ratetable();
  const auto a = run_simulation(c, table, o);
  o.threads = 3;
  const auto b = run_simulation(c, table, o);
  auto same = [](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].size() != y[i].size() || std::memcmp(x[i].data(), y[i].data(), x[i].size() * sizeof(double)) != 0)
        return false;
    return true;
  };
  for (int i = 0; i < o.n_sim; ++i) {
    CHECK(same(a.replications[i].estimate, b.replications[i].estimate));
    CHECK(same(a.replications[i].var_boot, b.replications[i].var_boot));
    for (int m = 0; m < 4; ++m) CHECK(same(a.replications[i].lower[m], b.replications[i].lower[m]));
  }
  CHECK(a.rows.size() == a.targets.size() * c.eval_years.size());
  CHECK(a.targets.size() == 7 + 6);
  CHECK(a.row("NRM.p", 10).truth == b.row("NRM.p", 10).truth);
}

TEST_CASE("scenario configuration") {
  for (const char* name : kScenarioNames) {
    const auto c = ScenarioConfig::preset(name);
    CHECK_NOTHROW(c.validate());
    const auto back = ScenarioConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
  }
  auto bad = ScenarioConfig::preset("exp.small");
  bad.relapse.beta_age = 0.1;
  CHECK_THROWS(bad.validate());
  bad = ScenarioConfig::preset("exp.large");
  bad.dar_excess.shape = 1.5;
  CHECK_THROWS(bad.validate());
  bad = ScenarioConfig::preset("weibull");
  bad.nrm_excess.rate = 0.0;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS(ScenarioConfig::preset("exp.medium"));
  const auto j = nlohmann::json::parse(R"({"name": "exp.large", "n": 2000, "n_sim": 50})");
  const auto c = ScenarioConfig::from_json(j);
  CHECK(c.n == 2000);
  CHECK(c.n_sim == 50);
  CHECK(c.age_min == 60.0);
}
