#include <doctest.h>

#include "msrs/probtrans.hpp"
#include "support.hpp"

using namespace msrs;

namespace {

ProbTransEstimate fit(const EventDataset& d, const RateTable& table = RateTable::zero(), double s = 0.0,
                      bool cov = true, GridOptions g = {}) {
  const HazardEstimator est(d, table, g);
  return aalen_johansen(est.estimate(), d.model(), s, std::numeric_limits<double>::infinity(), cov);
}

}  // namespace

TEST_CASE("no events and no population hazard give the identity") {
  const auto d = test::make_dataset(test::illness_death(true), {{0, 1, 0, 50, 0}, {0, 2, 0, 50, 0}});
  GridOptions g;
  g.extra_times = {10, 50};
  const auto p = fit(d, RateTable::zero(), 0.0, true, g);
  CHECK(p.at(50).isIdentity(0.0));
  CHECK(p.row_cov.back()[0].isZero(0.0));
}

TEST_CASE("two-state product of two halves") {
  const auto d = test::survival_dataset({{0, 1, 1}, {0, 2, 0}, {0, 3, 1}, {0, 4, 0}});
  // Jumps 1/4 at t=1 and 1/2 at t=3: P11 = 3/4 * 1/2.
  CHECK(fit(d).prob(3, 0, 0) == 0.375);
  // The last subject at risk dies: survival drops to 0.
  const auto all = test::survival_dataset({{0, 1, 1}, {0, 2, 1}});
  CHECK(fit(all).prob(2, 0, 1) == 1.0);
}

TEST_CASE("competing risks match a hand product") {
  // Two at risk; cause 1 at t=1 (Y=2), cause 2 at t=2 (Y=1).
  const auto m = test::competing_model(false);
  const auto d = test::make_dataset(m, {{0, 1, 0, 1, 1}, {0, 2, 0, 1, 0}, {1, 1, 0, 2, 0}, {1, 2, 0, 2, 1}});
  const auto P = fit(d).at(2);
  Eigen::Matrix3d A1, A2;
  A1 << 0.5, 0.5, 0, 0, 1, 0, 0, 0, 1;
  A2 << 0, 0, 1, 0, 1, 0, 0, 0, 1;
  CHECK(test::max_abs_diff(P, A1 * A2) == 0.0);
  CHECK(P(0, 1) == 0.5);
  CHECK(P(0, 2) == 0.5);
}

TEST_CASE("Aalen-Johansen matches the brute-force product on small data") {
  Rng rng(4);
  for (int rep = 0; rep < 300; ++rep) {
    const auto d = test::random_illness_death(rng, 1 + static_cast<int>(rng.below(5)), false, 30);
    const auto p = fit(d, RateTable::zero(), 0.0, false);
    for (double t : {5.0, 12.0, 30.0, 60.0}) CHECK(test::max_abs_diff(p.at(t), test::aalen_johansen_oracle(d, 0, t)) <= 1e-12);
    const auto q = fit(d, RateTable::zero(), 7.0, false);
    CHECK(test::max_abs_diff(q.at(40), test::aalen_johansen_oracle(d, 7, 40)) <= 1e-12);
  }
}

TEST_CASE("two-state covariance equals the Kaplan-Meier Greenwood variance") {
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<test::Spell> spells;
    const int n = 2 + static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i) {
      const double t = 1.0 + static_cast<double>(rng.below(10));
      spells.push_back({0, t, rng.uniform() < 0.6 ? 1 : 0});
    }
    const auto d = test::survival_dataset(spells);
    const auto km = test::kaplan_meier(spells);
    const auto p = fit(d);
    for (std::size_t k = 0; k < km.time.size(); ++k) {
      const double t = km.time[k];
      CHECK(std::abs(p.prob(t, 0, 0) - km.surv[k]) <= 1e-12);
      if (std::isfinite(km.var[k]) && km.surv[k] > 0) {
        CHECK(std::abs(p.variance(t, 0, 0) - km.var[k]) <= 1e-12);
        CHECK(std::abs(p.variance(t, 0, 1) - km.var[k]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("population-only death has zero probability variance") {
  // No deaths observed: excess increments are zero, population accrues.
  const auto d = test::survival_dataset({{0, 200, 0}, {0, 300, 0}, {0, 400, 0}}, true);
  GridOptions g;
  g.extra_times = {100, 200, 300};
  const auto p = fit(d, RateTable::constant(1e-4), 0.0, true, g);
  const int pop = d.model().ext_state_index("Dead.p");
  CHECK(p.prob(300, 0, pop) > 0.0);
  CHECK(p.variance(300, 0, pop) == 0.0);
  CHECK(p.variance(300, 0, 0) == 0.0);
}

TEST_CASE("rows are stochastic and negative entries are flagged") {
  // Heavy population hazard with no deaths forces negative excess mass.
  const auto d = test::survival_dataset({{0, 300, 0}, {0, 300, 0}}, true);
  GridOptions g;
  g.extra_times = {100, 300};
  const auto p = fit(d, RateTable::constant(1e-3), 0.0, true, g);
  const int ex = d.model().ext_state_index("Dead.e");
  CHECK(p.prob(300, 0, ex) < 0.0);
  CHECK(p.any_negative());
  for (const auto& M : p.matrices)
    for (int r = 0; r < M.rows(); ++r) CHECK(std::abs(M.row(r).sum() - 1.0) <= 1e-10);
}

TEST_CASE("increments above one are an error naming the time") {
  // Nelson-Aalen increments never exceed one, so corrupt a fitted set.
  const auto d = test::survival_dataset({{0, 5, 1}, {0, 10, 0}});
  const HazardEstimator est(d, RateTable::zero());
  auto hs = est.estimate();
  hs.hazards[0].value[0] = 1.5;
  CHECK_THROWS_WITH_AS(aalen_johansen(hs, d.model()), doctest::Contains("t = 5"), ProbTransError);
}

TEST_CASE("standalone covariance equals the covariance computed with the estimate") {
  Rng rng(12);
  const auto d = test::random_illness_death(rng, 40);
  const HazardEstimator est(d, demo_ratetable());
  const auto hs = est.estimate();
  const auto p = aalen_johansen(hs, d.model(), 0.0, 1500.0, true);
  const auto c = greenwood_cov(hs, d.model(), 0.0, 1500.0);
  REQUIRE(c.size() == p.row_cov.size());
  for (std::size_t k = 0; k < c.size(); ++k)
    for (std::size_t r = 0; r < c[k].size(); ++r) CHECK(test::max_abs_diff(c[k][r], p.row_cov[k][r]) == 0.0);
}
