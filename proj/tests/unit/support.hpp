#pragma once

// Shared fixtures and independent oracles for unit and acceptance tests.
// Oracles recompute estimates from raw records with plain loops and never
// call the estimator internals.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "msrs/data.hpp"
#include "msrs/hazards.hpp"
#include "msrs/model.hpp"
#include "msrs/probtrans.hpp"
#include "msrs/ratetable.hpp"
#include "msrs/rng.hpp"

namespace msrs::test {

inline TransitionModel survival_model(bool split) {
  return TransitionModel::build({{"Alive", false}, {"Dead", true}}, {{0, 1}}, split ? std::vector<int>{1}
                                                                                     : std::vector<int>{});
}

inline TransitionModel competing_model(bool split) {
  return TransitionModel::build({{"Alive", false}, {"Cause1", true}, {"Cause2", true}}, {{0, 1}, {0, 2}},
                                split ? std::vector<int>{2} : std::vector<int>{});
}

// ARF -> Relapse (1), ARF -> NRM (2), Relapse -> DaR (3).
inline TransitionModel illness_death(bool split) {
  return TransitionModel::build({{"ARF", false}, {"Relapse", false}, {"NRM", true}, {"DaR", true}},
                                {{0, 1}, {0, 2}, {1, 3}}, split ? std::vector<int>{2, 3} : std::vector<int>{});
}

inline Demographics demo(double age_years, Sex sex = Sex::male, const std::string& date = "2000-01-01") {
  return {age_years * kDaysPerYear, sex, parse_date(date)};
}

inline EventDataset make_dataset(const TransitionModel& model, std::vector<TransRecord> records,
                                 std::vector<Demographics> demos = {}) {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.subject + 1);
  if (demos.empty()) demos.assign(n, demo(60.0));
  std::vector<std::string> ids;
  for (int i = 0; i < static_cast<int>(demos.size()); ++i) ids.push_back(std::to_string(i + 1));
  return EventDataset(model, ids, demos, std::move(records));
}

// One subject of a survival model: at risk on (start, stop].
struct Spell {
  double start, stop;
  int status;
};

inline EventDataset survival_dataset(const std::vector<Spell>& spells, bool split = false,
                                     std::vector<Demographics> demos = {}) {
  std::vector<TransRecord> recs;
  for (int i = 0; i < static_cast<int>(spells.size()); ++i)
    recs.push_back({i, 1, spells[i].start, spells[i].stop, spells[i].status});
  return make_dataset(survival_model(split), recs, std::move(demos));
}

// Random illness-death data on integer days so ties occur. Some subjects
// enter ARF late (left truncation); demographics span ages and dates so
// population hazards differ between subjects.
inline EventDataset random_illness_death(Rng& rng, int n, bool split = true, int horizon = 2000) {
  std::vector<TransRecord> recs;
  std::vector<Demographics> demos;
  auto day = [&](int lo, int hi) { return static_cast<double>(lo + static_cast<int>(rng.below(hi - lo + 1))); };
  for (int i = 0; i < n; ++i) {
    const double entry = rng.uniform() < 0.2 ? day(0, horizon / 4) : 0.0;
    const double rel = entry + day(1, horizon);
    const double nrm = entry + day(1, horizon);
    const double cens = entry + day(1, horizon + horizon / 2);
    const double stop1 = std::min({rel, nrm, cens});
    const bool relapsed = rel == stop1 && rel < nrm;
    const bool died = !relapsed && nrm == stop1;
    recs.push_back({i, 1, entry, stop1, relapsed ? 1 : 0});
    recs.push_back({i, 2, entry, stop1, died ? 1 : 0});
    if (relapsed) {
      const double dar = rel + day(1, horizon / 2);
      const double c2 = std::max(cens, rel + 1.0);
      recs.push_back({i, 3, rel, std::min(dar, c2), dar <= c2 ? 1 : 0});
    }
    Demographics d;
    d.age_days = rng.uniform(30.0, 90.0) * kDaysPerYear;
    d.sex = rng.uniform() < 0.5 ? Sex::male : Sex::female;
    d.date = parse_date("1985-01-01") + static_cast<int>(rng.below(6000));
    demos.push_back(d);
  }
  return make_dataset(illness_death(split), recs, demos);
}

inline EventDataset random_survival(Rng& rng, int n, bool split = false, bool truncation = true) {
  std::vector<Spell> spells;
  for (int i = 0; i < n; ++i) {
    const double entry = truncation && rng.uniform() < 0.3 ? static_cast<double>(rng.below(50)) : 0.0;
    const double t = entry + 1.0 + static_cast<double>(rng.below(100));
    const double c = entry + 1.0 + static_cast<double>(rng.below(150));
    spells.push_back({entry, std::min(t, c), t <= c ? 1 : 0});
  }
  return survival_dataset(spells, split);
}

// Kaplan-Meier survival and its Greenwood variance on the event times,
// straight from the spells.
struct KaplanMeier {
  std::vector<double> time, surv, var;
  double at(double t) const {
    double s = 1.0;
    for (std::size_t k = 0; k < time.size() && time[k] <= t; ++k) s = surv[k];
    return s;
  }
};

inline KaplanMeier kaplan_meier(const std::vector<Spell>& spells) {
  std::set<double> times;
  for (const auto& s : spells)
    if (s.status) times.insert(s.stop);
  KaplanMeier km;
  double S = 1.0, g = 0.0;
  for (double u : times) {
    double Y = 0, d = 0;
    for (const auto& s : spells) {
      if (s.start < u && u <= s.stop) ++Y;
      if (s.status && s.stop == u) ++d;
    }
    S *= 1.0 - d / Y;
    g += Y > d ? d / (Y * (Y - d)) : INFINITY;
    km.time.push_back(u);
    km.surv.push_back(S);
    km.var.push_back(S * S * g);
  }
  return km;
}

// Nelson-Aalen and Greenwood for one observed transition by direct
// counting over the records' distinct event times.
struct NaOracle {
  std::vector<double> time, value, var;
  double at(double t) const {
    double v = 0.0;
    for (std::size_t k = 0; k < time.size() && time[k] <= t; ++k) v = value[k];
    return v;
  }
};

inline NaOracle nelson_aalen_oracle(const EventDataset& data, int trans_id) {
  const auto& model = data.model();
  const int h = model.transition(trans_id).from;
  std::set<double> times;
  for (const auto& r : data.records())
    if (r.trans_id == trans_id && r.status) times.insert(r.t_stop);
  NaOracle out;
  double na = 0.0, var = 0.0;
  for (double u : times) {
    std::set<int> at_risk;
    double d = 0;
    for (const auto& r : data.records()) {
      if (model.transition(r.trans_id).from == h && r.t_start < u && u <= r.t_stop) at_risk.insert(r.subject);
      if (r.trans_id == trans_id && r.status && r.t_stop == u) ++d;
    }
    const double Y = static_cast<double>(at_risk.size());
    na += d / Y;
    var = Y > d ? var + d / (Y * (Y - d)) : INFINITY;
    out.time.push_back(u);
    out.value.push_back(na);
    out.var.push_back(var);
  }
  return out;
}

// Population cumulative hazard of a split transition on integer-day data:
// sum over days (u-1, u] of the at-risk average of daily hazards.
inline double population_oracle(const EventDataset& data, const RateTable& table, int trans_id, int until) {
  const auto& model = data.model();
  const int h = model.transition(trans_id).from;
  double total = 0.0;
  for (int u = 1; u <= until; ++u) {
    double sum = 0.0, Y = 0.0;
    std::set<int> seen;
    for (const auto& r : data.records()) {
      if (model.transition(r.trans_id).from != h) continue;
      if (r.t_start <= u - 1 && u <= r.t_stop && seen.insert(r.subject).second) {
        sum += individual_hazard(table, data.demographics(r.subject), u - 1);
        ++Y;
      }
    }
    if (Y > 0) total += sum / Y;
  }
  return total;
}

// Aalen-Johansen by an explicit product over distinct event times for a
// model without split transitions.
inline Eigen::MatrixXd aalen_johansen_oracle(const EventDataset& data, double s, double t) {
  const auto& model = data.model();
  const int K = model.n_states();
  std::set<double> times;
  for (const auto& r : data.records())
    if (r.status && r.t_stop > s && r.t_stop <= t) times.insert(r.t_stop);
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(K, K);
  for (double u : times) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(K, K);
    for (int h = 0; h < K; ++h) {
      std::set<int> at_risk;
      std::map<int, double> d;
      for (const auto& r : data.records()) {
        const auto& tr = model.transition(r.trans_id);
        if (tr.from != h) continue;
        if (r.t_start < u && u <= r.t_stop) at_risk.insert(r.subject);
        if (r.status && r.t_stop == u) d[tr.to] += 1.0;
      }
      for (const auto& [j, dj] : d) {
        A(h, j) += dj / at_risk.size();
        A(h, h) -= dj / at_risk.size();
      }
    }
    P = P * A;
  }
  return P;
}

// Asymptotic Kolmogorov p-value for the one-sample statistic D over n draws.
inline double ks_pvalue(double D, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * D;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
    q += term;
    if (std::abs(term) < 1e-16) break;
  }
  return std::clamp(q, 0.0, 1.0);
}

template <typename Cdf>
double ks_statistic(std::vector<double> x, Cdf cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double D = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = cdf(x[i]);
    D = std::max({D, (i + 1) / n - F, F - i / n});
  }
  return D;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace msrs::test
