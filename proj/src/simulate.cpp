#include "msrs/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "msrs/parallel.hpp"

namespace msrs::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kSimStream = 0x73696d;
constexpr std::uint64_t kCalStream = 0x63616c;
constexpr std::uint64_t kTruthStream = 0x7472757468;

bool is_cov_scenario(const std::string& name) { return name.rfind("cov.eff", 0) == 0; }

void check_params(const HazardParams& p, const std::string& what, const std::string& scenario) {
  if (!(p.rate > 0.0)) throw std::invalid_argument(what + ": rate must be > 0");
  if (!(p.shape > 0.0)) throw std::invalid_argument(what + ": shape must be > 0");
  if (!std::isfinite(p.beta_age)) throw std::invalid_argument(what + ": beta_age must be finite");
  if (p.beta_age != 0.0 && !is_cov_scenario(scenario))
    throw std::invalid_argument(what + ": beta_age must be 0 outside the cov.eff scenarios");
  if (p.shape != 1.0 && scenario != "weibull")
    throw std::invalid_argument(what + ": shape must be 1 outside the weibull scenario");
}

nlohmann::json params_to_json(const HazardParams& p) {
  return {{"rate", p.rate}, {"shape", p.shape}, {"beta_age", p.beta_age}};
}

HazardParams params_from_json(const nlohmann::json& j, HazardParams p) {
  if (j.contains("rate")) p.rate = j.at("rate").get<double>();
  if (j.contains("shape")) p.shape = j.at("shape").get<double>();
  if (j.contains("beta_age")) p.beta_age = j.at("beta_age").get<double>();
  return p;
}

// Covariate multiplier exp(beta (age - mean age)).
double multiplier(const HazardParams& p, double age_years, double mean_age) {
  return p.beta_age == 0.0 ? 1.0 : std::exp(p.beta_age * (age_years - mean_age));
}

Demographics draw_demographics(const ScenarioConfig& c, Rng& rng) {
  Demographics d;
  d.sex = rng.uniform() < 0.5 ? Sex::male : Sex::female;
  d.date = c.date_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.date_max - c.date_min)));
  d.age_days = (c.age_min == c.age_max ? c.age_min : rng.uniform(c.age_min, c.age_max)) * kDaysPerYear;
  return d;
}

}  // namespace

std::vector<double> ScenarioConfig::eval_days() const {
  std::vector<double> out;
  for (double y : eval_years) out.push_back(y * kDaysPerYear);
  return out;
}

void ScenarioConfig::validate() const {
  if (std::find_if(std::begin(kScenarioNames), std::end(kScenarioNames),
                   [&](const char* s) { return name == s; }) == std::end(kScenarioNames))
    throw std::invalid_argument("unknown scenario '" + name + "'");
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  if (!(age_min >= 0.0 && age_max >= age_min)) throw std::invalid_argument("invalid age range");
  check_params(relapse, "relapse", name);
  check_params(nrm_excess, "nrm_excess", name);
  check_params(dar_excess, "dar_excess", name);
  if (!(censoring_rate >= 0.0)) throw std::invalid_argument("censoring_rate must be >= 0");
  if (!(censored_target > 0.0 && censored_target < 1.0))
    throw std::invalid_argument("censored_target must lie in (0, 1)");
  if (!(follow_up_years > 0.0)) throw std::invalid_argument("follow_up_years must be > 0");
  if (n_sim < 1) throw std::invalid_argument("n_sim must be >= 1");
  if (bootstrap < 2) throw std::invalid_argument("bootstrap must be >= 2");
  if (eval_years.empty()) throw std::invalid_argument("eval_years must not be empty");
  for (std::size_t i = 0; i < eval_years.size(); ++i) {
    if (!(eval_years[i] > 0.0 && eval_years[i] <= follow_up_years))
      throw std::invalid_argument("eval_years must lie in (0, follow_up_years]");
    if (i > 0 && !(eval_years[i] > eval_years[i - 1]))
      throw std::invalid_argument("eval_years must be increasing");
  }
  if (date_max <= date_min) throw std::invalid_argument("empty origin date range");
}

ScenarioConfig ScenarioConfig::preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  c.n = 1000;
  // Calibrated values: a slow relapse inflow with high relapse mortality
  // keeps the left-truncated risk set small, and a wide age range makes the
  // population hazard heterogeneous across the risk set.
  if (name == "exp.small") {
    c.age_min = 20.0;
    c.age_max = 70.0;
    c.relapse = {0.02, 1.0, 0.0};
    c.nrm_excess = {0.08, 1.0, 0.0};
    c.dar_excess = {2.0, 1.0, 0.0};
  } else if (name == "exp.large") {
    c.age_min = 60.0;
    c.age_max = 85.0;
    c.relapse = {0.02, 1.0, 0.0};
    c.nrm_excess = {0.04, 1.0, 0.0};
    c.dar_excess = {2.0, 1.0, 0.0};
  } else if (name == "weibull") {
    c.age_min = 20.0;
    c.age_max = 70.0;
    c.relapse = {0.02, 1.3, 0.0};
    c.nrm_excess = {0.08, 1.1, 0.0};
    c.dar_excess = {2.0, 1.2, 0.0};
  } else if (name == "cov.eff.pos" || name == "cov.eff.neg") {
    c.age_min = 20.0;
    c.age_max = 70.0;
    c.relapse = {0.02, 1.0, name == "cov.eff.pos" ? 0.03 : -0.03};
    c.nrm_excess = {0.08, 1.0, 0.05};
    c.dar_excess = {2.0, 1.0, 0.0};
  } else {
    throw std::invalid_argument("unknown scenario '" + name + "'");
  }
  return c;
}

ScenarioConfig ScenarioConfig::from_json(const nlohmann::json& j) {
  auto c = preset(j.at("name").get<std::string>());
  if (j.contains("n")) c.n = j.at("n").get<int>();
  if (j.contains("age_range")) {
    const auto& a = j.at("age_range");
    if (!a.is_array() || a.size() != 2) throw std::invalid_argument("age_range must be [min, max]");
    c.age_min = a[0].get<double>();
    c.age_max = a[1].get<double>();
  }
  if (j.contains("transitions")) {
    const auto& t = j.at("transitions");
    if (t.contains("relapse")) c.relapse = params_from_json(t.at("relapse"), c.relapse);
    if (t.contains("nrm_excess")) c.nrm_excess = params_from_json(t.at("nrm_excess"), c.nrm_excess);
    if (t.contains("dar_excess")) c.dar_excess = params_from_json(t.at("dar_excess"), c.dar_excess);
  }
  if (j.contains("censoring_rate") && !j.at("censoring_rate").is_null())
    c.censoring_rate = j.at("censoring_rate").get<double>();
  if (j.contains("censored_target")) c.censored_target = j.at("censored_target").get<double>();
  if (j.contains("follow_up_years")) c.follow_up_years = j.at("follow_up_years").get<double>();
  if (j.contains("n_sim")) c.n_sim = j.at("n_sim").get<int>();
  if (j.contains("bootstrap")) c.bootstrap = j.at("bootstrap").get<int>();
  if (j.contains("eval_years")) c.eval_years = j.at("eval_years").get<std::vector<double>>();
  if (j.contains("date_range")) {
    const auto& d = j.at("date_range");
    if (!d.is_array() || d.size() != 2) throw std::invalid_argument("date_range must be [first, last)");
    c.date_min = parse_date(d[0].get<std::string>());
    c.date_max = parse_date(d[1].get<std::string>());
  }
  c.validate();
  return c;
}

nlohmann::json ScenarioConfig::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["n"] = n;
  j["age_range"] = {age_min, age_max};
  j["transitions"] = {{"relapse", params_to_json(relapse)},
                      {"nrm_excess", params_to_json(nrm_excess)},
                      {"dar_excess", params_to_json(dar_excess)}};
  j["censoring_rate"] = censoring_rate == 0.0 ? nlohmann::json(nullptr) : nlohmann::json(censoring_rate);
  j["censored_target"] = censored_target;
  j["follow_up_years"] = follow_up_years;
  j["n_sim"] = n_sim;
  j["bootstrap"] = bootstrap;
  j["eval_years"] = eval_years;
  j["date_range"] = {format_date(date_min), format_date(date_max)};
  return j;
}

TransitionModel illness_death_model() {
  return TransitionModel::build({{"ARF", false}, {"Relapse", false}, {"NRM", true}, {"DaR", true}},
                                {{0, 1}, {0, 2}, {1, 3}}, {ids::nrm, ids::dar});
}

double sample_population_death(const Demographics& d, const RateTable& table, double after, Rng& rng,
                               double limit) {
  if (!(after >= 0.0)) throw std::invalid_argument("sample_population_death: after must be >= 0");
  double e = rng.exponential();
  double t = after;
  long day = static_cast<long>(std::floor(after));
  while (t < limit) {
    const auto c = cell_on_day(d, day);
    const double r = table.rate(c.age, c.year, d.sex);
    if (c.age >= table.max_age() && c.year >= table.max_year()) {
      // Past both table edges the clamped hazard is constant forever.
      if (r <= 0.0) return kInf;
      const double out = t + e / r;
      return out <= limit ? out : kInf;
    }
    const long next = next_cell_change(d, day);
    const double end = static_cast<double>(next);
    const double mass = r * (end - t);
    if (mass >= e) {
      const double out = t + e / r;
      return out <= limit ? out : kInf;
    }
    e -= mass;
    t = end;
    day = next;
  }
  return kInf;
}

double sample_weibull_left_truncated(double a, double b, double r, Rng& rng) {
  if (!(a > 0.0) || !(b > 0.0) || !(r >= 0.0))
    throw std::invalid_argument("sample_weibull_left_truncated: need a > 0, b > 0, r >= 0");
  const double u = rng.uniform();
  const double t = std::pow(std::pow(r, b) - std::log(u) / a, 1.0 / b);
  // Rounding can return r itself for tiny increments; keep the support strict.
  return t > r ? t : std::nextafter(r, kInf);
}

GeneratedSubject generate_subject(const ScenarioConfig& c, const RateTable& table, double censoring_rate,
                                  Rng& rng) {
  GeneratedSubject s;
  s.demo = draw_demographics(c, rng);
  const double age_y = s.demo.age_days / kDaysPerYear;
  const double mean = c.mean_age();
  const double H = c.horizon_days();

  const double t_rel =
      kDaysPerYear * sample_weibull_left_truncated(c.relapse.rate * multiplier(c.relapse, age_y, mean),
                                                   c.relapse.shape, 0.0, rng);
  const double t_ne =
      kDaysPerYear * sample_weibull_left_truncated(c.nrm_excess.rate * multiplier(c.nrm_excess, age_y, mean),
                                                   c.nrm_excess.shape, 0.0, rng);
  const double t_np = sample_population_death(s.demo, table, 0.0, rng, H);
  // Drawn unconditionally so that the censoring draw sits at a fixed position.
  const double e_c = rng.exponential();
  const double cens = censoring_rate > 0.0 ? e_c / censoring_rate * kDaysPerYear : kInf;

  const double first = std::min({t_rel, t_ne, t_np});
  const double end = std::min({first, cens, H});
  if (first > end || first == kInf) {
    s.stop = end;
    s.censored = cens < H && cens <= first;
    s.records.push_back({0, ids::relapse, 0.0, end, 0});
    s.records.push_back({0, ids::nrm, 0.0, end, 0});
    return s;
  }
  if (t_rel == first) {
    s.relapse = t_rel;
    s.records.push_back({0, ids::relapse, 0.0, t_rel, 1});
    s.records.push_back({0, ids::nrm, 0.0, t_rel, 0});
    const double t_de = kDaysPerYear * sample_weibull_left_truncated(
                                           c.dar_excess.rate * multiplier(c.dar_excess, age_y, mean),
                                           c.dar_excess.shape, t_rel / kDaysPerYear, rng);
    const double t_dp = sample_population_death(s.demo, table, t_rel, rng, H);
    const double death = std::min(t_de, t_dp);
    const double end2 = std::min({death, cens, H});
    s.stop = end2;
    if (death <= end2) {
      s.death = death;
      s.cause = t_de <= t_dp ? Cause::dar_excess : Cause::dar_population;
      s.records.push_back({0, ids::dar, t_rel, death, 1});
    } else {
      s.cause = Cause::relapse_only;
      s.censored = cens < H;
      s.records.push_back({0, ids::dar, t_rel, end2, 0});
    }
    return s;
  }
  s.death = first;
  s.stop = first;
  s.cause = t_ne == first ? Cause::nrm_excess : Cause::nrm_population;
  s.records.push_back({0, ids::relapse, 0.0, first, 0});
  s.records.push_back({0, ids::nrm, 0.0, first, 1});
  return s;
}

EventDataset generate_dataset(const ScenarioConfig& config, const RateTable& table, double censoring_rate,
                              int n, Rng& rng) {
  std::vector<std::string> ids;
  std::vector<Demographics> demo;
  std::vector<TransRecord> records;
  ids.reserve(n);
  demo.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto s = generate_subject(config, table, censoring_rate, rng);
    ids.push_back(std::to_string(i + 1));
    demo.push_back(s.demo);
    for (auto r : s.records) {
      r.subject = i;
      records.push_back(r);
    }
  }
  return EventDataset(illness_death_model(), std::move(ids), std::move(demo), std::move(records));
}

CensoringCalibration calibrate_censoring(const ScenarioConfig& config, const RateTable& table,
                                         std::uint64_t seed, int sample_size) {
  config.validate();
  auto fraction = [&](double rate) {
    // Common random numbers: the same subject streams for every rate.
    int censored = 0;
    for (int i = 0; i < sample_size; ++i) {
      Rng rng(seed, kCalStream, static_cast<std::uint64_t>(i));
      if (generate_subject(config, table, rate, rng).censored) ++censored;
    }
    return static_cast<double>(censored) / sample_size;
  };
  double lo = 0.0, hi = 0.05;
  while (fraction(hi) < config.censored_target) {
    hi *= 2.0;
    if (hi > 1e3) throw std::runtime_error("censoring calibration cannot reach the target fraction");
  }
  double f_hi = fraction(hi);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = fraction(mid);
    if (f < config.censored_target) {
      lo = mid;
    } else {
      hi = mid;
      f_hi = f;
    }
    if (hi - lo < 1e-6 * hi) break;
  }
  return {hi, f_hi};
}

// ---------------------------------------------------------------------------
// True values

namespace {

// State occupation of one covariate value: ARF, Relapse, NRM.e, NRM.p,
// DaR.e, DaR.p.
struct Occupation {
  double a = 1.0, r = 0.0, ne = 0.0, np = 0.0, de = 0.0, dp = 0.0;
};

// Baseline hazard per day at t days.
// Baseline cumulative hazard between two times in days.
double baseline_increment(const HazardParams& p, double t0, double t1) {
  if (p.shape == 1.0) return p.rate * (t1 - t0) / kDaysPerYear;
  return p.rate * (std::pow(t1 / kDaysPerYear, p.shape) - std::pow(t0 / kDaysPerYear, p.shape));
}

struct Rates {
  double rel, ne, de, pop;
};

// Exact step of length h with constant hazards; the exponentials are cached
// because consecutive steps usually share rates and length.
class ConstantStepper {
 public:
  void step(Occupation& o, const Rates& q, double h) {
    if (q.rel != key_.rel || q.ne != key_.ne || q.de != key_.de || q.pop != key_.pop || h != h_) prepare(q, h);
    const double left_a = o.a * one_minus_e1_;
    const double r_new = o.r * e2_ + o.a * rel_kern_;
    o.ne += left_a * ne_share_;
    o.np += left_a * np_share_;
    const double left_r = o.r + left_a * rel_share_ - r_new;
    o.de += left_r * de_share_;
    o.dp += left_r * dp_share_;
    o.a *= e1_;
    o.r = r_new;
  }

 private:
  void prepare(const Rates& q, double h) {
    key_ = q;
    h_ = h;
    const double q1 = q.rel + q.ne + q.pop;
    const double q2 = q.de + q.pop;
    e1_ = std::exp(-q1 * h);
    e2_ = std::exp(-q2 * h);
    one_minus_e1_ = -std::expm1(-q1 * h);
    // (e1 - e2) / (q2 - q1) without cancellation.
    const double d = q2 - q1;
    rel_kern_ = q.rel * (d == 0.0 ? h * e1_ : -e1_ * std::expm1(-d * h) / d);
    ne_share_ = q1 > 0.0 ? q.ne / q1 : 0.0;
    np_share_ = q1 > 0.0 ? q.pop / q1 : 0.0;
    rel_share_ = q1 > 0.0 ? q.rel / q1 : 0.0;
    de_share_ = q2 > 0.0 ? q.de / q2 : 0.0;
    dp_share_ = q2 > 0.0 ? q.pop / q2 : 0.0;
  }

  Rates key_{-1.0, -1.0, -1.0, -1.0};
  double h_ = -1.0;
  double e1_ = 1.0, e2_ = 1.0, one_minus_e1_ = 0.0, rel_kern_ = 0.0;
  double ne_share_ = 0.0, np_share_ = 0.0, rel_share_ = 0.0, de_share_ = 0.0, dp_share_ = 0.0;
};

struct Individual {
  Demographics demo;
  double f_rel = 1.0, f_ne = 1.0, f_de = 1.0;
  double weight = 1.0;
};

// Expectations over D at the two ends of every panel. The population rate
// is constant inside a panel, so `end` pairs occupation at the panel end with
// the rate of the panel itself.
struct NodeSums {
  double Da = 0.0, Dr = 0.0, Na_rel = 0.0, Na_ne = 0.0, Na_pop = 0.0, Nr_de = 0.0, Nr_pop = 0.0;
};

struct Sums {
  std::vector<NodeSums> start, end;
  std::vector<std::array<double, 6>> at_eval;

  void init(std::size_t m, std::size_t n_eval) {
    start.assign(m, {});
    end.assign(m, {});
    at_eval.assign(n_eval, {});
  }
};

// Marches one covariate value through panels bounded by integer days and the
// evaluation times; hazards of the day are constant within every panel.
class TruthSolver {
 public:
  TruthSolver(const ScenarioConfig& c, const RateTable& table) : c_(c), table_(table) {
    const double H = c.horizon_days();
    for (long k = 0; k < static_cast<long>(std::ceil(H)); ++k) bounds_.push_back(static_cast<double>(k));
    for (double t : c.eval_days()) bounds_.push_back(t);
    bounds_.push_back(H);
    std::sort(bounds_.begin(), bounds_.end());
    bounds_.erase(std::unique(bounds_.begin(), bounds_.end()), bounds_.end());
    while (bounds_.size() > 1 && bounds_.back() > H) bounds_.pop_back();
    for (double t : c.eval_days())
      eval_index_.push_back(
          static_cast<std::size_t>(std::lower_bound(bounds_.begin(), bounds_.end(), t) - bounds_.begin()));
  }

  std::size_t panels() const { return bounds_.size() - 1; }

  void accumulate(const Individual& ind, Sums& s) const {
    Occupation o;
    ConstantStepper stepper;
    auto cell = cell_on_day(ind.demo, 0);
    double pop = table_.rate(cell.age, cell.year, ind.demo.sex);
    long next = next_cell_change(ind.demo, 0);
    std::size_t e = 0;
    const double w = ind.weight;
    auto record = [&](NodeSums& n) {
      const double wa = w * o.a, wr = w * o.r;
      n.Da += wa;
      n.Dr += wr;
      n.Na_rel += wa * ind.f_rel;
      n.Na_ne += wa * ind.f_ne;
      n.Na_pop += wa * pop;
      n.Nr_de += wr * ind.f_de;
      n.Nr_pop += wr * pop;
    };
    auto store_eval = [&] {
      auto& x = s.at_eval[e++];
      x[0] += w * o.a;
      x[1] += w * o.r;
      x[2] += w * o.ne;
      x[3] += w * o.np;
      x[4] += w * o.de;
      x[5] += w * o.dp;
    };
    for (std::size_t j = 0; j < panels(); ++j) {
      while (e < eval_index_.size() && eval_index_[e] == j) store_eval();
      const double t0 = bounds_[j];
      const long d = static_cast<long>(std::floor(t0));
      if (d >= next) {
        cell = cell_on_day(ind.demo, d);
        pop = table_.rate(cell.age, cell.year, ind.demo.sex);
        next = next_cell_change(ind.demo, d);
      }
      record(s.start[j]);
      advance(o, ind, pop, t0, bounds_[j + 1] - t0, stepper);
      record(s.end[j]);
    }
    while (e < eval_index_.size()) store_eval();
  }

  // Marginal cumulative hazards [id - 1][eval] and occupation [state][eval].
  // Each panel integrand is smooth, so the trapezoid rule on the two one-sided
  // ends has relative error of order (1 day / 1 year)^2.
  void finish(const Sums& s, TrueValues& out) const {
    const std::size_t n_eval = eval_index_.size();
    out.hazard.assign(7, std::vector<double>(n_eval, 0.0));
    out.prob.assign(6, std::vector<double>(n_eval, 0.0));
    std::array<double, 5> cum{};  // rel, ne, np, de, dp
    std::size_t e = 0;
    auto store = [&](std::size_t k) {
      out.hazard[ids::relapse - 1][k] = cum[0];
      out.hazard[ids::nrm_e - 1][k] = cum[1];
      out.hazard[ids::nrm_p - 1][k] = cum[2];
      out.hazard[ids::dar_e - 1][k] = cum[3];
      out.hazard[ids::dar_p - 1][k] = cum[4];
      out.hazard[ids::nrm - 1][k] = cum[1] + cum[2];
      out.hazard[ids::dar - 1][k] = cum[3] + cum[4];
    };
    auto ratios = [](const NodeSums& n, const NodeSums& fallback) {
      const double da = n.Da > 0.0 ? n.Da : fallback.Da;
      const NodeSums& r = n.Dr > 0.0 ? n : fallback;  // Relapse is empty at the origin.
      return std::array<double, 5>{
          da > 0.0 ? (n.Da > 0.0 ? n : fallback).Na_rel / da : 0.0,
          da > 0.0 ? (n.Da > 0.0 ? n : fallback).Na_ne / da : 0.0,
          da > 0.0 ? (n.Da > 0.0 ? n : fallback).Na_pop / da : 0.0,
          r.Dr > 0.0 ? r.Nr_de / r.Dr : 0.0,
          r.Dr > 0.0 ? r.Nr_pop / r.Dr : 0.0,
      };
    };
    for (std::size_t j = 0; j < panels(); ++j) {
      while (e < n_eval && eval_index_[e] == j) store(e++);
      const double t0 = bounds_[j], t1 = bounds_[j + 1];
      const double half = 0.5 * (t1 - t0);
      const auto g0 = ratios(s.start[j], s.end[j]);
      const auto g1 = ratios(s.end[j], s.end[j]);
      cum[0] += 0.5 * (g0[0] + g1[0]) * baseline_increment(c_.relapse, t0, t1);
      cum[1] += 0.5 * (g0[1] + g1[1]) * baseline_increment(c_.nrm_excess, t0, t1);
      cum[2] += half * (g0[2] + g1[2]);
      cum[3] += 0.5 * (g0[3] + g1[3]) * baseline_increment(c_.dar_excess, t0, t1);
      cum[4] += half * (g0[4] + g1[4]);
    }
    while (e < n_eval) store(e++);
    for (std::size_t k = 0; k < n_eval; ++k)
      for (int st = 0; st < 6; ++st) out.prob[st][k] = s.at_eval[k][st];
  }

 private:
  void advance(Occupation& o, const Individual& ind, double pop, double t, double h,
               ConstantStepper& stepper) const {
    // Within a panel every hazard is replaced by its exact panel average, so
    // ARF survival is exact and the rest is second order in the panel width
    // even where t^(b-1) is singular at the origin.
    const Rates q{ind.f_rel * baseline_increment(c_.relapse, t, t + h) / h,
                  ind.f_ne * baseline_increment(c_.nrm_excess, t, t + h) / h,
                  ind.f_de * baseline_increment(c_.dar_excess, t, t + h) / h, pop};
    stepper.step(o, q, h);
  }

  const ScenarioConfig& c_;
  const RateTable& table_;
  std::vector<double> bounds_;
  std::vector<std::size_t> eval_index_;
};

Individual make_individual(const ScenarioConfig& c, const Demographics& d, double weight) {
  const double age_y = d.age_days / kDaysPerYear;
  return {d, multiplier(c.relapse, age_y, c.mean_age()), multiplier(c.nrm_excess, age_y, c.mean_age()),
          multiplier(c.dar_excess, age_y, c.mean_age()), weight};
}

// Midpoint product rule over age x origin day x sex; a uniform origin day is
// the floor of a continuous uniform date.
TrueValues quadrature_level(const ScenarioConfig& c, const TruthSolver& solver, int nodes) {
  const bool fixed_age = c.age_min == c.age_max;
  const int n_age = fixed_age ? 1 : nodes;
  const int span = c.date_max - c.date_min;
  const int n_date = std::min(nodes, span);
  Sums s;
  s.init(solver.panels(), c.eval_years.size());
  const double w = 1.0 / (2.0 * n_age * n_date);
  for (int sex = 0; sex < 2; ++sex)
    for (int i = 0; i < n_age; ++i)
      for (int j = 0; j < n_date; ++j) {
        Demographics d;
        d.sex = sex == 0 ? Sex::male : Sex::female;
        d.age_days = (c.age_min + (i + 0.5) * (c.age_max - c.age_min) / n_age) * kDaysPerYear;
        d.date = c.date_min + static_cast<int>(std::floor((j + 0.5) * span / n_date));
        solver.accumulate(make_individual(c, d, w), s);
      }
  TrueValues out;
  solver.finish(s, out);
  out.nodes = 2L * n_age * n_date;
  return out;
}

double max_rel_change(const TrueValues& a, const TrueValues& b) {
  double worst = 0.0;
  auto cmp = [&](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y) {
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        const double diff = std::abs(x[i][k] - y[i][k]);
        const double scale = std::abs(x[i][k]);
        worst = std::max(worst, scale > 0.0 ? diff / scale : diff);
      }
  };
  cmp(a.hazard, b.hazard);
  cmp(a.prob, b.prob);
  return worst;
}

}  // namespace

TrueValues true_values(const ScenarioConfig& config, const RateTable& table, const TruthOptions& options) {
  config.validate();
  const TruthSolver solver(config, table);
  TrueValues out;
  if (options.method == TruthOptions::Method::monte_carlo) {
    if (options.mc_draws < 1) throw std::invalid_argument("mc_draws must be >= 1");
    Sums s;
    s.init(solver.panels(), config.eval_years.size());
    const double w = 1.0 / options.mc_draws;
    for (int i = 0; i < options.mc_draws; ++i) {
      Rng rng(options.mc_seed, kTruthStream, static_cast<std::uint64_t>(i));
      solver.accumulate(make_individual(config, draw_demographics(config, rng), w), s);
    }
    solver.finish(s, out);
    out.nodes = options.mc_draws;
  } else {
    if (options.base_nodes < 1 || options.max_level < 1)
      throw std::invalid_argument("quadrature needs base_nodes >= 1 and max_level >= 1");
    TrueValues prev = quadrature_level(config, solver, options.base_nodes);
    for (int level = 1;; ++level) {
      TrueValues cur = quadrature_level(config, solver, options.base_nodes << level);
      const double change = max_rel_change(cur, prev);
      cur.level = level;
      cur.achieved_rel_change = change;
      if (change <= options.rel_tol) {
        out = std::move(cur);
        break;
      }
      if (level >= options.max_level)
        throw std::runtime_error("true-value quadrature did not converge: relative change " +
                                 std::to_string(change) + " after " + std::to_string(level) + " refinements");
      prev = std::move(cur);
    }
  }
  out.times = config.eval_days();
  return out;
}

// ---------------------------------------------------------------------------
// Replications and evaluation

std::vector<Target> simulation_targets(const TransitionModel& model) {
  EstimationPlan plan;
  plan.prob_rows = {model.ext_index(model.state_index("ARF"))};
  return make_targets(model, plan);
}

std::vector<std::vector<double>> truth_for_targets(const TrueValues& truth, const std::vector<Target>& targets) {
  const auto model = illness_death_model();
  // Extended index of each occupation slot (ARF, Relapse, NRM.e, NRM.p, DaR.e, DaR.p).
  std::array<int, 6> slot_ext{};
  slot_ext[0] = model.ext_index(0);
  slot_ext[1] = model.ext_index(1);
  const int split_slot[4] = {ids::nrm_e, ids::nrm_p, ids::dar_e, ids::dar_p};
  for (int k = 0; k < 4; ++k)
    for (const auto& t : model.extended_transitions())
      if (t.id == split_slot[k]) slot_ext[2 + k] = t.to;
  std::vector<std::vector<double>> out;
  for (const auto& t : targets) {
    if (t.kind == Target::Kind::hazard) {
      out.push_back(truth.hazard.at(t.trans_id - 1));
      continue;
    }
    if (t.from != slot_ext[0]) throw std::invalid_argument("true values exist only for probabilities from ARF");
    const auto it = std::find(slot_ext.begin(), slot_ext.end(), t.to);
    out.push_back(truth.prob.at(static_cast<std::size_t>(it - slot_ext.begin())));
  }
  return out;
}

ReplicationResult run_replication(const ScenarioConfig& config, const RateTable& table, double censoring_rate,
                                  const std::vector<Target>& targets, const SimulationOptions& options,
                                  int index) {
  Rng rng(options.seed, kSimStream, static_cast<std::uint64_t>(index));
  const auto data = generate_dataset(config, table, censoring_rate, config.n, rng);
  const auto& model = data.model();
  const auto times = config.eval_days();

  EstimationPlan plan;
  plan.s = 0.0;
  plan.t_max = config.horizon_days();
  plan.grid.extra_times = times;
  plan.grid.t_max = plan.t_max;
  plan.prob_rows = {model.ext_index(model.state_index("ARF"))};

  const HazardEstimator estimator(data, table, plan.grid);
  const auto hs = estimator.estimate();
  const auto pt = aalen_johansen(hs, model, plan.s, plan.t_max, true);
  const auto vals = evaluate_targets(hs, pt, model, targets, times);
  const std::uint64_t boot_seed = splitmix64(options.seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
  const auto boot = bootstrap(estimator, plan, targets, times, options.bootstrap, boot_seed, 1);

  ReplicationResult r;
  r.estimate = vals.value;
  r.var_greenwood = vals.greenwood_var;
  r.var_boot = boot.variance;
  r.bootstrap_incomplete = boot.n_incomplete;
  for (auto& m : r.lower) m.resize(targets.size());
  for (auto& m : r.upper) m.resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const ConfInterval cis[4] = {ci_plain_greenwood(vals.value[i], vals.greenwood_var[i], options.level),
                                 ci_plain_boot(vals.value[i], boot.variance[i], options.level),
                                 ci_log_boot(vals.value[i], boot.variance[i], options.level),
                                 ci_quantile_boot(boot.replicates[i], options.level)};
    for (int m = 0; m < 4; ++m) {
      r.lower[m][i] = cis[m].lower;
      r.upper[m][i] = cis[m].upper;
    }
  }
  return r;
}

std::vector<PerformanceRow> evaluate(const std::vector<ReplicationResult>& reps, const std::vector<Target>& targets,
                                     const std::vector<double>& times_years,
                                     const std::vector<std::vector<double>>& truth) {
  if (truth.size() != targets.size()) throw std::invalid_argument("one truth row is required per target");
  std::vector<PerformanceRow> rows;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (std::size_t k = 0; k < times_years.size(); ++k) {
      PerformanceRow row;
      row.target = targets[i].label;
      row.kind = targets[i].kind;
      row.time_years = times_years[k];
      row.truth = truth[i].at(k);
      double sum = 0.0, se_g = 0.0, se_b = 0.0;
      int n = 0, n_g = 0, n_b = 0;
      for (const auto& r : reps) {
        const double x = r.estimate[i][k];
        if (std::isnan(x)) continue;
        sum += x;
        ++n;
        if (!r.var_greenwood.empty() && !std::isnan(r.var_greenwood[i][k])) {
          if (std::isinf(r.var_greenwood[i][k])) {
            ++row.n_infinite_greenwood;
          } else {
            se_g += std::sqrt(r.var_greenwood[i][k]);
            ++n_g;
          }
        }
        if (!std::isnan(r.var_boot[i][k])) {
          se_b += std::sqrt(r.var_boot[i][k]);
          ++n_b;
        }
      }
      row.n_sim = n;
      row.mean_estimate = n > 0 ? sum / n : kNaN;
      row.abs_bias = row.truth - row.mean_estimate;
      row.rel_bias = row.truth != 0.0 ? row.abs_bias / row.truth : kNaN;
      double ss = 0.0;
      for (const auto& r : reps)
        if (!std::isnan(r.estimate[i][k])) ss += (r.estimate[i][k] - row.mean_estimate) * (r.estimate[i][k] - row.mean_estimate);
      row.emp_se = n > 1 ? std::sqrt(ss / (n - 1)) : kNaN;
      row.mean_se_greenwood = n_g > 0 ? se_g / n_g : kNaN;
      row.mean_se_boot = n_b > 0 ? se_b / n_b : kNaN;
      for (int m = 0; m < 4; ++m) {
        int hit = 0, defined = 0;
        for (const auto& r : reps) {
          const double lo = r.lower[m][i][k], hi = r.upper[m][i][k];
          if (std::isnan(lo) || std::isnan(hi)) continue;
          ++defined;
          if (lo <= row.truth && row.truth <= hi) ++hit;
        }
        row.n_defined[m] = defined;
        row.coverage[m] = reps.empty() ? kNaN : static_cast<double>(hit) / static_cast<double>(reps.size());
      }
      rows.push_back(row);
    }
  }
  return rows;
}

const PerformanceRow& SimulationReport::row(const std::string& target, double time_years) const {
  for (const auto& r : rows)
    if (r.target == target && std::abs(r.time_years - time_years) < 1e-9) return r;
  throw std::out_of_range("no performance row for " + target);
}

SimulationReport run_simulation(const ScenarioConfig& config, const RateTable& table,
                                const SimulationOptions& options) {
  config.validate();
  if (options.n_sim < 1) throw std::invalid_argument("n_sim must be >= 1");
  SimulationReport rep;
  rep.config = config;
  if (config.censoring_rate > 0.0) {
    rep.censoring.rate = config.censoring_rate;
    rep.censoring.fraction = kNaN;
  } else {
    rep.censoring = calibrate_censoring(config, table, options.seed);
  }
  rep.truth = true_values(config, table, options.truth);
  const auto model = illness_death_model();
  rep.targets = simulation_targets(model);
  rep.times_years = config.eval_years;
  rep.truth_by_target = truth_for_targets(rep.truth, rep.targets);
  rep.replications.resize(options.n_sim);
  parallel_for(options.n_sim, options.threads, [&](int i) {
    rep.replications[i] = run_replication(config, table, rep.censoring.rate, rep.targets, options, i);
  });
  rep.rows = evaluate(rep.replications, rep.targets, rep.times_years, rep.truth_by_target);
  return rep;
}

}  // namespace msrs::sim
