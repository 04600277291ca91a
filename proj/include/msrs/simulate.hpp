#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msrs/data.hpp"
#include "msrs/inference.hpp"
#include "msrs/model.hpp"
#include "msrs/ratetable.hpp"
#include "msrs/rng.hpp"

namespace msrs::sim {

// Hazard of a non-population transition: a * b * t^(b-1) per year with t in
// years (exponential when b == 1), times exp(beta_age * (age - mean age)).
struct HazardParams {
  double rate = 0.1;
  double shape = 1.0;
  double beta_age = 0.0;
};

struct ScenarioConfig {
  std::string name = "exp.small";
  int n = 500;
  double age_min = 30.0;  // years
  double age_max = 50.0;
  HazardParams relapse;
  HazardParams nrm_excess;
  HazardParams dar_excess;
  double censoring_rate = 0.0;  // per year; 0 = calibrate to the target fraction
  double censored_target = 0.20;
  double follow_up_years = 10.0;
  int n_sim = 200;
  int bootstrap = 100;
  std::vector<double> eval_years{1.0, 2.0, 5.0, 10.0};
  int date_min = 7305;  // 1990-01-01
  int date_max = 10957;  // 2000-01-01, exclusive

  double mean_age() const { return 0.5 * (age_min + age_max); }
  double horizon_days() const { return follow_up_years * kDaysPerYear; }
  std::vector<double> eval_days() const;
  void validate() const;

  static ScenarioConfig preset(const std::string& name);
  static ScenarioConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline const char* const kScenarioNames[] = {"exp.small", "exp.large", "weibull", "cov.eff.pos", "cov.eff.neg"};

// Illness-death model ARF -> Relapse, ARF -> NRM, Relapse -> DaR with both
// death transitions split.
TransitionModel illness_death_model();

// Transition ids of illness_death_model().
namespace ids {
inline constexpr int relapse = 1, nrm = 2, dar = 3, nrm_e = 4, nrm_p = 5, dar_e = 6, dar_p = 7;
}

enum class Cause { none, relapse_only, nrm_excess, nrm_population, dar_excess, dar_population };

struct GeneratedSubject {
  Demographics demo;
  double relapse = std::numeric_limits<double>::infinity();  // observed relapse time
  double death = std::numeric_limits<double>::infinity();    // observed death time
  double stop = 0.0;                                          // end of observation
  Cause cause = Cause::none;
  bool censored = false;  // observation ended by random censoring
  std::vector<TransRecord> records;
};

// Inverse-transform draw of a population death time after `after` days:
// the first t with Lambda_P(t) - Lambda_P(after) >= E, E ~ Exp(1). Returns
// +inf when the hazard is exhausted or the time exceeds `limit`.
double sample_population_death(const Demographics& d, const RateTable& table, double after, Rng& rng,
                               double limit = std::numeric_limits<double>::infinity());

// Weibull with cumulative hazard a t^b conditioned on T > r.
double sample_weibull_left_truncated(double a, double b, double r, Rng& rng);

// One subject's trajectory. `censoring_rate` is per year; the Exp(1)
// censoring draw sits at a fixed position in the stream, so a stream gives
// the same event times under every censoring rate.
GeneratedSubject generate_subject(const ScenarioConfig& config, const RateTable& table, double censoring_rate,
                                  Rng& rng);

EventDataset generate_dataset(const ScenarioConfig& config, const RateTable& table, double censoring_rate,
                              int n, Rng& rng);

struct CensoringCalibration {
  double rate = 0.0;  // per year
  double fraction = 0.0;
};
// Bisection on the censoring rate so that the fraction of subjects whose
// follow-up ends by random censoring matches the target.
CensoringCalibration calibrate_censoring(const ScenarioConfig& config, const RateTable& table,
                                         std::uint64_t seed, int sample_size = 20000);

struct TruthOptions {
  enum class Method { monte_carlo, quadrature } method = Method::monte_carlo;
  int mc_draws = 1000000;
  std::uint64_t mc_seed = 20240917;
  int base_nodes = 32;  // age and date nodes at the coarsest quadrature level
  int max_level = 5;
  double rel_tol = 1e-6;
};

struct TrueValues {
  std::vector<double> times;  // days
  // hazard[id - 1][time] for all seven transition ids of illness_death_model()
  std::vector<std::vector<double>> hazard;
  // prob[ext state][time] = P(ARF -> state)(0, t)
  std::vector<std::vector<double>> prob;
  int level = 0;
  long nodes = 0;
  double achieved_rel_change = 0.0;
};

// Exact state-occupation probabilities per covariate value, integrated over
// the covariate distribution; marginal hazards are the risk-set-weighted
// averages E[p_h(u) lambda(u)] / E[p_h(u)] integrated over u.
TrueValues true_values(const ScenarioConfig& config, const RateTable& table, const TruthOptions& options = {});

// Per-replication values for every target at every evaluation time.
struct ReplicationResult {
  std::vector<std::vector<double>> estimate;
  std::vector<std::vector<double>> var_greenwood;
  std::vector<std::vector<double>> var_boot;
  // bounds[method][target][time]
  std::array<std::vector<std::vector<double>>, 4> lower;
  std::array<std::vector<std::vector<double>>, 4> upper;
  int bootstrap_incomplete = 0;
};

struct PerformanceRow {
  std::string target;
  Target::Kind kind = Target::Kind::hazard;
  double time_years = 0.0;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double abs_bias = 0.0;  // truth - mean estimate
  double rel_bias = 0.0;  // NaN when truth == 0
  double emp_se = 0.0;
  double mean_se_greenwood = 0.0;  // over replications with finite variance
  int n_infinite_greenwood = 0;     // replications where some Y == dN made it +inf
  double mean_se_boot = 0.0;
  std::array<double, 4> coverage{};  // by CiMethod; undefined intervals count as misses
  std::array<int, 4> n_defined{};
  int n_sim = 0;
};

// truth[target][time]
std::vector<PerformanceRow> evaluate(const std::vector<ReplicationResult>& reps, const std::vector<Target>& targets,
                                     const std::vector<double>& times_years,
                                     const std::vector<std::vector<double>>& truth);

struct SimulationOptions {
  int n_sim = 200;
  int bootstrap = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  double level = 0.95;
  TruthOptions truth;
};

struct SimulationReport {
  ScenarioConfig config;
  CensoringCalibration censoring;
  TrueValues truth;
  std::vector<Target> targets;
  std::vector<double> times_years;
  std::vector<std::vector<double>> truth_by_target;
  std::vector<ReplicationResult> replications;
  std::vector<PerformanceRow> rows;

  const PerformanceRow& row(const std::string& target, double time_years) const;
};

// Targets of the simulation study: all seven cumulative hazards and
// P(ARF -> state)(0, t) for every extended state.
std::vector<Target> simulation_targets(const TransitionModel& model);
std::vector<std::vector<double>> truth_for_targets(const TrueValues& truth, const std::vector<Target>& targets);

ReplicationResult run_replication(const ScenarioConfig& config, const RateTable& table, double censoring_rate,
                                  const std::vector<Target>& targets, const SimulationOptions& options, int index);

SimulationReport run_simulation(const ScenarioConfig& config, const RateTable& table,
                                const SimulationOptions& options);

}  // namespace msrs::sim
