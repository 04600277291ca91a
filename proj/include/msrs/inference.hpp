#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "msrs/hazards.hpp"
#include "msrs/probtrans.hpp"

namespace msrs {

// A scalar estimand evaluated at a set of times: a cumulative hazard
// (any transition id) or an entry of P(s, t) over extended states.
struct Target {
  enum class Kind { hazard, probability } kind = Kind::hazard;
  int trans_id = 0;
  int from = 0;  // extended state indices, probabilities only
  int to = 0;
  TransitionKind hazard_kind = TransitionKind::observed;
  std::string label;
};

// Which targets to compute and where to evaluate them.
struct EstimationPlan {
  double s = 0.0;
  double t_max = std::numeric_limits<double>::infinity();
  GridOptions grid;
  bool hazards = true;
  bool probabilities = true;
  std::vector<int> prob_rows;  // extended from-states; empty = all transient rows
};

std::vector<Target> make_targets(const TransitionModel& model, const EstimationPlan& plan);

// Target values [target][time]; NaN marks a missing value.
struct TargetValues {
  std::vector<double> times;
  std::vector<std::vector<double>> value;
  std::vector<std::vector<double>> greenwood_var;  // empty unless requested
};

TargetValues evaluate_targets(const HazardSet& hazards, const ProbTransEstimate& probs,
                              const TransitionModel& model, const std::vector<Target>& targets,
                              const std::vector<double>& times);

struct BootstrapResult {
  int B = 0;
  std::uint64_t seed = 0;
  std::vector<Target> targets;
  std::vector<double> times;
  // replicates[target][time][b]; NaN when the replicate has no subject in
  // the target's source state.
  std::vector<std::vector<std::vector<double>>> replicates;
  std::vector<std::vector<double>> variance;
  std::vector<std::vector<int>> n_valid;
  int n_incomplete = 0;  // replicates with at least one missing target
};

// B resamples of whole subjects with replacement, drawn from per-replicate
// streams derived from (seed, replicate index). Each replicate re-estimates
// every target through frequency weights on `estimator`; curves are read at
// `times` by last value carried forward. Results do not depend on `threads`.
BootstrapResult bootstrap(const HazardEstimator& estimator, const EstimationPlan& plan,
                          const std::vector<Target>& targets, const std::vector<double>& times, int B,
                          std::uint64_t seed, int threads = 1);

// Same, over explicitly given weight vectors (one per replicate).
BootstrapResult bootstrap_weights(const HazardEstimator& estimator, const EstimationPlan& plan,
                                  const std::vector<Target>& targets, const std::vector<double>& times,
                                  const std::vector<std::vector<double>>& weight_sets, int threads = 1);

// Multinomial resample counts for replicate `index`.
std::vector<double> resample_weights(int n, std::uint64_t seed, std::uint64_t index);

enum class CiMethod { plain_greenwood, plain_boot, log_boot, quantile_boot };
const char* to_string(CiMethod m);
CiMethod parse_ci_method(const std::string& name);
inline constexpr CiMethod kAllCiMethods[] = {CiMethod::plain_greenwood, CiMethod::plain_boot,
                                             CiMethod::log_boot, CiMethod::quantile_boot};

namespace ci_flag {
inline constexpr int ok = 0;
inline constexpr int zero_width = 1;
inline constexpr int unbounded = 2;
inline constexpr int undefined = 4;
}  // namespace ci_flag

struct ConfInterval {
  CiMethod method = CiMethod::plain_greenwood;
  double level = 0.95;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<int> flags;
  std::string warning;
};

double normal_quantile(double p);
// Linear interpolation between order statistics at position p (n - 1) + 1.
double quantile_type7(std::vector<double> values, double p);

ConfInterval ci_plain_greenwood(std::span<const double> estimate, std::span<const double> variance,
                                double level = 0.95);
ConfInterval ci_plain_boot(std::span<const double> estimate, std::span<const double> boot_variance,
                           double level = 0.95);
ConfInterval ci_log_boot(std::span<const double> estimate, std::span<const double> boot_variance,
                         double level = 0.95);
// replicates[time][b]
ConfInterval ci_quantile_boot(const std::vector<std::vector<double>>& replicates, double level = 0.95);

}  // namespace msrs
