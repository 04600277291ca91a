#include "msrs/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>

#include "msrs/parallel.hpp"
#include "msrs/rng.hpp"

namespace msrs {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sample_variance(const std::vector<double>& x, int& n_valid) {
  double sum = 0.0;
  n_valid = 0;
  for (double v : x)
    if (!std::isnan(v)) {
      sum += v;
      ++n_valid;
    }
  if (n_valid < 2) return kNaN;
  const double mean = sum / n_valid;
  double ss = 0.0;
  for (double v : x)
    if (!std::isnan(v)) ss += (v - mean) * (v - mean);
  return ss / (n_valid - 1);
}

// Observed source state of a target, for the missing-replicate rule.
int source_state(const TransitionModel& model, const Target& t) {
  if (t.kind == Target::Kind::hazard) return model.transition(t.trans_id).from;
  for (int h = 0; h < model.n_states(); ++h)
    if (model.ext_index(h) == t.from) return h;
  return -1;
}

}  // namespace

std::vector<Target> make_targets(const TransitionModel& model, const EstimationPlan& plan) {
  std::vector<Target> out;
  if (plan.hazards) {
    for (const auto& t : model.transitions()) {
      Target x;
      x.kind = Target::Kind::hazard;
      x.trans_id = t.id;
      x.hazard_kind = t.kind;
      x.label = t.label;
      out.push_back(x);
    }
  }
  if (plan.probabilities) {
    std::vector<int> rows = plan.prob_rows;
    if (rows.empty())
      for (int h = 0; h < model.n_ext_states(); ++h)
        if (!model.ext_states()[h].absorbing) rows.push_back(h);
    for (int from : rows) {
      for (int to = 0; to < model.n_ext_states(); ++to) {
        Target x;
        x.kind = Target::Kind::probability;
        x.from = from;
        x.to = to;
        x.label = "P(" + model.ext_states()[from].label + "," + model.ext_states()[to].label + ")";
        out.push_back(x);
      }
    }
  }
  return out;
}

TargetValues evaluate_targets(const HazardSet& hazards, const ProbTransEstimate& probs,
                              const TransitionModel& model, const std::vector<Target>& targets,
                              const std::vector<double>& times) {
  TargetValues out;
  out.times = times;
  out.value.assign(targets.size(), std::vector<double>(times.size(), kNaN));
  const bool with_var = probs.has_covariance();
  out.greenwood_var.assign(targets.size(), std::vector<double>(times.size(), kNaN));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const auto& t = targets[i];
    const int src = source_state(model, t);
    const bool present = src < 0 || hazards.state_present[src];
    for (std::size_t k = 0; k < times.size(); ++k) {
      if (!present) continue;
      if (t.kind == Target::Kind::hazard) {
        const auto& h = hazards[t.trans_id];
        out.value[i][k] = h.at(times[k]);
        out.greenwood_var[i][k] = h.variance_at(times[k]);
      } else {
        out.value[i][k] = probs.prob(times[k], t.from, t.to);
        if (with_var) out.greenwood_var[i][k] = probs.variance(times[k], t.from, t.to);
      }
    }
  }
  return out;
}

std::vector<double> resample_weights(int n, std::uint64_t seed, std::uint64_t index) {
  Rng rng(seed, 0x626f6f74ULL, index);
  std::vector<double> w(n, 0.0);
  for (int i = 0; i < n; ++i) w[rng.below(static_cast<std::uint64_t>(n))] += 1.0;
  return w;
}

BootstrapResult bootstrap_weights(const HazardEstimator& estimator, const EstimationPlan& plan,
                                  const std::vector<Target>& targets, const std::vector<double>& times,
                                  const std::vector<std::vector<double>>& weight_sets, int threads) {
  const int B = static_cast<int>(weight_sets.size());
  if (B < 2) throw std::invalid_argument("bootstrap needs B >= 2");
  const auto& model = estimator.data().model();
  const bool need_probs = std::any_of(targets.begin(), targets.end(),
                                      [](const Target& t) { return t.kind == Target::Kind::probability; });

  BootstrapResult out;
  out.B = B;
  out.targets = targets;
  out.times = times;
  out.replicates.assign(targets.size(), std::vector<std::vector<double>>(times.size(), std::vector<double>(B)));

  std::vector<char> incomplete(B, 0);
  parallel_for(B, threads, [&](int b) {
    const auto hs = estimator.estimate(weight_sets[b]);
    ProbTransEstimate pt;
    pt.n_states = model.n_ext_states();
    if (need_probs) pt = aalen_johansen(hs, model, plan.s, plan.t_max, false);
    const auto vals = evaluate_targets(hs, pt, model, targets, times);
    for (std::size_t i = 0; i < targets.size(); ++i)
      for (std::size_t k = 0; k < times.size(); ++k) {
        out.replicates[i][k][b] = vals.value[i][k];
        if (std::isnan(vals.value[i][k])) incomplete[b] = 1;
      }
  });
  out.n_incomplete = static_cast<int>(std::count(incomplete.begin(), incomplete.end(), 1));

  out.variance.assign(targets.size(), std::vector<double>(times.size(), kNaN));
  out.n_valid.assign(targets.size(), std::vector<int>(times.size(), 0));
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t k = 0; k < times.size(); ++k)
      out.variance[i][k] = sample_variance(out.replicates[i][k], out.n_valid[i][k]);
  return out;
}

BootstrapResult bootstrap(const HazardEstimator& estimator, const EstimationPlan& plan,
                          const std::vector<Target>& targets, const std::vector<double>& times, int B,
                          std::uint64_t seed, int threads) {
  if (B < 2) throw std::invalid_argument("bootstrap needs B >= 2");
  const int n = estimator.data().n_subjects();
  std::vector<std::vector<double>> weights(B);
  for (int b = 0; b < B; ++b) weights[b] = resample_weights(n, seed, static_cast<std::uint64_t>(b));
  auto out = bootstrap_weights(estimator, plan, targets, times, weights, threads);
  out.seed = seed;
  return out;
}

const char* to_string(CiMethod m) {
  switch (m) {
    case CiMethod::plain_greenwood:
      return "plain.G";
    case CiMethod::plain_boot:
      return "plain.boot";
    case CiMethod::log_boot:
      return "log.boot";
    case CiMethod::quantile_boot:
      return "q.boot";
  }
  return "unknown";
}

CiMethod parse_ci_method(const std::string& name) {
  for (auto m : kAllCiMethods)
    if (name == to_string(m)) return m;
  throw std::invalid_argument("unknown CI method '" + name + "'");
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

double quantile_type7(std::vector<double> values, double p) {
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

namespace {

ConfInterval plain_interval(CiMethod method, std::span<const double> est, std::span<const double> var,
                            double level) {
  if (est.size() != var.size()) throw std::invalid_argument("estimate and variance lengths differ");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  ConfInterval ci{method, level, {}, {}, {}, {}};
  for (std::size_t k = 0; k < est.size(); ++k) {
    double lo = kNaN, hi = kNaN;
    int flag = ci_flag::ok;
    if (std::isnan(est[k]) || std::isnan(var[k])) {
      flag = ci_flag::undefined;
    } else if (std::isinf(var[k])) {
      lo = -std::numeric_limits<double>::infinity();
      hi = std::numeric_limits<double>::infinity();
      flag = ci_flag::unbounded;
    } else {
      const double half = z * std::sqrt(var[k]);
      lo = est[k] - half;
      hi = est[k] + half;
      if (var[k] == 0.0) flag = ci_flag::zero_width;
    }
    ci.lower.push_back(lo);
    ci.upper.push_back(hi);
    ci.flags.push_back(flag);
  }
  return ci;
}

}  // namespace

ConfInterval ci_plain_greenwood(std::span<const double> estimate, std::span<const double> variance,
                                double level) {
  auto ci = plain_interval(CiMethod::plain_greenwood, estimate, variance, level);
  if (std::find(ci.flags.begin(), ci.flags.end(), ci_flag::zero_width) != ci.flags.end())
    ci.warning = "zero Greenwood variance gives zero-width plain.G intervals (anti-conservative)";
  return ci;
}

ConfInterval ci_plain_boot(std::span<const double> estimate, std::span<const double> boot_variance,
                           double level) {
  return plain_interval(CiMethod::plain_boot, estimate, boot_variance, level);
}

ConfInterval ci_log_boot(std::span<const double> estimate, std::span<const double> boot_variance,
                         double level) {
  if (estimate.size() != boot_variance.size()) throw std::invalid_argument("estimate and variance lengths differ");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  ConfInterval ci{CiMethod::log_boot, level, {}, {}, {}, {}};
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    const double th = estimate[k], v = boot_variance[k];
    double lo = kNaN, hi = kNaN;
    int flag = ci_flag::ok;
    if (std::isnan(th) || std::isnan(v) || !(th > 0.0)) {
      flag = ci_flag::undefined;
    } else if (std::isinf(v)) {
      lo = 0.0;
      hi = std::numeric_limits<double>::infinity();
      flag = ci_flag::unbounded;
    } else {
      const double f = std::exp(z * std::sqrt(v) / th);
      lo = th / f;
      hi = th * f;
      if (v == 0.0) flag = ci_flag::zero_width;
    }
    ci.lower.push_back(lo);
    ci.upper.push_back(hi);
    ci.flags.push_back(flag);
  }
  return ci;
}

ConfInterval ci_quantile_boot(const std::vector<std::vector<double>>& replicates, double level) {
  if (!(level > 0.0 && level <= 1.0)) throw std::invalid_argument("level must lie in (0, 1]");
  const double p = (1.0 - level) / 2.0;
  ConfInterval ci{CiMethod::quantile_boot, level, {}, {}, {}, {}};
  std::size_t min_valid = std::numeric_limits<std::size_t>::max();
  for (const auto& reps : replicates) {
    std::vector<double> v;
    for (double x : reps)
      if (!std::isnan(x)) v.push_back(x);
    min_valid = std::min(min_valid, v.size());
    if (v.empty()) {
      ci.lower.push_back(kNaN);
      ci.upper.push_back(kNaN);
      ci.flags.push_back(ci_flag::undefined);
      continue;
    }
    const double lo = quantile_type7(v, p);
    const double hi = quantile_type7(v, 1.0 - p);
    ci.lower.push_back(lo);
    ci.upper.push_back(hi);
    ci.flags.push_back(lo == hi ? ci_flag::zero_width : ci_flag::ok);
  }
  if (!replicates.empty() && level < 1.0 && static_cast<double>(min_valid) * (1.0 - level) < 2.0)
    ci.warning = "fewer bootstrap replicates than recommended for q.boot at this level";
  return ci;
}

}  // namespace msrs
