#include "msrs/hazards.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace msrs {

namespace {

std::size_t last_at_or_before(const std::vector<double>& time, double t) {
  return static_cast<std::size_t>(std::upper_bound(time.begin(), time.end(), t) - time.begin());
}

}  // namespace

double CumHazEstimate::at(double t) const {
  const auto k = last_at_or_before(time, t);
  return k == 0 ? 0.0 : value[k - 1];
}

double CumHazEstimate::variance_at(double t) const {
  const auto k = last_at_or_before(time, t);
  return k == 0 ? 0.0 : variance[k - 1];
}

HazardEstimator::HazardEstimator(const EventDataset& data, const RateTable& table, GridOptions options)
    : data_(&data), options_(std::move(options)) {
  const auto& model = data.model();
  if (options_.event_source != 0) model.transition(options_.event_source);

  for (const auto& v : data.visits()) {
    if (v.event == 0 || v.t_stop > options_.t_max) continue;
    if (options_.event_source == 0 || v.event == options_.event_source) grid_.push_back(v.t_stop);
  }
  for (double t : options_.extra_times)
    if (t > 0.0 && t <= options_.t_max) grid_.push_back(t);
  if (options_.dense_grid) {
    const double end = std::isfinite(options_.t_max) ? options_.t_max : data.max_time();
    for (long d = 1; d <= static_cast<long>(std::floor(end)); ++d) grid_.push_back(static_cast<double>(d));
  }
  std::sort(grid_.begin(), grid_.end());
  grid_.erase(std::unique(grid_.begin(), grid_.end()), grid_.end());

  sweeps_.resize(model.n_states());
  for (int id : model.split_ids()) sweeps_[model.transition(id).from].needs_population = true;
  const bool zero_table = table.is_zero();

  std::vector<std::unique_ptr<PopHazardTrajectory>> traj(data.n_subjects());
  for (const auto& v : data.visits()) {
    auto& sw = sweeps_[v.state];
    if (v.event != 0) sw.events.push_back({v.t_stop, v.subject, v.event});
    if (!sw.needs_population || zero_table) {
      sw.changes.push_back({v.t_start, v.subject, 0.0, +1});
      sw.changes.push_back({v.t_stop, v.subject, 0.0, -1});
      continue;
    }
    auto& tr = traj[v.subject];
    if (!tr) tr = std::make_unique<PopHazardTrajectory>(table, data.demographics(v.subject), data.max_time());
    std::size_t k = tr->segment(v.t_start);
    sw.changes.push_back({v.t_start, v.subject, tr->rate(k), +1});
    for (++k; k < tr->size() && tr->start(k) < v.t_stop; ++k)
      sw.changes.push_back({tr->start(k), v.subject, tr->rate(k) - tr->rate(k - 1), 0});
    sw.changes.push_back({v.t_stop, v.subject, -tr->rate(k - 1), -1});
  }
  for (auto& sw : sweeps_) {
    std::stable_sort(sw.changes.begin(), sw.changes.end(),
                     [](const Change& a, const Change& b) { return a.time < b.time; });
    std::stable_sort(sw.events.begin(), sw.events.end(),
                     [](const Event& a, const Event& b) { return a.time < b.time; });
  }
}

HazardSet HazardEstimator::estimate() const {
  const std::vector<double> ones(data_->n_subjects(), 1.0);
  return estimate(ones);
}

HazardSet HazardEstimator::estimate(std::span<const double> weights) const {
  const auto& model = data_->model();
  if (static_cast<int>(weights.size()) != data_->n_subjects())
    throw std::invalid_argument("weight vector length differs from subject count");
  const std::size_t G = grid_.size();
  const int K = model.n_states();

  HazardSet out;
  out.grid = grid_;
  out.events.assign(model.n_observed(), std::vector<double>(G, 0.0));
  out.at_risk.assign(K, std::vector<double>(G, 0.0));
  out.state_present.assign(K, false);
  std::vector<std::vector<double>> population(K, std::vector<double>(G, 0.0));

  for (int h = 0; h < K; ++h) {
    const auto& sw = sweeps_[h];
    const auto& changes = sw.changes;
    const auto& events = sw.events;
    auto& Yg = out.at_risk[h];
    auto& Pg = population[h];
    double S = 0.0, Y = 0.0, integral = 0.0, t = 0.0;
    std::size_t ci = 0, ei = 0;
    for (std::size_t gi = 0; gi < G; ++gi) {
      const double g = grid_[gi];
      while (true) {
        const double next = (ci < changes.size() && changes[ci].time < g) ? changes[ci].time : g;
        if (Y > 0.0) integral += S / Y * (next - t);
        t = next;
        if (next == g) break;
        for (; ci < changes.size() && changes[ci].time == t; ++ci) {
          const double w = weights[changes[ci].subject];
          if (w == 0.0) continue;
          S += w * changes[ci].rate_delta;
          Y += w * changes[ci].count_delta;
          if (changes[ci].count_delta > 0) out.state_present[h] = true;
        }
        if (Y < 0.5) S = Y = 0.0;
      }
      Yg[gi] = Y;
      Pg[gi] = integral;
      for (; ei < events.size() && events[ei].time < g; ++ei) {
      }
      for (; ei < events.size() && events[ei].time == g; ++ei) {
        const double w = weights[events[ei].subject];
        if (w == 0.0) continue;
        if (Y <= 0.0) throw std::runtime_error("event with an empty risk set at t = " + std::to_string(g));
        out.events[events[ei].trans_id - 1][gi] += w;
      }
      for (; ci < changes.size() && changes[ci].time == g; ++ci) {
        const double w = weights[changes[ci].subject];
        if (w == 0.0) continue;
        S += w * changes[ci].rate_delta;
        Y += w * changes[ci].count_delta;
        if (changes[ci].count_delta > 0) out.state_present[h] = true;
      }
      if (Y < 0.5) S = Y = 0.0;
    }
    for (; ci < changes.size(); ++ci)
      if (changes[ci].count_delta > 0 && weights[changes[ci].subject] != 0.0) out.state_present[h] = true;
  }

  out.hazards.resize(model.n_transitions());
  for (const auto& tr : model.transitions()) {
    auto& est = out.hazards[tr.id - 1];
    est.trans_id = tr.id;
    est.kind = tr.kind;
    est.time = grid_;
    est.value.assign(G, 0.0);
    est.variance.assign(G, 0.0);
  }
  for (int id = 1; id <= model.n_observed(); ++id) {
    const int h = model.transition(id).from;
    const auto& dN = out.events[id - 1];
    const auto& Y = out.at_risk[h];
    auto& est = out.hazards[id - 1];
    double na = 0.0, var = 0.0;
    for (std::size_t k = 0; k < G; ++k) {
      if (dN[k] > 0.0) {
        na += dN[k] / Y[k];
        if (Y[k] == dN[k]) {
          var = std::numeric_limits<double>::infinity();
          est.infinite_variance = true;
        } else {
          var += dN[k] / (Y[k] * (Y[k] - dN[k]));
        }
      }
      est.value[k] = na;
      est.variance[k] = var;
    }
  }
  for (int id : model.split_ids()) {
    const auto [e, p] = model.split_of(id);
    const auto& parent = out.hazards[id - 1];
    const auto& pop = population[model.transition(id).from];
    auto& ex = out.hazards[e - 1];
    auto& po = out.hazards[p - 1];
    for (std::size_t k = 0; k < G; ++k) {
      po.value[k] = pop[k];
      ex.value[k] = parent.value[k] - pop[k];
      ex.variance[k] = parent.variance[k];
      if (ex.value[k] < 0.0) ex.negative = true;
    }
    ex.infinite_variance = parent.infinite_variance;
  }
  return out;
}

CumHazEstimate nelson_aalen(const EventDataset& data, int trans_id, GridOptions options) {
  const auto& t = data.model().transition(trans_id);
  if (t.kind != TransitionKind::observed)
    throw std::invalid_argument("nelson_aalen needs an observed transition");
  options.event_source = trans_id;
  HazardEstimator est(data, RateTable::zero(), options);
  return est.estimate()[trans_id];
}

std::vector<double> greenwood_var(const EventDataset& data, int trans_id, GridOptions options) {
  return nelson_aalen(data, trans_id, std::move(options)).variance;
}

std::pair<CumHazEstimate, CumHazEstimate> split_hazards(const EventDataset& data, const RateTable& table,
                                                        int trans_id, GridOptions options) {
  const auto [e, p] = data.model().split_of(trans_id);
  options.event_source = trans_id;
  HazardEstimator est(data, table, options);
  auto set = est.estimate();
  return {std::move(set.hazards[e - 1]), std::move(set.hazards[p - 1])};
}

}  // namespace msrs
