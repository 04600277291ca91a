#pragma once

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "msrs/data.hpp"
#include "msrs/model.hpp"
#include "msrs/ratetable.hpp"

namespace msrs {

// Cumulative hazard of one transition reported on a time grid; a step
// function, constant between grid times and 0 before the first one.
struct CumHazEstimate {
  int trans_id = 0;
  TransitionKind kind = TransitionKind::observed;
  std::vector<double> time;
  std::vector<double> value;
  std::vector<double> variance;  // Greenwood; 0 for population halves
  bool infinite_variance = false;  // Y == dN at some event time
  bool negative = false;           // excess values below 0 somewhere

  double at(double t) const;
  double variance_at(double t) const;
};

struct GridOptions {
  // Report at event times of this observed transition only; 0 means the
  // union of event times of all transitions.
  int event_source = 0;
  std::vector<double> extra_times;
  bool dense_grid = false;  // also every integer day up to t_max
  double t_max = std::numeric_limits<double>::infinity();
};

// All hazards of a model on one common grid, plus the raw counts the
// probability covariance needs.
struct HazardSet {
  std::vector<double> grid;
  std::vector<CumHazEstimate> hazards;           // indexed by transition id - 1
  std::vector<std::vector<double>> events;       // [observed id - 1][grid index] dN
  std::vector<std::vector<double>> at_risk;      // [observed state][grid index] Y
  std::vector<bool> state_present;               // some weight ever occupied the state

  const CumHazEstimate& operator[](int id) const { return hazards[id - 1]; }
};

// Precomputes the sorted risk-set sweep for a dataset and rate table so that
// estimates can be recomputed cheaply under subject frequency weights.
class HazardEstimator {
 public:
  HazardEstimator(const EventDataset& data, const RateTable& table, GridOptions options = {});

  const std::vector<double>& grid() const { return grid_; }
  const EventDataset& data() const { return *data_; }

  HazardSet estimate() const;
  // `weights[i]` is the multiplicity of subject i.
  HazardSet estimate(std::span<const double> weights) const;

 private:
  struct Change {
    double time;
    int subject;
    double rate_delta;
    int count_delta;
  };
  struct Event {
    double time;
    int subject;
    int trans_id;
  };
  struct StateSweep {
    std::vector<Change> changes;
    std::vector<Event> events;
    bool needs_population = false;
  };

  const EventDataset* data_;
  GridOptions options_;
  std::vector<double> grid_;
  std::vector<StateSweep> sweeps_;
};

CumHazEstimate nelson_aalen(const EventDataset& data, int trans_id, GridOptions options = {});
// Greenwood variance on the transition's event-time grid; +inf from the
// first time every subject at risk has the event.
std::vector<double> greenwood_var(const EventDataset& data, int trans_id, GridOptions options = {});
// (excess, population) halves of a split transition on its parent's event
// times (plus any extra/dense grid times).
std::pair<CumHazEstimate, CumHazEstimate> split_hazards(const EventDataset& data, const RateTable& table,
                                                        int trans_id, GridOptions options = {});

}  // namespace msrs
