#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "msrs/hazards.hpp"
#include "msrs/model.hpp"

namespace msrs {

class ProbTransError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Aalen-Johansen estimate P(s, t) over the extended state space at every
// grid time in (s, t_max]. Before the first grid time P is the identity.
struct ProbTransEstimate {
  double s = 0.0;
  std::vector<double> time;
  std::vector<Eigen::MatrixXd> matrices;
  // row_cov[k][h] is the covariance of row h of P(s, time[k]); empty when
  // the covariance was not requested.
  std::vector<std::vector<Eigen::MatrixXd>> row_cov;
  std::vector<bool> negative;  // some entry < 0 at this time
  int n_states = 0;

  bool has_covariance() const { return !row_cov.empty(); }
  Eigen::MatrixXd at(double t) const;
  double prob(double t, int from, int to) const;
  double variance(double t, int from, int to) const;
  bool any_negative() const;
};

// Product over grid times u in (s, t_max] of (I + dLambda(u)) for the
// extended model; split parents are replaced by their halves. Between grid
// times the hazards are constant, so population accrual is folded into the
// next grid time's factor.
ProbTransEstimate aalen_johansen(const HazardSet& hazards, const TransitionModel& model, double s = 0.0,
                                 double t_max = std::numeric_limits<double>::infinity(),
                                 bool with_covariance = false);

// Greenwood-type plug-in covariance of each row of P(s, .): the recursion
// Cov_t = A' Cov_{t-} A + sum_a P_a^2 Cov(dLambda_a.) per row, with
// multinomial increment covariance dN_j (delta_jk Y - dN_k) / Y^3 and
// population increments treated as fixed.
std::vector<std::vector<Eigen::MatrixXd>> greenwood_cov(const HazardSet& hazards, const TransitionModel& model,
                                                        double s = 0.0,
                                                        double t_max = std::numeric_limits<double>::infinity());

}  // namespace msrs
