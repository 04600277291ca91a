#include "msrs/probtrans.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msrs {

namespace {

std::size_t first_after(const std::vector<double>& time, double t) {
  return static_cast<std::size_t>(std::upper_bound(time.begin(), time.end(), t) - time.begin());
}

double value_before(const CumHazEstimate& h, std::size_t k, double s) {
  return k == 0 ? h.at(s) : h.value[k - 1];
}

}  // namespace

Eigen::MatrixXd ProbTransEstimate::at(double t) const {
  const auto k = first_after(time, t);
  if (k == 0) return Eigen::MatrixXd::Identity(n_states, n_states);
  return matrices[k - 1];
}

double ProbTransEstimate::prob(double t, int from, int to) const {
  const auto k = first_after(time, t);
  if (k == 0) return from == to ? 1.0 : 0.0;
  return matrices[k - 1](from, to);
}

double ProbTransEstimate::variance(double t, int from, int to) const {
  if (row_cov.empty()) throw std::logic_error("covariance was not computed");
  const auto k = first_after(time, t);
  if (k == 0) return 0.0;
  return row_cov[k - 1][from](to, to);
}

bool ProbTransEstimate::any_negative() const {
  return std::any_of(negative.begin(), negative.end(), [](bool b) { return b; });
}

ProbTransEstimate aalen_johansen(const HazardSet& hazards, const TransitionModel& model, double s,
                                 double t_max, bool with_covariance) {
  const int K = model.n_ext_states();
  const auto& ext = model.extended_transitions();
  ProbTransEstimate out;
  out.s = s;
  out.n_states = K;

  const auto& grid = hazards.grid;
  const std::size_t begin = first_after(grid, s);
  const std::size_t end = first_after(grid, t_max);

  // Random part of each extended row: observed transition j out of source
  // state a contributes +x_j at (a, target_j) and -x_j at (a, a), where the
  // target is the excess state for split transitions.
  struct Direction {
    int observed_id;
    int from;
    int to;
  };
  std::vector<std::vector<Direction>> by_state(model.n_states());
  for (const auto& t : ext) {
    if (t.kind == TransitionKind::population) continue;
    const int obs = t.kind == TransitionKind::excess ? t.parent : t.id;
    by_state[model.transition(obs).from].push_back({obs, t.from, t.to});
  }

  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(K, K);
  Eigen::MatrixXd A(K, K);
  std::vector<Eigen::MatrixXd> cov;
  if (with_covariance) cov.assign(K, Eigen::MatrixXd::Zero(K, K));
  std::vector<Eigen::MatrixXd> inc_cov(model.n_states());
  std::vector<bool> inc_active(model.n_states());

  for (std::size_t k = begin; k < end; ++k) {
    A.setIdentity();
    for (const auto& t : ext) {
      const auto& h = hazards[t.id];
      const double d = h.value[k] - value_before(h, k, s);
      A(t.from, t.to) += d;
      A(t.from, t.from) -= d;
    }
    for (int i = 0; i < K; ++i) {
      if (A(i, i) < -1e-12) {
        std::ostringstream msg;
        msg << "hazard increments exceed 1 in state '" << model.ext_states()[i].label << "' at t = " << grid[k];
        throw ProbTransError(msg.str());
      }
    }

    if (with_covariance) {
      for (int a = 0; a < model.n_states(); ++a) {
        inc_active[a] = false;
        const double Y = hazards.at_risk[a][k];
        if (Y <= 0.0 || by_state[a].empty()) continue;
        auto& C = inc_cov[a];
        C.setZero(K, K);
        for (const auto& dj : by_state[a]) {
          const double nj = hazards.events[dj.observed_id - 1][k];
          if (nj == 0.0) continue;
          for (const auto& dk : by_state[a]) {
            const double nk = hazards.events[dk.observed_id - 1][k];
            const double c = nj * ((dj.observed_id == dk.observed_id ? Y : 0.0) - nk) / (Y * Y * Y);
            if (c == 0.0) continue;
            C(dj.to, dk.to) += c;
            C(dj.to, dk.from) -= c;
            C(dj.from, dk.to) -= c;
            C(dj.from, dk.from) += c;
            inc_active[a] = true;
          }
        }
      }
      for (int r = 0; r < K; ++r) {
        Eigen::MatrixXd next = A.transpose() * cov[r] * A;
        for (int a = 0; a < model.n_states(); ++a) {
          if (!inc_active[a]) continue;
          const int ea = model.ext_index(a);
          const double p = P(r, ea);
          if (p != 0.0) next += p * p * inc_cov[a];
        }
        cov[r] = std::move(next);
      }
    }

    P = P * A;
    out.time.push_back(grid[k]);
    out.matrices.push_back(P);
    out.negative.push_back((P.array() < 0.0).any());
    if (with_covariance) out.row_cov.push_back(cov);
  }
  return out;
}

std::vector<std::vector<Eigen::MatrixXd>> greenwood_cov(const HazardSet& hazards, const TransitionModel& model,
                                                        double s, double t_max) {
  return aalen_johansen(hazards, model, s, t_max, true).row_cov;
}

}  // namespace msrs
