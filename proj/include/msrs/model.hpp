#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace msrs {

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct State {
  std::string label;
  bool absorbing = false;
};

enum class TransitionKind { observed, excess, population };

const char* to_string(TransitionKind kind);

// A transition of either the observed or the extended model. `from`/`to`
// index the observed state list for observed transitions and the extended
// state list for every entry of `extended_transitions()`.
struct Transition {
  int id = 0;
  int from = 0;
  int to = 0;
  TransitionKind kind = TransitionKind::observed;
  int parent = 0;  // observed parent id for excess/population halves, else 0
  std::string label;
};

struct TransitionSpec {
  int from = 0;  // 0-based observed state index
  int to = 0;
};

// State space of an observed multi-state model plus the excess/population
// split of selected death transitions.
//
// Transition ids are dense: observed transitions take 1..M in declaration
// order, then each split transition (in increasing id order) appends an
// excess id followed by a population id. Every split transition h->j gets
// its own pair of absorbing states; an observed death state whose incoming
// transitions are all split is removed from the extended state space.
class TransitionModel {
 public:
  static TransitionModel build(std::vector<State> states,
                               const std::vector<TransitionSpec>& transitions,
                               std::vector<int> split_ids = {});

  static TransitionModel from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  int n_states() const { return static_cast<int>(states_.size()); }
  int n_ext_states() const { return static_cast<int>(ext_states_.size()); }
  int n_observed() const { return n_observed_; }
  int n_transitions() const { return static_cast<int>(transitions_.size()); }

  const std::vector<State>& states() const { return states_; }
  const std::vector<State>& ext_states() const { return ext_states_; }

  // All transitions (observed then derived), indexed by id - 1. Observed
  // entries use observed state indices.
  const std::vector<Transition>& transitions() const { return transitions_; }
  const Transition& transition(int id) const;

  // Transitions of the extended model in extended state indices: every
  // non-split observed transition plus both halves of each split one.
  const std::vector<Transition>& extended_transitions() const { return extended_; }

  bool is_split(int id) const;
  // (excess id, population id) for a split observed transition.
  std::pair<int, int> split_of(int id) const;
  const std::vector<int>& split_ids() const { return split_ids_; }

  // Extended index of an observed state, or -1 when it was replaced.
  int ext_index(int observed_state) const { return ext_of_observed_[observed_state]; }
  // Observed transition ids leaving the given observed state.
  const std::vector<int>& out_transitions(int observed_state) const {
    return out_[observed_state];
  }
  int state_index(const std::string& label) const;
  int ext_state_index(const std::string& label) const;

  // Same observed model with no split annotations.
  TransitionModel unsplit() const;
  const std::vector<TransitionSpec>& transition_specs() const { return specs_; }

 private:
  std::vector<State> states_;
  std::vector<TransitionSpec> specs_;
  std::vector<int> split_ids_;
  int n_observed_ = 0;
  std::vector<Transition> transitions_;
  std::vector<Transition> extended_;
  std::vector<State> ext_states_;
  std::vector<int> ext_of_observed_;
  std::vector<std::vector<int>> out_;
};

}  // namespace msrs
