#include "msrs/model.hpp"

#include <algorithm>
#include <set>

namespace msrs {

const char* to_string(TransitionKind kind) {
  switch (kind) {
    case TransitionKind::observed:
      return "observed";
    case TransitionKind::excess:
      return "excess";
    case TransitionKind::population:
      return "population";
  }
  return "unknown";
}

TransitionModel TransitionModel::build(std::vector<State> states,
                                       const std::vector<TransitionSpec>& transitions,
                                       std::vector<int> split_ids) {
  TransitionModel m;
  const int k = static_cast<int>(states.size());
  if (k == 0) throw ModelError("model has no states");
  std::set<std::string> labels;
  for (const auto& s : states) {
    if (s.label.empty()) throw ModelError("empty state label");
    if (!labels.insert(s.label).second) throw ModelError("duplicate state label '" + s.label + "'");
  }

  std::set<std::pair<int, int>> seen;
  for (const auto& t : transitions) {
    if (t.from < 0 || t.from >= k || t.to < 0 || t.to >= k)
      throw ModelError("transition references an undeclared state");
    if (t.from == t.to) throw ModelError("self transition on state '" + states[t.from].label + "'");
    if (states[t.from].absorbing)
      throw ModelError("transition out of absorbing state '" + states[t.from].label + "'");
    if (!seen.insert({t.from, t.to}).second)
      throw ModelError("duplicate transition " + states[t.from].label + " -> " + states[t.to].label);
  }

  const int n_obs = static_cast<int>(transitions.size());
  std::sort(split_ids.begin(), split_ids.end());
  if (std::adjacent_find(split_ids.begin(), split_ids.end()) != split_ids.end())
    throw ModelError("transition split twice");
  for (int id : split_ids) {
    if (id < 1 || id > n_obs) throw ModelError("split annotation on unknown transition " + std::to_string(id));
    if (!states[transitions[id - 1].to].absorbing)
      throw ModelError("split annotation on transition " + std::to_string(id) +
                       " whose target is not a death state");
  }

  m.states_ = std::move(states);
  m.specs_ = transitions;
  m.split_ids_ = split_ids;
  m.n_observed_ = n_obs;
  m.out_.assign(k, {});

  std::vector<int> incoming(k, 0), incoming_split(k, 0);
  for (int i = 0; i < n_obs; ++i) {
    const auto& t = transitions[i];
    ++incoming[t.to];
    if (std::binary_search(split_ids.begin(), split_ids.end(), i + 1)) ++incoming_split[t.to];
    m.out_[t.from].push_back(i + 1);
    m.transitions_.push_back({i + 1, t.from, t.to, TransitionKind::observed, 0,
                              m.states_[t.from].label + "->" + m.states_[t.to].label});
  }

  // Extended state list: observed states in order, a fully split death
  // state replaced in place by the (excess, population) pairs of its
  // incoming split transitions.
  m.ext_of_observed_.assign(k, -1);
  std::vector<std::pair<int, int>> pair_state(n_obs + 1, {-1, -1});
  for (int s = 0; s < k; ++s) {
    const bool replaced = incoming[s] > 0 && incoming[s] == incoming_split[s];
    if (!replaced) {
      m.ext_of_observed_[s] = static_cast<int>(m.ext_states_.size());
      m.ext_states_.push_back(m.states_[s]);
    }
    for (int id : split_ids) {
      const auto& t = transitions[id - 1];
      if (t.to != s) continue;
      std::string base = m.states_[s].label;
      if (incoming_split[s] > 1) base = m.states_[t.from].label + ":" + base;
      pair_state[id].first = static_cast<int>(m.ext_states_.size());
      m.ext_states_.push_back({base + ".e", true});
      pair_state[id].second = static_cast<int>(m.ext_states_.size());
      m.ext_states_.push_back({base + ".p", true});
    }
  }

  int next_id = n_obs + 1;
  for (int id : split_ids) {
    const auto& t = transitions[id - 1];
    const auto [e, p] = pair_state[id];
    m.transitions_.push_back({next_id, t.from, t.to, TransitionKind::excess, id,
                              m.ext_states_[e].label});
    m.transitions_.push_back({next_id + 1, t.from, t.to, TransitionKind::population, id,
                              m.ext_states_[p].label});
    next_id += 2;
  }

  // Extended-space view: same ids, extended state indices.
  for (const auto& t : m.transitions_) {
    if (t.kind == TransitionKind::observed) {
      if (m.is_split(t.id)) continue;
      Transition x = t;
      x.from = m.ext_of_observed_[t.from];
      x.to = m.ext_of_observed_[t.to];
      m.extended_.push_back(x);
    } else {
      Transition x = t;
      x.from = m.ext_of_observed_[t.from];
      x.to = t.kind == TransitionKind::excess ? pair_state[t.parent].first : pair_state[t.parent].second;
      m.extended_.push_back(x);
    }
  }
  return m;
}

const Transition& TransitionModel::transition(int id) const {
  if (id < 1 || id > n_transitions()) throw ModelError("unknown transition id " + std::to_string(id));
  return transitions_[id - 1];
}

bool TransitionModel::is_split(int id) const {
  return std::binary_search(split_ids_.begin(), split_ids_.end(), id);
}

std::pair<int, int> TransitionModel::split_of(int id) const {
  auto it = std::lower_bound(split_ids_.begin(), split_ids_.end(), id);
  if (it == split_ids_.end() || *it != id)
    throw ModelError("transition " + std::to_string(id) + " is not split");
  const int rank = static_cast<int>(it - split_ids_.begin());
  return {n_observed_ + 2 * rank + 1, n_observed_ + 2 * rank + 2};
}

int TransitionModel::state_index(const std::string& label) const {
  for (int i = 0; i < n_states(); ++i)
    if (states_[i].label == label) return i;
  throw ModelError("unknown state '" + label + "'");
}

int TransitionModel::ext_state_index(const std::string& label) const {
  for (int i = 0; i < n_ext_states(); ++i)
    if (ext_states_[i].label == label) return i;
  throw ModelError("unknown extended state '" + label + "'");
}

TransitionModel TransitionModel::unsplit() const { return build(states_, specs_, {}); }

TransitionModel TransitionModel::from_json(const nlohmann::json& j) {
  try {
    std::vector<State> states;
    for (const auto& s : j.at("states")) {
      if (s.is_string())
        states.push_back({s.get<std::string>(), false});
      else
        states.push_back({s.at("name").get<std::string>(), s.value("absorbing", false)});
    }
    auto resolve = [&](const nlohmann::json& v) -> int {
      if (v.is_number_integer()) {
        const int i = v.get<int>();
        if (i < 1 || i > static_cast<int>(states.size()))
          throw ModelError("state number " + std::to_string(i) + " out of range");
        return i - 1;
      }
      const auto label = v.get<std::string>();
      for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].label == label) return static_cast<int>(i);
      throw ModelError("transition references undeclared state '" + label + "'");
    };
    std::vector<TransitionSpec> trans;
    for (const auto& t : j.at("transitions")) {
      if (t.is_array())
        trans.push_back({resolve(t.at(0)), resolve(t.at(1))});
      else
        trans.push_back({resolve(t.at("from")), resolve(t.at("to"))});
    }
    std::vector<int> split;
    if (j.contains("split")) split = j.at("split").get<std::vector<int>>();
    return build(std::move(states), trans, std::move(split));
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("malformed model config: ") + e.what());
  }
}

nlohmann::json TransitionModel::to_json() const {
  nlohmann::json j;
  j["states"] = nlohmann::json::array();
  for (const auto& s : states_) j["states"].push_back({{"name", s.label}, {"absorbing", s.absorbing}});
  j["transitions"] = nlohmann::json::array();
  for (const auto& t : specs_)
    j["transitions"].push_back({{"from", states_[t.from].label}, {"to", states_[t.to].label}});
  j["split"] = split_ids_;
  return j;
}

}  // namespace msrs
