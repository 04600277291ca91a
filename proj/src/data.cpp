#include "msrs/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "msrs/csv.hpp"

namespace msrs {

EventDataset::EventDataset(TransitionModel model, std::vector<std::string> subject_ids,
                           std::vector<Demographics> demographics, std::vector<TransRecord> records)
    : model_(std::move(model)), ids_(std::move(subject_ids)), demo_(std::move(demographics)),
      records_(std::move(records)) {
  const int n = static_cast<int>(ids_.size());
  if (static_cast<int>(demo_.size()) != n)
    throw DataError("one Demographics entry is required per subject");
  for (int i = 0; i < n; ++i)
    if (!(demo_[i].age_days >= 0.0)) throw DataError("negative age for subject '" + ids_[i] + "'");

  // Group records into stays: (subject, source state, t_start).
  std::vector<long> order(records_.size());
  std::iota(order.begin(), order.end(), 0L);
  for (long r = 0; r < static_cast<long>(records_.size()); ++r) {
    const auto& rec = records_[r];
    if (rec.subject < 0 || rec.subject >= n) throw DataError("record references unknown subject", r);
    if (rec.trans_id < 1 || rec.trans_id > model_.n_observed())
      throw DataError("unknown transition id " + std::to_string(rec.trans_id), r);
    if (!(rec.t_start >= 0.0)) throw DataError("negative entry time", r);
    if (!(rec.t_stop > rec.t_start))
      throw DataError("interval error: Tstop must exceed Tstart", r);
    if (rec.status != 0 && rec.status != 1) throw DataError("status must be 0 or 1", r);
  }
  auto from_state = [&](long r) { return model_.transition(records_[r].trans_id).from; };
  std::sort(order.begin(), order.end(), [&](long a, long b) {
    const auto& x = records_[a];
    const auto& y = records_[b];
    if (x.subject != y.subject) return x.subject < y.subject;
    if (x.t_start != y.t_start) return x.t_start < y.t_start;
    if (from_state(a) != from_state(b)) return from_state(a) < from_state(b);
    return a < b;
  });

  for (std::size_t k = 0; k < order.size();) {
    const long first = order[k];
    const auto& r0 = records_[first];
    Visit v{r0.subject, from_state(first), r0.t_start, r0.t_stop, 0};
    std::vector<int> seen;
    std::size_t m = k;
    for (; m < order.size(); ++m) {
      const long r = order[m];
      const auto& rec = records_[r];
      if (rec.subject != v.subject || rec.t_start != v.t_start || from_state(r) != v.state) break;
      if (rec.t_stop != v.t_stop)
        throw DataError("competing records from one state must share Tstop (shared censoring)", r);
      if (std::find(seen.begin(), seen.end(), rec.trans_id) != seen.end())
        throw DataError("duplicate record for transition " + std::to_string(rec.trans_id), r);
      seen.push_back(rec.trans_id);
      if (rec.status == 1) {
        if (v.event != 0)
          throw DataError("two events from the same state at the same time for subject '" +
                              ids_[v.subject] + "'",
                          r);
        v.event = rec.trans_id;
      }
    }
    visits_.push_back(v);
    max_time_ = std::max(max_time_, v.t_stop);
    k = m;
  }

  // Trajectory consistency per subject; visits are sorted by (subject, t_start).
  for (std::size_t k = 1; k < visits_.size(); ++k) {
    const auto& prev = visits_[k - 1];
    const auto& cur = visits_[k];
    if (prev.subject != cur.subject) continue;
    const auto who = "subject '" + ids_[cur.subject] + "'";
    if (prev.event == 0) throw DataError("inconsistent trajectory: " + who + " has records after censoring");
    const int target = model_.transition(prev.event).to;
    if (cur.state != target)
      throw DataError("inconsistent trajectory: " + who + " leaves state '" +
                      model_.states()[cur.state].label + "' without entering it");
    if (cur.t_start != prev.t_stop)
      throw DataError("inconsistent trajectory: " + who + " enters state '" +
                      model_.states()[cur.state].label + "' at a time other than the transition time");
  }
}

int EventDataset::risk_set_size(int state, double t) const {
  int count = 0;
  for (const auto& v : visits_)
    if (v.state == state && v.t_start < t && t <= v.t_stop) ++count;
  return count;
}

EventDataset EventDataset::resample(std::span<const int> subjects) const {
  std::vector<std::vector<const TransRecord*>> by_subject(ids_.size());
  for (const auto& r : records_) by_subject[r.subject].push_back(&r);
  std::vector<std::string> ids;
  std::vector<Demographics> demo;
  std::vector<TransRecord> recs;
  for (int s : subjects) {
    const int ni = static_cast<int>(ids.size());
    ids.push_back(ids_[s] + "#" + std::to_string(ni));
    demo.push_back(demo_[s]);
    for (const auto* r : by_subject[s]) {
      auto c = *r;
      c.subject = ni;
      recs.push_back(c);
    }
  }
  return EventDataset(model_, std::move(ids), std::move(demo), std::move(recs));
}

EventDataset EventDataset::with_model(TransitionModel model) const {
  if (model.n_observed() != model_.n_observed())
    throw DataError("replacement model has a different observed transition set");
  return EventDataset(std::move(model), ids_, demo_, records_);
}

EventDataset parse_dataset(std::istream& in, const TransitionModel& model, const LoadOptions& options,
                           const std::string& source) {
  std::string line;
  std::getline(in, line);
  const auto header = csv::split(line);
  const std::vector<std::string> required{"id", "trans", "Tstart", "Tstop", "status", "age", "sex", "date"};
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& name : required)
    if (!col.count(name)) throw DataError(source + ":1: missing column '" + name + "'");

  auto sex_of = [&](const std::string& code) {
    if (!options.male_code.empty() || !options.female_code.empty()) {
      if (code == options.male_code) return Sex::male;
      if (code == options.female_code) return Sex::female;
      throw std::invalid_argument("unrecognized sex code '" + code + "'");
    }
    return parse_sex(code);
  };

  std::vector<std::string> ids;
  std::vector<Demographics> demo;
  std::unordered_map<std::string, int> index;
  std::vector<TransRecord> records;
  std::vector<int> line_of;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    auto ctx = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    if (f.size() < header.size()) throw DataError(ctx() + "expected " + std::to_string(header.size()) + " columns");
    try {
      const auto& id = f[col["id"]];
      Demographics d;
      d.age_days = std::stod(f[col["age"]]) * options.age_scale;
      d.sex = sex_of(f[col["sex"]]);
      d.date = parse_date(f[col["date"]]);
      auto [it, inserted] = index.emplace(id, static_cast<int>(ids.size()));
      if (inserted) {
        ids.push_back(id);
        demo.push_back(d);
      } else {
        const auto& e = demo[it->second];
        if (e.age_days != d.age_days || e.sex != d.sex || e.date != d.date)
          throw DataError("demographics differ between rows of subject '" + id + "'");
      }
      TransRecord r;
      r.subject = it->second;
      r.trans_id = std::stoi(f[col["trans"]]);
      r.t_start = std::stod(f[col["Tstart"]]) * options.time_scale;
      r.t_stop = std::stod(f[col["Tstop"]]) * options.time_scale;
      r.status = std::stoi(f[col["status"]]);
      records.push_back(r);
      line_of.push_back(line_no);
    } catch (const DataError& e) {
      throw DataError(ctx() + e.what());
    } catch (const std::exception& e) {
      throw DataError(ctx() + "unparsable row (" + e.what() + ")");
    }
  }
  try {
    return EventDataset(model, std::move(ids), std::move(demo), std::move(records));
  } catch (const DataError& e) {
    if (e.record() >= 0)
      throw DataError(source + ":" + std::to_string(line_of[e.record()]) + ": " + e.what(), e.record());
    throw DataError(source + ": " + e.what());
  }
}

EventDataset load_dataset(const std::string& path, const TransitionModel& model, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  return parse_dataset(in, model, options, path);
}

void write_dataset(std::ostream& out, const EventDataset& data) {
  csv::write_row(out, "id", "trans", "Tstart", "Tstop", "status", "age", "sex", "date");
  for (const auto& r : data.records()) {
    const auto& d = data.demographics(r.subject);
    csv::write_row(out, data.subject_id(r.subject), r.trans_id, r.t_start, r.t_stop, r.status, d.age_days,
                   to_string(d.sex), format_date(d.date));
  }
}

}  // namespace msrs
