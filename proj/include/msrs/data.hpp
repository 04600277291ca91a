#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "msrs/model.hpp"
#include "msrs/ratetable.hpp"

namespace msrs {

class DataError : public std::runtime_error {
 public:
  DataError(const std::string& what, long record = -1) : std::runtime_error(what), record_(record) {}
  long record() const { return record_; }

 private:
  long record_;
};

// One row of long-format data: subject i was at risk for observed
// transition `trans_id` on (t_start, t_stop], status 1 if it happened at
// t_stop.
struct TransRecord {
  int subject = 0;
  int trans_id = 0;
  double t_start = 0.0;
  double t_stop = 0.0;
  int status = 0;
};

// A subject's stay in one observed state, merged from the records of all
// transitions out of that state. `event` is the observed transition taken
// at t_stop, or 0 when the stay ended censored.
struct Visit {
  int subject = 0;
  int state = 0;
  double t_start = 0.0;
  double t_stop = 0.0;
  int event = 0;
};

class EventDataset {
 public:
  EventDataset(TransitionModel model, std::vector<std::string> subject_ids,
               std::vector<Demographics> demographics, std::vector<TransRecord> records);

  const TransitionModel& model() const { return model_; }
  int n_subjects() const { return static_cast<int>(ids_.size()); }
  const std::string& subject_id(int i) const { return ids_[i]; }
  const Demographics& demographics(int i) const { return demo_[i]; }
  const std::vector<Demographics>& demographics() const { return demo_; }
  const std::vector<TransRecord>& records() const { return records_; }
  const std::vector<Visit>& visits() const { return visits_; }
  double max_time() const { return max_time_; }

  // Y_h(t): subjects in state h just before t, i.e. with a stay (start, stop]
  // containing t.
  int risk_set_size(int state, double t) const;

  // Dataset made of the listed subjects (repeats allowed), renumbered.
  EventDataset resample(std::span<const int> subjects) const;
  EventDataset with_model(TransitionModel model) const;

 private:
  TransitionModel model_;
  std::vector<std::string> ids_;
  std::vector<Demographics> demo_;
  std::vector<TransRecord> records_;
  std::vector<Visit> visits_;
  double max_time_ = 0.0;
};

struct LoadOptions {
  double time_scale = 1.0;  // days per unit of Tstart/Tstop
  double age_scale = 1.0;   // days per unit of the age column
  // Sex codes; empty means accept M/F and 1/2.
  std::string male_code;
  std::string female_code;
};

// CSV with header id,trans,Tstart,Tstop,status,age,sex,date.
EventDataset parse_dataset(std::istream& in, const TransitionModel& model,
                           const LoadOptions& options = {}, const std::string& source = "<stream>");
EventDataset load_dataset(const std::string& path, const TransitionModel& model,
                          const LoadOptions& options = {});
void write_dataset(std::ostream& out, const EventDataset& data);

}  // namespace msrs
