#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace msrs {

// Days per year used for all age and date arithmetic against rate tables.
inline constexpr double kDaysPerYear = 365.241;

enum class Sex { male = 0, female = 1 };

Sex parse_sex(const std::string& s);
const char* to_string(Sex s);

// Calendar dates are days since 1970-01-01.
int parse_date(const std::string& iso);
std::string format_date(int day);
int year_of(int day);
int first_day_of_year(int year);

struct Demographics {
  double age_days = 0.0;  // age at the time origin
  Sex sex = Sex::male;
  int date = 0;  // calendar day of the time origin
};

class RateTableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Population mortality hazards per day, indexed by integer age in years,
// calendar year and sex. Lookups outside the axes are clamped to the
// nearest edge.
class RateTable {
 public:
  RateTable() = default;
  RateTable(int min_age, int max_age, int min_year, int max_year,
            std::vector<double> male, std::vector<double> female);

  static RateTable constant(double daily_hazard, int min_age = 0, int max_age = 110,
                            int min_year = 1950, int max_year = 2050);
  static RateTable zero() { return constant(0.0); }

  double rate(int age, int year, Sex sex) const;

  int min_age() const { return min_age_; }
  int max_age() const { return max_age_; }
  int min_year() const { return min_year_; }
  int max_year() const { return max_year_; }
  bool is_zero() const;

  RateTable scaled(double factor) const;

 private:
  std::size_t index(int age, int year) const;

  int min_age_ = 0, max_age_ = 0, min_year_ = 0, max_year_ = 0;
  std::vector<double> male_, female_;
};

// `#value: qx` tables are converted with -log(1 - qx) / 365.241.
RateTable parse_ratetable(std::istream& in, const std::string& source = "<stream>");
RateTable load_ratetable(const std::string& path);
void write_ratetable(std::ostream& out, const RateTable& table);

// Synthetic Gompertz-Makeham table (ages 0-100, years 1970-2030) shipped
// as data/demo_ratetable.csv.
RateTable demo_ratetable();

double qx_to_daily_hazard(double qx);

// Rate-table cell an individual occupies on follow-up day `day`.
struct Cell {
  int age;
  int year;
};
Cell cell_on_day(const Demographics& d, long day);
// First day after `day` on which the individual's cell can change.
long next_cell_change(const Demographics& d, long day);

double individual_hazard(const RateTable& table, const Demographics& d, double t_days);
// Integral of the individual hazard over (from_day, to_day].
double cumulative_pop_hazard(const RateTable& table, const Demographics& d, double from_day,
                             double to_day);

// Piecewise-constant daily hazard of one individual from the origin up to a
// horizon; the last segment extends past the horizon.
class PopHazardTrajectory {
 public:
  PopHazardTrajectory(const RateTable& table, const Demographics& d, double horizon_days);

  double hazard(double t) const;
  double cumulative(double t) const;
  double cumulative(double from, double to) const { return cumulative(to) - cumulative(from); }

  // Segment k covers [start(k), start(k+1)) with constant rate(k).
  std::size_t size() const { return start_.size(); }
  double start(std::size_t k) const { return start_[k]; }
  double rate(std::size_t k) const { return rate_[k]; }
  std::size_t segment(double t) const;

 private:
  std::vector<double> start_;
  std::vector<double> rate_;
  std::vector<double> cum_;  // cumulative hazard at start_[k]
};

}  // namespace msrs
