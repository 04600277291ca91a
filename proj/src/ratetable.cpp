#include "msrs/ratetable.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <sstream>
#include <tuple>

#include "msrs/csv.hpp"

namespace msrs {

namespace {

constexpr double kAgeGuard = 1e-9;

int age_years(double age_days) {
  return static_cast<int>(std::floor(age_days / kDaysPerYear + kAgeGuard));
}

}  // namespace

Sex parse_sex(const std::string& s) {
  if (s == "M" || s == "m" || s == "1" || s == "male") return Sex::male;
  if (s == "F" || s == "f" || s == "2" || s == "female") return Sex::female;
  throw std::invalid_argument("unrecognized sex code '" + s + "'");
}

const char* to_string(Sex s) { return s == Sex::male ? "M" : "F"; }

int parse_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char dash1 = 0, dash2 = 0;
  std::istringstream in(iso);
  in >> y >> dash1 >> m >> dash2 >> d;
  if (!in || dash1 != '-' || dash2 != '-')
    throw std::invalid_argument("malformed ISO-8601 date '" + iso + "'");
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw std::invalid_argument("invalid calendar date '" + iso + "'");
  return static_cast<int>(std::chrono::sys_days{ymd}.time_since_epoch().count());
}

std::string format_date(int day) {
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  std::ostringstream out;
  out << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
      << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2) << static_cast<unsigned>(ymd.day());
  return out.str();
}

int year_of(int day) {
  return static_cast<int>(std::chrono::year_month_day{std::chrono::sys_days{std::chrono::days{day}}}.year());
}

int first_day_of_year(int year) {
  using namespace std::chrono;
  return static_cast<int>(sys_days{std::chrono::year{year} / January / 1}.time_since_epoch().count());
}

double qx_to_daily_hazard(double qx) { return -std::log1p(-qx) / kDaysPerYear; }

RateTable::RateTable(int min_age, int max_age, int min_year, int max_year, std::vector<double> male,
                     std::vector<double> female)
    : min_age_(min_age), max_age_(max_age), min_year_(min_year), max_year_(max_year),
      male_(std::move(male)), female_(std::move(female)) {
  if (max_age < min_age || max_year < min_year) throw RateTableError("empty rate table axes");
  const auto cells = static_cast<std::size_t>(max_age - min_age + 1) * (max_year - min_year + 1);
  if (male_.size() != cells || female_.size() != cells)
    throw RateTableError("rate table value count does not match its axes");
  for (double v : male_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw RateTableError("negative or non-finite hazard");
  for (double v : female_)
    if (!(v >= 0.0) || !std::isfinite(v)) throw RateTableError("negative or non-finite hazard");
}

RateTable RateTable::constant(double daily_hazard, int min_age, int max_age, int min_year,
                              int max_year) {
  const auto cells = static_cast<std::size_t>(max_age - min_age + 1) * (max_year - min_year + 1);
  return RateTable(min_age, max_age, min_year, max_year, std::vector<double>(cells, daily_hazard),
                   std::vector<double>(cells, daily_hazard));
}

std::size_t RateTable::index(int age, int year) const {
  age = std::clamp(age, min_age_, max_age_);
  year = std::clamp(year, min_year_, max_year_);
  return static_cast<std::size_t>(age - min_age_) * (max_year_ - min_year_ + 1) + (year - min_year_);
}

double RateTable::rate(int age, int year, Sex sex) const {
  const auto i = index(age, year);
  return sex == Sex::male ? male_[i] : female_[i];
}

bool RateTable::is_zero() const {
  return std::all_of(male_.begin(), male_.end(), [](double v) { return v == 0.0; }) &&
         std::all_of(female_.begin(), female_.end(), [](double v) { return v == 0.0; });
}

RateTable RateTable::scaled(double factor) const {
  auto m = male_, f = female_;
  for (auto& v : m) v *= factor;
  for (auto& v : f) v *= factor;
  return RateTable(min_age_, max_age_, min_year_, max_year_, std::move(m), std::move(f));
}

RateTable parse_ratetable(std::istream& in, const std::string& source) {
  enum class Unit { unset, qx, daily } unit = Unit::unset;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::map<std::tuple<int, int, int>, double> cells;
  auto fail = [&](const std::string& what) {
    throw RateTableError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = csv::trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto pos = line.find(':');
      if (pos == std::string::npos) continue;
      const auto key = csv::trim(line.substr(1, pos - 1));
      const auto val = csv::trim(line.substr(pos + 1));
      if (key != "value") continue;
      if (val == "qx")
        unit = Unit::qx;
      else if (val == "daily_hazard")
        unit = Unit::daily;
      else
        fail("unknown value directive '" + val + "'");
      continue;
    }
    auto fields = csv::split(line);
    if (!header_seen) {
      if (fields != std::vector<std::string>{"age", "year", "sex", "value"})
        fail("expected header 'age,year,sex,value'");
      header_seen = true;
      continue;
    }
    if (unit == Unit::unset) fail("missing '#value: qx' or '#value: daily_hazard' directive");
    if (fields.size() != 4) fail("expected 4 columns");
    int age = 0, year = 0;
    double value = 0;
    Sex sex{};
    try {
      age = std::stoi(fields[0]);
      year = std::stoi(fields[1]);
      sex = parse_sex(fields[2]);
      value = std::stod(fields[3]);
    } catch (const std::exception& e) {
      fail(std::string("unparsable row: ") + e.what());
    }
    if (value < 0.0 || !std::isfinite(value)) fail("negative or non-finite value");
    if (unit == Unit::qx) {
      if (value >= 1.0) fail("qx must be < 1");
      value = qx_to_daily_hazard(value);
    }
    if (!cells.emplace(std::tuple{age, year, static_cast<int>(sex)}, value).second)
      fail("duplicate cell");
  }
  if (!header_seen || cells.empty()) throw RateTableError(source + ": no rate-table rows");

  int min_age = std::get<0>(cells.begin()->first), max_age = min_age;
  int min_year = std::get<1>(cells.begin()->first), max_year = min_year;
  for (const auto& [key, v] : cells) {
    min_age = std::min(min_age, std::get<0>(key));
    max_age = std::max(max_age, std::get<0>(key));
    min_year = std::min(min_year, std::get<1>(key));
    max_year = std::max(max_year, std::get<1>(key));
  }
  const int n_year = max_year - min_year + 1;
  const auto n_cells = static_cast<std::size_t>(max_age - min_age + 1) * n_year;
  std::vector<double> male(n_cells), female(n_cells);
  for (int sex = 0; sex < 2; ++sex) {
    auto& dst = sex == 0 ? male : female;
    for (int a = min_age; a <= max_age; ++a) {
      for (int y = min_year; y <= max_year; ++y) {
        auto it = cells.find({a, y, sex});
        if (it == cells.end()) {
          throw RateTableError(source + ": gap in rate table at age " + std::to_string(a) + ", year " +
                               std::to_string(y) + ", sex " + to_string(static_cast<Sex>(sex)));
        }
        dst[static_cast<std::size_t>(a - min_age) * n_year + (y - min_year)] = it->second;
      }
    }
  }
  return RateTable(min_age, max_age, min_year, max_year, std::move(male), std::move(female));
}

RateTable load_ratetable(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RateTableError("cannot open rate table '" + path + "'");
  return parse_ratetable(in, path);
}

void write_ratetable(std::ostream& out, const RateTable& table) {
  out << "#value: daily_hazard\nage,year,sex,value\n" << std::setprecision(17);
  for (int a = table.min_age(); a <= table.max_age(); ++a)
    for (int y = table.min_year(); y <= table.max_year(); ++y)
      for (Sex s : {Sex::male, Sex::female})
        out << a << ',' << y << ',' << to_string(s) << ',' << table.rate(a, y, s) << '\n';
}

RateTable demo_ratetable() {
  const int min_age = 0, max_age = 100, min_year = 1970, max_year = 2030;
  const auto n = static_cast<std::size_t>(max_age - min_age + 1) * (max_year - min_year + 1);
  std::vector<double> male(n), female(n);
  std::size_t i = 0;
  for (int a = min_age; a <= max_age; ++a) {
    for (int y = min_year; y <= max_year; ++y, ++i) {
      const double annual = (5e-4 + 3e-5 * std::exp(0.095 * a)) * std::pow(0.985, y - 2000);
      male[i] = qx_to_daily_hazard(1.0 - std::exp(-1.25 * annual));
      female[i] = qx_to_daily_hazard(1.0 - std::exp(-0.8 * annual));
    }
  }
  return RateTable(min_age, max_age, min_year, max_year, std::move(male), std::move(female));
}

Cell cell_on_day(const Demographics& d, long day) {
  return {age_years(d.age_days + static_cast<double>(day)), year_of(d.date + static_cast<int>(day))};
}

long next_cell_change(const Demographics& d, long day) {
  const int age = age_years(d.age_days + static_cast<double>(day));
  auto next_age = static_cast<long>(std::ceil((age + 1) * kDaysPerYear - d.age_days));
  while (next_age - 1 > day && age_years(d.age_days + static_cast<double>(next_age - 1)) > age) --next_age;
  while (age_years(d.age_days + static_cast<double>(next_age)) <= age) ++next_age;
  next_age = std::max(next_age, day + 1);
  const int cal = d.date + static_cast<int>(day);
  const long next_year = first_day_of_year(year_of(cal) + 1) - d.date;
  return std::min(next_age, next_year);
}

double individual_hazard(const RateTable& table, const Demographics& d, double t_days) {
  const auto c = cell_on_day(d, static_cast<long>(std::floor(t_days)));
  return table.rate(c.age, c.year, d.sex);
}

double cumulative_pop_hazard(const RateTable& table, const Demographics& d, double from_day,
                             double to_day) {
  if (to_day < from_day) throw std::invalid_argument("cumulative_pop_hazard: from_day > to_day");
  double total = 0.0;
  auto day = static_cast<long>(std::floor(from_day));
  double t = from_day;
  while (t < to_day) {
    const long next = next_cell_change(d, day);
    const double end = std::min(static_cast<double>(next), to_day);
    const auto c = cell_on_day(d, day);
    total += table.rate(c.age, c.year, d.sex) * (end - t);
    t = end;
    day = next;
  }
  return total;
}

PopHazardTrajectory::PopHazardTrajectory(const RateTable& table, const Demographics& d,
                                         double horizon_days) {
  long day = 0;
  double cum = 0.0;
  while (true) {
    const auto c = cell_on_day(d, day);
    const double r = table.rate(c.age, c.year, d.sex);
    if (rate_.empty() || r != rate_.back()) {
      if (!start_.empty()) cum += rate_.back() * (static_cast<double>(day) - start_.back());
      start_.push_back(static_cast<double>(day));
      rate_.push_back(r);
      cum_.push_back(cum);
    }
    if (static_cast<double>(day) >= horizon_days) break;
    day = next_cell_change(d, day);
  }
}

std::size_t PopHazardTrajectory::segment(double t) const {
  auto it = std::upper_bound(start_.begin(), start_.end(), t);
  return it == start_.begin() ? 0 : static_cast<std::size_t>(it - start_.begin()) - 1;
}

double PopHazardTrajectory::hazard(double t) const { return rate_[segment(std::floor(t))]; }

double PopHazardTrajectory::cumulative(double t) const {
  if (t <= 0.0) return 0.0;
  const auto k = segment(t);
  return cum_[k] + rate_[k] * (t - start_[k]);
}

}  // namespace msrs
