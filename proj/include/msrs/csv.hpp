#pragma once

#include <ostream>
#include <type_traits>
#include <string>
#include <vector>

// Minimal CSV helpers: unquoted comma-separated fields, which is all the
// data, rate-table and report formats use.
namespace msrs::csv {

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& line, char sep = ',');

// Shortest round-trip representation; "NA" for NaN, "Inf"/"-Inf".
std::string fmt(double v);

template <typename... Fields>
void write_row(std::ostream& out, const Fields&... fields) {
  bool first = true;
  auto one = [&](const auto& f) {
    if (!first) out << ',';
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(f)>>)
      out << fmt(f);
    else
      out << f;
  };
  (one(fields), ...);
  out << '\n';
}

}  // namespace msrs::csv
