#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace safeadapt {

/// Round-trip decimal form (17 significant digits); identical inputs always give identical text.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace safeadapt
