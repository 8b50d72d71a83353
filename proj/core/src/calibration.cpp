#include "retflow/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "retflow/metrics.hpp"

namespace retflow {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) {
    --e;
  }
  return s.substr(b, e - b);
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

}  // namespace

InteractionStats load_interactions_text(const std::string& text,
                                        const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("interaction log is empty: " + origin);
  }
  std::vector<std::string> header = split_csv(line);
  for (std::string& h : header) h = trim(h);

  std::size_t user_col = header.size();
  std::size_t item_col = header.size();
  InteractionStats stats;
  std::vector<std::size_t> behavior_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "user_id") {
      user_col = i;
    } else if (header[i] == "item_id") {
      item_col = i;
    } else if (!header[i].empty()) {
      behavior_cols.push_back(i);
      stats.behaviors.push_back(header[i]);
    }
  }
  if (user_col == header.size() || item_col == header.size()) {
    throw std::runtime_error(
        "interaction log header must name user_id and item_id: " + origin);
  }
  if (behavior_cols.empty()) {
    throw std::runtime_error(
        "interaction log header has no behavior columns: " + origin);
  }
  stats.positives.assign(stats.behaviors.size(), 0);

  std::uint64_t prev_user = 0;
  bool have_prev = false;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const std::vector<std::string> fields = split_csv(trimmed);
    bool ok = fields.size() == header.size();
    std::uint64_t user = 0, item = 0;
    if (ok) ok = parse_u64(trim(fields[user_col]), user);
    if (ok) ok = parse_u64(trim(fields[item_col]), item);
    std::vector<int> vals(behavior_cols.size(), 0);
    if (ok) {
      for (std::size_t j = 0; j < behavior_cols.size(); ++j) {
        const std::string v = trim(fields[behavior_cols[j]]);
        if (v == "0") {
          vals[j] = 0;
        } else if (v == "1") {
          vals[j] = 1;
        } else {
          ok = false;
          break;
        }
      }
    }
    if (!ok) {
      ++stats.malformed_count;
      continue;
    }
    ++stats.row_count;
    for (std::size_t j = 0; j < behavior_cols.size(); ++j) {
      stats.positives[j] += static_cast<std::size_t>(vals[j]);
    }
    if (!have_prev || user != prev_user) ++stats.session_count;
    prev_user = user;
    have_prev = true;
  }

  const std::size_t total = stats.row_count + stats.malformed_count;
  if (total > 0 && stats.malformed_count * 100 > total) {
    throw std::runtime_error("more than 1% malformed rows (" +
                             std::to_string(stats.malformed_count) + " of " +
                             std::to_string(total) + ") in " + origin);
  }
  return stats;
}

InteractionStats load_interactions(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open interaction log: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return load_interactions_text(buf.str(), path);
}

CalibrationResult fit_rates(const InteractionStats& stats) {
  if (stats.row_count == 0) {
    throw std::invalid_argument("cannot fit rates on an empty log");
  }
  CalibrationResult fit;
  fit.behaviors = stats.behaviors;
  const double n = static_cast<double>(stats.row_count);
  for (std::size_t j = 0; j < stats.behaviors.size(); ++j) {
    if (stats.positives[j] == 0 || stats.positives[j] == stats.row_count) {
      throw std::invalid_argument("degenerate positive rate for behavior " +
                                  stats.behaviors[j]);
    }
    const double p = static_cast<double>(stats.positives[j]) / n;
    fit.rate.push_back(p);
    fit.c.push_back(std::log(p / (1.0 - p)));
    fit.omega.push_back(1.0 / p);
  }
  const double max_omega = *std::max_element(fit.omega.begin(),
                                             fit.omega.end());
  for (double& w : fit.omega) w /= max_omega;
  return fit;
}

std::string format_calibration(const CalibrationResult& fit) {
  std::string out;
  for (std::size_t j = 0; j < fit.behaviors.size(); ++j) {
    out += "calib.omega." + fit.behaviors[j] + " = " +
           fmt_double(fit.omega[j]) + "\n";
  }
  for (std::size_t j = 0; j < fit.behaviors.size(); ++j) {
    out += "calib.c." + fit.behaviors[j] + " = " + fmt_double(fit.c[j]) +
           "\n";
  }
  return out;
}

}  // namespace retflow
