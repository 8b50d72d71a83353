#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace retflow {

// Marginal statistics of an interaction log. Behavior columns are every
// header column other than user_id and item_id, kept in header order. A
// session is a maximal run of consecutive rows with the same user_id.
struct InteractionStats {
  std::size_t row_count = 0;        // well-formed data rows
  std::size_t malformed_count = 0;  // skipped rows (< 1% tolerated)
  std::size_t session_count = 0;
  std::vector<std::string> behaviors;
  std::vector<std::size_t> positives;  // per behavior
};

// One-pass CSV read: first line header (must include user_id, item_id and
// at least one behavior column), comma-separated, values 0/1 for behaviors.
// Malformed rows are skipped and counted; more than 1% of rows malformed
// aborts with an error.
InteractionStats load_interactions(const std::string& path);

// Parsed-from-text variant used by tests and by readers of in-memory logs.
InteractionStats load_interactions_text(const std::string& text,
                                        const std::string& origin);

struct CalibrationResult {
  std::vector<std::string> behaviors;
  std::vector<double> omega;  // inverse-rate weights, max-scaled to 1
  std::vector<double> c;      // logit of the empirical positive rate
  std::vector<double> rate;   // empirical p_b, kept for reporting
};

// p_b = positives / rows; c_b = ln(p_b / (1 - p_b)); omega_b = (1/p_b)
// rescaled so the largest weight is 1. Degenerate p_b in {0,1} is an error
// naming the behavior.
CalibrationResult fit_rates(const InteractionStats& stats);

// Config-syntax lines: calib.omega.<behavior> then calib.c.<behavior>.
std::string format_calibration(const CalibrationResult& fit);

}  // namespace retflow
