#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>

namespace retflow {

struct EpisodeRecord {
  std::uint64_t episode = 0;
  std::size_t d = 1;         // return day
  double retention = 1.0;    // 1/d
  std::uint64_t clicks = 0;
  std::uint64_t long_views = 0;
  std::uint64_t likes = 0;
  std::size_t steps = 0;
  double mean_r = 0.0;
  std::uint64_t seed = 0;
  std::string policy_tag;
};

struct Metrics {
  double return_time = 0.0;
  double retention = 0.0;
  double click_rate = 0.0;
  double long_view_rate = 0.0;
  double like_rate = 0.0;
};

// Rolling last-W episode window; rates are normalized by impressions
// (steps * slate_size).
class MetricWindow {
 public:
  MetricWindow(std::size_t window, std::size_t slate_size);
  void add(const EpisodeRecord& r);  // rejects counts beyond steps * K
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t slate_size() const { return slate_size_; }
  const std::deque<EpisodeRecord>& records() const { return records_; }

 private:
  std::size_t window_;
  std::size_t slate_size_;
  std::deque<EpisodeRecord> records_;
};

// Empty window -> nullopt (caller defers).
std::optional<Metrics> compute_metrics(const MetricWindow& window);

// Shortest round-trip decimal form, identical across runs.
std::string fmt_double(double v);

// One JSON object, keys in fixed order:
// episode, d, R, clicks, long_views, likes, steps, mean_r, seed, policy_tag.
std::string format_run_record(const EpisodeRecord& r);

// Appends one line and flushes; throws with the path on I/O failure.
void append_run_log(const std::string& path, const EpisodeRecord& r);

std::string metrics_csv_header();
std::string format_metrics_row(std::uint64_t episode, const Metrics& m,
                               double db_loss);

}  // namespace retflow
