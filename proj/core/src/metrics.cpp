#include "retflow/metrics.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace retflow {

MetricWindow::MetricWindow(std::size_t window, std::size_t slate_size)
    : window_(window), slate_size_(slate_size) {
  if (window == 0) throw std::invalid_argument("metric window must be > 0");
  if (slate_size == 0) throw std::invalid_argument("slate size must be > 0");
}

void MetricWindow::add(const EpisodeRecord& r) {
  const std::uint64_t impressions =
      static_cast<std::uint64_t>(r.steps) * slate_size_;
  if (r.clicks > impressions || r.long_views > impressions ||
      r.likes > impressions) {
    throw std::invalid_argument("behavior count exceeds impressions");
  }
  if (r.d == 0) throw std::invalid_argument("return day must be >= 1");
  records_.push_back(r);
  while (records_.size() > window_) records_.pop_front();
}

std::optional<Metrics> compute_metrics(const MetricWindow& window) {
  if (window.empty()) return std::nullopt;
  double sum_d = 0.0;
  double sum_ret = 0.0;
  double clicks = 0.0, long_views = 0.0, likes = 0.0;
  double impressions = 0.0;
  for (const EpisodeRecord& r : window.records()) {
    sum_d += static_cast<double>(r.d);
    sum_ret += r.retention;
    clicks += static_cast<double>(r.clicks);
    long_views += static_cast<double>(r.long_views);
    likes += static_cast<double>(r.likes);
    impressions += static_cast<double>(r.steps) *
                   static_cast<double>(window.slate_size());
  }
  const double n = static_cast<double>(window.size());
  Metrics m;
  m.return_time = sum_d / n;
  m.retention = sum_ret / n;
  if (impressions > 0.0) {
    m.click_rate = clicks / impressions;
    m.long_view_rate = long_views / impressions;
    m.like_rate = likes / impressions;
  }
  return m;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{}) throw std::runtime_error("to_chars failed");
  return std::string(buf, res.ptr);
}

namespace {

void append_json_string(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
}

}  // namespace

std::string format_run_record(const EpisodeRecord& r) {
  std::string out = "{\"episode\":";
  out += std::to_string(r.episode);
  out += ",\"d\":";
  out += std::to_string(r.d);
  out += ",\"R\":";
  out += fmt_double(r.retention);
  out += ",\"clicks\":";
  out += std::to_string(r.clicks);
  out += ",\"long_views\":";
  out += std::to_string(r.long_views);
  out += ",\"likes\":";
  out += std::to_string(r.likes);
  out += ",\"steps\":";
  out += std::to_string(r.steps);
  out += ",\"mean_r\":";
  out += fmt_double(r.mean_r);
  out += ",\"seed\":";
  out += std::to_string(r.seed);
  out += ",\"policy_tag\":";
  append_json_string(out, r.policy_tag);
  out += '}';
  return out;
}

void append_run_log(const std::string& path, const EpisodeRecord& r) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot open run log: " + path);
  f << format_run_record(r) << '\n';
  f.flush();
  if (!f) throw std::runtime_error("write failed on run log: " + path);
}

std::string metrics_csv_header() {
  return "episode,return_time,retention,click_rate,long_view_rate,like_rate,"
         "db_loss";
}

std::string format_metrics_row(std::uint64_t episode, const Metrics& m,
                               double db_loss) {
  std::string out = std::to_string(episode);
  out += ',';
  out += fmt_double(m.return_time);
  out += ',';
  out += fmt_double(m.retention);
  out += ',';
  out += fmt_double(m.click_rate);
  out += ',';
  out += fmt_double(m.long_view_rate);
  out += ',';
  out += fmt_double(m.like_rate);
  out += ',';
  out += fmt_double(db_loss);
  return out;
}

}  // namespace retflow
