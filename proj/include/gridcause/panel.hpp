#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "gridcause/error.hpp"
#include "gridcause/io.hpp"

namespace gridcause {

inline constexpr double kDefaultIntervalSeconds = 60.0;

/// Aligned multivariate load series: one column per meter node, one row per
/// sampling step. Immutable after construction.
class TimeSeriesPanel {
 public:
  TimeSeriesPanel() = default;

  TimeSeriesPanel(std::vector<std::string> node_ids, Eigen::MatrixXd samples,
                  double interval_s = kDefaultIntervalSeconds)
      : node_ids_(std::move(node_ids)), samples_(std::move(samples)), interval_s_(interval_s) {
    if (static_cast<Eigen::Index>(node_ids_.size()) != samples_.cols())
      throw Error(ErrorKind::ShapeMismatch, "node id count does not match column count");
    std::unordered_set<std::string> seen;
    for (const auto& id : node_ids_) {
      if (id.empty()) throw Error(ErrorKind::InvalidArgument, "empty node id");
      if (!seen.insert(id).second) throw Error(ErrorKind::DuplicateNodeId, id);
    }
    for (Eigen::Index c = 0; c < samples_.cols(); ++c)
      for (Eigen::Index r = 0; r < samples_.rows(); ++r)
        if (!std::isfinite(samples_(r, c)))
          throw Error(ErrorKind::MissingValue, "row " + std::to_string(r) + ", column " +
                                                   node_ids_[static_cast<std::size_t>(c)]);
    if (!(interval_s_ > 0.0)) throw Error(ErrorKind::InvalidArgument, "interval must be positive");
  }

  const std::vector<std::string>& node_ids() const noexcept { return node_ids_; }
  const Eigen::MatrixXd& samples() const noexcept { return samples_; }
  double interval_s() const noexcept { return interval_s_; }
  std::size_t n_nodes() const noexcept { return node_ids_.size(); }
  std::size_t n_steps() const noexcept { return static_cast<std::size_t>(samples_.rows()); }

  std::size_t index_of(std::string_view id) const {
    auto it = std::find(node_ids_.begin(), node_ids_.end(), id);
    if (it == node_ids_.end()) throw Error(ErrorKind::UnknownNode, std::string(id));
    return static_cast<std::size_t>(it - node_ids_.begin());
  }

  auto column(std::size_t i) const { return samples_.col(static_cast<Eigen::Index>(i)); }

  /// Sub-panel with the given columns, in the given order.
  TimeSeriesPanel select(std::span<const std::size_t> columns) const {
    std::vector<std::string> ids;
    Eigen::MatrixXd sub(samples_.rows(), static_cast<Eigen::Index>(columns.size()));
    for (std::size_t k = 0; k < columns.size(); ++k) {
      if (columns[k] >= n_nodes()) throw Error(ErrorKind::UnknownNode, "column index out of range");
      ids.push_back(node_ids_[columns[k]]);
      sub.col(static_cast<Eigen::Index>(k)) = samples_.col(static_cast<Eigen::Index>(columns[k]));
    }
    return TimeSeriesPanel(std::move(ids), std::move(sub), interval_s_);
  }

  friend bool operator==(const TimeSeriesPanel& a, const TimeSeriesPanel& b) {
    return a.node_ids_ == b.node_ids_ && a.interval_s_ == b.interval_s_ &&
           a.samples_.rows() == b.samples_.rows() && a.samples_.cols() == b.samples_.cols() &&
           a.samples_ == b.samples_;
  }

 private:
  std::vector<std::string> node_ids_;
  Eigen::MatrixXd samples_;
  double interval_s_ = kDefaultIntervalSeconds;
};

namespace detail {

/// Parses `YYYY-MM-DD[T| ]HH:MM:SS[.fff][Z]` into seconds since the epoch.
inline std::optional<double> parse_iso8601(std::string_view text) {
  if (text.size() < 19) return std::nullopt;
  auto num = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (text[i] < '0' || text[i] > '9') return std::nullopt;
      v = v * 10 + (text[i] - '0');
    }
    return v;
  };
  if (text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':' || text[16] != ':')
    return std::nullopt;
  auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2),
       s = num(17, 2);
  if (!y || !mo || !d || !h || !mi || !s) return std::nullopt;
  using namespace std::chrono;
  year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)}, day{static_cast<unsigned>(*d)}};
  if (!ymd.ok() || *h > 23 || *mi > 59 || *s > 60) return std::nullopt;
  double seconds = static_cast<double>(sys_days{ymd}.time_since_epoch().count()) * 86400.0 +
                   *h * 3600.0 + *mi * 60.0 + *s;
  std::string_view rest = text.substr(19);
  if (!rest.empty() && rest.front() == '.') {
    std::size_t i = 1;
    double scale = 0.1;
    while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') {
      seconds += (rest[i] - '0') * scale;
      scale /= 10.0;
      ++i;
    }
    rest.remove_prefix(i);
  }
  if (rest == "Z" || rest.empty()) return seconds;
  return std::nullopt;
}

inline std::optional<long long> parse_step_index(std::string_view text) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return v;
}

inline std::string format_iso8601(double seconds_since_epoch) {
  using namespace std::chrono;
  auto whole = static_cast<long long>(std::floor(seconds_since_epoch));
  auto days = static_cast<long long>(std::floor(static_cast<double>(whole) / 86400.0));
  long long rem = whole - days * 86400;
  year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), rem / 3600,
                (rem / 60) % 60, rem % 60);
  return buf;
}

}  // namespace detail

/// Parses a panel from CSV text: header `timestamp,<node_id>,...`, first column
/// an ISO-8601 timestamp or an integer step index, remaining cells in kW.
/// Missing cells are rejected, never imputed.
inline TimeSeriesPanel parse_panel_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto pos = text.find('\n', start);
    std::string_view line = text.substr(start, pos == std::string_view::npos ? text.npos : pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorKind::TooShort, "empty CSV");
  if (lines.front().substr(0, 3) == "\xEF\xBB\xBF") lines.front().remove_prefix(3);

  auto header = io::split_csv_line(lines.front());
  if (header.size() < 2) throw Error(ErrorKind::InvalidArgument, "header needs a timestamp and at least one node column");
  std::vector<std::string> ids(header.begin() + 1, header.end());
  {
    std::unordered_set<std::string> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) throw Error(ErrorKind::DuplicateNodeId, id);
  }

  const std::size_t n_rows = lines.size() - 1;
  Eigen::MatrixXd samples(static_cast<Eigen::Index>(n_rows), static_cast<Eigen::Index>(ids.size()));
  std::vector<double> stamps;
  bool iso = false;
  for (std::size_t r = 0; r < n_rows; ++r) {
    auto fields = io::split_csv_line(lines[r + 1]);
    if (fields.size() != header.size())
      throw Error(ErrorKind::RaggedRows, "row " + std::to_string(r + 1) + " has " +
                                             std::to_string(fields.size()) + " fields, expected " +
                                             std::to_string(header.size()));
    if (auto step = detail::parse_step_index(fields[0]); step && (r == 0 || !iso)) {
      stamps.push_back(static_cast<double>(*step));
    } else if (auto t = detail::parse_iso8601(fields[0]); t && (r == 0 || iso)) {
      iso = true;
      stamps.push_back(*t);
    } else {
      throw Error(ErrorKind::UnparseableNumber, "row " + std::to_string(r + 1) + ", timestamp '" + fields[0] + "'");
    }
    for (std::size_t c = 0; c < ids.size(); ++c) {
      const auto& cell = fields[c + 1];
      if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan")
        throw Error(ErrorKind::MissingValue, "row " + std::to_string(r + 1) + ", column " + ids[c]);
      auto v = io::parse_double(cell);
      if (!v) throw Error(ErrorKind::UnparseableNumber, "row " + std::to_string(r + 1) + ", column " + ids[c] + ": '" + cell + "'");
      if (!std::isfinite(*v)) throw Error(ErrorKind::MissingValue, "row " + std::to_string(r + 1) + ", column " + ids[c]);
      samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
    }
  }

  double interval = kDefaultIntervalSeconds;
  if (iso && stamps.size() >= 2) {
    interval = stamps[1] - stamps[0];
    if (!(interval > 0.0)) throw Error(ErrorKind::InvalidArgument, "timestamps must increase");
    for (std::size_t i = 2; i < stamps.size(); ++i)
      if (std::abs((stamps[i] - stamps[i - 1]) - interval) > 1e-6)
        throw Error(ErrorKind::InvalidArgument, "irregular sampling at row " + std::to_string(i + 1));
  }
  return TimeSeriesPanel(std::move(ids), std::move(samples), interval);
}

inline TimeSeriesPanel load_panel(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::IoError, "no such file: " + path.string());
  return parse_panel_csv(io::read_file(path));
}

/// Integer step indices are written for the default 60 s interval, ISO-8601
/// timestamps from the epoch otherwise, so the interval survives a reload.
inline std::string format_panel_csv(const TimeSeriesPanel& panel) {
  std::string out = "timestamp";
  for (const auto& id : panel.node_ids()) out += "," + id;
  out += "\n";
  const bool use_index = panel.interval_s() == kDefaultIntervalSeconds;
  for (std::size_t t = 0; t < panel.n_steps(); ++t) {
    out += use_index ? std::to_string(t)
                     : detail::format_iso8601(static_cast<double>(t) * panel.interval_s());
    for (std::size_t c = 0; c < panel.n_nodes(); ++c) {
      out += ',';
      out += io::format_double(panel.samples()(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)));
    }
    out += '\n';
  }
  return out;
}

inline void save_panel(const TimeSeriesPanel& panel, const std::filesystem::path& path) {
  io::write_file_atomic(path, format_panel_csv(panel));
}

/// Split-half covariance-stationarity screen for one node.
struct StationarityReport {
  std::string node;
  bool stationary = true;
  double mean_first = 0.0;
  double mean_second = 0.0;
  double mean_diff_se = 0.0;   // standard error of the half-mean difference
  double variance_ratio = 1.0; // var(first half) / var(second half)
  double lag1_autocorr = 0.0;
  std::string detail;
};

inline constexpr std::size_t kMinStationaritySamples = 64;
inline constexpr double kMeanShiftSe = 3.0;
inline constexpr double kMaxVarianceRatio = 4.0;

/// Each series is split into equal halves. A node is flagged when the half
/// means differ by more than 3 standard errors or the half variances differ by
/// more than a factor of 4. The standard error uses an effective sample size
/// n·(1−r₁)/(1+r₁) from the lag-1 autocorrelation (clamped to [0, 0.95]), so
/// stable autocorrelated series are not flagged for ordinary persistence.
inline std::vector<StationarityReport> stationarity_check(const TimeSeriesPanel& panel) {
  if (panel.n_steps() < kMinStationaritySamples)
    throw Error(ErrorKind::TooShort, "stationarity check needs at least 64 samples per node");
  const Eigen::Index half = static_cast<Eigen::Index>(panel.n_steps() / 2);
  std::vector<StationarityReport> reports;
  for (std::size_t c = 0; c < panel.n_nodes(); ++c) {
    const auto col = panel.column(c);
    const Eigen::VectorXd first = col.head(half);
    const Eigen::VectorXd second = col.segment(half, half);
    StationarityReport rep;
    rep.node = panel.node_ids()[c];
    rep.mean_first = first.mean();
    rep.mean_second = second.mean();
    const double v1 = (first.array() - rep.mean_first).square().sum() / static_cast<double>(half - 1);
    const double v2 = (second.array() - rep.mean_second).square().sum() / static_cast<double>(half - 1);

    const double mean_all = col.mean();
    const Eigen::ArrayXd centered = col.array() - mean_all;
    const double denom = centered.square().sum();
    const Eigen::Index n = col.size();
    rep.lag1_autocorr = denom > 0.0 ? (centered.head(n - 1) * centered.tail(n - 1)).sum() / denom : 0.0;
    const double r1 = std::clamp(rep.lag1_autocorr, 0.0, 0.95);
    const double inflation = (1.0 + r1) / (1.0 - r1);
    rep.mean_diff_se = std::sqrt(inflation * (v1 + v2) / static_cast<double>(half));

    if (v1 == 0.0 && v2 == 0.0) {
      rep.variance_ratio = 1.0;
    } else if (v2 == 0.0) {
      rep.variance_ratio = std::numeric_limits<double>::infinity();
    } else {
      rep.variance_ratio = v1 / v2;
    }
    const double shift = std::abs(rep.mean_first - rep.mean_second);
    const bool mean_shift = shift > kMeanShiftSe * rep.mean_diff_se;
    const bool var_shift = rep.variance_ratio < 1.0 / kMaxVarianceRatio || rep.variance_ratio > kMaxVarianceRatio;
    rep.stationary = !mean_shift && !var_shift;
    if (mean_shift) rep.detail = "half-mean shift exceeds 3 SE";
    if (var_shift) rep.detail += std::string(rep.detail.empty() ? "" : "; ") + "half-variance ratio outside [1/4, 4]";
    if (rep.stationary) rep.detail = "ok";
    reports.push_back(std::move(rep));
  }
  return reports;
}

/// order-th forward difference; the panel loses `order` rows.
inline TimeSeriesPanel difference(const TimeSeriesPanel& panel, std::size_t order) {
  if (order < 1) throw Error(ErrorKind::InvalidArgument, "difference order must be >= 1");
  if (panel.n_steps() <= order) throw Error(ErrorKind::TooShort, "panel shorter than difference order");
  Eigen::MatrixXd x = panel.samples();
  for (std::size_t k = 0; k < order; ++k) {
    const Eigen::Index rows = x.rows() - 1;
    Eigen::MatrixXd d = x.bottomRows(rows) - x.topRows(rows);
    x = std::move(d);
  }
  return TimeSeriesPanel(panel.node_ids(), std::move(x), panel.interval_s());
}

}  // namespace gridcause
