#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rstgam/errors.hpp"
#include "rstgam/mesh.hpp"

namespace rstgam {

/// Count panel: n locations observed at T ordered time points with p covariates.
struct PanelData {
  std::vector<std::string> loc_ids;
  std::vector<Point> locations;
  std::vector<int> times;                  // sorted ascending
  Eigen::MatrixXd counts;                  // n x T, nonnegative integers
  std::vector<Eigen::MatrixXd> covariates; // p matrices, each n x T

  int n() const { return static_cast<int>(locations.size()); }
  int num_times() const { return static_cast<int>(times.size()); }
  int p() const { return static_cast<int>(covariates.size()); }

  int time_index(int time) const {
    auto it = std::lower_bound(times.begin(), times.end(), time);
    if (it == times.end() || *it != time)
      throw DataError("time " + std::to_string(time) + " not present in panel");
    return static_cast<int>(it - times.begin());
  }
};

inline void validate_counts(const Eigen::MatrixXd& counts) {
  for (Eigen::Index k = 0; k < counts.size(); ++k) {
    const double y = counts.data()[k];
    if (!std::isfinite(y) || y < 0 || y != std::floor(y))
      throw DataError("counts must be nonnegative integers; found " + std::to_string(y));
  }
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& s, int line_no, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("panel CSV line " + std::to_string(line_no) + ": bad " + what + " `" + s + "`");
  }
}

}  // namespace detail

/// Reads `loc_id,x,y,time,count,cov1..covp`, one row per (location, time).
/// Every location must be observed exactly once at every time.
inline PanelData parse_panel_csv(std::istream& in) {
  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw DataError("panel CSV is empty");
  ++line_no;
  const auto header = detail::split_csv(line);
  if (header.size() < 5 || header[0] != "loc_id" || header[1] != "x" || header[2] != "y" ||
      header[3] != "time" || header[4] != "count") {
    throw DataError("panel CSV header must start with loc_id,x,y,time,count");
  }
  const std::size_t p = header.size() - 5;

  struct Row {
    std::string id;
    double x, y;
    int time;
    double count;
    std::vector<double> cov;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != header.size())
      throw DataError("panel CSV line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    Row r;
    r.id = f[0];
    r.x = detail::parse_double(f[1], line_no, "x");
    r.y = detail::parse_double(f[2], line_no, "y");
    const double tv = detail::parse_double(f[3], line_no, "time");
    if (tv != std::floor(tv)) throw DataError("panel CSV line " + std::to_string(line_no) + ": non-integer time");
    r.time = static_cast<int>(tv);
    r.count = detail::parse_double(f[4], line_no, "count");
    if (r.count < 0 || r.count != std::floor(r.count))
      throw DataError("panel CSV line " + std::to_string(line_no) + ": count must be a nonnegative integer");
    for (std::size_t k = 0; k < p; ++k) {
      r.cov.push_back(detail::parse_double(f[5 + k], line_no, "covariate"));
      if (!std::isfinite(r.cov.back()))
        throw DataError("panel CSV line " + std::to_string(line_no) + ": missing covariate");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("panel CSV has no data rows");

  PanelData panel;
  std::map<std::string, int> loc_index;
  for (const Row& r : rows) {
    auto [it, inserted] = loc_index.try_emplace(r.id, panel.n());
    if (inserted) {
      panel.loc_ids.push_back(r.id);
      panel.locations.emplace_back(r.x, r.y);
    } else if (panel.locations[it->second] != Point(r.x, r.y)) {
      throw DataError("location " + r.id + " has inconsistent coordinates");
    }
    panel.times.push_back(r.time);
  }
  std::sort(panel.times.begin(), panel.times.end());
  panel.times.erase(std::unique(panel.times.begin(), panel.times.end()), panel.times.end());

  const int n = panel.n();
  const int nt = panel.num_times();
  if (rows.size() != static_cast<std::size_t>(n) * nt)
    throw DataError("panel is not rectangular: " + std::to_string(rows.size()) + " rows for " +
                    std::to_string(n) + " locations x " + std::to_string(nt) + " times");
  panel.counts = Eigen::MatrixXd::Constant(n, nt, -1.0);
  panel.covariates.assign(p, Eigen::MatrixXd::Zero(n, nt));
  for (const Row& r : rows) {
    const int i = loc_index[r.id];
    const int t = panel.time_index(r.time);
    if (panel.counts(i, t) >= 0)
      throw DataError("duplicate row for location " + r.id + " at time " + std::to_string(r.time));
    panel.counts(i, t) = r.count;
    for (std::size_t k = 0; k < p; ++k) panel.covariates[k](i, t) = r.cov[k];
  }
  return panel;
}

inline PanelData load_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file " + path);
  return parse_panel_csv(in);
}

inline void write_panel_csv(std::ostream& out, const PanelData& panel) {
  out << "loc_id,x,y,time,count";
  for (int k = 0; k < panel.p(); ++k) out << ",cov" << (k + 1);
  out << '\n';
  out.precision(17);
  for (int i = 0; i < panel.n(); ++i) {
    for (int t = 0; t < panel.num_times(); ++t) {
      out << panel.loc_ids[i] << ',' << panel.locations[i].x() << ',' << panel.locations[i].y()
          << ',' << panel.times[t] << ',' << static_cast<long long>(panel.counts(i, t));
      for (int k = 0; k < panel.p(); ++k) out << ',' << panel.covariates[k](i, t);
      out << '\n';
    }
  }
}

}  // namespace rstgam
