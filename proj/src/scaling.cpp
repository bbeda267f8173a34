#include "tokensieve/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tokensieve/error.hpp"

namespace tokensieve {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::logic_error&) {
    throw FormatError(where + ": '" + s + "' is not a number");
  }
  if (used != s.size()) throw FormatError(where + ": '" + s + "' is not a number");
  return v;
}

template <typename Row>
std::vector<std::pair<std::string, std::vector<Row>>> read_grouped_csv(const std::filesystem::path& path,
                                                                       const std::string& header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open series file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw FormatError(path.string() + ": expected header '" + header + "'");
  std::vector<std::pair<std::string, std::vector<Row>>> groups;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 3) throw FormatError(where + ": expected 3 columns");
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == cells[0]; });
    if (it == groups.end()) {
      groups.emplace_back(cells[0], std::vector<Row>{});
      it = std::prev(groups.end());
    }
    it->second.push_back(Row{parse_double(cells[1], where), parse_double(cells[2], where)});
  }
  return groups;
}

std::string num(double v) {
  return fmt::format("{:.17g}", v);
}

}  // namespace

void ScalingSeries::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.compute > 0.0) || !std::isfinite(p.compute)) {
      throw DomainError("series '" + label + "': compute at point " + std::to_string(i) + " is not positive");
    }
    if (!(p.loss > 0.0) || !std::isfinite(p.loss)) {
      throw DomainError("series '" + label + "': loss at point " + std::to_string(i) + " is not positive");
    }
    if (i > 0 && !(p.compute > points[i - 1].compute)) {
      throw DomainError("series '" + label + "': compute not strictly increasing at point " + std::to_string(i));
    }
  }
}

LogLogInterpolant::LogLogInterpolant(const ScalingSeries& series) : points_(series.points) {
  series.validate();
  if (points_.size() < 2) throw PreconditionError("series '" + series.label + "' needs at least two points");
  std::string offending;
  for (std::size_t i = 1; i < points_.size(); ++i) {
    if (!(points_[i].loss < points_[i - 1].loss)) offending += (offending.empty() ? "" : ",") + std::to_string(i);
  }
  if (!offending.empty()) {
    throw DomainError("series '" + series.label + "': loss does not decrease at points " + offending);
  }
  for (const auto& p : points_) {
    log_c_.push_back(std::log(p.compute));
    log_l_.push_back(std::log(p.loss));
  }
}

double LogLogInterpolant::slope(std::size_t segment) const {
  if (segment + 1 >= points_.size()) throw PreconditionError("segment " + std::to_string(segment) + " out of range");
  return (log_l_[segment + 1] - log_l_[segment]) / (log_c_[segment + 1] - log_c_[segment]);
}

Interpolated LogLogInterpolant::loss_at(double compute) const {
  if (!(compute > 0.0)) throw DomainError("compute must be positive");
  const double x = std::log(compute);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (compute == points_[i].compute) return {points_[i].loss, false};
  }
  std::size_t seg = 0;
  bool extrapolated = false;
  if (compute < points_.front().compute) {
    extrapolated = true;
  } else if (compute > points_.back().compute) {
    seg = points_.size() - 2;
    extrapolated = true;
  } else {
    seg = static_cast<std::size_t>(
              std::upper_bound(points_.begin(), points_.end(), compute,
                               [](double c, const ScalingPoint& p) { return c < p.compute; }) -
              points_.begin()) - 1;
    seg = std::min(seg, points_.size() - 2);
  }
  return {std::exp(log_l_[seg] + slope(seg) * (x - log_c_[seg])), extrapolated};
}

Interpolated LogLogInterpolant::compute_for(double loss) const {
  if (!(loss > 0.0) || !std::isfinite(loss)) throw DomainError("target loss must be positive");
  for (const auto& p : points_) {
    if (loss == p.loss) return {p.compute, false};
  }
  const double y = std::log(loss);
  std::size_t seg = 0;
  bool extrapolated = false;
  if (loss > points_.front().loss) {
    extrapolated = true;
  } else if (loss < points_.back().loss) {
    seg = points_.size() - 2;
    extrapolated = true;
  } else {
    while (seg + 2 < points_.size() && loss < points_[seg + 1].loss) ++seg;
  }
  const double s = slope(seg);
  if (s == 0.0) throw DomainError("zero-slope segment cannot be inverted");
  return {std::exp(log_c_[seg] + (y - log_l_[seg]) / s), extrapolated};
}

LogLogInterpolant fit_loglog(const ScalingSeries& series) {
  return LogLogInterpolant(series);
}

Interpolated matched_compute(const LogLogInterpolant& baseline, double loss) {
  return baseline.compute_for(loss);
}

PowerLawFit fit_power_law(const ScalingSeries& series) {
  series.validate();
  const std::size_t n = series.points.size();
  if (n < 2) throw PreconditionError("power-law fit needs at least two points");
  double mx = 0.0, my = 0.0;
  for (const auto& p : series.points) {
    mx += std::log(p.compute);
    my += std::log(p.loss);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : series.points) {
    const double dx = std::log(p.compute) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(p.loss) - my);
  }
  const double b = sxy / sxx;
  const double a = my - b * mx;
  PowerLawFit fit;
  fit.scale = std::exp(a);
  fit.exponent = -b;
  if (n > 2) {
    double sse = 0.0;
    for (const auto& p : series.points) {
      const double r = std::log(p.loss) - (a + b * std::log(p.compute));
      sse += r * r;
    }
    fit.exponent_stderr = std::sqrt(sse / static_cast<double>(n - 2) / sxx);
  }
  return fit;
}

SlowdownReport slowdown(const ScalingSeries& baseline, const ScalingSeries& filtered) {
  const LogLogInterpolant base(baseline);
  filtered.validate();
  const PowerLawFit global = fit_power_law(baseline);
  SlowdownReport report;
  report.baseline = baseline.label;
  report.filtered = filtered.label;
  for (const auto& p : filtered.points) {
    const auto matched = matched_compute(base, p.loss);
    SlowdownRow row;
    row.compute = p.compute;
    row.loss = p.loss;
    row.matched_compute = matched.value;
    row.ratio = p.compute / matched.value;
    row.inverse_ratio = 1.0 / row.ratio;
    row.extrapolated = matched.extrapolated;
    row.global_fit_matched_compute = std::pow(p.loss / global.scale, -1.0 / global.exponent);
    report.rows.push_back(row);
  }
  return report;
}

std::string SlowdownReport::to_json() const {
  nlohmann::ordered_json j;
  j["baseline"] = baseline;
  j["filtered"] = filtered;
  j["ratio_convention"] =
      "ratio = C_f / C_b (filtered compute over loss-matched baseline compute; > 1 means filtering slowed "
      "learning); inverse_ratio = C_b / C_f";
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json row;
    row["compute_flops"] = r.compute;
    row["loss"] = r.loss;
    row["matched_baseline_compute"] = r.matched_compute;
    row["ratio"] = r.ratio;
    row["inverse_ratio"] = r.inverse_ratio;
    row["extrapolated"] = r.extrapolated;
    row["global_fit_matched_compute"] = r.global_fit_matched_compute;
    j["rows"].push_back(row);
  }
  return j.dump(1);
}

std::string SlowdownReport::to_csv() const {
  std::string out =
      "baseline,filtered,compute_flops,loss,matched_baseline_compute,ratio,inverse_ratio,extrapolated,"
      "global_fit_matched_compute\n";
  for (const auto& r : rows) {
    out += baseline + "," + filtered + "," + num(r.compute) + "," + num(r.loss) + "," + num(r.matched_compute) + "," +
           num(r.ratio) + "," + num(r.inverse_ratio) + "," + (r.extrapolated ? "1" : "0") + "," +
           num(r.global_fit_matched_compute) + "\n";
  }
  return out;
}

namespace {

std::vector<FrontierPoint> sorted_frontier(const FrontierSeries& s) {
  if (s.points.size() < 2) throw PreconditionError("frontier '" + s.label + "' needs at least two points");
  auto pts = s.points;
  for (const auto& p : pts) {
    if (!(p.retain_loss > 0.0) || !(p.forget_loss > 0.0)) {
      throw DomainError("frontier '" + s.label + "' has a non-positive loss");
    }
  }
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.retain_loss < b.retain_loss; });
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].retain_loss == pts[i - 1].retain_loss) {
      throw DomainError("frontier '" + s.label + "' repeats a retain loss");
    }
  }
  return pts;
}

double interpolate(const std::vector<FrontierPoint>& pts, double x) {
  auto it = std::lower_bound(pts.begin(), pts.end(), x, [](const auto& p, double v) { return p.retain_loss < v; });
  if (it == pts.begin()) return it->forget_loss;
  if (it == pts.end()) return pts.back().forget_loss;
  if (it->retain_loss == x) return it->forget_loss;
  const auto& b = *it;
  const auto& a = *std::prev(it);
  const double t = (x - a.retain_loss) / (b.retain_loss - a.retain_loss);
  return a.forget_loss + t * (b.forget_loss - a.forget_loss);
}

// Exact trapezoid integral of the piecewise-linear curve over [lo, hi].
double area(const std::vector<FrontierPoint>& pts, double lo, double hi) {
  std::vector<double> xs{lo, hi};
  for (const auto& p : pts) {
    if (p.retain_loss > lo && p.retain_loss < hi) xs.push_back(p.retain_loss);
  }
  std::sort(xs.begin(), xs.end());
  double total = 0.0;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    total += 0.5 * (interpolate(pts, xs[i - 1]) + interpolate(pts, xs[i])) * (xs[i] - xs[i - 1]);
  }
  return total;
}

}  // namespace

double frontier_auc(const FrontierSeries& series, const FrontierSeries& baseline) {
  const auto s = sorted_frontier(series);
  const auto b = sorted_frontier(baseline);
  const double lo = std::max(s.front().retain_loss, b.front().retain_loss);
  const double hi = std::min(s.back().retain_loss, b.back().retain_loss);
  if (!(hi > lo)) {
    throw PreconditionError("frontiers '" + series.label + "' and '" + baseline.label + "' share no retain-loss range");
  }
  // The union of both knot sets keeps the ratio exact when the curves coincide.
  const double base_area = area(b, lo, hi);
  return area(s, lo, hi) / base_area;
}

std::vector<ScalingSeries> read_scaling_csv(const std::filesystem::path& path) {
  struct Row {
    double a, b;
  };
  std::vector<ScalingSeries> out;
  for (auto& [label, rows] : read_grouped_csv<Row>(path, "series,compute_flops,loss")) {
    ScalingSeries s{label, {}};
    for (const auto& r : rows) s.points.push_back({r.a, r.b});
    std::stable_sort(s.points.begin(), s.points.end(),
                     [](const auto& x, const auto& y) { return x.compute < y.compute; });
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

void write_scaling_csv(const std::vector<ScalingSeries>& series, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write series file: " + path.string());
  out << "series,compute_flops,loss\n";
  for (const auto& s : series) {
    for (const auto& p : s.points) out << s.label << ',' << num(p.compute) << ',' << num(p.loss) << '\n';
  }
}

std::vector<FrontierSeries> read_frontier_csv(const std::filesystem::path& path) {
  struct Row {
    double a, b;
  };
  std::vector<FrontierSeries> out;
  for (auto& [label, rows] : read_grouped_csv<Row>(path, "series,retain_loss,forget_loss")) {
    FrontierSeries s{label, {}};
    for (const auto& r : rows) s.points.push_back({r.a, r.b});
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace tokensieve
