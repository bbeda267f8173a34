#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace tokensieve {

struct ScalingPoint {
  double compute = 0.0;  // FLOPs
  double loss = 0.0;     // nats per token
};

// One training condition's (compute, loss) curve, compute strictly increasing.
struct ScalingSeries {
  std::string label;
  std::vector<ScalingPoint> points;

  void validate() const;
};

struct Interpolated {
  double value = 0.0;
  bool extrapolated = false;
};

// Piecewise-linear interpolant of log L against log C. Loss must fall
// strictly as compute grows; queries past either end continue the nearest
// segment and are flagged.
class LogLogInterpolant {
 public:
  explicit LogLogInterpolant(const ScalingSeries& series);

  Interpolated loss_at(double compute) const;
  // Inverse: compute at which the curve reaches `loss`.
  Interpolated compute_for(double loss) const;

  double min_loss() const { return points_.back().loss; }
  double max_loss() const { return points_.front().loss; }
  const std::vector<ScalingPoint>& knots() const { return points_; }
  // Slope of segment i in log-log space.
  double slope(std::size_t segment) const;

 private:
  std::vector<ScalingPoint> points_;
  std::vector<double> log_c_, log_l_;
};

LogLogInterpolant fit_loglog(const ScalingSeries& series);

// Baseline compute needed to reach `loss`.
Interpolated matched_compute(const LogLogInterpolant& baseline, double loss);

// Least-squares line through (log C, log L): L = A * C^(-alpha).
struct PowerLawFit {
  double scale = 0.0;           // A
  double exponent = 0.0;        // alpha
  double exponent_stderr = 0.0;
};

PowerLawFit fit_power_law(const ScalingSeries& series);

struct SlowdownRow {
  double compute = 0.0;          // filtered run's compute
  double loss = 0.0;             // filtered run's loss
  double matched_compute = 0.0;  // baseline compute reaching the same loss
  double ratio = 0.0;            // compute / matched_compute
  double inverse_ratio = 0.0;    // matched_compute / compute, exactly 1 / ratio
  bool extrapolated = false;
  double global_fit_matched_compute = 0.0;  // same, from the global power-law fit
};

struct SlowdownReport {
  std::string baseline;
  std::string filtered;
  std::vector<SlowdownRow> rows;

  std::string to_json() const;
  std::string to_csv() const;
};

// Per filtered point, compute over baseline-matched compute. Values above 1
// mean the filtered run needed more compute to reach the same loss.
SlowdownReport slowdown(const ScalingSeries& baseline, const ScalingSeries& filtered);

struct FrontierPoint {
  double retain_loss = 0.0;
  double forget_loss = 0.0;
};

struct FrontierSeries {
  std::string label;
  std::vector<FrontierPoint> points;
};

// Trapezoidal area under forget loss as a function of retain loss over the
// shared retain-loss range, divided by the baseline's area over that range.
double frontier_auc(const FrontierSeries& series, const FrontierSeries& baseline);

// CSV with header `series,compute_flops,loss`; series keep first-seen order.
std::vector<ScalingSeries> read_scaling_csv(const std::filesystem::path& path);
void write_scaling_csv(const std::vector<ScalingSeries>& series, const std::filesystem::path& path);

// CSV with header `series,retain_loss,forget_loss`.
std::vector<FrontierSeries> read_frontier_csv(const std::filesystem::path& path);

}  // namespace tokensieve
