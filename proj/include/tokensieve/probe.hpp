#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tokensieve/corpus.hpp"
#include "tokensieve/features.hpp"
#include "tokensieve/metrics.hpp"

namespace tokensieve {

struct Calibration {
  std::string mode = "none";  // "none" | "f1max" | "fraction"
  std::optional<double> p;    // fraction mode only
  std::string set;            // identifier of the calibration data
};

// Linear decision rule over frozen feature vectors.
struct Probe {
  std::vector<double> weights;
  double bias = 0.0;
  double lambda = 1e-4;
  double threshold = 0.5;
  Calibration calibration;
  bool degenerate = false;  // trained on a single class; predicts a constant

  std::size_t dim() const { return weights.size(); }

  std::string to_json() const;
  static Probe from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Probe load(const std::filesystem::path& path);
};

struct TrainOptions {
  double lambda = 1e-4;
  double gradient_tolerance = 1e-6;  // max-norm
  std::size_t max_iterations = 1000;
  std::size_t history = 10;
};

struct TrainResult {
  Probe probe;
  std::size_t iterations = 0;
  double gradient_max_norm = 0.0;
  bool converged = false;
};

// Mean logistic loss plus (lambda / 2) * |w|^2 over (w, b); the bias is not
// regularised. Exposed so callers can inspect the optimum.
class LogisticObjective {
 public:
  LogisticObjective(const FeatureMatrix& features, const LabelVector& labels, double lambda);

  std::size_t parameter_count() const { return dim_ + 1; }
  // Value and gradient at theta = (w_1..w_d, b).
  double evaluate(std::span<const double> theta, std::span<double> gradient) const;
  double value(std::span<const double> theta) const;

 private:
  const FeatureMatrix& features_;
  const LabelVector& labels_;
  double lambda_;
  std::size_t dim_;
};

// Minimises the logistic objective with L-BFGS from a zero start.
TrainResult train_probe(const FeatureMatrix& features, const LabelVector& labels, const TrainOptions& options = {});

// sigmoid(w . x + b), kept strictly inside (0, 1).
std::vector<double> score(const Probe& probe, const FeatureMatrix& features);
double score_row(const Probe& probe, std::span<const float> row);

struct WeakToStrongInputs {
  FeatureMatrix weak_train;       // weak feature space, ground-truth labelled
  LabelVector weak_train_labels;
  FeatureMatrix weak_relabel;     // same rows in both spaces, no labels used
  FeatureMatrix strong_relabel;
  FeatureMatrix weak_eval;        // held-out rows in both spaces
  FeatureMatrix strong_eval;
  LabelVector eval_labels;
  TrainOptions options;
};

struct WeakToStrongResult {
  Probe weak;
  Probe strong;
  EvalReport weak_report;
  EvalReport strong_report;
  std::size_t pseudo_positive = 0;
};

// Weak probe on ground truth, pseudo-labels on the relabel rows at the weak
// probe's F1-max threshold, strong probe on those pseudo-labels, and both
// probes scored on the evaluation rows.
WeakToStrongResult weak_to_strong(const WeakToStrongInputs& in);

}  // namespace tokensieve
