#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "tokensieve/corpus.hpp"

namespace tokensieve {

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auroc = 0.5;
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Predicts positive when score >= threshold. Precision and recall are 0
// when their denominators are; AUROC is 0.5 when only one class occurs.
EvalReport evaluate(std::span<const double> scores, const LabelVector& labels, double threshold);

// Mann-Whitney rank statistic with tied scores sharing their mean rank.
double auroc(std::span<const double> scores, const LabelVector& labels);

// 2TP / (2TP + FP + FN), or 0 when nothing is positive on either side.
double f1_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);

struct F1Calibration {
  double threshold = 0.0;
  double f1 = 0.0;
};

// Sweeps every distinct score as a cut point and keeps the highest F1;
// ties go to the larger threshold.
F1Calibration calibrate_f1(std::span<const double> scores, const LabelVector& labels);

struct FractionCalibration {
  double threshold = 0.0;
  std::size_t quota = 0;      // ceil(p * n)
  std::size_t filtered = 0;   // rows with score >= threshold
  bool tie_warning = false;   // ties prevented filtering exactly `quota` rows
};

// ceil(p * n), immune to p * n landing one ulp above an integer.
std::size_t filter_quota(double p, std::size_t n);

// Smallest threshold among the scores that filters at most ceil(p * n)
// rows. When even the top score is tied past the quota, the threshold sits
// just above it and nothing is filtered.
FractionCalibration calibrate_fraction(std::span<const double> scores, double p);

enum class AggregateMethod { kMax, kMean, kFractionAbove };

AggregateMethod parse_aggregate_method(const std::string& name);

double aggregate_doc_score(std::span<const double> token_scores, AggregateMethod method, double threshold = 0.5);

}  // namespace tokensieve
