#include "tokensieve/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "tokensieve/error.hpp"

namespace tokensieve {
namespace {

void check_inputs(std::span<const double> scores, const LabelVector& labels) {
  if (scores.empty()) throw PreconditionError("evaluation needs at least one score");
  if (scores.size() != labels.size()) throw PreconditionError("score and label counts differ");
  for (double s : scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("score outside [0, 1]");
  }
}

std::vector<std::size_t> order_descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

double f1_from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  const std::uint64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(denom);
}

double auroc(std::span<const double> scores, const LabelVector& labels) {
  check_inputs(scores, labels);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        positive_rank_sum += mean_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) return 0.5;
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

EvalReport evaluate(std::span<const double> scores, const LabelVector& labels, double threshold) {
  check_inputs(scores, labels);
  EvalReport r;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++r.tp;
    else if (predicted) ++r.fp;
    else if (actual) ++r.fn;
    else ++r.tn;
  }
  r.precision = r.tp + r.fp == 0 ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp);
  r.recall = r.tp + r.fn == 0 ? 0.0 : static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn);
  r.f1 = f1_from_counts(r.tp, r.fp, r.fn);
  r.auroc = auroc(scores, labels);
  return r;
}

F1Calibration calibrate_f1(std::span<const double> scores, const LabelVector& labels) {
  check_inputs(scores, labels);
  const auto total_pos = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  if (total_pos == 0) throw PreconditionError("F1 calibration needs at least one positive label");
  const auto idx = order_descending(scores);
  F1Calibration best{std::nextafter(scores[idx.front()], 2.0), 0.0};
  std::uint64_t tp = 0, fp = 0;
  // Walking down the sorted scores, each distinct score is a cut point that
  // predicts everything at or above it. The lowest cut is the all-positive one.
  for (std::size_t i = 0; i < idx.size();) {
    const double cut = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == cut) {
      if (labels[idx[i]]) ++tp;
      else ++fp;
      ++i;
    }
    const double f1 = f1_from_counts(tp, fp, total_pos - tp);
    if (f1 > best.f1) best = {cut, f1};
  }
  return best;
}

std::size_t filter_quota(double p, std::size_t n) {
  const double x = p * static_cast<double>(n);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(x));
}

FractionCalibration calibrate_fraction(std::span<const double> scores, double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("filter fraction must lie strictly between 0 and 1");
  FractionCalibration out;
  out.quota = filter_quota(p, scores.size());
  if (scores.empty()) {
    out.threshold = 1.0;
    return out;
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  // Scan distinct values from the top; remember the last (smallest) one whose
  // at-or-above count stays within the quota.
  std::size_t i = 0;
  bool found = false;
  while (i < sorted.size()) {
    const double v = sorted[i];
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == v) ++j;
    if (j > out.quota) break;
    out.threshold = v;
    out.filtered = j;
    found = true;
    i = j;
  }
  if (!found) {
    out.threshold = std::nextafter(sorted.front(), std::numeric_limits<double>::infinity());
    out.filtered = 0;
  }
  out.tie_warning = out.filtered != out.quota;
  return out;
}

AggregateMethod parse_aggregate_method(const std::string& name) {
  if (name == "max") return AggregateMethod::kMax;
  if (name == "mean") return AggregateMethod::kMean;
  if (name == "fraction" || name == "fraction-above") return AggregateMethod::kFractionAbove;
  throw DomainError("unknown aggregation method '" + name + "'");
}

double aggregate_doc_score(std::span<const double> token_scores, AggregateMethod method, double threshold) {
  if (token_scores.empty()) throw PreconditionError("cannot aggregate an empty document");
  switch (method) {
    case AggregateMethod::kMax:
      return *std::max_element(token_scores.begin(), token_scores.end());
    case AggregateMethod::kMean: {
      double sum = 0.0;
      for (double s : token_scores) sum += s;
      return std::clamp(sum / static_cast<double>(token_scores.size()), 0.0, 1.0);
    }
    case AggregateMethod::kFractionAbove: {
      const auto above = std::count_if(token_scores.begin(), token_scores.end(), [&](double s) { return s >= threshold; });
      return static_cast<double>(above) / static_cast<double>(token_scores.size());
    }
  }
  return 0.0;
}

}  // namespace tokensieve
