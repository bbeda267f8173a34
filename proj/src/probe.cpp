#include "tokensieve/probe.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tokensieve/error.hpp"

namespace tokensieve {
namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

void check_finite(const FeatureMatrix& f) {
  for (float v : f.values()) {
    if (!std::isfinite(v)) throw DomainError("feature matrix holds a non-finite value");
  }
}

}  // namespace

LogisticObjective::LogisticObjective(const FeatureMatrix& features, const LabelVector& labels, double lambda)
    : features_(features), labels_(labels), lambda_(lambda), dim_(features.dim()) {
  if (features.rows() != labels.size()) throw PreconditionError("feature row count != label count");
}

double LogisticObjective::evaluate(std::span<const double> theta, std::span<double> gradient) const {
  const std::size_t n = features_.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::fill(gradient.begin(), gradient.end(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto x = features_.row(i);
    double z = theta[dim_];
    for (std::size_t k = 0; k < dim_; ++k) z += theta[k] * static_cast<double>(x[k]);
    const double y = labels_[i] ? 1.0 : 0.0;
    loss += softplus(z) - y * z;
    const double r = sigmoid(z) - y;
    for (std::size_t k = 0; k < dim_; ++k) gradient[k] += r * static_cast<double>(x[k]);
    gradient[dim_] += r;
  }
  double reg = 0.0;
  for (std::size_t k = 0; k < dim_; ++k) {
    gradient[k] = gradient[k] * inv_n + lambda_ * theta[k];
    reg += theta[k] * theta[k];
  }
  gradient[dim_] *= inv_n;
  return loss * inv_n + 0.5 * lambda_ * reg;
}

double LogisticObjective::value(std::span<const double> theta) const {
  std::vector<double> g(parameter_count());
  return evaluate(theta, g);
}

TrainResult train_probe(const FeatureMatrix& features, const LabelVector& labels, const TrainOptions& options) {
  if (features.rows() == 0) throw PreconditionError("probe training needs at least one row");
  if (features.rows() != labels.size()) throw PreconditionError("feature row count != label count");
  if (!(options.lambda >= 0.0) || !std::isfinite(options.lambda)) throw DomainError("lambda must be >= 0");
  check_finite(features);
  for (auto l : labels) {
    if (l > 1) throw DomainError("probe labels must be binary");
  }

  const std::size_t d = features.dim();
  TrainResult result;
  result.probe.lambda = options.lambda;
  result.probe.weights.assign(d, 0.0);

  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  if (positives == 0 || positives == labels.size()) {
    if (options.lambda == 0.0) {
      throw DomainError("single-class labels with lambda = 0: the logistic objective is unbounded");
    }
    // With an unregularised bias the optimum sits at infinity; return a
    // smoothed base-rate predictor instead.
    const double pos = static_cast<double>(positives) + 0.5;
    const double neg = static_cast<double>(labels.size() - positives) + 0.5;
    result.probe.bias = std::log(pos / neg);
    result.probe.degenerate = true;
    result.converged = true;
    return result;
  }

  const LogisticObjective objective(features, labels, options.lambda);
  const std::size_t m = objective.parameter_count();
  std::vector<double> theta(m, 0.0), grad(m), direction(m), next(m), next_grad(m);
  double f = objective.evaluate(theta, grad);

  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::vector<double> alpha(options.history);

  std::size_t iter = 0;
  for (; iter < options.max_iterations && max_norm(grad) >= options.gradient_tolerance; ++iter) {
    // Two-loop recursion: direction = -H * grad.
    for (std::size_t k = 0; k < m; ++k) direction[k] = -grad[k];
    const std::size_t h = s_hist.size();
    for (std::size_t j = h; j-- > 0;) {
      alpha[j] = rho_hist[j] * dot(s_hist[j], direction);
      for (std::size_t k = 0; k < m; ++k) direction[k] -= alpha[j] * y_hist[j][k];
    }
    if (h > 0) {
      const double gamma = dot(s_hist[h - 1], y_hist[h - 1]) / dot(y_hist[h - 1], y_hist[h - 1]);
      for (auto& v : direction) v *= gamma;
    }
    for (std::size_t j = 0; j < h; ++j) {
      const double beta = rho_hist[j] * dot(y_hist[j], direction);
      for (std::size_t k = 0; k < m; ++k) direction[k] += (alpha[j] - beta) * s_hist[j][k];
    }

    double slope = dot(grad, direction);
    if (!(slope < 0.0)) {
      // Curvature history went stale; restart from steepest descent.
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t k = 0; k < m; ++k) direction[k] = -grad[k];
      slope = dot(grad, direction);
    }

    // Strong Wolfe line search by bracketing and bisection. The objective is
    // convex, so the directional derivative is monotone along the ray.
    constexpr double c1 = 1e-4, c2 = 0.9;
    const double f_slack = 1e-13 * (1.0 + std::abs(f));
    double step = h == 0 ? std::min(1.0, 1.0 / max_norm(grad)) : 1.0;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double f_next = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t k = 0; k < m; ++k) next[k] = theta[k] + step * direction[k];
      f_next = objective.evaluate(next, next_grad);
      const double slope_next = dot(next_grad, direction);
      if (f_next > f + c1 * step * slope + f_slack) {
        hi = step;
      } else if (slope_next < c2 * slope) {
        lo = step;
      } else if (slope_next > -c2 * slope) {
        hi = step;
      } else {
        accepted = true;
        break;
      }
      step = std::isinf(hi) ? 2.0 * step : 0.5 * (lo + hi);
    }
    if (!accepted) {
      if (!(f_next <= f)) break;  // no further progress is representable
    }

    std::vector<double> s(m), y(m);
    for (std::size_t k = 0; k < m; ++k) {
      s[k] = next[k] - theta[k];
      y[k] = next_grad[k] - grad[k];
    }
    const double sy = dot(s, y);
    if (sy > 1e-300) {
      if (s_hist.size() == options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
    theta.swap(next);
    grad.swap(next_grad);
    f = f_next;
  }

  result.iterations = iter;
  result.gradient_max_norm = max_norm(grad);
  result.converged = result.gradient_max_norm < options.gradient_tolerance;
  if (!result.converged) {
    spdlog::warn("probe training stopped after {} iterations with gradient max-norm {:.3g}", iter,
                 result.gradient_max_norm);
  }
  result.probe.weights.assign(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(d));
  result.probe.bias = theta[d];
  return result;
}

double score_row(const Probe& probe, std::span<const float> row) {
  double z = probe.bias;
  for (std::size_t k = 0; k < row.size(); ++k) z += probe.weights[k] * static_cast<double>(row[k]);
  const double p = sigmoid(z);
  return std::clamp(p, std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

std::vector<double> score(const Probe& probe, const FeatureMatrix& features) {
  if (features.dim() != probe.dim() && features.rows() > 0) {
    throw PreconditionError("probe dimension " + std::to_string(probe.dim()) + " != feature dimension " +
                            std::to_string(features.dim()));
  }
  std::vector<double> out(features.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = score_row(probe, features.row(i));
  return out;
}

WeakToStrongResult weak_to_strong(const WeakToStrongInputs& in) {
  if (in.weak_relabel.rows() == 0) throw PreconditionError("weak-to-strong needs a non-empty relabel subset");
  if (in.weak_relabel.rows() != in.strong_relabel.rows()) {
    throw PreconditionError("relabel rows differ between weak and strong feature spaces");
  }
  if (in.weak_eval.rows() != in.strong_eval.rows() || in.weak_eval.rows() != in.eval_labels.size()) {
    throw PreconditionError("evaluation rows differ between feature spaces or labels");
  }
  if (!in.weak_train.keys().empty() && !in.weak_relabel.keys().empty()) {
    std::set<FeatureKey> train_keys(in.weak_train.keys().begin(), in.weak_train.keys().end());
    for (const auto& k : in.weak_relabel.keys()) {
      if (train_keys.count(k)) throw PreconditionError("weak-train and relabel subsets overlap at doc '" + k.doc_id + "'");
    }
  }

  WeakToStrongResult out;
  out.weak = train_probe(in.weak_train, in.weak_train_labels, in.options).probe;
  const auto train_scores = score(out.weak, in.weak_train);
  out.weak.threshold = calibrate_f1(train_scores, in.weak_train_labels).threshold;
  out.weak.calibration = {"f1max", std::nullopt, "weak-train"};

  const auto relabel_scores = score(out.weak, in.weak_relabel);
  LabelVector pseudo(relabel_scores.size());
  for (std::size_t i = 0; i < pseudo.size(); ++i) pseudo[i] = relabel_scores[i] >= out.weak.threshold ? 1 : 0;
  out.pseudo_positive = static_cast<std::size_t>(std::count(pseudo.begin(), pseudo.end(), std::uint8_t{1}));

  out.strong = train_probe(in.strong_relabel, pseudo, in.options).probe;
  if (out.pseudo_positive > 0) {
    out.strong.threshold = calibrate_f1(score(out.strong, in.strong_relabel), pseudo).threshold;
    out.strong.calibration = {"f1max", std::nullopt, "pseudo-labels"};
  }

  out.weak_report = evaluate(score(out.weak, in.weak_eval), in.eval_labels, out.weak.threshold);
  out.strong_report = evaluate(score(out.strong, in.strong_eval), in.eval_labels, out.strong.threshold);
  return out;
}

std::string Probe::to_json() const {
  nlohmann::ordered_json j;
  j["dim"] = weights.size();
  j["weights"] = weights;
  j["bias"] = bias;
  j["lambda"] = lambda;
  j["threshold"] = threshold;
  nlohmann::ordered_json cal;
  cal["mode"] = calibration.mode;
  if (calibration.p) cal["p"] = *calibration.p;
  cal["set"] = calibration.set;
  j["calibration"] = cal;
  if (degenerate) j["degenerate"] = true;
  return j.dump(1);
}

Probe Probe::from_json(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    Probe p;
    p.weights = j.at("weights").get<std::vector<double>>();
    if (j.at("dim").get<std::size_t>() != p.weights.size()) throw FormatError("probe dim does not match weights");
    p.bias = j.at("bias").get<double>();
    p.lambda = j.at("lambda").get<double>();
    p.threshold = j.at("threshold").get<double>();
    if (j.contains("calibration")) {
      const auto& c = j["calibration"];
      p.calibration.mode = c.value("mode", "none");
      if (c.contains("p")) p.calibration.p = c["p"].get<double>();
      p.calibration.set = c.value("set", "");
    }
    p.degenerate = j.value("degenerate", false);
    for (double w : p.weights) {
      if (!std::isfinite(w)) throw FormatError("probe weight is not finite");
    }
    if (!(p.threshold >= 0.0) || !std::isfinite(p.threshold)) throw FormatError("probe threshold must be >= 0");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("probe file: ") + e.what());
  }
}

void Probe::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write probe: " + path.string());
  out << to_json() << '\n';
}

Probe Probe::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open probe: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace tokensieve
