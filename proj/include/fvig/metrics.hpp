#pragma once

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace fvig {

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

/// One-vs-rest ROC area by the pairwise ranking formula: the fraction of
/// (positive, negative) pairs ranked correctly, ties counted one half.
/// NaN when either side is empty.
double roc_auc(std::span<const double> scores, std::span<const char> positive);

/// Step-interpolated average precision: sum over score thresholds (ties
/// grouped) of precision times the recall increment. NaN without positives.
double average_precision(std::span<const double> scores, std::span<const char> positive);

/// (false positive rate, true positive rate) at every distinct threshold,
/// starting from (0, 0).
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const char> positive);
/// (recall, precision) at every distinct threshold.
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const char> positive);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap = 0.0;
  double auc = 0.0;
  std::size_t support = 0;
  bool no_predicted_positives = false;  // precision reported as 0
  std::vector<CurvePoint> roc;
  std::vector<CurvePoint> pr;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<std::string> class_names;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// Predictions are the arg-max of each score row (first maximum on ties).
/// `scores` is [samples, classes].
MetricsReport compute_metrics(const Eigen::MatrixXd& scores, std::span<const std::size_t> labels,
                              std::vector<std::string> class_names);

/// JSON object with keys accuracy, class_names, per_class, confusion and
/// curves. Undefined values (NaN) are written as null.
std::string metrics_to_json(const MetricsReport& report);

}  // namespace fvig
