#include "fvig/metrics.hpp"

#include "fvig/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace fvig {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_sizes(std::span<const double> scores, std::span<const char> positive) {
  if (scores.size() != positive.size()) {
    throw ShapeError("metric inputs differ in length: " + std::to_string(scores.size()) + " scores, " +
                     std::to_string(positive.size()) + " labels");
  }
}

// Indices sorted by descending score, stable on ties.
std::vector<std::size_t> rank_desc(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

struct Sweep {
  double tp, fp;
};

// Cumulative (tp, fp) after each group of tied scores, highest first.
std::vector<Sweep> threshold_sweep(std::span<const double> scores, std::span<const char> positive) {
  const auto order = rank_desc(scores);
  std::vector<Sweep> out;
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (positive[order[i]] ? tp : fp) += 1.0;
    if (i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]]) out.push_back({tp, fp});
  }
  return out;
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const char> positive) {
  check_sizes(scores, positive);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with mid-ranks; every quantity is a multiple of 1/2.
  double pos_rank_sum = 0.0, n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        pos_rank_sum += mid_rank;
        n_pos += 1.0;
      }
    }
    i = j;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return kNaN;
  return (pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double average_precision(std::span<const double> scores, std::span<const char> positive) {
  check_sizes(scores, positive);
  const double total_pos = static_cast<double>(std::count_if(positive.begin(), positive.end(), [](char p) { return p != 0; }));
  if (total_pos == 0.0) return kNaN;
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& [tp, fp] : threshold_sweep(scores, positive)) {
    const double recall = tp / total_pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const char> positive) {
  check_sizes(scores, positive);
  const double total_pos = static_cast<double>(std::count_if(positive.begin(), positive.end(), [](char p) { return p != 0; }));
  const double total_neg = static_cast<double>(scores.size()) - total_pos;
  std::vector<CurvePoint> out{{0.0, 0.0}};
  for (const auto& [tp, fp] : threshold_sweep(scores, positive)) {
    out.push_back({total_neg > 0 ? fp / total_neg : kNaN, total_pos > 0 ? tp / total_pos : kNaN});
  }
  return out;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const char> positive) {
  check_sizes(scores, positive);
  const double total_pos = static_cast<double>(std::count_if(positive.begin(), positive.end(), [](char p) { return p != 0; }));
  std::vector<CurvePoint> out;
  for (const auto& [tp, fp] : threshold_sweep(scores, positive)) {
    out.push_back({total_pos > 0 ? tp / total_pos : kNaN, tp / (tp + fp)});
  }
  return out;
}

MetricsReport compute_metrics(const Eigen::MatrixXd& scores, std::span<const std::size_t> labels,
                              std::vector<std::string> class_names) {
  const std::size_t n = static_cast<std::size_t>(scores.rows());
  const std::size_t c = class_names.size();
  if (n == 0) throw ShapeError("compute_metrics: empty evaluation split");
  if (labels.size() != n || static_cast<std::size_t>(scores.cols()) != c) {
    throw ShapeError("compute_metrics: scores " + std::to_string(scores.rows()) + "x" +
                     std::to_string(scores.cols()) + " vs " + std::to_string(labels.size()) +
                     " labels and " + std::to_string(c) + " classes");
  }
  MetricsReport report;
  report.class_names = std::move(class_names);
  report.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) throw RangeError("compute_metrics: label " + std::to_string(labels[i]) + " out of range");
    Eigen::Index pred = 0;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&pred);
    ++report.confusion[labels[i]][static_cast<std::size_t>(pred)];
    if (static_cast<std::size_t>(pred) == labels[i]) ++correct;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  std::vector<double> column(n);
  std::vector<char> positive(n);
  for (std::size_t k = 0; k < c; ++k) {
    ClassMetrics m;
    const double tp = static_cast<double>(report.confusion[k][k]);
    double predicted = 0.0, actual = 0.0;
    for (std::size_t r = 0; r < c; ++r) {
      predicted += static_cast<double>(report.confusion[r][k]);
      actual += static_cast<double>(report.confusion[k][r]);
    }
    m.support = static_cast<std::size_t>(actual);
    m.no_predicted_positives = predicted == 0.0;
    m.precision = predicted > 0.0 ? tp / predicted : 0.0;
    m.recall = actual > 0.0 ? tp / actual : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      positive[i] = labels[i] == k;
    }
    m.ap = average_precision(column, positive);
    m.auc = roc_auc(column, positive);
    m.roc = roc_curve(column, positive);
    m.pr = pr_curve(column, positive);
    report.per_class.push_back(std::move(m));
  }
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["class_names"] = report.class_names;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  nlohmann::ordered_json curves = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < report.per_class.size(); ++k) {
    const auto& m = report.per_class[k];
    per_class[report.class_names[k]] = {
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"ap", number_or_null(m.ap)},
        {"auc", number_or_null(m.auc)},
        {"support", m.support},
        {"no_predicted_positives", m.no_predicted_positives},
    };
    auto points = [](const std::vector<CurvePoint>& pts) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& p : pts) arr.push_back({number_or_null(p.x), number_or_null(p.y)});
      return arr;
    };
    curves[report.class_names[k]] = {{"roc", points(m.roc)}, {"pr", points(m.pr)}};
  }
  j["per_class"] = std::move(per_class);
  j["confusion"] = report.confusion;
  j["curves"] = std::move(curves);
  return j.dump(2);
}

}  // namespace fvig
