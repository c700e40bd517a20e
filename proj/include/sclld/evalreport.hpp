#pragma once

// Confusion statistics, the metric suite, ROC/AUC and Grad-CAM heatmaps.
// COVID (label 1) is the positive class throughout.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sclld/dataset.hpp"
#include "sclld/imaging.hpp"
#include "sclld/networks.hpp"

namespace sclld {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

ConfusionCounts confusion_counts(std::span<const Label> predictions, std::span<const Label> truths);

// std::nullopt marks a metric whose denominator is zero.
using Metric = std::optional<double>;

struct MetricsReport {
  Metric accuracy;
  Metric precision;
  Metric recall;  // sensitivity
  Metric specificity;
  Metric f1;
  Metric auc;
  Metric loss;  // mean test BCE, when supplied
  ConfusionCounts counts;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  std::vector<RocPoint> curve;  // from (0,0) to (1,1)
  double auc = 0.0;
};

// Threshold sweep over the distinct scores in descending order; equal scores
// form one step. AUC by the trapezoidal rule. Needs both classes present.
RocResult roc_auc(std::span<const double> scores, std::span<const Label> truths);

struct ScoredTruths {
  std::span<const double> scores;
  std::span<const Label> truths;
};

// AUC is computed from `scores` when given, and left undefined when the
// truths hold a single class.
MetricsReport compute_metrics(const ConfusionCounts& counts, std::optional<double> mean_loss = {},
                              std::optional<ScoredTruths> scores = {});

// Thresholds probabilities at 0.5 and fills every field.
MetricsReport evaluate_probabilities(std::span<const double> p_covid, std::span<const Label> truths);

inline constexpr const char* kUndefinedMarker = "undefined";

// Header "accuracy,precision,recall,specificity,f1,loss,auc". Rates are
// percentages with 2 decimals; loss has 6 decimals.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& report);
std::string format_percent(const Metric& m);
std::string format_loss(const Metric& m);
std::string metrics_text(const MetricsReport& report);

// "fpr,tpr" rows.
std::string roc_csv(const RocResult& roc);

// Grad-CAM of the pre-sigmoid logit over the last conv layer, upsampled to
// 100x100 and scaled into [0,1]. Needs a phase-2 model; image is [1,100,100].
GrayImage gradcam(Discriminator& model, const Tensor& image);

}  // namespace sclld
