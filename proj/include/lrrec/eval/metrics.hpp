#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lrrec/rec/model.hpp"

namespace lrrec::eval {

struct MetricReport {
  std::string label;  // variant or run name
  std::size_t n = 0;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> auc;  // undefined when only one class is present
};

// Mann-Whitney AUC through midranks; ties count one half.
std::optional<double> auc(std::span<const double> labels, std::span<const double> scores);
// Same quantity by enumerating every positive/negative pair. O(P*N).
std::optional<double> auc_pairwise(std::span<const double> labels, std::span<const double> scores);

double rmse(std::span<const double> truth, std::span<const double> pred);
double mae(std::span<const double> truth, std::span<const double> pred);

// Classification: AUC against the 0/1 targets. Regression: targets are scaled
// ratings and AUC uses rating >= 4 as the positive class.
MetricReport compute_metrics(std::span<const double> targets, std::span<const double> preds,
                             rec::Task task, std::string label = {});

// Mean and population standard deviation of each metric over repeated runs.
struct MetricSummary {
  std::string label;
  std::size_t runs = 0;
  double rmse_mean = 0, rmse_sd = 0;
  double mae_mean = 0, mae_sd = 0;
  std::optional<double> auc_mean, auc_sd;
};
MetricSummary summarize(std::span<const MetricReport> runs);

}  // namespace lrrec::eval
