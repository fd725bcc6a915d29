#include "lrrec/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lrrec/common/error.hpp"
#include "lrrec/data/dataset.hpp"

namespace lrrec::eval {
namespace {

void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ValidationError("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  if (a.empty()) throw ValidationError("metrics need at least one record");
}

bool positive(double label) { return label > 0.5; }

}  // namespace

std::optional<double> auc(std::span<const double> labels, std::span<const double> scores) {
  check_lengths(labels, scores);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (positive(labels[order[k]])) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

std::optional<double> auc_pairwise(std::span<const double> labels, std::span<const double> scores) {
  check_lengths(labels, scores);
  double concordant = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!positive(labels[i])) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (positive(labels[j])) continue;
      ++pairs;
      if (scores[i] > scores[j]) concordant += 1.0;
      else if (scores[i] == scores[j]) concordant += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return concordant / static_cast<double>(pairs);
}

double rmse(std::span<const double> truth, std::span<const double> pred) {
  check_lengths(truth, pred);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return std::sqrt(s / static_cast<double>(truth.size()));
}

double mae(std::span<const double> truth, std::span<const double> pred) {
  check_lengths(truth, pred);
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(truth[i] - pred[i]);
  return s / static_cast<double>(truth.size());
}

MetricReport compute_metrics(std::span<const double> targets, std::span<const double> preds,
                             rec::Task task, std::string label) {
  MetricReport r;
  r.label = std::move(label);
  r.n = targets.size();
  r.rmse = rmse(targets, preds);
  r.mae = mae(targets, preds);
  if (task == rec::Task::classification) {
    r.auc = auc(targets, preds);
  } else {
    const double cut = data::scale_rating(4.0);
    std::vector<double> labels(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) labels[i] = targets[i] >= cut - 1e-12 ? 1.0 : 0.0;
    r.auc = auc(labels, preds);
  }
  return r;
}

MetricSummary summarize(std::span<const MetricReport> runs) {
  if (runs.empty()) throw ValidationError("no runs to summarize");
  MetricSummary s;
  s.label = runs.front().label;
  s.runs = runs.size();
  const auto mean_sd = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    return std::pair{m, std::sqrt(var / static_cast<double>(v.size()))};
  };
  std::vector<double> rm, ma, au;
  for (const auto& r : runs) {
    rm.push_back(r.rmse);
    ma.push_back(r.mae);
    if (r.auc) au.push_back(*r.auc);
  }
  std::tie(s.rmse_mean, s.rmse_sd) = mean_sd(rm);
  std::tie(s.mae_mean, s.mae_sd) = mean_sd(ma);
  if (au.size() == runs.size()) {
    const auto [m, sd] = mean_sd(au);
    s.auc_mean = m;
    s.auc_sd = sd;
  }
  return s;
}

}  // namespace lrrec::eval
