#pragma once

#include <array>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "lrrec/rec/model.hpp"

namespace lrrec::eval {

inline constexpr std::array<const char*, rec::kSlots> kSlotNames = {
    "pos", "neg", "consumer", "product", "sequence", "context"};

using SlotShares = std::array<double, rec::kSlots>;

// Attention each slot receives, averaged over the six queries (column means).
// Row means would be 1/6 for every slot. Throws ValidationError unless every
// row is a distribution (±1e-6).
SlotShares slot_means(const rec::SlotWeights& alpha);

struct AttentionGroup {
  std::vector<double> pos;  // per-record attention on the positive slot
  std::vector<double> neg;
  double mean_pos = 0.0;
  double mean_neg = 0.0;
};

struct AttentionSummary {
  AttentionGroup high;  // predicted yhat >= threshold
  AttentionGroup low;
  double mean_pos = 0.0;  // over all records
  double mean_neg = 0.0;
  SlotShares slot_share{};  // share of total attention per slot
};

AttentionSummary attention_summary(std::span<const rec::SlotWeights> alphas,
                                   std::span<const double> predictions, double threshold = 0.5);

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count_pos = 0;
  std::size_t count_neg = 0;
};

// Fixed bins of `width` over [0, 1]; 1.0 falls in the last bin.
std::vector<HistogramBin> attention_histogram(const AttentionGroup& group, double width = 0.05);

void write_histogram_csv(const std::string& path, std::span<const HistogramBin> bins);
void write_share_csv(const std::string& path, const SlotShares& shares);

struct Uncertainty {
  std::vector<double> variance;    // population variance across models
  std::vector<double> normalized;  // min-max scaled to [0, 1]
};

// predictions[k][i]: model k on record i. Needs at least two models.
Uncertainty uncertainty_scores(const std::vector<std::vector<double>>& predictions);

// Min-max scaling; constant input maps to zeros with a warning.
std::vector<double> min_max(std::span<const double> values);

struct WordCount {
  std::string word;
  std::size_t count = 0;
  bool operator==(const WordCount&) const = default;
};

// Lowercased alphanumeric words, blocked words removed, sorted by count then
// alphabetically. top_k = 0 keeps everything.
std::vector<WordCount> keyword_frequencies(std::span<const std::string> texts, std::size_t top_k,
                                           const std::set<std::string>& blocked);

// One word per line, '#' comments and blank lines ignored.
std::set<std::string> parse_word_list(const std::string& text);
std::set<std::string> load_word_list(const std::string& path);
// The shipped stopword and boilerplate list.
const std::set<std::string>& default_stopwords();

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::optional<double> r;  // undefined when the response is constant
  std::size_t n = 0;
};

// Ordinary least squares of y on x. Throws ValidationError if x is constant.
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

// Regresses per-record improvement (baseline error - model error) on
// normalized uncertainty.
LinearFit improvement_vs_uncertainty(std::span<const double> baseline_errors,
                                     std::span<const double> model_errors,
                                     std::span<const double> uncertainty);

}  // namespace lrrec::eval
