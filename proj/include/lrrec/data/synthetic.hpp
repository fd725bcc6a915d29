#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrrec/data/dataset.hpp"

namespace lrrec::data {

// Planted-signal generator. Every item carries one latent reason token; a
// record's label depends on whether the candidate's token equals the majority
// token of the user's history. The token is never visible to the recommender
// through ids alone, only through explanation text produced by the stub LLM.
struct SyntheticConfig {
  std::size_t n_users = 200;
  std::size_t n_items = 50;
  std::size_t history_len = kDefaultHistoryLen;
  std::uint64_t seed = 1;
  std::size_t n_tokens = 6;
  std::size_t min_records_per_user = 10;
  std::size_t max_records_per_user = 30;
  // Records per user are rounded down to a multiple of this so an 80/20
  // user-temporal split is exact. 1 disables rounding.
  std::size_t records_per_user_multiple = 5;
  // Probability that a candidate is drawn from the history's majority token.
  double match_rate = 0.5;
  // P(high rating | match); P(high rating | mismatch) = 1 - match_prob.
  double match_prob = 1.0;
  // Independent label flip probability applied after match_prob.
  double noise = 0.1;
  // Probability, per step, that a user's preferred token drifts to a new one.
  double preference_drift = 0.0;
};

struct SyntheticData {
  std::vector<InteractionRecord> records;
  std::vector<ItemProfile> profiles;
  // item_id -> reason token
  std::map<std::string, std::string> planted_reason;
  // P(label = 1) for each record, aligned with `records`.
  std::vector<double> label_probability;
  std::vector<std::string> tokens;
};

// Reason-token vocabulary used by the generator (first n entries).
std::vector<std::string> reason_token_vocabulary(std::size_t n);

// Most frequent token; ties go to the token seen most recently. Empty input
// yields nullopt.
std::optional<std::string> majority_token(const std::vector<std::string>& tokens);

SyntheticData gen_synthetic_recsys(const SyntheticConfig& cfg);

// Population AUC of the Bayes-optimal scorer s_k = p_k when label k is
// Bernoulli(p_k) independently: sum_{i != j} p_i (1 - p_j) [s_i > s_j + ties/2]
// normalized by sum_{i != j} p_i (1 - p_j).
double bayes_optimal_auc(const std::vector<double>& label_probability);

}  // namespace lrrec::data
