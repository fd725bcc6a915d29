#include "lrrec/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <unordered_map>

#include "lrrec/common/error.hpp"

namespace lrrec::data {

std::vector<std::string> reason_token_vocabulary(std::size_t n) {
  static const std::vector<std::string> kTokens = {
      "spicy",  "quiet",  "cheap",   "luxury", "family", "vegan",   "cozy",   "modern",
      "rustic", "sporty", "classic", "exotic", "healthy", "festive", "scenic", "artsy"};
  if (n == 0 || n > kTokens.size())
    throw ValidationError("n_tokens must lie in [1, " + std::to_string(kTokens.size()) + "]");
  return {kTokens.begin(), kTokens.begin() + static_cast<std::ptrdiff_t>(n)};
}

std::optional<std::string> majority_token(const std::vector<std::string>& tokens) {
  if (tokens.empty()) return std::nullopt;
  std::unordered_map<std::string, std::pair<int, std::size_t>> stats;  // count, last position
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto& s = stats[tokens[i]];
    ++s.first;
    s.second = i;
  }
  const std::string* best = nullptr;
  std::pair<int, std::size_t> best_stat{-1, 0};
  for (const auto& [tok, st] : stats) {
    if (st.first > best_stat.first || (st.first == best_stat.first && st.second > best_stat.second)) {
      best = &tok;
      best_stat = st;
    }
  }
  return *best;
}

SyntheticData gen_synthetic_recsys(const SyntheticConfig& cfg) {
  if (cfg.n_users < 1 || cfg.n_items < 1 || cfg.history_len < 1)
    throw ValidationError("synthetic sizes must be >= 1");
  if (cfg.min_records_per_user < 1 || cfg.max_records_per_user < cfg.min_records_per_user)
    throw ValidationError("invalid records-per-user range");
  if (cfg.match_rate < 0 || cfg.match_rate > 1 || cfg.match_prob < 0 || cfg.match_prob > 1 ||
      cfg.noise < 0 || cfg.noise > 1 || cfg.preference_drift < 0 || cfg.preference_drift > 1)
    throw ValidationError("synthetic probabilities must lie in [0,1]");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto pick = [&](std::size_t n) {
    return static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  };

  SyntheticData out;
  out.tokens = reason_token_vocabulary(std::min(cfg.n_tokens, cfg.n_items));
  const std::size_t n_tok = out.tokens.size();

  // Round-robin token assignment, shuffled, so every token has items.
  std::vector<std::size_t> item_token(cfg.n_items);
  for (std::size_t j = 0; j < cfg.n_items; ++j) item_token[j] = j % n_tok;
  std::shuffle(item_token.begin(), item_token.end(), rng);

  std::vector<std::string> item_ids(cfg.n_items);
  std::vector<std::vector<std::size_t>> items_by_token(n_tok);
  for (std::size_t j = 0; j < cfg.n_items; ++j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "item%03zu", j + 1);
    item_ids[j] = buf;
    items_by_token[item_token[j]].push_back(j);
    out.planted_reason[item_ids[j]] = out.tokens[item_token[j]];
    out.profiles.push_back(ItemProfile{item_ids[j], item_ids[j], std::nullopt});
  }

  const double p_match = cfg.match_prob * (1.0 - cfg.noise) + (1.0 - cfg.match_prob) * cfg.noise;
  const double p_mismatch = (1.0 - cfg.match_prob) * (1.0 - cfg.noise) + cfg.match_prob * cfg.noise;

  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    char ubuf[32];
    std::snprintf(ubuf, sizeof(ubuf), "user%04zu", u + 1);
    const std::string user_id = ubuf;

    std::size_t k = cfg.min_records_per_user + pick(cfg.max_records_per_user - cfg.min_records_per_user + 1);
    if (cfg.records_per_user_multiple > 1 && k >= cfg.records_per_user_multiple)
      k -= k % cfg.records_per_user_multiple;

    std::size_t preferred = pick(n_tok);
    std::vector<std::size_t> past;  // item indices, oldest first
    for (std::size_t t = 0; t < k; ++t) {
      if (unif(rng) < cfg.preference_drift) preferred = pick(n_tok);

      const std::size_t start = past.size() > cfg.history_len ? past.size() - cfg.history_len : 0;
      std::vector<std::size_t> window(past.begin() + static_cast<std::ptrdiff_t>(start), past.end());
      std::vector<std::string> window_tokens;
      for (auto j : window) window_tokens.push_back(out.tokens[item_token[j]]);
      const auto majority = majority_token(window_tokens);

      // Candidate token: the majority with probability match_rate, otherwise
      // another token. Without history the user's preference stands in.
      std::size_t majority_idx = preferred;
      if (majority)
        majority_idx = static_cast<std::size_t>(
            std::find(out.tokens.begin(), out.tokens.end(), *majority) - out.tokens.begin());
      std::size_t cand_tok = preferred;
      if (majority) {
        if (unif(rng) < cfg.match_rate || n_tok == 1) {
          cand_tok = majority_idx;
        } else {
          cand_tok = pick(n_tok - 1);
          if (cand_tok >= majority_idx) ++cand_tok;
        }
      }

      // Candidate item with that token, never one already in the window.
      std::vector<std::size_t> pool;
      for (auto j : items_by_token[cand_tok])
        if (std::find(window.begin(), window.end(), j) == window.end()) pool.push_back(j);
      if (pool.empty()) {
        for (std::size_t j = 0; j < cfg.n_items; ++j)
          if (std::find(window.begin(), window.end(), j) == window.end()) pool.push_back(j);
      }
      if (pool.empty()) break;  // every item already in the window
      const std::size_t item = pool[pick(pool.size())];

      const bool match = majority && item_token[item] == majority_idx;
      const double p = match ? p_match : p_mismatch;
      const int label = unif(rng) < p ? 1 : 0;
      const double rating = label ? 4.0 + static_cast<double>(pick(2))
                                  : 1.0 + static_cast<double>(pick(3));

      InteractionRecord rec;
      rec.user_id = user_id;
      rec.item_id = item_ids[item];
      rec.rating = rating;
      rec.timestamp = static_cast<std::int64_t>(t + 1);
      for (auto j : window) rec.history.push_back(item_ids[j]);
      rec.history = pad_history(std::move(rec.history), cfg.history_len);
      out.records.push_back(std::move(rec));
      out.label_probability.push_back(p);

      past.push_back(item);
    }
  }
  return out;
}

double bayes_optimal_auc(const std::vector<double>& p) {
  // Group records by score; pairs (i, j), i != j, weight p_i (1 - p_j).
  std::vector<std::size_t> order(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });

  double total_pos = 0, total_neg = 0, self = 0;
  for (double v : p) {
    total_pos += v;
    total_neg += 1.0 - v;
    self += v * (1.0 - v);
  }
  const double denom = total_pos * total_neg - self;
  if (denom <= 0) throw ValidationError("Bayes AUC undefined: labels are deterministic single-class");

  double num = 0, neg_below = 0;
  for (std::size_t a = 0; a < order.size();) {
    std::size_t b = a;
    double grp_pos = 0, grp_neg = 0, grp_self = 0;
    while (b < order.size() && p[order[b]] == p[order[a]]) {
      const double v = p[order[b]];
      grp_pos += v;
      grp_neg += 1.0 - v;
      grp_self += v * (1.0 - v);
      ++b;
    }
    num += grp_pos * neg_below + 0.5 * (grp_pos * grp_neg - grp_self);
    neg_below += grp_neg;
    a = b;
  }
  return num / denom;
}

}  // namespace lrrec::data
