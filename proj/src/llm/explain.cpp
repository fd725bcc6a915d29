#include "lrrec/llm/explain.hpp"

#include <atomic>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "lrrec/common/error.hpp"
#include "lrrec/common/hash.hpp"

namespace lrrec::llm {
namespace {

// Calls job(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& job) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

std::string cached_generate(const std::string& key, Polarity polarity, const std::string& prompt,
                            Generator& generator, ResponseCache& cache, std::size_t max_words) {
  const auto fp = fingerprint(prompt);
  const auto pol = to_string(polarity);
  if (auto hit = cache.get(key, pol, fp)) return *hit;
  auto text = generator.generate(prompt);
  if (max_words > 0) text = truncate_words(text, max_words);
  if (text.empty()) throw BackendError("completion is blank", fp);
  cache.put(key, pol, text, fp);
  return text;
}

nlohmann::json embedding_json(const std::optional<Embedding>& e) {
  if (!e) return nullptr;
  return nlohmann::json(std::vector<double>(e->begin(), e->end()));
}

std::optional<Embedding> embedding_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  const auto v = j.get<std::vector<double>>();
  if (v.size() != kEmbeddingDim) throw ValidationError("embedding must have length 8");
  Embedding e{};
  std::copy(v.begin(), v.end(), e.begin());
  return e;
}

}  // namespace

void ExplanationPair::validate() const {
  if (positive_text.empty() || negative_text.empty())
    throw ValidationError("explanation pair " + record_key + " has an empty text");
  for (const auto* e : {&positive_embedding, &negative_embedding})
    if (*e && !all_finite(**e))
      throw ValidationError("explanation pair " + record_key + " has a non-finite embedding");
}

ProfileIndex::ProfileIndex(const std::vector<data::ItemProfile>& profiles) {
  for (const auto& p : profiles) text_[p.item_id] = p.prompt_text();
  text_[data::kSentinelItem] = kEmptyHistorySlot;
}

const std::string& ProfileIndex::text(const std::string& item_id) const {
  const auto it = text_.find(item_id);
  if (it == text_.end()) throw PrerequisiteError("no profile for item " + item_id);
  return it->second;
}

ExplanationPair generate_explanations(const data::InteractionRecord& record,
                                      const ProfileIndex& profiles, Generator& generator,
                                      ResponseCache& cache, const ExplanationOptions& options) {
  std::vector<std::string> history;
  history.reserve(record.history.size());
  for (const auto& id : record.history) history.push_back(profiles.text(id));
  const auto& candidate = profiles.text(record.item_id);

  ExplanationPair pair;
  pair.user_id = record.user_id;
  pair.item_id = record.item_id;
  pair.record_key = record.key();
  const std::string key = record.user_id + "|" + record.item_id;

  const auto pos_prompt =
      build_explanation_prompt(history, candidate, Polarity::positive, options.domain);
  const auto neg_prompt =
      build_explanation_prompt(history, candidate, Polarity::negative, options.domain);
  pair.prompt_fingerprint = fingerprint(pos_prompt + '\x1e' + neg_prompt);
  pair.positive_text =
      cached_generate(key, Polarity::positive, pos_prompt, generator, cache, options.max_words);
  pair.negative_text =
      cached_generate(key, Polarity::negative, neg_prompt, generator, cache, options.max_words);
  for (Polarity p : options.alternatives) {
    const auto prompt = build_explanation_prompt(history, candidate, p, options.domain);
    pair.alternatives[p] = cached_generate(key, p, prompt, generator, cache, options.max_words);
  }
  return pair;
}

ExplanationRun generate_all(const std::vector<data::InteractionRecord>& records,
                            const ProfileIndex& profiles, Generator& generator,
                            ResponseCache& cache, const ExplanationOptions& options) {
  ExplanationRun run;
  run.pairs.resize(records.size());
  std::vector<char> failed(records.size(), 0);
  parallel_for(records.size(), generator.config().max_concurrency, [&](std::size_t i) {
    try {
      run.pairs[i] = generate_explanations(records[i], profiles, generator, cache, options);
    } catch (const BackendError&) {
      failed[i] = 1;
    }
  });
  for (std::size_t i = 0; i < records.size(); ++i)
    if (failed[i]) run.pending.push_back(records[i].key());
  return run;
}

AugmentRun augment_profiles(const std::vector<data::ItemProfile>& items, bool enabled,
                            Domain domain, Generator& generator, ResponseCache& cache) {
  AugmentRun run{items, {}};
  if (!enabled) return run;
  std::vector<char> failed(items.size(), 0);
  parallel_for(items.size(), generator.config().max_concurrency, [&](std::size_t i) {
    auto& item = run.items[i];
    if (item.item_id == data::kSentinelItem) return;
    try {
      item.augmented_profile = cached_generate(item.item_id, Polarity::profile,
                                               build_profile_prompt(item, domain), generator,
                                               cache, 0);
    } catch (const BackendError&) {
      failed[i] = 1;
    }
  });
  for (std::size_t i = 0; i < items.size(); ++i)
    if (failed[i]) run.pending.push_back(items[i].item_id);
  return run;
}

void write_explanations(const std::string& path, const std::vector<ExplanationPair>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  for (const auto& p : pairs) {
    nlohmann::json alt = nlohmann::json::object();
    for (const auto& [pol, text] : p.alternatives) alt[to_string(pol)] = text;
    const nlohmann::json j = {{"record_key", p.record_key},
                              {"user_id", p.user_id},
                              {"item_id", p.item_id},
                              {"positive", p.positive_text},
                              {"negative", p.negative_text},
                              {"fingerprint", p.prompt_fingerprint},
                              {"alternatives", alt},
                              {"positive_embedding", embedding_json(p.positive_embedding)},
                              {"negative_embedding", embedding_json(p.negative_embedding)}};
    out << j.dump() << '\n';
  }
  if (!out) throw ValidationError("failed writing " + path);
}

std::vector<ExplanationPair> load_explanations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PrerequisiteError("cannot read " + path);
  std::vector<ExplanationPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ExplanationPair p;
      p.record_key = j.at("record_key");
      p.user_id = j.at("user_id");
      p.item_id = j.at("item_id");
      p.positive_text = j.at("positive");
      p.negative_text = j.at("negative");
      p.prompt_fingerprint = j.at("fingerprint");
      for (const auto& [pol, text] : j.at("alternatives").items())
        p.alternatives[parse_polarity(pol)] = text.get<std::string>();
      p.positive_embedding = embedding_from(j.at("positive_embedding"));
      p.negative_embedding = embedding_from(j.at("negative_embedding"));
      p.validate();
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lrrec::llm
