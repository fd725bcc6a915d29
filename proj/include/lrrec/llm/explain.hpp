#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lrrec/common/embedding.hpp"
#include "lrrec/data/dataset.hpp"
#include "lrrec/llm/backend.hpp"
#include "lrrec/llm/cache.hpp"
#include "lrrec/llm/prompts.hpp"

namespace lrrec::llm {

inline constexpr std::size_t kMaxExplanationWords = 50;

struct ExplanationPair {
  std::string user_id;
  std::string item_id;
  std::string record_key;  // InteractionRecord::key()
  std::string positive_text;
  std::string negative_text;
  std::optional<Embedding> positive_embedding;
  std::optional<Embedding> negative_embedding;
  std::string prompt_fingerprint;
  // Texts for the aspect / general / summary generation tasks, when requested.
  std::map<Polarity, std::string> alternatives;

  // Throws ValidationError if a text is empty or an embedding is non-finite.
  void validate() const;
};

// item_id -> text used in prompts. Sentinels render as "none".
class ProfileIndex {
 public:
  explicit ProfileIndex(const std::vector<data::ItemProfile>& profiles);
  // Throws PrerequisiteError for unknown ids.
  const std::string& text(const std::string& item_id) const;

 private:
  std::unordered_map<std::string, std::string> text_;
};

struct ExplanationOptions {
  Domain domain = Domain::product;
  std::vector<Polarity> alternatives;  // extra generation tasks
  std::size_t max_words = kMaxExplanationWords;
};

ExplanationPair generate_explanations(const data::InteractionRecord& record,
                                      const ProfileIndex& profiles, Generator& generator,
                                      ResponseCache& cache, const ExplanationOptions& options = {});

struct ExplanationRun {
  // Aligned with the input records; nullopt where the backend failed.
  std::vector<std::optional<ExplanationPair>> pairs;
  std::vector<std::string> pending;  // record keys
};

// Runs up to generator.config().max_concurrency records at once.
ExplanationRun generate_all(const std::vector<data::InteractionRecord>& records,
                            const ProfileIndex& profiles, Generator& generator,
                            ResponseCache& cache, const ExplanationOptions& options = {});

struct AugmentRun {
  std::vector<data::ItemProfile> items;
  std::vector<std::string> pending;  // item ids left without a profile
};

AugmentRun augment_profiles(const std::vector<data::ItemProfile>& items, bool enabled,
                            Domain domain, Generator& generator, ResponseCache& cache);

// JSONL persistence of explanation pairs (texts, fingerprint, alternatives,
// embeddings when present).
void write_explanations(const std::string& path, const std::vector<ExplanationPair>& pairs);
std::vector<ExplanationPair> load_explanations(const std::string& path);

}  // namespace lrrec::llm
