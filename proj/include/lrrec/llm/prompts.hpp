#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lrrec/data/dataset.hpp"

namespace lrrec::llm {

enum class Domain { product, movie, restaurant, hotel };
enum class Polarity { positive, negative, profile, aspect, general, summary };

Domain parse_domain(const std::string& s);
Polarity parse_polarity(const std::string& s);
std::string to_string(Domain d);
std::string to_string(Polarity p);

// Text with `{profile_seq}` / `{recommended_profile}` slots (or `{item_text}`
// for profile prompts).
struct PromptTemplate {
  Domain domain;
  Polarity polarity;
  std::string text;
};

// Throws ValidationError for unsupported combinations.
const PromptTemplate& prompt_template(Domain domain, Polarity polarity);

// Separator between consecutive history profiles inside `{profile_seq}`.
inline constexpr const char* kProfileSeparator = " | ";
// Rendered in place of a sentinel-padded history slot.
inline constexpr const char* kEmptyHistorySlot = "none";

std::string build_profile_prompt(const data::ItemProfile& item, Domain domain);

std::string build_explanation_prompt(const std::vector<std::string>& history_profiles,
                                     const std::string& candidate_profile, Polarity polarity,
                                     Domain domain);

// Nouns and verb phrases used by the templates and the stub backend.
struct DomainWords {
  std::string item;          // "hotel"
  std::string consumed;      // "stayed at this hotel"
  std::string not_consumed;  // "did not stay at this hotel"
};
const DomainWords& domain_words(Domain domain);

// Inverse of the builders: recovers the slot contents of a prompt rendered by
// this module. Returns nullopt for foreign text.
struct ParsedPrompt {
  Domain domain;
  Polarity polarity;
  std::vector<std::string> history;  // split on kProfileSeparator
  std::string candidate;             // item text for profile prompts
};
std::optional<ParsedPrompt> parse_prompt(const std::string& prompt);

}  // namespace lrrec::llm
