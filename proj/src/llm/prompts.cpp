#include "lrrec/llm/prompts.hpp"

#include <array>
#include <map>

#include "lrrec/common/error.hpp"

namespace lrrec::llm {
namespace {

constexpr const char* kSeqSlot = "{profile_seq}";
constexpr const char* kCandSlot = "{recommended_profile}";
constexpr const char* kItemSlot = "{item_text}";

const std::string kHotelPastExample =
    "Peppers Gallery Hotel is a luxurious 5-star hotel located in the heart of Sydney, Australia. "
    "The hotel is housed in a historic building that has been beautifully restored to combine "
    "modern comfort with traditional elegance. The hotel's unique art collection and contemporary "
    "design make it a perfect choice for art lovers, couples, and business travelers seeking a "
    "luxurious and sophisticated experience. The hotel's central location allows guests to easily "
    "explore Sydney's famous landmarks and cultural attractions. Whether you're looking to relax "
    "and unwind or experience the best of Sydney, Peppers Gallery Hotel is the perfect choice.";
const std::string kHotelCurrentExample =
    "Escape the hustle and bustle of Amsterdam and indulge in a luxurious stay at the Sheraton "
    "Amsterdam Airport Hotel and Conference Center. Conveniently located just minutes from "
    "Amsterdam Airport Schiphol, this 5-star hotel offers spacious rooms, a fitness center, and an "
    "on-site restaurant. Perfect for both business and leisure travelers seeking a comfortable "
    "and relaxing retreat.";
const std::string kRestaurantPastExample =
    "Claim Jumper is a restaurant that offers a unique dining experience, known for its delicious "
    "food and friendly service. The menu features a variety of dishes that are sure to please any "
    "palate. Whether you are looking for a casual dining experience or a romantic dinner for two, "
    "Claim Jumper is the perfect choice.";
const std::string kRestaurantCurrentExample =
    "Feast Buffet is a hotel restaurant that offers a wide variety of international cuisine. The "
    "restaurant is perfect for families, couples, and business travelers who are looking for a "
    "delicious and affordable meal. Overall, Feast Buffet is a great option for anyone looking for "
    "a delicious and affordable meal in a comfortable and welcoming environment.";

std::string profile_instruction(const std::string& noun) {
  return "Create a succinct profile for a " + noun +
         " based on its name. This profile should be tailored for use in recommendation systems "
         "and must identify the types of consumers who would enjoy the " +
         noun + ".";
}

std::string bracketed_explanation(const std::string& instruction, const std::string& past_label,
                                  const std::string& current_label, const std::string& past_example,
                                  const std::string& current_example,
                                  const std::string& example_output) {
  std::string t = "[Instruction]\n\n" + instruction + "\n\n";
  if (!example_output.empty()) {
    t += "[Example Input]\n\n" + past_label + " " + past_example + "\n\n" + current_label + " " +
         current_example + "\n\n[Example Output]\n\nExplanation: " + example_output + "\n\n";
  }
  t += "[Input]\n\n" + past_label + " " + kSeqSlot + "\n\n" + current_label + " " + kCandSlot;
  return t;
}

std::string movie_question(const std::string& ask) {
  return std::string("Given the profiles of the watching history of this consumer ") + kSeqSlot +
         ", " + ask;
}

std::vector<PromptTemplate> build_templates() {
  std::vector<PromptTemplate> out;

  // --- profile augmentation -------------------------------------------------
  out.push_back({Domain::hotel, Polarity::profile,
                 "[Instruction]\n\n" + profile_instruction("hotel") +
                     "\n\n[Example Input]\n\nJW Marriott Hotel Hong Kong\n\n[Example Output]\n\n"
                     "Revitalize body, mind, and spirit when you stay at the 5-star JW Marriott "
                     "Hotel Hong Kong. Located above Pacific Place, enjoy the views over Victoria "
                     "Harbour, the mountains, or the glittering downtown Hong Kong skyline.\n\n"
                     "[Input]\n\n" +
                     kItemSlot});
  out.push_back({Domain::restaurant, Polarity::profile,
                 "[Instruction]\n\n" + profile_instruction("restaurant") +
                     "\n\n[Example Input]\n\nThrill Korean Steak and Bar\n\n[Example Output]\n\n"
                     "Thrill Korean Steak and Bar brings a new concept to many people. We feature "
                     "over 20 meat options to choose from that will be cooked at the table. Our "
                     "fast-burning grills and our well-trained staff will bring an exceptional "
                     "experience to many people.\n\n[Input]\n\n" +
                     kItemSlot});
  out.push_back(
      {Domain::movie, Polarity::profile,
       "[Instruction]\n\nCreate a succinct profile for a movie based on the provided information. "
       "This profile should be tailored for use in recommendation systems and must identify the "
       "types of users who would enjoy the movie. Avoid repeating the given details directly and "
       "instead focus on describing the appeal and content of the movie in a way that highlights "
       "its potential audience:\n\n[Example Input]\nTitle: Barefoot Contessa (with Ina Garten), "
       "Entertaining With Ina Vol. 2 (3 Pack): Brunch 'n' Lunch, Picnic Parties, Summer "
       "Entertaining\n\nBrand: Ina Garten\n\nCategory: ['Movies & TV', 'Movies']\n\n"
       "[Example Output]\n\nThis series, hosted by Ina Garten, delves into crafting simple yet "
       "sophisticated dishes suitable for both daily meals and special events. With episodes "
       "ranging from brunch preparations to summer picnic essentials, it appeals to those who "
       "savor lifestyle and culinary content infused with a personal touch. Ideal for viewers who "
       "relish home cooking shows, seek practical entertaining tips, and aspire to refine their "
       "cooking skills under the guidance of a celebrated chef, this series is especially "
       "attractive. Enthusiasts of lifestyle and cooking channels, as well as individuals looking "
       "for actionable, inspirational ideas for social gatherings, will find this series to be a "
       "compelling addition to their viewing schedule. It is particularly suited for culinary "
       "aficionados and home chefs eager to inject innovation and style into their meal "
       "presentations and event planning.\n\n[Input]\n\n" +
           std::string(kItemSlot)});
  // No published few-shot example for generic products: zero-shot.
  out.push_back({Domain::product, Polarity::profile,
                 "[Instruction]\n\n" + profile_instruction("product") + "\n\n[Input]\n\n" +
                     kItemSlot});

  // --- contrastive explanations --------------------------------------------
  out.push_back(
      {Domain::hotel, Polarity::positive,
       bracketed_explanation(
           "Provide a reason for why this consumer stayed at the current hotel, based on the "
           "provided profile of the past hotels the consumer stayed at and the profile of the "
           "current hotel. Answer with exactly one sentence with the following format: \"The "
           "consumer stayed at this hotel because the consumer ... and the hotel ...\"",
           "Past Hotel Profiles:", "Current Hotel Profile:", kHotelPastExample,
           kHotelCurrentExample,
           "The consumer stayed at this hotel because the consumer is traveling for business and "
           "the hotel is luxurious and conveniently located at the airport.")});
  out.push_back(
      {Domain::hotel, Polarity::negative,
       bracketed_explanation(
           "Provide a reason for why this consumer did not stay at the current hotel, based on the "
           "provided profile of the past hotels the consumer stayed at and the profile of the "
           "current hotel. Answer with exactly one sentence with the following format: \"The "
           "consumer did not stay at this hotel because the consumer ... and the hotel ...\"",
           "Past Hotel Profiles:", "Current Hotel Profile:", kHotelPastExample,
           kHotelCurrentExample,
           "The consumer did not stay at this hotel because the consumer is not interested in "
           "visiting Amsterdam or staying at an airport hotel and the hotel is located at the "
           "Amsterdam airport.")});
  // The published restaurant prompt labels the history "Last Restaurant
  // Profile" but we fill it with the whole history sequence.
  out.push_back(
      {Domain::restaurant, Polarity::positive,
       bracketed_explanation(
           "Provide a reason for why this consumer visited the current restaurant, based on the "
           "provided profile of the last restaurant the consumer visited and the profile of the "
           "current restaurant. Answer with exactly one sentence with the following format: \"The "
           "consumer visited this restaurant because the consumer ... and the restaurant ...\"",
           "Last Restaurant Profile:", "Current Restaurant Profile:", kRestaurantPastExample,
           kRestaurantCurrentExample,
           "The consumer visited this restaurant because the consumer is looking for a romantic "
           "dining place and the restaurant offers a delicious and affordable dining experience for "
           "couples.")});
  out.push_back(
      {Domain::restaurant, Polarity::negative,
       bracketed_explanation(
           "Provide a reason for why this consumer did not visit the current restaurant, based on "
           "the provided profile of the last restaurant the consumer visited and the profile of the "
           "current restaurant. Answer with exactly one sentence with the following format: \"The "
           "consumer did not visit this restaurant because the consumer ... and the restaurant "
           "...\"",
           "Last Restaurant Profile:", "Current Restaurant Profile:", kRestaurantPastExample,
           kRestaurantCurrentExample,
           "The consumer did not visit this restaurant because the consumer is looking for a fine "
           "dinning experience and the restaurant offers only affordable and buffet options.")});
  out.push_back({Domain::product, Polarity::positive,
                 bracketed_explanation(
                     "Provide a reason for why this consumer purchased this product, based on the "
                     "provided profile of the past products the consumer purchased, and the "
                     "profile of the current product. Answer with exactly one sentence in the "
                     "following format: \"The consumer purchased this product because the "
                     "consumer ... and the product ...\"",
                     "Past Product Profiles:", "Current Product Profile:", "", "", "")});
  out.push_back({Domain::product, Polarity::negative,
                 bracketed_explanation(
                     "Provide a reason for why this consumer did not purchase this product, based "
                     "on the provided profile of the past products the consumer purchased, and the "
                     "profile of the current product. Answer with exactly one sentence in the "
                     "following format: \"The consumer did not purchase this product because the "
                     "consumer ... and the product ...\"",
                     "Past Product Profiles:", "Current Product Profile:", "", "", "")});
  out.push_back({Domain::movie, Polarity::positive,
                 movie_question(std::string("can you provide a reason for why this consumer watched "
                                            "the following recommended movie with profile ") +
                                kCandSlot +
                                "? Answer with one sentence with the following format: The "
                                "consumer watched this movie because...")});
  out.push_back({Domain::movie, Polarity::negative,
                 movie_question(std::string("can you provide a reason for why this consumer did "
                                            "not watch the following recommended movie with "
                                            "profile ") +
                                kCandSlot +
                                "? Answer with one sentence with the following format: The "
                                "consumer did not watch this movie because...")});

  // --- alternative generation tasks (ablation variants) ---------------------
  // Question-style prompts for every domain, modelled on the movie wording.
  const std::array<Domain, 4> all = {Domain::product, Domain::movie, Domain::restaurant,
                                     Domain::hotel};
  for (Domain d : all) {
    const auto& w = domain_words(d);
    const std::string history_phrase =
        d == Domain::movie ? "watching history" : "consumption history";
    const std::string lead =
        "Given the profiles of the " + history_phrase + " of this consumer " + kSeqSlot + ", ";
    out.push_back({d, Polarity::aspect,
                   lead + "can you generate a series of aspect terms that represent the most "
                          "important properties of the candidate " +
                       w.item + " with profile " + kCandSlot +
                       " that the consumer might consider?"});
    out.push_back({d, Polarity::general,
                   lead + "can you infer whether this consumer would like the following "
                          "recommended " +
                       w.item + " with profile " + kCandSlot +
                       " and provide a general explanation? Answer with one sentence."});
    out.push_back({d, Polarity::summary,
                   lead + "can you provide a summary of the consumer preference of candidate " +
                       w.item + "s?"});
  }
  return out;
}

const std::vector<PromptTemplate>& templates() {
  static const std::vector<PromptTemplate> kTemplates = build_templates();
  return kTemplates;
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

std::vector<std::string> split_on(const std::string& s, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t pos = s.find(sep); pos != std::string::npos; pos = s.find(sep, start)) {
    out.push_back(s.substr(start, pos - start));
    start = pos + sep.size();
  }
  out.push_back(s.substr(start));
  return out;
}

// Matches `text` against a template whose slots appear in some order, each
// at most once. Literal segments must match exactly.
std::optional<std::map<std::string, std::string>> match_template(const std::string& tmpl,
                                                                 const std::string& text) {
  struct Piece {
    bool slot;
    std::string s;
  };
  std::vector<Piece> pieces;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    std::size_t next = std::string::npos;
    std::string which;
    for (const char* slot : {kSeqSlot, kCandSlot, kItemSlot}) {
      const auto p = tmpl.find(slot, pos);
      if (p < next) {
        next = p;
        which = slot;
      }
    }
    if (next == std::string::npos) {
      pieces.push_back({false, tmpl.substr(pos)});
      break;
    }
    if (next > pos) pieces.push_back({false, tmpl.substr(pos, next - pos)});
    pieces.push_back({true, which});
    pos = next + which.size();
  }

  std::map<std::string, std::string> slots;
  std::size_t cur = 0;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const auto& pc = pieces[i];
    if (!pc.slot) {
      if (text.compare(cur, pc.s.size(), pc.s) != 0) return std::nullopt;
      cur += pc.s.size();
      continue;
    }
    std::size_t end = text.size();
    if (i + 1 < pieces.size()) {
      const auto& lit = pieces[i + 1].s;  // slots are always separated by literals
      if (i + 2 == pieces.size()) {
        if (text.size() < lit.size() || text.compare(text.size() - lit.size(), lit.size(), lit) != 0)
          return std::nullopt;
        end = text.size() - lit.size();
      } else {
        end = text.find(lit, cur);
        if (end == std::string::npos) return std::nullopt;
      }
    }
    if (end < cur) return std::nullopt;
    slots[pc.s] = text.substr(cur, end - cur);
    cur = end;
  }
  if (cur != text.size()) return std::nullopt;
  return slots;
}

}  // namespace

Domain parse_domain(const std::string& s) {
  if (s == "product") return Domain::product;
  if (s == "movie") return Domain::movie;
  if (s == "restaurant") return Domain::restaurant;
  if (s == "hotel") return Domain::hotel;
  throw ValidationError("unknown domain '" + s + "'");
}

Polarity parse_polarity(const std::string& s) {
  if (s == "positive") return Polarity::positive;
  if (s == "negative") return Polarity::negative;
  if (s == "profile") return Polarity::profile;
  if (s == "aspect") return Polarity::aspect;
  if (s == "general") return Polarity::general;
  if (s == "summary") return Polarity::summary;
  throw ValidationError("unknown polarity '" + s + "'");
}

std::string to_string(Domain d) {
  switch (d) {
    case Domain::product: return "product";
    case Domain::movie: return "movie";
    case Domain::restaurant: return "restaurant";
    case Domain::hotel: return "hotel";
  }
  return "?";
}

std::string to_string(Polarity p) {
  switch (p) {
    case Polarity::positive: return "positive";
    case Polarity::negative: return "negative";
    case Polarity::profile: return "profile";
    case Polarity::aspect: return "aspect";
    case Polarity::general: return "general";
    case Polarity::summary: return "summary";
  }
  return "?";
}

const DomainWords& domain_words(Domain domain) {
  static const std::map<Domain, DomainWords> kWords = {
      {Domain::product, {"product", "purchased this product", "did not purchase this product"}},
      {Domain::movie, {"movie", "watched this movie", "did not watch this movie"}},
      {Domain::restaurant,
       {"restaurant", "visited this restaurant", "did not visit this restaurant"}},
      {Domain::hotel, {"hotel", "stayed at this hotel", "did not stay at this hotel"}},
  };
  return kWords.at(domain);
}

const PromptTemplate& prompt_template(Domain domain, Polarity polarity) {
  for (const auto& t : templates())
    if (t.domain == domain && t.polarity == polarity) return t;
  throw ValidationError("no prompt template for " + to_string(polarity) + "/" + to_string(domain));
}

std::string build_profile_prompt(const data::ItemProfile& item, Domain domain) {
  if (item.name.empty()) throw ValidationError("item " + item.item_id + " has an empty name");
  std::string text = prompt_template(domain, Polarity::profile).text;
  replace_all(text, kItemSlot, item.name);
  return text;
}

std::string build_explanation_prompt(const std::vector<std::string>& history_profiles,
                                     const std::string& candidate_profile, Polarity polarity,
                                     Domain domain) {
  if (polarity == Polarity::profile)
    throw ValidationError("profile polarity is not an explanation prompt");
  if (candidate_profile.empty()) throw ValidationError("empty candidate profile");
  if (history_profiles.empty()) throw ValidationError("history must contain at least one entry");
  std::string seq;
  for (std::size_t i = 0; i < history_profiles.size(); ++i) {
    if (i) seq += kProfileSeparator;
    seq += history_profiles[i].empty() ? kEmptyHistorySlot : history_profiles[i];
  }
  std::string text = prompt_template(domain, polarity).text;
  // Candidate first: history text may itself contain the literal slot name.
  replace_all(text, kCandSlot, candidate_profile);
  const auto seq_pos = text.find(kSeqSlot);
  if (seq_pos != std::string::npos) text.replace(seq_pos, std::string(kSeqSlot).size(), seq);
  return text;
}

std::optional<ParsedPrompt> parse_prompt(const std::string& prompt) {
  for (const auto& t : templates()) {
    auto slots = match_template(t.text, prompt);
    if (!slots) continue;
    ParsedPrompt out{t.domain, t.polarity, {}, {}};
    if (t.polarity == Polarity::profile) {
      out.candidate = (*slots)[kItemSlot];
    } else {
      out.history = split_on((*slots)[kSeqSlot], kProfileSeparator);
      if (auto it = slots->find(kCandSlot); it != slots->end()) out.candidate = it->second;
    }
    return out;
  }
  return std::nullopt;
}

}  // namespace lrrec::llm
