#include "lrrec/llm/backend.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lrrec/common/error.hpp"
#include "lrrec/common/hash.hpp"
#include "lrrec/data/dataset.hpp"
#include "lrrec/data/synthetic.hpp"
#include "lrrec/llm/prompts.hpp"

namespace lrrec::llm {
namespace {

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    std::string clean;
    for (char c : w)
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '<' || c == '>')
        clean += c;
    if (!clean.empty()) out.push_back(clean);
  }
  return out;
}

bool is_empty_slot(const std::string& segment) {
  return segment == kEmptyHistorySlot || segment == data::kSentinelItem || segment.empty();
}

}  // namespace

BackendKind parse_backend_kind(const std::string& s) {
  if (s == "stub") return BackendKind::stub;
  if (s == "http") return BackendKind::http;
  throw ValidationError("unknown backend kind '" + s + "'");
}

void BackendConfig::validate() const {
  if (kind == BackendKind::http && (!endpoint || endpoint->empty()))
    throw ValidationError("http backend requires an endpoint");
  if (max_concurrency < 1) throw ValidationError("max_concurrency must be >= 1");
  if (retry_count < 0) throw ValidationError("retry_count must be >= 0");
  if (timeout.count() <= 0) throw ValidationError("timeout must be positive");
}

std::string truncate_words(const std::string& text, std::size_t max_words) {
  std::istringstream in(text);
  std::string w, out;
  for (std::size_t n = 0; n < max_words && in >> w; ++n) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// --- stub ---------------------------------------------------------------------

StubBackend::StubBackend(std::map<std::string, std::string> reason_table)
    : reason_table_(std::move(reason_table)) {
  std::set<std::string> distinct;
  for (const auto& [item, token] : reason_table_) distinct.insert(token);
  tokens_.assign(distinct.begin(), distinct.end());
}

std::optional<std::string> StubBackend::lookup(const std::string& segment) const {
  for (const auto& w : words_of(segment))
    if (auto it = reason_table_.find(w); it != reason_table_.end()) return it->second;
  return std::nullopt;
}

std::string StubBackend::complement(const std::string& token) const {
  const auto it = std::find(tokens_.begin(), tokens_.end(), token);
  if (it == tokens_.end()) return "something other than " + token;
  const auto next = std::next(it) == tokens_.end() ? tokens_.begin() : std::next(it);
  return *next;
}

std::string StubBackend::complete(const std::string& prompt) {
  const auto parsed = parse_prompt(prompt);
  if (!parsed) {
    const auto w = words_of(prompt);
    std::string head;
    for (std::size_t i = 0; i < std::min<std::size_t>(8, w.size()); ++i) head += " " + w[i];
    return "Response:" + (head.empty() ? std::string(" empty") : head) + ".";
  }
  const auto& words = domain_words(parsed->domain);

  if (parsed->polarity == Polarity::profile) {
    return parsed->candidate + " is a " + words.item +
           " for consumers who are looking for something like " + parsed->candidate + ".";
  }

  std::vector<std::string> history_tokens;
  std::string first_history_word = "none";
  for (const auto& seg : parsed->history) {
    if (is_empty_slot(seg)) continue;
    if (auto t = lookup(seg)) history_tokens.push_back(*t);
    if (first_history_word == "none") {
      const auto w = words_of(seg);
      if (!w.empty()) first_history_word = w.front();
    }
  }
  const std::string h =
      history_tokens.empty() ? first_history_word : *data::majority_token(history_tokens);
  std::string c = "none";
  if (auto t = lookup(parsed->candidate)) {
    c = *t;
  } else if (const auto w = words_of(parsed->candidate); !w.empty()) {
    c = w.front();
  }

  switch (parsed->polarity) {
    case Polarity::positive:
      return "The consumer " + words.consumed + " because the consumer likes " + h + " and the " +
             words.item + " is " + c + ".";
    case Polarity::negative:
      return "The consumer " + words.not_consumed + " because the consumer likes " +
             complement(h) + " and the " + words.item + " is " + complement(c) + ".";
    case Polarity::aspect:
      return "Aspect terms: " + c + ", quality, atmosphere, value.";
    case Polarity::general:
      return std::string("The consumer ") + (h == c ? "would" : "would not") + " like this " +
             words.item + " because the consumer likes " + h + " and the " + words.item + " is " +
             c + ".";
    case Polarity::summary:
      return "The consumer prefers " + words.item + "s that are " + h + ".";
    case Polarity::profile:
      break;
  }
  return "none";
}

// --- http ---------------------------------------------------------------------

HttpBackend::HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::string& url = *cfg_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("endpoint must be a URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
}

std::string HttpBackend::complete(const std::string& prompt) {
  httplib::Client client(base_);
  const auto secs = cfg_.timeout.count() / 1000;
  const auto usecs = (cfg_.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  nlohmann::json body = {{"messages", {{{"role", "user"}, {"content", prompt}}}}};
  if (cfg_.model_name) body["model"] = *cfg_.model_name;
  const auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) throw Error("request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("http status " + std::to_string(res->status));
  const auto reply = nlohmann::json::parse(res->body);
  return reply.at("choices").at(0).at("message").at("content").get<std::string>();
}

std::unique_ptr<TextBackend> make_backend(const BackendConfig& cfg,
                                          std::map<std::string, std::string> reason_table) {
  cfg.validate();
  if (cfg.kind == BackendKind::http) return std::make_unique<HttpBackend>(cfg);
  return std::make_unique<StubBackend>(std::move(reason_table));
}

// --- retrying front ------------------------------------------------------------

Generator::Generator(std::unique_ptr<TextBackend> backend, BackendConfig cfg)
    : backend_(std::move(backend)), cfg_(std::move(cfg)) {
  cfg_.validate();
}

std::string Generator::generate(const std::string& prompt) {
  std::string last_error = "empty completion";
  for (int attempt = 0; attempt <= cfg_.retry_count; ++attempt) {
    if (attempt > 0 && cfg_.retry_backoff.count() > 0)
      std::this_thread::sleep_for(cfg_.retry_backoff * (1 << std::min(attempt - 1, 6)));
    ++calls_;
    try {
      auto text = backend_->complete(prompt);
      if (!text.empty()) return text;
      last_error = "empty completion";
    } catch (const std::exception& e) {
      last_error = e.what();
    }
  }
  const auto fp = fingerprint(prompt);
  throw BackendError("backend failed after " + std::to_string(cfg_.retry_count + 1) +
                         " attempts (" + last_error + "), prompt " + fp,
                     fp);
}

}  // namespace lrrec::llm
