#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lrrec::llm {

enum class BackendKind { stub, http };

struct BackendConfig {
  BackendKind kind = BackendKind::stub;
  std::optional<std::string> endpoint;  // http://host:port/path
  std::optional<std::string> model_name;
  std::chrono::milliseconds timeout{30000};
  int max_concurrency = 4;
  int retry_count = 3;
  std::chrono::milliseconds retry_backoff{100};

  // Throws ValidationError.
  void validate() const;
};

BackendKind parse_backend_kind(const std::string& s);

class TextBackend {
 public:
  virtual ~TextBackend() = default;
  // One attempt; may throw or return an empty string.
  virtual std::string complete(const std::string& prompt) = 0;
};

// Deterministic offline backend. With a reason table (item word -> reason
// token) the completions carry the planted tokens.
class StubBackend : public TextBackend {
 public:
  StubBackend() = default;
  explicit StubBackend(std::map<std::string, std::string> reason_table);

  std::string complete(const std::string& prompt) override;

 private:
  std::optional<std::string> lookup(const std::string& segment) const;
  std::string complement(const std::string& token) const;

  std::map<std::string, std::string> reason_table_;
  std::vector<std::string> tokens_;  // sorted distinct values of the table
};

class HttpBackend : public TextBackend {
 public:
  explicit HttpBackend(BackendConfig cfg);
  std::string complete(const std::string& prompt) override;

 private:
  BackendConfig cfg_;
  std::string base_;  // scheme://host:port
  std::string path_;
};

std::unique_ptr<TextBackend> make_backend(const BackendConfig& cfg,
                                          std::map<std::string, std::string> reason_table = {});

// Retries and call accounting around a TextBackend. Thread-safe as long as
// the wrapped backend is.
class Generator {
 public:
  Generator(std::unique_ptr<TextBackend> backend, BackendConfig cfg);

  // Non-empty completion or BackendError carrying the prompt fingerprint.
  std::string generate(const std::string& prompt);

  std::size_t calls() const { return calls_.load(); }
  const BackendConfig& config() const { return cfg_; }

 private:
  std::unique_ptr<TextBackend> backend_;
  BackendConfig cfg_;
  std::atomic<std::size_t> calls_{0};
};

// Keeps the first `max_words` whitespace-separated words.
std::string truncate_words(const std::string& text, std::size_t max_words);

}  // namespace lrrec::llm
