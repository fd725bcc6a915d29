#pragma once

#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>

namespace lrrec::llm {

// Append-only JSONL store of completions. Each line holds `key`, `polarity`,
// `text` and `fingerprint`; the file is replayed on open and later lines win.
// An empty path keeps the cache in memory only.
class ResponseCache {
 public:
  explicit ResponseCache(std::string path = {});

  std::optional<std::string> get(const std::string& key, const std::string& polarity,
                                 const std::string& fingerprint) const;
  void put(const std::string& key, const std::string& polarity, const std::string& text,
           const std::string& fingerprint);

  std::size_t size() const;

  // Rewrites the file with one line per entry in key order, so a finished
  // run leaves the same bytes whatever order concurrent requests landed in.
  void compact();
  const std::string& path() const { return path_; }

 private:
  static std::string slot(const std::string& key, const std::string& polarity,
                          const std::string& fingerprint);

  std::string path_;
  std::map<std::string, std::string> entries_;
  std::ofstream out_;
  mutable std::mutex mu_;
};

}  // namespace lrrec::llm
