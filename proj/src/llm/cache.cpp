#include "lrrec/llm/cache.hpp"

#include <filesystem>

#include <nlohmann/json.hpp>

#include "lrrec/common/error.hpp"
#include "lrrec/common/log.hpp"

namespace lrrec::llm {

ResponseCache::ResponseCache(std::string path) : path_(std::move(path)) {
  if (path_.empty()) return;
  {
    std::ifstream in(path_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        entries_[slot(j.at("key"), j.at("polarity"), j.at("fingerprint"))] =
            j.at("text").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        // A torn final line after a crash is expected; anything else is noise.
        log::warn(path_ + ":" + std::to_string(lineno) + ": skipping unreadable cache line");
      }
    }
  }
  out_.open(path_, std::ios::app);
  if (!out_) throw ValidationError("cannot open cache file " + path_);
}

std::string ResponseCache::slot(const std::string& key, const std::string& polarity,
                                const std::string& fingerprint) {
  return key + '\x1f' + polarity + '\x1f' + fingerprint;
}

std::optional<std::string> ResponseCache::get(const std::string& key, const std::string& polarity,
                                              const std::string& fingerprint) const {
  std::lock_guard lock(mu_);
  const auto it = entries_.find(slot(key, polarity, fingerprint));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& key, const std::string& polarity,
                        const std::string& text, const std::string& fingerprint) {
  std::lock_guard lock(mu_);
  entries_[slot(key, polarity, fingerprint)] = text;
  if (!out_.is_open()) return;
  const nlohmann::json j = {
      {"key", key}, {"polarity", polarity}, {"text", text}, {"fingerprint", fingerprint}};
  out_ << j.dump() << '\n';
  out_.flush();
}

void ResponseCache::compact() {
  std::lock_guard lock(mu_);
  if (path_.empty()) return;
  out_.close();
  const std::string tmp = path_ + ".tmp";
  {
    std::ofstream fresh(tmp, std::ios::trunc);
    for (const auto& [slot_key, text] : entries_) {
      const auto a = slot_key.find('\x1f');
      const auto b = slot_key.find('\x1f', a + 1);
      const nlohmann::json j = {{"key", slot_key.substr(0, a)},
                                {"polarity", slot_key.substr(a + 1, b - a - 1)},
                                {"text", text},
                                {"fingerprint", slot_key.substr(b + 1)}};
      fresh << j.dump() << '\n';
    }
    if (!fresh.flush()) throw ValidationError("cannot write cache file " + tmp);
  }
  std::filesystem::rename(tmp, path_);
  out_.open(path_, std::ios::app);
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

}  // namespace lrrec::llm
