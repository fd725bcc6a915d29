#include "lrrec/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>

#include "lrrec/common/error.hpp"
#include "lrrec/common/log.hpp"

namespace lrrec::data {

using nlohmann::json;

namespace {

std::string id_from_json(const json& v, const std::string& field) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw ValidationError("field '" + field + "' must be a string or integer id");
}

const json& require(const json& obj, const std::string& field) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ValidationError("missing field '" + field + "'");
  return *it;
}

void check_rating(double rating) {
  if (!std::isfinite(rating) || rating < 1.0 || rating > 5.0)
    throw ValidationError("rating " + std::to_string(rating) + " outside [1,5]");
}

}  // namespace

std::string InteractionRecord::key() const {
  return user_id + "|" + item_id + "|" + std::to_string(timestamp);
}

std::vector<std::string> pad_history(std::vector<std::string> history, std::size_t history_len) {
  if (history.size() > history_len)
    history.erase(history.begin(), history.end() - static_cast<std::ptrdiff_t>(history_len));
  history.insert(history.begin(), history_len - history.size(), kSentinelItem);
  return history;
}

void validate_record(InteractionRecord& rec, std::size_t history_len) {
  if (rec.user_id.empty()) throw ValidationError("empty user_id");
  if (rec.item_id.empty()) throw ValidationError("empty item_id");
  if (rec.item_id == kSentinelItem) throw ValidationError("item_id uses the reserved sentinel id");
  check_rating(rec.rating);
  if (history_len == 0) throw ValidationError("history length must be >= 1");
  for (const auto& h : rec.history) {
    if (h == rec.item_id)
      throw ValidationError("history of " + rec.key() + " contains the candidate item");
  }
  rec.history = pad_history(std::move(rec.history), history_len);
}

std::vector<InteractionRecord> load_records(const std::string& path, const FieldMapping& fields,
                                            std::size_t history_len) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open record file " + path);
  std::vector<InteractionRecord> out;
  std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      if (!obj.is_object()) throw ValidationError("expected a JSON object");
      InteractionRecord rec;
      rec.user_id = id_from_json(require(obj, fields.user_id), fields.user_id);
      rec.item_id = id_from_json(require(obj, fields.item_id), fields.item_id);
      const json& rating = require(obj, fields.rating);
      if (!rating.is_number()) throw ValidationError("rating must be numeric");
      rec.rating = rating.get<double>();
      const json& ts = require(obj, fields.timestamp);
      if (!ts.is_number_integer()) throw ValidationError("timestamp must be an integer");
      rec.timestamp = ts.get<std::int64_t>();
      const json& hist = require(obj, fields.history);
      if (!hist.is_array()) throw ValidationError("history must be an array");
      for (const auto& h : hist) rec.history.push_back(id_from_json(h, fields.history));
      validate_record(rec, history_len);
      if (!seen.emplace(rec.user_id, rec.item_id, rec.timestamp).second)
        throw ValidationError("duplicate (user, item, timestamp) " + rec.key());
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": malformed line: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<ItemProfile> load_profiles(const std::string& path, const FieldMapping& fields) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open profile file " + path);
  std::vector<ItemProfile> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      ItemProfile p;
      p.item_id = id_from_json(require(obj, fields.item_id), fields.item_id);
      p.name = require(obj, fields.name).get<std::string>();
      if (p.name.empty()) throw ValidationError("empty name for item " + p.item_id);
      if (auto it = obj.find(fields.profile); it != obj.end() && !it->is_null()) {
        auto text = it->get<std::string>();
        if (text.empty()) throw ValidationError("empty profile for item " + p.item_id);
        p.augmented_profile = std::move(text);
      }
      if (!seen.insert(p.item_id).second)
        throw ValidationError("duplicate profile for item " + p.item_id);
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": malformed line: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

Dataset load_dataset(const std::string& records_path, const std::string& profiles_path,
                     const FieldMapping& fields, std::size_t history_len) {
  return Dataset{load_records(records_path, fields, history_len),
                 load_profiles(profiles_path, fields)};
}

void write_records(const std::string& path, const std::vector<InteractionRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  for (const auto& r : records) {
    json obj = {{"user_id", r.user_id},
                {"item_id", r.item_id},
                {"rating", r.rating},
                {"ts", r.timestamp},
                {"history", r.history}};
    out << obj.dump() << '\n';
  }
}

void write_profiles(const std::string& path, const std::vector<ItemProfile>& profiles) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  for (const auto& p : profiles) {
    json obj = {{"item_id", p.item_id}, {"name", p.name}};
    if (p.augmented_profile) obj["profile"] = *p.augmented_profile;
    out << obj.dump() << '\n';
  }
}

DatasetSplit split_user_temporal(const std::vector<InteractionRecord>& records, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ValidationError("split ratio must lie in (0,1)");

  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < records.size(); ++i) by_user[records[i].user_id].push_back(i);

  std::vector<char> to_train(records.size(), 0);
  std::size_t single_record_users = 0;
  for (auto& [user, idx] : by_user) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return records[a].timestamp < records[b].timestamp;
    });
    const std::size_t k = idx.size();
    if (k == 1) ++single_record_users;
    const auto n_train = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(k) - 1e-9));
    for (std::size_t j = 0; j < std::min(n_train, k); ++j) to_train[idx[j]] = 1;
  }
  if (single_record_users > 0)
    log::warn(std::to_string(single_record_users) +
              " user(s) have a single record; they appear in train only");

  DatasetSplit split;
  split.ratio = ratio;
  for (std::size_t i = 0; i < records.size(); ++i)
    (to_train[i] ? split.train : split.test).push_back(records[i]);

  if (split.test.empty() && !records.empty()) log::warn("user-temporal split produced an empty test set");
  if (!records.empty()) {
    const double achieved =
        static_cast<double>(split.train.size()) / static_cast<double>(records.size());
    if (std::abs(achieved - ratio) > 0.02)
      log::warn("global train fraction " + std::to_string(achieved) + " deviates from ratio " +
                std::to_string(ratio) + " by more than 2%");
  }
  return split;
}

int binarize_rating(double rating) {
  check_rating(rating);
  return rating >= 4.0 ? 1 : 0;
}

double scale_rating(double rating) {
  check_rating(rating);
  return (rating - 1.0) / 4.0;
}

double unscale_rating(double scaled) {
  if (!std::isfinite(scaled) || scaled < 0.0 || scaled > 1.0)
    throw ValidationError("scaled rating outside [0,1]");
  return 1.0 + 4.0 * scaled;
}

}  // namespace lrrec::data
