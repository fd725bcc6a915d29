#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lrrec::data {

// Reserved item id used to left-pad short histories. It owns row 0 of the
// product embedding table.
inline constexpr const char* kSentinelItem = "<none>";
inline constexpr std::size_t kDefaultHistoryLen = 5;

struct InteractionRecord {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::int64_t timestamp = 0;
  std::vector<std::string> history;  // exactly H ids, most recent last

  // "user|item|ts", unique within a validated dataset.
  std::string key() const;
};

struct ItemProfile {
  std::string item_id;
  std::string name;
  std::optional<std::string> augmented_profile;

  // Text used when rendering prompts: augmented profile if present, else name.
  const std::string& prompt_text() const {
    return augmented_profile ? *augmented_profile : name;
  }
};

struct DatasetSplit {
  std::vector<InteractionRecord> train;
  std::vector<InteractionRecord> test;
  double ratio = 0.8;
};

// Field names of the line-delimited record and profile files.
struct FieldMapping {
  std::string user_id = "user_id";
  std::string item_id = "item_id";
  std::string rating = "rating";
  std::string timestamp = "ts";
  std::string history = "history";
  std::string name = "name";
  std::string profile = "profile";
};

struct Dataset {
  std::vector<InteractionRecord> records;
  std::vector<ItemProfile> profiles;
};

// Left-pads with the sentinel (or keeps the most recent `history_len`
// entries) so the result has exactly `history_len` ids.
std::vector<std::string> pad_history(std::vector<std::string> history, std::size_t history_len);

// Validates and normalizes one record in place. Throws ValidationError.
void validate_record(InteractionRecord& rec, std::size_t history_len);

// Reads one JSON object per line. Errors carry the 1-based line number.
std::vector<InteractionRecord> load_records(const std::string& path, const FieldMapping& fields = {},
                                            std::size_t history_len = kDefaultHistoryLen);
std::vector<ItemProfile> load_profiles(const std::string& path, const FieldMapping& fields = {});

Dataset load_dataset(const std::string& records_path, const std::string& profiles_path,
                     const FieldMapping& fields = {}, std::size_t history_len = kDefaultHistoryLen);

void write_records(const std::string& path, const std::vector<InteractionRecord>& records);
void write_profiles(const std::string& path, const std::vector<ItemProfile>& profiles);

// Each user's earliest ceil(ratio * k_u) records go to train, ties in
// timestamp broken by input order. Output keeps input order within each side.
DatasetSplit split_user_temporal(const std::vector<InteractionRecord>& records, double ratio);

int binarize_rating(double rating);
double scale_rating(double rating);
double unscale_rating(double scaled);

}  // namespace lrrec::data
