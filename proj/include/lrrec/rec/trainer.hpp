#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lrrec/data/dataset.hpp"
#include "lrrec/llm/explain.hpp"
#include "lrrec/rec/model.hpp"

namespace lrrec::rec {

// String ids to embedding-table rows. Users are numbered from 0, items from
// 1 with row 0 reserved for the history sentinel. Order is sorted by id so the
// mapping does not depend on record order.
class IdIndex {
 public:
  IdIndex() = default;
  static IdIndex build(std::span<const data::InteractionRecord> records,
                       std::span<const data::ItemProfile> profiles);
  static IdIndex from_ids(std::vector<std::string> users, std::vector<std::string> items);

  // Throw ValidationError naming the table.
  std::size_t user_row(const std::string& id) const;
  std::size_t item_row(const std::string& id) const;

  std::size_t n_users() const { return users_.size(); }
  std::size_t n_items() const { return items_.size(); }
  const std::vector<std::string>& users() const { return users_; }
  const std::vector<std::string>& items() const { return items_; }

 private:
  std::vector<std::string> users_;
  std::vector<std::string> items_;  // row i + 1
  std::unordered_map<std::string, std::size_t> user_rows_;
  std::unordered_map<std::string, std::size_t> item_rows_;
};

// Explanation embeddings for one record, already mapped to the two slots.
struct SlotEmbeddings {
  std::optional<Embedding> pos;
  std::optional<Embedding> neg;
};
using SlotTable = std::unordered_map<std::string, SlotEmbeddings>;  // by record key

// Which text feeds each slot for a variant: the alternative text goes to the
// positive slot for aspect/general/summary runs. Empty where the slot is not
// read or the text is missing.
struct SlotTexts {
  std::string pos;
  std::string neg;
};
SlotTexts slot_texts(const llm::ExplanationPair& pair, Variant variant);

using TextEmbedder = std::function<Embedding(const std::string&)>;
// Embeds the slot texts of every pair. Pairs without the needed text leave
// the slot empty.
SlotTable embed_slots(std::span<const llm::ExplanationPair> pairs, Variant variant,
                      const TextEmbedder& embedder);
// Uses the embeddings already stored on the pairs (full and its look-alikes).
SlotTable stored_slots(std::span<const llm::ExplanationPair> pairs);

struct InputOptions {
  Task task = Task::classification;
  bool linear_output = false;
  // Missing explanation embeddings become zeros instead of an error. Never
  // used for the full variant.
  bool zero_fill_missing = false;
};

// Throws ValidationError listing the first missing record keys when a
// needed embedding is absent and zero-fill is off.
std::vector<RecordInput> build_inputs(std::span<const data::InteractionRecord> records,
                                      const IdIndex& index, const SlotTable& slots, Variant variant,
                                      const InputOptions& options = {});

struct TrainConfig {
  double lr = 0.01;
  std::size_t batch = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  double init_scale = 0.05;
  Init init = Init::glorot;
};

struct TrainResult {
  RecParams params;
  // Mean loss over the training records before training, then after every
  // epoch.
  std::vector<double> loss_trace;
};

double mean_loss(std::span<const RecordInput> inputs, const RecParams& params);

// One plain SGD step on a batch. Embedding rows not touched by the batch
// are left exactly as they were.
double sgd_step(std::span<const RecordInput> batch, RecParams& params, double lr);

TrainResult train(std::span<const RecordInput> inputs, const ModelShape& shape,
                  const TrainConfig& config);
TrainResult train(std::span<const RecordInput> inputs, RecParams initial, const TrainConfig& config);

struct Prediction {
  double yhat = 0.0;
  std::optional<SlotWeights> attention;
};

// Pure: each prediction depends only on its own record. `threads` shards the
// work without changing results.
std::vector<Prediction> predict_batch(std::span<const RecordInput> inputs, const RecParams& params,
                                      std::size_t threads = 1);

struct Checkpoint {
  RecParams params;
  IdIndex index;
  TrainConfig config;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lrrec::rec
