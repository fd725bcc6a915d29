#include "lrrec/rec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "lrrec/common/binary_io.hpp"
#include "lrrec/common/error.hpp"
#include "lrrec/common/log.hpp"

namespace lrrec::rec {

// --- ids ----------------------------------------------------------------------------

IdIndex IdIndex::from_ids(std::vector<std::string> users, std::vector<std::string> items) {
  IdIndex idx;
  std::sort(users.begin(), users.end());
  users.erase(std::unique(users.begin(), users.end()), users.end());
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  std::erase(items, std::string(data::kSentinelItem));
  idx.users_ = std::move(users);
  idx.items_ = std::move(items);
  for (std::size_t i = 0; i < idx.users_.size(); ++i) idx.user_rows_[idx.users_[i]] = i;
  for (std::size_t i = 0; i < idx.items_.size(); ++i) idx.item_rows_[idx.items_[i]] = i + 1;
  return idx;
}

IdIndex IdIndex::build(std::span<const data::InteractionRecord> records,
                       std::span<const data::ItemProfile> profiles) {
  std::vector<std::string> users, items;
  for (const auto& r : records) {
    users.push_back(r.user_id);
    items.push_back(r.item_id);
    for (const auto& h : r.history) items.push_back(h);
  }
  for (const auto& p : profiles) items.push_back(p.item_id);
  return from_ids(std::move(users), std::move(items));
}

std::size_t IdIndex::user_row(const std::string& id) const {
  const auto it = user_rows_.find(id);
  if (it == user_rows_.end()) throw ValidationError("unknown user '" + id + "' in the consumer table");
  return it->second;
}

std::size_t IdIndex::item_row(const std::string& id) const {
  if (id == data::kSentinelItem) return 0;
  const auto it = item_rows_.find(id);
  if (it == item_rows_.end()) throw ValidationError("unknown item '" + id + "' in the product table");
  return it->second;
}

// --- slots ----------------------------------------------------------------------------

SlotTexts slot_texts(const llm::ExplanationPair& pair, Variant variant) {
  const auto alt = [&](llm::Polarity p) {
    const auto it = pair.alternatives.find(p);
    return it == pair.alternatives.end() ? std::string{} : it->second;
  };
  switch (variant) {
    case Variant::aspect_only: return {alt(llm::Polarity::aspect), {}};
    case Variant::general_only: return {alt(llm::Polarity::general), {}};
    case Variant::summary_only: return {alt(llm::Polarity::summary), {}};
    default: break;
  }
  const auto needs = slot_needs(variant);
  return {needs.pos ? pair.positive_text : std::string{},
          needs.neg ? pair.negative_text : std::string{}};
}

SlotTable embed_slots(std::span<const llm::ExplanationPair> pairs, Variant variant,
                      const TextEmbedder& embedder) {
  SlotTable table;
  for (const auto& pair : pairs) {
    const SlotTexts texts = slot_texts(pair, variant);
    SlotEmbeddings e;
    if (!texts.pos.empty()) e.pos = embedder(texts.pos);
    if (!texts.neg.empty()) e.neg = embedder(texts.neg);
    table[pair.record_key] = e;
  }
  return table;
}

SlotTable stored_slots(std::span<const llm::ExplanationPair> pairs) {
  SlotTable table;
  for (const auto& pair : pairs)
    table[pair.record_key] = {pair.positive_embedding, pair.negative_embedding};
  return table;
}

std::vector<RecordInput> build_inputs(std::span<const data::InteractionRecord> records,
                                      const IdIndex& index, const SlotTable& slots, Variant variant,
                                      const InputOptions& options) {
  const auto needs = slot_needs(variant);
  const bool zero_fill = options.zero_fill_missing && variant != Variant::full;
  std::vector<std::string> missing;
  std::vector<RecordInput> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    RecordInput in;
    in.key = r.key();
    in.user = index.user_row(r.user_id);
    in.item = index.item_row(r.item_id);
    if (in.item == 0) throw ValidationError("record " + in.key + " recommends the sentinel item");
    for (const auto& h : r.history) in.history.push_back(index.item_row(h));
    in.target = options.task == Task::classification
                    ? static_cast<double>(data::binarize_rating(r.rating))
                    : (options.linear_output ? r.rating : data::scale_rating(r.rating));

    const auto it = slots.find(in.key);
    const SlotEmbeddings* e = it == slots.end() ? nullptr : &it->second;
    const auto fill = [&](bool needed, const std::optional<Embedding>& src,
                          std::optional<Embedding>& dst) {
      if (!needed) return true;
      if (e && src) {
        dst = src;
        return true;
      }
      if (zero_fill) {
        dst = Embedding{};
        return true;
      }
      return false;
    };
    const bool ok = fill(needs.pos, e ? e->pos : std::nullopt, in.pos) &
                    fill(needs.neg, e ? e->neg : std::nullopt, in.neg);
    if (!ok) missing.push_back(in.key);
    out.push_back(std::move(in));
  }
  if (!missing.empty()) {
    std::string msg = std::to_string(missing.size()) + " records lack explanation embeddings:";
    for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 5); ++i) msg += " " + missing[i];
    if (missing.size() > 5) msg += " ...";
    throw ValidationError(msg);
  }
  return out;
}

// --- training ----------------------------------------------------------------------------

namespace {

struct Tensor {
  double* data;
  Eigen::Index size;
};

std::vector<Tensor> tensors(RecParams& p) {
  std::vector<Tensor> t;
  p.visit([&](const char*, double* d, Eigen::Index n) { t.push_back({d, n}); });
  return t;
}

// The first two visited tensors are the embedding tables.
constexpr std::size_t kTableCount = 2;

std::vector<std::size_t> unique_rows(std::vector<std::size_t> rows) {
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

void apply_rows(Matrix& table, Matrix& grad, const std::vector<std::size_t>& rows, double lr) {
  for (std::size_t r : rows) {
    const auto i = static_cast<Eigen::Index>(r);
    table.row(i) -= lr * grad.row(i);
    grad.row(i).setZero();
  }
}

// Reusable gradient buffer: dense parts are cleared every step, table rows
// only where they were touched.
class Stepper {
 public:
  explicit Stepper(const RecParams& p) : grad_(RecParams::zeros(p.shape)) {}

  double step(std::span<const RecordInput> batch, RecParams& p, double lr) {
    if (batch.empty()) return 0.0;
    const double scale = 1.0 / static_cast<double>(batch.size());
    TouchedRows touched;
    double total = 0.0;
    for (const auto& rec : batch) total += backward(rec, p, scale, grad_, touched);
    const double mean = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean)) return mean;

    auto pt = tensors(p);
    auto gt = tensors(grad_);
    for (std::size_t k = kTableCount; k < pt.size(); ++k) {
      for (Eigen::Index i = 0; i < pt[k].size; ++i) {
        pt[k].data[i] -= lr * gt[k].data[i];
        gt[k].data[i] = 0.0;
      }
    }
    apply_rows(p.user_table, grad_.user_table, unique_rows(std::move(touched.users)), lr);
    apply_rows(p.item_table, grad_.item_table, unique_rows(std::move(touched.items)), lr);
    return mean;
  }

 private:
  RecParams grad_;
};

}  // namespace

double mean_loss(std::span<const RecordInput> inputs, const RecParams& params) {
  if (inputs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& rec : inputs) total += loss(rec.target, forward(rec, params).yhat, params.shape.task);
  return total / static_cast<double>(inputs.size());
}

double sgd_step(std::span<const RecordInput> batch, RecParams& params, double lr) {
  Stepper stepper(params);
  return stepper.step(batch, params, lr);
}

TrainResult train(std::span<const RecordInput> inputs, const ModelShape& shape,
                  const TrainConfig& config) {
  return train(inputs, RecParams::init(shape, config.seed, config.init_scale, config.init), config);
}

TrainResult train(std::span<const RecordInput> inputs, RecParams initial, const TrainConfig& config) {
  if (config.batch == 0) throw ValidationError("batch size must be positive");
  if (!(config.lr > 0.0)) throw ValidationError("learning rate must be positive");
  if (inputs.empty() && config.epochs > 0) throw ValidationError("no training records");

  TrainResult result{std::move(initial), {}};
  RecParams& p = result.params;
  result.loss_trace.push_back(mean_loss(inputs, p));
  if (config.epochs == 0) return result;

  Stepper stepper(p);
  std::mt19937_64 rng(config.seed ^ 0x5deece66dULL);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<RecordInput> batch;
  batch.reserve(config.batch);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0, b = 0; start < order.size(); start += config.batch, ++b) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(inputs[order[i]]);
      double l = 0.0;
      try {
        l = stepper.step(batch, p, config.lr);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
      if (!std::isfinite(l))
        throw NumericError("non-finite batch loss at epoch " + std::to_string(epoch + 1) +
                           ", batch " + std::to_string(b + 1));
    }
    const double epoch_loss = mean_loss(inputs, p);
    result.loss_trace.push_back(epoch_loss);
    log::info("epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(epoch_loss));
  }
  return result;
}

// --- prediction ----------------------------------------------------------------------------

std::vector<Prediction> predict_batch(std::span<const RecordInput> inputs, const RecParams& params,
                                      std::size_t threads) {
  std::vector<Prediction> out(inputs.size());
  const auto run = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      Output o = forward(inputs[i], params);
      out[i] = {o.yhat, o.attention};
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, inputs.size()));
  if (threads == 1) {
    run(0, inputs.size());
    return out;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (inputs.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk, hi = std::min(inputs.size(), lo + chunk);
      pool.emplace_back([&, t, lo, hi] {
        try {
          run(lo, hi);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// --- checkpoint ----------------------------------------------------------------------------

namespace {
constexpr char kMagic[5] = "LRRC";
constexpr std::uint32_t kVersion = 1;

void write_ids(std::ostream& out, const std::vector<std::string>& ids) {
  bin::write_pod<std::uint64_t>(out, ids.size());
  for (const auto& s : ids) bin::write_string(out, s);
}

std::vector<std::string> read_ids(std::istream& in) {
  const auto n = bin::read_pod<std::uint64_t>(in);
  std::vector<std::string> ids;
  for (std::uint64_t i = 0; i < n; ++i) ids.push_back(bin::read_string(in));
  return ids;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write checkpoint " + path);
  const auto& s = ckpt.params.shape;
  bin::write_magic(out, kMagic, kVersion);
  bin::write_string(out, to_string(s.variant));
  bin::write_string(out, to_string(s.task));
  bin::write_pod<std::uint8_t>(out, s.linear_output ? 1 : 0);
  bin::write_pod<std::uint64_t>(out, s.n_users);
  bin::write_pod<std::uint64_t>(out, s.n_items);
  bin::write_pod<std::uint64_t>(out, s.context_dim);
  bin::write_pod(out, ckpt.config.lr);
  bin::write_pod<std::uint64_t>(out, ckpt.config.batch);
  bin::write_pod<std::uint64_t>(out, ckpt.config.epochs);
  bin::write_pod<std::uint64_t>(out, ckpt.config.seed);
  bin::write_pod(out, ckpt.config.init_scale);
  write_ids(out, ckpt.index.users());
  write_ids(out, ckpt.index.items());
  RecParams copy = ckpt.params;
  copy.visit([&](const char* name, double* d, Eigen::Index n) {
    bin::write_string(out, name);
    bin::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(n));
    out.write(reinterpret_cast<const char*>(d), static_cast<std::streamsize>(n * sizeof(double)));
  });
  if (!out) throw ValidationError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PrerequisiteError("cannot open checkpoint " + path);
  bin::read_magic(in, kMagic, kVersion);
  ModelShape s;
  s.variant = parse_variant(bin::read_string(in));
  s.task = parse_task(bin::read_string(in));
  s.linear_output = bin::read_pod<std::uint8_t>(in) != 0;
  s.n_users = bin::read_pod<std::uint64_t>(in);
  s.n_items = bin::read_pod<std::uint64_t>(in);
  s.context_dim = bin::read_pod<std::uint64_t>(in);
  Checkpoint ck;
  ck.config.lr = bin::read_pod<double>(in);
  ck.config.batch = bin::read_pod<std::uint64_t>(in);
  ck.config.epochs = bin::read_pod<std::uint64_t>(in);
  ck.config.seed = bin::read_pod<std::uint64_t>(in);
  ck.config.init_scale = bin::read_pod<double>(in);
  auto users = read_ids(in);
  auto items = read_ids(in);
  ck.index = IdIndex::from_ids(std::move(users), std::move(items));
  if (ck.index.n_users() != s.n_users || ck.index.n_items() != s.n_items)
    throw ValidationError("checkpoint id tables do not match its shape");
  ck.params = RecParams::zeros(s);
  ck.params.visit([&](const char* name, double* d, Eigen::Index n) {
    const std::string stored = bin::read_string(in);
    const auto count = bin::read_pod<std::uint64_t>(in);
    if (stored != name || count != static_cast<std::uint64_t>(n))
      throw ValidationError("checkpoint tensor '" + stored + "' does not match '" + name + "'");
    in.read(reinterpret_cast<char*>(d), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw ValidationError("truncated checkpoint " + path);
  });
  return ck;
}

}  // namespace lrrec::rec
