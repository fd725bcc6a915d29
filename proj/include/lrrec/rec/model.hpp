#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lrrec/common/embedding.hpp"

namespace lrrec::rec {

inline constexpr int kDim = static_cast<int>(kEmbeddingDim);
inline constexpr int kSlots = 6;

using Mat8 = Eigen::Matrix<double, kDim, kDim, Eigen::RowMajor>;
using Vec8 = Eigen::Matrix<double, kDim, 1>;
using SeqMatrix = Eigen::Matrix<double, Eigen::Dynamic, kDim, Eigen::RowMajor>;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SlotMatrix = Eigen::Matrix<double, kSlots, kDim, Eigen::RowMajor>;
using SlotWeights = Eigen::Matrix<double, kSlots, kSlots, Eigen::RowMajor>;

// Input slot order.
enum Slot : int { kPos = 0, kNeg, kConsumer, kProduct, kSeq, kContext };

enum class Task { classification, regression };

enum class Variant {
  full,
  pos_only,
  neg_only,
  aspect_only,
  general_only,
  summary_only,
  no_autoencoder,
  no_profile_augmentation,
  free_params_substitute,
  no_explanations,
  ncf_head,
};

Variant parse_variant(const std::string& s);
std::string to_string(Variant v);
Task parse_task(const std::string& s);
std::string to_string(Task t);

// Which explanation slots a variant fills from data. Slots a variant does
// not read are zero; free_params_substitute reads neither and uses shared
// trainable vectors instead.
struct SlotNeeds {
  bool pos = false;
  bool neg = false;
};
SlotNeeds slot_needs(Variant v);

struct ModelShape {
  std::size_t n_users = 0;
  std::size_t n_items = 0;  // excluding the sentinel row
  std::size_t context_dim = 0;
  Variant variant = Variant::full;
  Task task = Task::classification;
  // Regression only: drop the output sigmoid and fit raw ratings.
  bool linear_output = false;
};

enum class Init { glorot, uniform };

struct AttentionParams {
  Mat8 query = Mat8::Zero();
  Mat8 key = Mat8::Zero();
  Mat8 value = Mat8::Zero();
};

struct GruParams {
  Mat8 w_reset = Mat8::Zero(), u_reset = Mat8::Zero();
  Mat8 w_update = Mat8::Zero(), u_update = Mat8::Zero();
  Mat8 w_cand = Mat8::Zero(), u_cand = Mat8::Zero();
  Vec8 b_reset = Vec8::Zero(), b_update = Vec8::Zero(), b_cand = Vec8::Zero();
};

struct Dense {
  Matrix w;  // out x in
  Vector b;
};

struct RecParams {
  ModelShape shape;
  Matrix user_table;  // n_users x 8
  Matrix item_table;  // (n_items + 1) x 8, row 0 = sentinel
  AttentionParams seq_attention;
  GruParams gru;
  AttentionParams input_attention;
  Dense context;            // 8 x context_dim, tanh
  std::vector<Dense> head;  // ReLU between layers, sigmoid (or linear) out
  Vec8 free_pos = Vec8::Zero();
  Vec8 free_neg = Vec8::Zero();

  static RecParams zeros(const ModelShape& shape);
  // Biases zero. Embedding tables and free vectors uniform(-scale, scale).
  // Weight matrices: Glorot-uniform, or uniform(-scale, scale) with
  // Init::uniform.
  static RecParams init(const ModelShape& shape, std::uint64_t seed, double scale = 0.05,
                        Init scheme = Init::glorot);

  std::size_t parameter_count() const;
  bool all_finite() const;

  // (name, data, size) for every tensor in a fixed order. Embedding tables
  // come first.
  template <class F>
  void visit(F&& f) {
    f("user_table", user_table.data(), user_table.size());
    f("item_table", item_table.data(), item_table.size());
    visit_attention("seq_attention", seq_attention, f);
    f("gru.w_reset", gru.w_reset.data(), gru.w_reset.size());
    f("gru.u_reset", gru.u_reset.data(), gru.u_reset.size());
    f("gru.b_reset", gru.b_reset.data(), gru.b_reset.size());
    f("gru.w_update", gru.w_update.data(), gru.w_update.size());
    f("gru.u_update", gru.u_update.data(), gru.u_update.size());
    f("gru.b_update", gru.b_update.data(), gru.b_update.size());
    f("gru.w_cand", gru.w_cand.data(), gru.w_cand.size());
    f("gru.u_cand", gru.u_cand.data(), gru.u_cand.size());
    f("gru.b_cand", gru.b_cand.data(), gru.b_cand.size());
    visit_attention("input_attention", input_attention, f);
    f("context.w", context.w.data(), context.w.size());
    f("context.b", context.b.data(), context.b.size());
    for (std::size_t i = 0; i < head.size(); ++i) {
      const std::string n = "head." + std::to_string(i);
      f((n + ".w").c_str(), head[i].w.data(), head[i].w.size());
      f((n + ".b").c_str(), head[i].b.data(), head[i].b.size());
    }
    f("free_pos", free_pos.data(), free_pos.size());
    f("free_neg", free_neg.data(), free_neg.size());
  }

 private:
  template <class F>
  static void visit_attention(const std::string& prefix, AttentionParams& a, F& f) {
    f((prefix + ".query").c_str(), a.query.data(), a.query.size());
    f((prefix + ".key").c_str(), a.key.data(), a.key.size());
    f((prefix + ".value").c_str(), a.value.data(), a.value.size());
  }
};

// --- building blocks -------------------------------------------------------------

struct AttentionOutput {
  SeqMatrix q, k, v;
  Matrix weights;  // n x n, row-stochastic
  SeqMatrix z;
};

// Single-head scaled dot-product self-attention over the rows of `s`.
AttentionOutput self_attention(const SeqMatrix& s, const AttentionParams& p);
// Accumulates parameter gradients into `grad`; returns d(loss)/d(s).
SeqMatrix self_attention_backward(const SeqMatrix& s, const AttentionParams& p,
                                  const AttentionOutput& fwd, const SeqMatrix& dz,
                                  AttentionParams& grad);

struct GruTrace {
  std::vector<Vec8> h;      // h[0] = z_1, h[t] for every step
  std::vector<Vec8> reset;  // entries for t >= 1 (index t-1)
  std::vector<Vec8> update;
  std::vector<Vec8> cand;
};

// h_1 = z_1, then reset / update / candidate recurrences; returns h_n.
Vec8 gru_encode(const SeqMatrix& z, const GruParams& p, GruTrace* trace = nullptr);
SeqMatrix gru_backward(const SeqMatrix& z, const GruParams& p, const GruTrace& trace,
                       const Vec8& dh_last, GruParams& grad);

// --- one record --------------------------------------------------------------------

struct RecordInput {
  std::size_t user = 0;                    // user_table row
  std::size_t item = 0;                    // item_table row (>= 1)
  std::vector<std::size_t> history;        // item_table rows, 0 = sentinel
  std::optional<Embedding> pos, neg;       // explanation embeddings
  std::vector<double> context;             // context_dim entries
  double target = 0.0;                     // label or scaled rating
  std::string key;                         // for error messages
};

struct Cache {
  SeqMatrix seq_input;
  AttentionOutput seq_attn;
  GruTrace gru;
  Vec8 context_out = Vec8::Zero();
  SlotMatrix input = SlotMatrix::Zero();
  AttentionOutput input_attn;  // empty for ncf_head
  std::vector<Vector> activations;  // head inputs then post-activation outputs
  double logit = 0.0;
  double yhat = 0.0;
};

// Builds the 6x8 input [pos, neg, consumer, product, sequence, context].
// Throws ValidationError (with the record key) when the variant needs an
// explanation embedding that is missing.
SlotMatrix assemble_input(const RecordInput& rec, const RecParams& p, Cache* cache = nullptr);

struct Output {
  double yhat = 0.0;
  std::optional<SlotWeights> attention;  // input attention, absent for ncf_head
};

// Throws NumericError naming the layer on a non-finite activation.
Output forward(const RecordInput& rec, const RecParams& p, Cache* cache = nullptr);

inline constexpr double kProbEpsilon = 1e-7;

// BCE with yhat clamped to [eps, 1 - eps], or squared error.
double loss(double target, double yhat, Task task);
// d loss / d yhat, zero where the clamp is active.
double loss_grad(double target, double yhat, Task task);

// Accumulates d(scale * loss)/d(params) into `grad`. Embedding-table rows
// touched are appended to the row lists. Returns the unscaled loss.
struct TouchedRows {
  std::vector<std::size_t> users;
  std::vector<std::size_t> items;
};
double backward(const RecordInput& rec, const RecParams& p, double scale, RecParams& grad,
                TouchedRows& touched);

}  // namespace lrrec::rec
