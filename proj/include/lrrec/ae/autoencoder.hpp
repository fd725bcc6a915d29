#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "lrrec/common/embedding.hpp"

namespace lrrec::ae {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr std::size_t kDefaultMaxLen = 50;
inline constexpr std::size_t kDefaultHidden = 64;

// Lowercase, split on anything that is not an ASCII letter or digit.
std::vector<std::string> tokenize(const std::string& text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab();
  // Ids in order of first occurrence. Throws ValidationError on an empty corpus.
  static Vocab build(std::span<const std::string> corpus);
  static Vocab from_words(std::vector<std::string> words);  // words[0..1] are reserved

  int id(const std::string& word) const;  // kUnk when unseen
  const std::string& word(int id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

struct TokenSequence {
  std::vector<int> ids;  // exactly maxlen entries
};

// First maxlen tokens, remainder padded. Empty text warns and yields all pads.
TokenSequence tokenize_pad(const std::string& text, const Vocab& vocab,
                           std::size_t maxlen = kDefaultMaxLen);

struct Shape {
  std::size_t vocab = 0;
  std::size_t maxlen = kDefaultMaxLen;
  std::size_t word_dim = 8;
  std::size_t hidden = kDefaultHidden;
  // Score output positions against the input word table, or against a
  // separate output table.
  bool tied_output = false;
};

// Encoder: word_dim*maxlen -> hidden (tanh) -> 8 (linear bottleneck).
// Decoder: 8 -> hidden (tanh) -> word_dim*maxlen (linear), then position l
// scores every word v as out_l . word_embedding[v] + out_bias[v].
// glorot: dense weights uniform(+-sqrt(6/(fan_in+fan_out))), word embedding
// uniform(+-1). uniform: every weight uniform(+-scale). Biases start at zero
// and the pad row of the word embedding is fixed at zero in both schemes.
enum class Init { glorot, uniform };

struct Params {
  Shape shape;
  Matrix word_embedding;  // vocab x word_dim
  Matrix enc_w;           // hidden x (word_dim*maxlen)
  Vector enc_b;
  Matrix code_w;          // 8 x hidden
  Vector code_b;
  Matrix dec_w;           // hidden x 8
  Vector dec_b;
  Matrix out_w;           // (word_dim*maxlen) x hidden
  Vector out_b;
  Vector vocab_bias;      // vocab
  Matrix output_embedding;  // vocab x word_dim, empty when tied

  const Matrix& output_table() const { return shape.tied_output ? word_embedding : output_embedding; }

  static Params zeros(const Shape& shape);
  static Params init(const Shape& shape, std::uint64_t seed, Init scheme = Init::glorot,
                     double scale = 0.05);

  // Dense layer weights only: 52,224 at maxlen 50, word_dim 8, hidden 64.
  std::size_t weight_count() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  // Visits every tensor as (name, flat view); same order in const and
  // mutable forms.
  template <class F>
  void visit(F&& f) {
    f("word_embedding", word_embedding.data(), word_embedding.size());
    f("enc_w", enc_w.data(), enc_w.size());
    f("enc_b", enc_b.data(), enc_b.size());
    f("code_w", code_w.data(), code_w.size());
    f("code_b", code_b.data(), code_b.size());
    f("dec_w", dec_w.data(), dec_w.size());
    f("dec_b", dec_b.data(), dec_b.size());
    f("out_w", out_w.data(), out_w.size());
    f("out_b", out_b.data(), out_b.size());
    f("vocab_bias", vocab_bias.data(), vocab_bias.size());
    f("output_embedding", output_embedding.data(), output_embedding.size());
  }
};

struct Forward {
  Matrix input;       // B x word_dim*maxlen
  Eigen::Index active_cols = 0;  // input columns that can be nonzero
  Matrix enc_hidden;  // B x hidden
  Matrix code;        // B x 8
  Matrix dec_hidden;  // B x hidden
  Matrix output;      // B x word_dim*maxlen
  std::vector<Matrix> logits;  // maxlen entries of B x vocab
};

// Throws NumericError naming the layer (1..5) that produced a non-finite value.
Forward ae_forward(std::span<const TokenSequence> batch, const Params& params);

// Mean over sequences and positions of -log softmax(logits)[true id].
// With mask_pad, pad positions are skipped (mean over the rest).
double ae_loss(std::span<const Matrix> logits, std::span<const TokenSequence> batch,
               bool mask_pad = false);

// sum: over sequences and positions. per_sequence: summed over positions,
// averaged over the sequences of the batch. mean: averaged over both.
enum class Reduction { sum, per_sequence, mean };

// Gradient of the batch loss under `reduction`. Returns the mean
// per-position loss.
double ae_backward(std::span<const TokenSequence> batch, const Params& params, const Forward& fwd,
                   Params& grad, Reduction reduction, bool mask_pad = false);

struct TrainConfig {
  double lr = 0.1;
  std::size_t batch = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  Init init = Init::glorot;
  double init_scale = 0.05;  // Init::uniform only
  Reduction reduction = Reduction::sum;
  bool mask_pad = false;
  // Caps the L2 norm of each SGD update lr * g; 0 disables. Summed losses
  // over long padded sequences produce occasional huge gradients.
  double max_step_norm = 1.0;
};

struct TrainResult {
  Params params;
  // Corpus mean per-position loss before training and after every epoch.
  std::vector<double> loss_trace;
};

// Plain mini-batch SGD. Throws NumericError (with the trace so far in the
// message) if the loss stops being finite.
TrainResult train_autoencoder(std::span<const TokenSequence> corpus, const Shape& shape,
                              const TrainConfig& cfg);
TrainResult train_autoencoder(std::span<const TokenSequence> corpus, Params initial,
                              const TrainConfig& cfg);

// Fraction of positions whose argmax logit equals the input id. With
// skip_pad, only non-pad positions count.
double reconstruction_accuracy(std::span<const TokenSequence> corpus, const Params& params,
                               bool skip_pad);

Embedding embed(const TokenSequence& tokens, const Params& params);

// Vocab plus parameters, ready to embed raw text.
class Encoder {
 public:
  Encoder(Vocab vocab, Params params);
  Embedding embed(const std::string& text) const;
  std::vector<Embedding> embed_all(std::span<const std::string> texts) const;

  const Vocab& vocab() const { return vocab_; }
  const Params& params() const { return params_; }

  void save(const std::string& path) const;
  static Encoder load(const std::string& path);

 private:
  Vocab vocab_;
  Params params_;
};

// Text representation without an AutoEncoder: hashed bag of words through a
// fixed seeded random projection, squashed with tanh.
class HashedTextEmbedder {
 public:
  explicit HashedTextEmbedder(std::uint64_t seed = 7, std::size_t buckets = 256);
  Embedding embed(const std::string& text) const;

 private:
  Matrix projection_;  // 8 x buckets
};

}  // namespace lrrec::ae
