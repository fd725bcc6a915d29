#include "lrrec/ae/autoencoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "lrrec/common/binary_io.hpp"
#include "lrrec/common/error.hpp"
#include "lrrec/common/hash.hpp"
#include "lrrec/common/log.hpp"

namespace lrrec::ae {
namespace {

constexpr char kMagic[5] = "LRAE";
constexpr std::uint32_t kVersion = 1;

void check_finite(const Matrix& m, int layer) {
  if (!m.allFinite())
    throw NumericError("autoencoder layer " + std::to_string(layer) + " produced a non-finite value");
}

// Row-wise log-sum-exp.
Vector log_sum_exp(const Matrix& logits) {
  const Vector mx = logits.rowwise().maxCoeff();
  Vector out(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r)
    out(r) = mx(r) + std::log((logits.row(r).array() - mx(r)).exp().sum());
  return out;
}

void add_scaled(Params& dst, Params& src, double scale) {
  std::vector<double*> dst_ptrs;
  dst.visit([&](const char*, double* p, Eigen::Index) { dst_ptrs.push_back(p); });
  std::size_t k = 0;
  src.visit([&](const char*, double* p, Eigen::Index n) {
    double* d = dst_ptrs[k++];
    for (Eigen::Index i = 0; i < n; ++i) d[i] += scale * p[i];
  });
}

double grad_norm(Params& g) {
  double sq = 0.0;
  g.visit([&](const char*, double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) sq += p[i] * p[i];
  });
  return std::sqrt(sq);
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) && c < 128) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// --- vocab ----------------------------------------------------------------------

Vocab::Vocab() : words_{"<pad>", "<unk>"}, ids_{{"<pad>", kPad}, {"<unk>", kUnk}} {}

Vocab Vocab::build(std::span<const std::string> corpus) {
  if (corpus.empty()) throw ValidationError("cannot build a vocabulary from an empty corpus");
  Vocab v;
  for (const auto& text : corpus)
    for (auto& w : tokenize(text))
      if (v.ids_.emplace(w, static_cast<int>(v.words_.size())).second) v.words_.push_back(w);
  return v;
}

Vocab Vocab::from_words(std::vector<std::string> words) {
  if (words.size() < 2 || words[0] != "<pad>" || words[1] != "<unk>")
    throw ValidationError("vocabulary must start with <pad>, <unk>");
  Vocab v;
  v.words_ = std::move(words);
  v.ids_.clear();
  for (std::size_t i = 0; i < v.words_.size(); ++i)
    if (!v.ids_.emplace(v.words_[i], static_cast<int>(i)).second)
      throw ValidationError("duplicate vocabulary word '" + v.words_[i] + "'");
  return v;
}

int Vocab::id(const std::string& word) const {
  const auto it = ids_.find(word);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

TokenSequence tokenize_pad(const std::string& text, const Vocab& vocab, std::size_t maxlen) {
  TokenSequence seq{std::vector<int>(maxlen, Vocab::kPad)};
  const auto words = tokenize(text);
  if (words.empty()) log::warn("empty explanation text encodes as all padding");
  for (std::size_t i = 0; i < std::min(maxlen, words.size()); ++i) seq.ids[i] = vocab.id(words[i]);
  return seq;
}

// --- params -----------------------------------------------------------------------

Params Params::zeros(const Shape& s) {
  if (s.vocab < 2 || s.maxlen < 1 || s.word_dim < 1 || s.hidden < 1)
    throw ValidationError("invalid autoencoder shape");
  const auto in = static_cast<Eigen::Index>(s.word_dim * s.maxlen);
  const auto h = static_cast<Eigen::Index>(s.hidden);
  const auto code = static_cast<Eigen::Index>(kEmbeddingDim);
  Params p;
  p.shape = s;
  p.word_embedding = Matrix::Zero(static_cast<Eigen::Index>(s.vocab), static_cast<Eigen::Index>(s.word_dim));
  p.enc_w = Matrix::Zero(h, in);
  p.enc_b = Vector::Zero(h);
  p.code_w = Matrix::Zero(code, h);
  p.code_b = Vector::Zero(code);
  p.dec_w = Matrix::Zero(h, code);
  p.dec_b = Vector::Zero(h);
  p.out_w = Matrix::Zero(in, h);
  p.out_b = Vector::Zero(in);
  p.vocab_bias = Vector::Zero(static_cast<Eigen::Index>(s.vocab));
  p.output_embedding = Matrix::Zero(s.tied_output ? 0 : static_cast<Eigen::Index>(s.vocab),
                                    static_cast<Eigen::Index>(s.word_dim));
  return p;
}

Params Params::init(const Shape& shape, std::uint64_t seed, Init scheme, double scale) {
  Params p = zeros(shape);
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& m, double bound) {
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
  };
  fill(p.word_embedding, scheme == Init::glorot ? 1.0 : scale);
  for (Matrix* m : {&p.enc_w, &p.code_w, &p.dec_w, &p.out_w})
    fill(*m, scheme == Init::glorot ? std::sqrt(6.0 / static_cast<double>(m->rows() + m->cols()))
                                    : scale);
  p.word_embedding.row(Vocab::kPad).setZero();
  fill(p.output_embedding, scheme == Init::glorot ? 1.0 : scale);
  return p;
}

std::size_t Params::weight_count() const {
  return static_cast<std::size_t>(enc_w.size() + code_w.size() + dec_w.size() + out_w.size());
}

std::size_t Params::parameter_count() const {
  std::size_t n = 0;
  const_cast<Params*>(this)->visit([&](const char*, double*, Eigen::Index k) {
    n += static_cast<std::size_t>(k);
  });
  return n;
}

bool Params::all_finite() const {
  bool ok = true;
  const_cast<Params*>(this)->visit([&](const char*, double* p, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) ok = ok && std::isfinite(p[i]);
  });
  return ok;
}

// --- forward / loss / backward ------------------------------------------------------

Forward ae_forward(std::span<const TokenSequence> batch, const Params& p) {
  const auto& s = p.shape;
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(s.word_dim);
  Forward f;
  f.input.resize(B, static_cast<Eigen::Index>(s.word_dim * s.maxlen));
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& ids = batch[static_cast<std::size_t>(b)].ids;
    if (ids.size() != s.maxlen) throw ValidationError("token sequence length != maxlen");
    for (std::size_t l = 0; l < s.maxlen; ++l) {
      if (ids[l] < 0 || static_cast<std::size_t>(ids[l]) >= s.vocab)
        throw ValidationError("token id out of vocabulary range");
      f.input.block(b, static_cast<Eigen::Index>(l) * d, 1, d) = p.word_embedding.row(ids[l]);
    }
  }
  // Trailing all-pad positions feed exact zeros; skip those columns.
  f.active_cols = f.input.cols();
  if (p.word_embedding.row(Vocab::kPad).isZero(0.0)) {
    std::size_t used = 0;
    for (const auto& seq : batch)
      for (std::size_t l = seq.ids.size(); l > used; --l)
        if (seq.ids[l - 1] != Vocab::kPad) {
          used = l;
          break;
        }
    f.active_cols = static_cast<Eigen::Index>(used) * d;
  }
  const auto cols = f.active_cols;
  f.enc_hidden = ((f.input.leftCols(cols) * p.enc_w.leftCols(cols).transpose()).rowwise() +
                  p.enc_b.transpose())
                     .array()
                     .tanh();
  check_finite(f.enc_hidden, 1);
  f.code = (f.enc_hidden * p.code_w.transpose()).rowwise() + p.code_b.transpose();
  check_finite(f.code, 2);
  f.dec_hidden = ((f.code * p.dec_w.transpose()).rowwise() + p.dec_b.transpose()).array().tanh();
  check_finite(f.dec_hidden, 3);
  f.output = (f.dec_hidden * p.out_w.transpose()).rowwise() + p.out_b.transpose();
  check_finite(f.output, 4);
  f.logits.reserve(s.maxlen);
  for (std::size_t l = 0; l < s.maxlen; ++l) {
    Matrix lg = f.output.middleCols(static_cast<Eigen::Index>(l) * d, d) * p.output_table().transpose();
    lg.rowwise() += p.vocab_bias.transpose();
    check_finite(lg, 5);
    f.logits.push_back(std::move(lg));
  }
  return f;
}

double ae_loss(std::span<const Matrix> logits, std::span<const TokenSequence> batch, bool mask_pad) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t l = 0; l < logits.size(); ++l) {
    if (static_cast<std::size_t>(logits[l].rows()) != batch.size())
      throw ValidationError("logit rows do not match the batch");
    const Vector lse = log_sum_exp(logits[l]);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const int id = batch[b].ids.at(l);
      if (mask_pad && id == Vocab::kPad) continue;
      total += lse(static_cast<Eigen::Index>(b)) - logits[l](static_cast<Eigen::Index>(b), id);
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double ae_backward(std::span<const TokenSequence> batch, const Params& p, const Forward& f,
                   Params& g, Reduction reduction, bool mask_pad) {
  const auto& s = p.shape;
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(s.word_dim);
  g = Params::zeros(s);

  std::size_t count = 0;
  for (const auto& seq : batch)
    for (int id : seq.ids) count += (!mask_pad || id != Vocab::kPad) ? 1 : 0;
  double scale = 1.0;
  if (reduction == Reduction::mean && count) scale = 1.0 / static_cast<double>(count);
  if (reduction == Reduction::per_sequence && B > 0) scale = 1.0 / static_cast<double>(B);

  double total = 0.0;
  Matrix d_output(B, f.output.cols());
  for (std::size_t l = 0; l < s.maxlen; ++l) {
    const auto& lg = f.logits[l];
    const Vector lse = log_sum_exp(lg);
    Matrix dl = (lg.colwise() - lse).array().exp();  // softmax
    for (Eigen::Index b = 0; b < B; ++b) {
      const int id = batch[static_cast<std::size_t>(b)].ids[l];
      if (mask_pad && id == Vocab::kPad) {
        dl.row(b).setZero();
        continue;
      }
      total += lse(b) - lg(b, id);
      dl(b, id) -= 1.0;
    }
    dl *= scale;
    const auto out_l = f.output.middleCols(static_cast<Eigen::Index>(l) * d, d);
    d_output.middleCols(static_cast<Eigen::Index>(l) * d, d) = dl * p.output_table();
    (s.tied_output ? g.word_embedding : g.output_embedding).noalias() += dl.transpose() * out_l;
    g.vocab_bias += dl.colwise().sum().transpose();
  }

  g.out_w.noalias() = d_output.transpose() * f.dec_hidden;
  g.out_b = d_output.colwise().sum().transpose();
  const Matrix d_dec = (d_output * p.out_w).array() * (1.0 - f.dec_hidden.array().square());
  g.dec_w.noalias() = d_dec.transpose() * f.code;
  g.dec_b = d_dec.colwise().sum().transpose();
  const Matrix d_code = d_dec * p.dec_w;
  g.code_w.noalias() = d_code.transpose() * f.enc_hidden;
  g.code_b = d_code.colwise().sum().transpose();
  const Matrix d_enc = (d_code * p.code_w).array() * (1.0 - f.enc_hidden.array().square());
  const auto cols = f.active_cols;
  g.enc_w.leftCols(cols).noalias() = d_enc.transpose() * f.input.leftCols(cols);
  g.enc_b = d_enc.colwise().sum().transpose();
  const Matrix d_input = d_enc * p.enc_w.leftCols(cols);
  for (Eigen::Index b = 0; b < B; ++b)
    for (std::size_t l = 0; l < static_cast<std::size_t>(cols / d); ++l)
      g.word_embedding.row(batch[static_cast<std::size_t>(b)].ids[l]) +=
          d_input.block(b, static_cast<Eigen::Index>(l) * d, 1, d);
  // The pad row is a fixed zero vector; the pad class is scored by its bias.
  g.word_embedding.row(Vocab::kPad).setZero();

  return count ? total / static_cast<double>(count) : 0.0;
}

// --- training --------------------------------------------------------------------

namespace {

double corpus_loss(std::span<const TokenSequence> corpus, const Params& p, bool mask_pad) {
  const auto f = ae_forward(corpus, p);
  return ae_loss(f.logits, corpus, mask_pad);
}

std::string trace_text(const std::vector<double>& trace) {
  std::ostringstream os;
  for (std::size_t i = 0; i < trace.size(); ++i) os << (i ? "," : "") << trace[i];
  return os.str();
}

}  // namespace

TrainResult train_autoencoder(std::span<const TokenSequence> corpus, const Shape& shape,
                              const TrainConfig& cfg) {
  return train_autoencoder(corpus, Params::init(shape, cfg.seed, cfg.init, cfg.init_scale), cfg);
}

TrainResult train_autoencoder(std::span<const TokenSequence> corpus, Params initial,
                              const TrainConfig& cfg) {
  if (corpus.empty()) throw ValidationError("autoencoder corpus is empty");
  if (cfg.batch == 0) throw ValidationError("batch size must be >= 1");
  TrainResult out{std::move(initial), {}};
  out.loss_trace.push_back(corpus_loss(corpus, out.params, cfg.mask_pad));

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TokenSequence> batch;
  Params grad;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch); ++i)
        batch.push_back(corpus[order[i]]);
      const auto f = ae_forward(batch, out.params);
      ae_backward(batch, out.params, f, grad, cfg.reduction, cfg.mask_pad);
      double step = cfg.lr;
      if (cfg.max_step_norm > 0) {
        const double norm = cfg.lr * grad_norm(grad);
        if (norm > cfg.max_step_norm) step *= cfg.max_step_norm / norm;
      }
      add_scaled(out.params, grad, -step);
    }
    double loss = 0.0;
    try {
      loss = corpus_loss(corpus, out.params, cfg.mask_pad);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) +
                         "; loss trace " + trace_text(out.loss_trace));
    }
    if (!std::isfinite(loss))
      throw NumericError("autoencoder loss diverged at epoch " + std::to_string(epoch + 1) +
                         "; loss trace " + trace_text(out.loss_trace));
    out.loss_trace.push_back(loss);
  }
  return out;
}

double reconstruction_accuracy(std::span<const TokenSequence> corpus, const Params& p,
                               bool skip_pad) {
  const auto f = ae_forward(corpus, p);
  std::size_t hit = 0, total = 0;
  for (std::size_t l = 0; l < p.shape.maxlen; ++l) {
    for (std::size_t b = 0; b < corpus.size(); ++b) {
      const int id = corpus[b].ids[l];
      if (skip_pad && id == Vocab::kPad) continue;
      Eigen::Index best = 0;
      f.logits[l].row(static_cast<Eigen::Index>(b)).maxCoeff(&best);
      hit += best == id ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
}

// Fixed-order loops so an embedding never depends on which other texts share
// its batch (GEMM and GEMV round differently).
Embedding embed(const TokenSequence& tokens, const Params& p) {
  const auto& s = p.shape;
  if (tokens.ids.size() != s.maxlen) throw ValidationError("token sequence length != maxlen");
  const auto d = static_cast<Eigen::Index>(s.word_dim);
  std::vector<double> hidden(s.hidden);
  for (std::size_t h = 0; h < s.hidden; ++h) {
    double acc = p.enc_b(static_cast<Eigen::Index>(h));
    for (std::size_t l = 0; l < s.maxlen; ++l) {
      const int id = tokens.ids[l];
      if (id < 0 || static_cast<std::size_t>(id) >= s.vocab)
        throw ValidationError("token id out of vocabulary range");
      for (Eigen::Index k = 0; k < d; ++k)
        acc += p.enc_w(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(l) * d + k) *
               p.word_embedding(id, k);
    }
    hidden[h] = std::tanh(acc);
  }
  Embedding e{};
  for (std::size_t c = 0; c < kEmbeddingDim; ++c) {
    double acc = p.code_b(static_cast<Eigen::Index>(c));
    for (std::size_t h = 0; h < s.hidden; ++h)
      acc += p.code_w(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(h)) * hidden[h];
    e[c] = acc;
  }
  if (!all_finite(e)) throw NumericError("autoencoder layer 2 produced a non-finite value");
  return e;
}

// --- encoder -----------------------------------------------------------------------

Encoder::Encoder(Vocab vocab, Params params) : vocab_(std::move(vocab)), params_(std::move(params)) {
  if (vocab_.size() != params_.shape.vocab)
    throw ValidationError("vocabulary size does not match autoencoder parameters");
}

Embedding Encoder::embed(const std::string& text) const {
  return ae::embed(tokenize_pad(text, vocab_, params_.shape.maxlen), params_);
}

std::vector<Embedding> Encoder::embed_all(std::span<const std::string> texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

void Encoder::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path);
  bin::write_magic(out, kMagic, kVersion);
  const auto& s = params_.shape;
  for (std::size_t v : {s.vocab, s.maxlen, s.word_dim, s.hidden, std::size_t{s.tied_output}})
    bin::write_pod(out, static_cast<std::uint64_t>(v));
  for (const auto& w : vocab_.words()) bin::write_string(out, w);
  for (const Matrix* m : {&params_.word_embedding, &params_.enc_w, &params_.code_w, &params_.dec_w,
                          &params_.out_w, &params_.output_embedding})
    bin::write_matrix(out, *m);
  for (const Vector* v : {&params_.enc_b, &params_.code_b, &params_.dec_b, &params_.out_b,
                          &params_.vocab_bias})
    bin::write_matrix(out, Matrix(v->transpose()));
  if (!out) throw ValidationError("failed writing " + path);
}

Encoder Encoder::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PrerequisiteError("cannot read " + path);
  bin::read_magic(in, kMagic, kVersion);
  Shape s;
  s.vocab = bin::read_pod<std::uint64_t>(in);
  s.maxlen = bin::read_pod<std::uint64_t>(in);
  s.word_dim = bin::read_pod<std::uint64_t>(in);
  s.hidden = bin::read_pod<std::uint64_t>(in);
  s.tied_output = bin::read_pod<std::uint64_t>(in) != 0;
  std::vector<std::string> words(s.vocab);
  for (auto& w : words) w = bin::read_string(in);
  Params p = Params::zeros(s);
  for (Matrix* m : {&p.word_embedding, &p.enc_w, &p.code_w, &p.dec_w, &p.out_w, &p.output_embedding}) {
    Matrix loaded = bin::read_matrix(in);
    if (loaded.rows() != m->rows() || loaded.cols() != m->cols())
      throw ValidationError(path + ": tensor shape mismatch");
    *m = std::move(loaded);
  }
  for (Vector* v : {&p.enc_b, &p.code_b, &p.dec_b, &p.out_b, &p.vocab_bias}) {
    Matrix loaded = bin::read_matrix(in);
    if (loaded.size() != v->size()) throw ValidationError(path + ": tensor shape mismatch");
    *v = Eigen::Map<const Vector>(loaded.data(), loaded.size());
  }
  return Encoder(Vocab::from_words(std::move(words)), std::move(p));
}

// --- hashed bag of words ----------------------------------------------------------

HashedTextEmbedder::HashedTextEmbedder(std::uint64_t seed, std::size_t buckets)
    : projection_(static_cast<Eigen::Index>(kEmbeddingDim), static_cast<Eigen::Index>(buckets)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < projection_.size(); ++i) projection_.data()[i] = normal(rng);
}

Embedding HashedTextEmbedder::embed(const std::string& text) const {
  Vector counts = Vector::Zero(projection_.cols());
  const auto words = tokenize(text);
  for (const auto& w : words) counts(static_cast<Eigen::Index>(fnv1a64(w) % counts.size())) += 1.0;
  if (!words.empty()) counts /= std::sqrt(static_cast<double>(words.size()));
  const Vector z = (projection_ * counts).array().tanh();
  Embedding e{};
  for (std::size_t k = 0; k < kEmbeddingDim; ++k) e[k] = z(static_cast<Eigen::Index>(k));
  return e;
}

}  // namespace lrrec::ae
