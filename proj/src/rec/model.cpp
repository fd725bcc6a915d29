#include "lrrec/rec/model.hpp"

#include <cmath>
#include <map>
#include <random>

#include "lrrec/common/error.hpp"

namespace lrrec::rec {
namespace {

const double kInvSqrtDim = 1.0 / std::sqrt(static_cast<double>(kDim));

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec8 sigmoid(const Vec8& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

template <class M>
void check_layer(const M& m, int layer) {
  if (!m.allFinite())
    throw NumericError("recommender layer " + std::to_string(layer) + " produced a non-finite value");
}

Vec8 to_vec(const Embedding& e) { return Eigen::Map<const Vec8>(e.data()); }

std::vector<std::pair<std::size_t, std::size_t>> head_layout(Variant v) {
  if (v == Variant::ncf_head) return {{32, 48}, {16, 32}, {8, 16}, {1, 8}};
  return {{64, 48}, {8, 64}, {1, 8}};
}

bool sigmoid_output(const ModelShape& s) {
  return !(s.task == Task::regression && s.linear_output);
}

}  // namespace

// --- enums ------------------------------------------------------------------------

namespace {
const std::map<std::string, Variant>& variant_names() {
  static const std::map<std::string, Variant> kNames = {
      {"full", Variant::full},
      {"pos_only", Variant::pos_only},
      {"neg_only", Variant::neg_only},
      {"aspect_only", Variant::aspect_only},
      {"general_only", Variant::general_only},
      {"summary_only", Variant::summary_only},
      {"no_autoencoder", Variant::no_autoencoder},
      {"no_profile_augmentation", Variant::no_profile_augmentation},
      {"free_params_substitute", Variant::free_params_substitute},
      {"no_explanations", Variant::no_explanations},
      {"ncf_head", Variant::ncf_head},
  };
  return kNames;
}
}  // namespace

Variant parse_variant(const std::string& s) {
  const auto it = variant_names().find(s);
  if (it == variant_names().end()) throw ValidationError("unknown variant '" + s + "'");
  return it->second;
}

std::string to_string(Variant v) {
  for (const auto& [name, value] : variant_names())
    if (value == v) return name;
  return "?";
}

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "regression") return Task::regression;
  throw ValidationError("unknown task '" + s + "'");
}

std::string to_string(Task t) {
  return t == Task::classification ? "classification" : "regression";
}

SlotNeeds slot_needs(Variant v) {
  switch (v) {
    case Variant::pos_only:
    case Variant::aspect_only:
    case Variant::general_only:
    case Variant::summary_only:
      return {true, false};
    case Variant::neg_only:
      return {false, true};
    case Variant::free_params_substitute:
    case Variant::no_explanations:
      return {false, false};
    default:
      return {true, true};
  }
}

// --- params -------------------------------------------------------------------------

RecParams RecParams::zeros(const ModelShape& shape) {
  if (shape.n_users < 1 || shape.n_items < 1) throw ValidationError("model needs users and items");
  RecParams p;
  p.shape = shape;
  p.user_table = Matrix::Zero(static_cast<Eigen::Index>(shape.n_users), kDim);
  p.item_table = Matrix::Zero(static_cast<Eigen::Index>(shape.n_items + 1), kDim);
  p.context.w = Matrix::Zero(kDim, static_cast<Eigen::Index>(shape.context_dim));
  p.context.b = Vector::Zero(kDim);
  for (auto [out, in] : head_layout(shape.variant))
    p.head.push_back({Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                      Vector::Zero(static_cast<Eigen::Index>(out))});
  return p;
}

RecParams RecParams::init(const ModelShape& shape, std::uint64_t seed, double scale, Init scheme) {
  RecParams p = zeros(shape);
  std::mt19937_64 rng(seed);
  const auto fill = [&](double* d, Eigen::Index n, double limit) {
    std::uniform_real_distribution<double> unif(-limit, limit);
    for (Eigen::Index i = 0; i < n; ++i) d[i] = unif(rng);
  };
  const auto weight = [&](double* d, Eigen::Index n, Eigen::Index fan_in, Eigen::Index fan_out) {
    if (scheme == Init::uniform || fan_in + fan_out == 0)
      fill(d, n, scale);
    else
      fill(d, n, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  };
  p.visit([&](const char* name, double* d, Eigen::Index n) {
    const std::string s = name;
    if (s == "user_table" || s == "item_table" || s == "free_pos" || s == "free_neg") {
      fill(d, n, scale);
      return;
    }
    if (s == "context.w") {
      weight(d, n, p.context.w.cols(), p.context.w.rows());
      return;
    }
    if (s.rfind("head.", 0) == 0) {
      if (s.back() == 'b') return;
      const auto& w = p.head[std::stoul(s.substr(5))].w;
      weight(d, n, w.cols(), w.rows());
      return;
    }
    if (s.find(".b") != std::string::npos) return;  // biases stay zero
    weight(d, n, kDim, kDim);
  });
  return p;
}

std::size_t RecParams::parameter_count() const {
  std::size_t n = 0;
  const_cast<RecParams*>(this)->visit(
      [&](const char*, double*, Eigen::Index k) { n += static_cast<std::size_t>(k); });
  return n;
}

bool RecParams::all_finite() const {
  bool ok = true;
  const_cast<RecParams*>(this)->visit([&](const char*, double* d, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n && ok; ++i) ok = std::isfinite(d[i]);
  });
  return ok;
}

// --- attention ------------------------------------------------------------------------

AttentionOutput self_attention(const SeqMatrix& s, const AttentionParams& p) {
  if (s.rows() < 1) throw ValidationError("self-attention needs at least one row");
  if (!s.allFinite()) throw NumericError("self-attention input is not finite");
  AttentionOutput out;
  out.q = s * p.query;
  out.k = s * p.key;
  out.v = s * p.value;
  Matrix scores = out.q * out.k.transpose() * kInvSqrtDim;
  out.weights.resize(scores.rows(), scores.cols());
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    auto e = (scores.row(r).array() - mx).exp();
    out.weights.row(r) = e / e.sum();
  }
  out.z = out.weights * out.v;
  return out;
}

SeqMatrix self_attention_backward(const SeqMatrix& s, const AttentionParams& p,
                                  const AttentionOutput& f, const SeqMatrix& dz,
                                  AttentionParams& grad) {
  const Matrix d_weights = dz * f.v.transpose();
  const SeqMatrix dv = f.weights.transpose() * dz;
  Matrix d_scores = f.weights.array() * d_weights.array();
  const Vector row_dot = d_scores.rowwise().sum();
  d_scores = f.weights.array() * (d_weights.colwise() - row_dot).array();
  const SeqMatrix dq = d_scores * f.k * kInvSqrtDim;
  const SeqMatrix dk = d_scores.transpose() * f.q * kInvSqrtDim;
  grad.query.noalias() += s.transpose() * dq;
  grad.key.noalias() += s.transpose() * dk;
  grad.value.noalias() += s.transpose() * dv;
  return dq * p.query.transpose() + dk * p.key.transpose() + dv * p.value.transpose();
}

// --- GRU -------------------------------------------------------------------------------

Vec8 gru_encode(const SeqMatrix& z, const GruParams& p, GruTrace* trace) {
  if (z.rows() < 1) throw ValidationError("GRU needs at least one step");
  Vec8 h = z.row(0).transpose();
  if (trace) {
    *trace = GruTrace{};
    trace->h.push_back(h);
  }
  for (Eigen::Index t = 1; t < z.rows(); ++t) {
    const Vec8 x = z.row(t).transpose();
    const Vec8 r = sigmoid(Vec8(p.w_reset * x + p.u_reset * h + p.b_reset));
    const Vec8 u = sigmoid(Vec8(p.w_update * x + p.u_update * h + p.b_update));
    const Vec8 c =
        (p.w_cand * x + p.u_cand * r.cwiseProduct(h) + p.b_cand).array().tanh().matrix();
    h = u.cwiseProduct(h) + (Vec8::Ones() - u).cwiseProduct(c);
    if (trace) {
      trace->h.push_back(h);
      trace->reset.push_back(r);
      trace->update.push_back(u);
      trace->cand.push_back(c);
    }
  }
  return h;
}

SeqMatrix gru_backward(const SeqMatrix& z, const GruParams& p, const GruTrace& tr,
                       const Vec8& dh_last, GruParams& g) {
  SeqMatrix dz = SeqMatrix::Zero(z.rows(), kDim);
  Vec8 dh = dh_last;
  for (Eigen::Index t = z.rows() - 1; t >= 1; --t) {
    const auto i = static_cast<std::size_t>(t - 1);
    const Vec8 x = z.row(t).transpose();
    const Vec8& hp = tr.h[i];
    const Vec8& r = tr.reset[i];
    const Vec8& u = tr.update[i];
    const Vec8& c = tr.cand[i];

    const Vec8 du = dh.cwiseProduct(hp - c);
    Vec8 dhp = dh.cwiseProduct(u);
    const Vec8 dc = dh.cwiseProduct(Vec8::Ones() - u);

    const Vec8 da_c = dc.cwiseProduct(Vec8::Ones() - c.cwiseProduct(c));
    const Vec8 rh = r.cwiseProduct(hp);
    g.w_cand.noalias() += da_c * x.transpose();
    g.u_cand.noalias() += da_c * rh.transpose();
    g.b_cand += da_c;
    Vec8 dx = p.w_cand.transpose() * da_c;
    const Vec8 drh = p.u_cand.transpose() * da_c;
    const Vec8 dr = drh.cwiseProduct(hp);
    dhp += drh.cwiseProduct(r);

    const Vec8 da_u = du.cwiseProduct(u.cwiseProduct(Vec8::Ones() - u));
    g.w_update.noalias() += da_u * x.transpose();
    g.u_update.noalias() += da_u * hp.transpose();
    g.b_update += da_u;
    dx += p.w_update.transpose() * da_u;
    dhp += p.u_update.transpose() * da_u;

    const Vec8 da_r = dr.cwiseProduct(r.cwiseProduct(Vec8::Ones() - r));
    g.w_reset.noalias() += da_r * x.transpose();
    g.u_reset.noalias() += da_r * hp.transpose();
    g.b_reset += da_r;
    dx += p.w_reset.transpose() * da_r;
    dhp += p.u_reset.transpose() * da_r;

    dz.row(t) += dx.transpose();
    dh = dhp;
  }
  dz.row(0) += dh.transpose();
  return dz;
}

// --- record forward / backward ---------------------------------------------------------

SlotMatrix assemble_input(const RecordInput& rec, const RecParams& p, Cache* cache) {
  const auto& shape = p.shape;
  if (rec.user >= shape.n_users)
    throw ValidationError("user row " + std::to_string(rec.user) + " outside the consumer table");
  if (rec.item < 1 || rec.item > shape.n_items)
    throw ValidationError("item row " + std::to_string(rec.item) + " outside the product table");
  if (rec.history.empty()) throw ValidationError("record " + rec.key + " has an empty history");
  if (rec.context.size() != shape.context_dim)
    throw ValidationError("record " + rec.key + " has " + std::to_string(rec.context.size()) +
                          " context features, expected " + std::to_string(shape.context_dim));

  Cache local;
  Cache& c = cache ? *cache : local;
  SlotMatrix x = SlotMatrix::Zero();

  const auto needs = slot_needs(shape.variant);
  if (shape.variant == Variant::free_params_substitute) {
    x.row(kPos) = p.free_pos.transpose();
    x.row(kNeg) = p.free_neg.transpose();
  } else {
    if (needs.pos) {
      if (!rec.pos) throw ValidationError("record " + rec.key + " is missing its positive explanation embedding");
      x.row(kPos) = to_vec(*rec.pos).transpose();
    }
    if (needs.neg) {
      if (!rec.neg) throw ValidationError("record " + rec.key + " is missing its negative explanation embedding");
      x.row(kNeg) = to_vec(*rec.neg).transpose();
    }
  }
  x.row(kConsumer) = p.user_table.row(static_cast<Eigen::Index>(rec.user));
  x.row(kProduct) = p.item_table.row(static_cast<Eigen::Index>(rec.item));

  c.seq_input.resize(static_cast<Eigen::Index>(rec.history.size()), kDim);
  for (std::size_t t = 0; t < rec.history.size(); ++t) {
    if (rec.history[t] > shape.n_items)
      throw ValidationError("history row " + std::to_string(rec.history[t]) + " outside the product table");
    c.seq_input.row(static_cast<Eigen::Index>(t)) =
        p.item_table.row(static_cast<Eigen::Index>(rec.history[t]));
  }
  c.seq_attn = self_attention(c.seq_input, p.seq_attention);
  check_layer(c.seq_attn.z, 1);
  const Vec8 seq = gru_encode(c.seq_attn.z, p.gru, &c.gru);
  check_layer(seq, 2);
  x.row(kSeq) = seq.transpose();

  Vector ctx_in = Vector::Zero(static_cast<Eigen::Index>(shape.context_dim));
  for (std::size_t i = 0; i < rec.context.size(); ++i) ctx_in(static_cast<Eigen::Index>(i)) = rec.context[i];
  c.context_out = (p.context.w * ctx_in + p.context.b).array().tanh().matrix();
  check_layer(c.context_out, 3);
  x.row(kContext) = c.context_out.transpose();
  c.input = x;
  return x;
}

Output forward(const RecordInput& rec, const RecParams& p, Cache* cache) {
  Cache local;
  Cache& c = cache ? *cache : local;
  const SlotMatrix x = assemble_input(rec, p, &c);

  Output out;
  Vector flat(kSlots * kDim);
  if (p.shape.variant == Variant::ncf_head) {
    flat = Eigen::Map<const Vector>(x.data(), kSlots * kDim);
  } else {
    c.input_attn = self_attention(SeqMatrix(x), p.input_attention);
    check_layer(c.input_attn.z, 4);
    flat = Eigen::Map<const Vector>(c.input_attn.z.data(), kSlots * kDim);
    out.attention = SlotWeights(c.input_attn.weights);
  }

  c.activations.clear();
  c.activations.push_back(flat);
  for (std::size_t i = 0; i < p.head.size(); ++i) {
    Vector a = p.head[i].w * c.activations.back() + p.head[i].b;
    if (i + 1 < p.head.size()) a = a.cwiseMax(0.0);
    check_layer(a, 5 + static_cast<int>(i));
    c.activations.push_back(std::move(a));
  }
  c.logit = c.activations.back()(0);
  c.yhat = sigmoid_output(p.shape) ? sigmoid(c.logit) : c.logit;
  out.yhat = c.yhat;
  return out;
}

double loss(double target, double yhat, Task task) {
  if (task == Task::regression) return (yhat - target) * (yhat - target);
  const double y = std::clamp(yhat, kProbEpsilon, 1.0 - kProbEpsilon);
  return -(target * std::log(y) + (1.0 - target) * std::log(1.0 - y));
}

double loss_grad(double target, double yhat, Task task) {
  if (task == Task::regression) return 2.0 * (yhat - target);
  if (yhat < kProbEpsilon || yhat > 1.0 - kProbEpsilon) return 0.0;
  return -target / yhat + (1.0 - target) / (1.0 - yhat);
}

double backward(const RecordInput& rec, const RecParams& p, double scale, RecParams& g,
                TouchedRows& touched) {
  Cache c;
  forward(rec, p, &c);
  const Task task = p.shape.task;
  const double l = loss(rec.target, c.yhat, task);

  double dlogit = 0.0;
  if (sigmoid_output(p.shape)) {
    // Sigmoid and BCE combine to yhat - y away from the clamp.
    if (task == Task::classification)
      dlogit = (c.yhat < kProbEpsilon || c.yhat > 1.0 - kProbEpsilon) ? 0.0 : c.yhat - rec.target;
    else
      dlogit = loss_grad(rec.target, c.yhat, task) * c.yhat * (1.0 - c.yhat);
  } else {
    dlogit = loss_grad(rec.target, c.yhat, task);
  }
  dlogit *= scale;

  Vector d = Vector::Constant(1, dlogit);
  for (std::size_t i = p.head.size(); i-- > 0;) {
    if (i + 1 < p.head.size()) d = d.array() * (c.activations[i + 1].array() > 0.0).cast<double>();
    g.head[i].w.noalias() += d * c.activations[i].transpose();
    g.head[i].b += d;
    d = p.head[i].w.transpose() * d;
  }

  SlotMatrix dx;
  const SlotMatrix d_flat = Eigen::Map<const SlotMatrix>(d.data());
  if (p.shape.variant == Variant::ncf_head) {
    dx = d_flat;
  } else {
    dx = self_attention_backward(SeqMatrix(c.input), p.input_attention, c.input_attn,
                                 SeqMatrix(d_flat), g.input_attention);
  }

  if (p.shape.variant == Variant::free_params_substitute) {
    g.free_pos += dx.row(kPos).transpose();
    g.free_neg += dx.row(kNeg).transpose();
  }
  g.user_table.row(static_cast<Eigen::Index>(rec.user)) += dx.row(kConsumer);
  touched.users.push_back(rec.user);
  g.item_table.row(static_cast<Eigen::Index>(rec.item)) += dx.row(kProduct);
  touched.items.push_back(rec.item);

  const SeqMatrix dz = gru_backward(c.seq_attn.z, p.gru, c.gru, dx.row(kSeq).transpose(), g.gru);
  const SeqMatrix ds =
      self_attention_backward(c.seq_input, p.seq_attention, c.seq_attn, dz, g.seq_attention);
  for (std::size_t t = 0; t < rec.history.size(); ++t) {
    g.item_table.row(static_cast<Eigen::Index>(rec.history[t])) += ds.row(static_cast<Eigen::Index>(t));
    touched.items.push_back(rec.history[t]);
  }

  const Vec8 da = dx.row(kContext).transpose().cwiseProduct(
      Vec8::Ones() - c.context_out.cwiseProduct(c.context_out));
  if (p.shape.context_dim > 0) {
    Vector ctx_in(static_cast<Eigen::Index>(p.shape.context_dim));
    for (std::size_t i = 0; i < rec.context.size(); ++i) ctx_in(static_cast<Eigen::Index>(i)) = rec.context[i];
    g.context.w.noalias() += da * ctx_in.transpose();
  }
  g.context.b += da;
  return l;
}

}  // namespace lrrec::rec
