#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <cstring>

#include <doctest.h>

#include "lrrec/common/error.hpp"
#include "lrrec/rec/model.hpp"
#include "lrrec/rec/trainer.hpp"
#include "test_util.hpp"

using namespace lrrec;
using namespace lrrec::rec;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Mat8 random_mat(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat8 m;
  for (int i = 0; i < kDim; ++i)
    for (int j = 0; j < kDim; ++j) m(i, j) = u(rng);
  return m;
}

Vec8 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec8 v;
  for (int i = 0; i < kDim; ++i) v(i) = u(rng);
  return v;
}

SeqMatrix random_seq(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1, 1);
  SeqMatrix s(n, kDim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < kDim; ++j) s(i, j) = u(rng);
  return s;
}

Embedding random_embedding(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Embedding e;
  for (auto& x : e) x = u(rng);
  return e;
}

// 4 records, history 3, 10 items, 3 users.
std::vector<RecordInput> tiny_inputs(std::mt19937_64& rng, std::size_t context_dim, Task task) {
  std::vector<RecordInput> out;
  const std::vector<std::vector<std::size_t>> hist = {{0, 2, 3}, {1, 4, 5}, {6, 7, 8}, {0, 0, 9}};
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    RecordInput r;
    r.user = i % 3;
    r.item = 1 + (i * 3) % 10;
    r.history = hist[i];
    r.pos = random_embedding(rng);
    r.neg = random_embedding(rng);
    for (std::size_t c = 0; c < context_dim; ++c) r.context.push_back(u(rng) - 0.5);
    r.target = task == Task::classification ? static_cast<double>(i % 2) : u(rng);
    r.key = "u" + std::to_string(i);
    out.push_back(r);
  }
  return out;
}

ModelShape tiny_shape(Variant v, std::size_t context_dim = 2, Task task = Task::classification) {
  ModelShape s;
  s.n_users = 3;
  s.n_items = 10;
  s.context_dim = context_dim;
  s.variant = v;
  s.task = task;
  return s;
}

double batch_loss(std::span<const RecordInput> recs, const RecParams& p) {
  return mean_loss(recs, p);
}

// Central differences on every scalar parameter.
void check_gradients(std::span<const RecordInput> recs, RecParams p) {
  RecParams grad = RecParams::zeros(p.shape);
  TouchedRows touched;
  const double scale = 1.0 / static_cast<double>(recs.size());
  for (const auto& r : recs) backward(r, p, scale, grad, touched);

  std::vector<std::pair<std::string, std::vector<double>>> analytic;
  grad.visit([&](const char* name, double* d, Eigen::Index n) {
    analytic.emplace_back(name, std::vector<double>(d, d + n));
  });

  std::size_t t = 0;
  double worst = 0.0;
  std::string worst_name;
  const double h = 1e-5;
  p.visit([&](const char* name, double* d, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double saved = d[i];
      d[i] = saved + h;
      const double up = batch_loss(recs, p);
      d[i] = saved - h;
      const double down = batch_loss(recs, p);
      d[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t].second[static_cast<std::size_t>(i)];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (rel > worst) {
        worst = rel;
        worst_name = name;
      }
    }
    ++t;
  });
  INFO("worst tensor " << worst_name);
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("self-attention matches a scalar recomputation") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 6;
    AttentionParams p{random_mat(rng, 1.0), random_mat(rng, 1.0), random_mat(rng, 1.0)};
    const SeqMatrix s = random_seq(rng, n);
    const AttentionOutput out = self_attention(s, p);

    std::vector<std::array<double, 8>> q(n), k(n), v(n);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 8; ++c) {
        q[i][c] = k[i][c] = v[i][c] = 0;
        for (int j = 0; j < 8; ++j) {
          q[i][c] += s(i, j) * p.query(j, c);
          k[i][c] += s(i, j) * p.key(j, c);
          v[i][c] += s(i, j) * p.value(j, c);
        }
      }
    for (int l = 0; l < n; ++l) {
      std::vector<double> score(n);
      double denom = 0;
      for (int j = 0; j < n; ++j) {
        double dot = 0;
        for (int c = 0; c < 8; ++c) dot += q[l][c] * k[j][c];
        score[j] = std::exp(dot / std::sqrt(8.0));
        denom += score[j];
      }
      double row = 0;
      for (int j = 0; j < n; ++j) {
        CHECK(std::abs(out.weights(l, j) - score[j] / denom) < 1e-10);
        row += out.weights(l, j);
      }
      CHECK(std::abs(row - 1.0) < 1e-9);
      for (int c = 0; c < 8; ++c) {
        double z = 0;
        for (int j = 0; j < n; ++j) z += score[j] / denom * v[j][c];
        CHECK(std::abs(out.z(l, c) - z) < 1e-10);
      }
    }
  }
}

TEST_CASE("self-attention special cases") {
  std::mt19937_64 rng(3);
  AttentionParams p{random_mat(rng, 1), random_mat(rng, 1), random_mat(rng, 1)};
  const SeqMatrix one = random_seq(rng, 1);
  const auto single = self_attention(one, p);
  CHECK(single.weights(0, 0) == 1.0);
  CHECK((single.z - one * p.value).norm() < 1e-15);

  p.query.setZero();
  p.key.setZero();
  const SeqMatrix s = random_seq(rng, 4);
  const auto flat = self_attention(s, p);
  const Eigen::RowVectorXd mean_v = (s * p.value).colwise().mean();
  for (int l = 0; l < 4; ++l) {
    for (int j = 0; j < 4; ++j) CHECK(flat.weights(l, j) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK((flat.z.row(l) - mean_v).norm() < 1e-14);
  }

  SeqMatrix bad = s;
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(self_attention(bad, p), NumericError);
  CHECK_THROWS_AS(self_attention(SeqMatrix(0, kDim), p), ValidationError);
}

TEST_CASE("GRU matches a step-by-step scalar evaluation") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    GruParams p{random_mat(rng, 1), random_mat(rng, 1), random_mat(rng, 1), random_mat(rng, 1),
                random_mat(rng, 1), random_mat(rng, 1), random_vec(rng, 1), random_vec(rng, 1),
                random_vec(rng, 1)};
    const int n = 4;
    const SeqMatrix z = random_seq(rng, n);
    const Vec8 got = gru_encode(z, p);

    double h[8];
    for (int i = 0; i < 8; ++i) h[i] = z(0, i);
    for (int t = 1; t < n; ++t) {
      double r[8], u[8], rh[8], next[8];
      for (int i = 0; i < 8; ++i) {
        double ar = p.b_reset(i), au = p.b_update(i);
        for (int j = 0; j < 8; ++j) {
          ar += p.w_reset(i, j) * z(t, j) + p.u_reset(i, j) * h[j];
          au += p.w_update(i, j) * z(t, j) + p.u_update(i, j) * h[j];
        }
        r[i] = sig(ar);
        u[i] = sig(au);
      }
      for (int j = 0; j < 8; ++j) rh[j] = r[j] * h[j];
      for (int i = 0; i < 8; ++i) {
        double ac = p.b_cand(i);
        for (int j = 0; j < 8; ++j) ac += p.w_cand(i, j) * z(t, j) + p.u_cand(i, j) * rh[j];
        next[i] = u[i] * h[i] + (1 - u[i]) * std::tanh(ac);
      }
      for (int i = 0; i < 8; ++i) h[i] = next[i];
    }
    for (int i = 0; i < 8; ++i) CHECK(std::abs(got(i) - h[i]) < 1e-10);
  }
}

TEST_CASE("GRU keeps the first state when n is 1 or the update gate saturates") {
  std::mt19937_64 rng(5);
  GruParams p{random_mat(rng, 3), random_mat(rng, 3), random_mat(rng, 3), random_mat(rng, 3),
              random_mat(rng, 3), random_mat(rng, 3), random_vec(rng, 3), random_vec(rng, 3),
              random_vec(rng, 3)};
  const SeqMatrix one = random_seq(rng, 1);
  CHECK(gru_encode(one, p) == Vec8(one.row(0).transpose()));

  p.b_update.setConstant(60.0);
  const SeqMatrix z = random_seq(rng, 5);
  CHECK((gru_encode(z, p) - Vec8(z.row(0).transpose())).norm() < 1e-12);
}

TEST_CASE("end-to-end gradients match central differences") {
  for (Variant v : {Variant::full, Variant::ncf_head, Variant::free_params_substitute,
                    Variant::pos_only, Variant::no_explanations}) {
    SUBCASE(to_string(v).c_str()) {
      std::mt19937_64 rng(31);
      const auto recs = tiny_inputs(rng, 2, Task::classification);
      check_gradients(recs, RecParams::init(tiny_shape(v), 9, 0.5));
    }
  }
  SUBCASE("regression with sigmoid") {
    std::mt19937_64 rng(32);
    const auto recs = tiny_inputs(rng, 0, Task::regression);
    check_gradients(recs, RecParams::init(tiny_shape(Variant::full, 0, Task::regression), 4, 0.5));
  }
  SUBCASE("regression with linear output") {
    std::mt19937_64 rng(33);
    const auto recs = tiny_inputs(rng, 1, Task::regression);
    auto shape = tiny_shape(Variant::full, 1, Task::regression);
    shape.linear_output = true;
    check_gradients(recs, RecParams::init(shape, 5, 0.5));
  }
}

TEST_CASE("zero weights predict one half and attention rows sum to one") {
  std::mt19937_64 rng(1);
  const auto recs = tiny_inputs(rng, 2, Task::classification);
  const RecParams zero = RecParams::zeros(tiny_shape(Variant::full));
  for (const auto& r : recs) CHECK(forward(r, zero).yhat == 0.5);

  const RecParams p = RecParams::init(tiny_shape(Variant::full), 2, 1.0);
  for (const auto& r : recs) {
    const auto out = forward(r, p);
    REQUIRE(out.attention);
    for (int i = 0; i < kSlots; ++i) CHECK(std::abs(out.attention->row(i).sum() - 1.0) < 1e-9);
  }
  const RecParams ncf = RecParams::init(tiny_shape(Variant::ncf_head), 2);
  CHECK_FALSE(forward(recs[0], ncf).attention.has_value());
}

TEST_CASE("input rows follow the slot order") {
  std::mt19937_64 rng(8);
  auto recs = tiny_inputs(rng, 0, Task::classification);
  const RecParams p = RecParams::init(tiny_shape(Variant::full, 0), 3);
  Cache c;
  const SlotMatrix x = assemble_input(recs[1], p, &c);
  for (int j = 0; j < kDim; ++j) {
    CHECK(x(kPos, j) == (*recs[1].pos)[static_cast<std::size_t>(j)]);
    CHECK(x(kNeg, j) == (*recs[1].neg)[static_cast<std::size_t>(j)]);
    CHECK(x(kConsumer, j) == p.user_table(static_cast<Eigen::Index>(recs[1].user), j));
    CHECK(x(kProduct, j) == p.item_table(static_cast<Eigen::Index>(recs[1].item), j));
    CHECK(x(kContext, j) == 0.0);  // tanh of a zero bias
  }
  CHECK((x.row(kSeq).transpose() - gru_encode(c.seq_attn.z, p.gru)).norm() == 0.0);

  const RecParams pos_only = RecParams::init(tiny_shape(Variant::pos_only, 0), 3);
  CHECK(assemble_input(recs[1], pos_only).row(kNeg).isZero());

  recs[2].pos.reset();
  CHECK_THROWS_WITH_AS(assemble_input(recs[2], p), doctest::Contains("u2"), ValidationError);
}

TEST_CASE("no_explanations equals full with zero explanation embeddings") {
  std::mt19937_64 rng(4);
  auto recs = tiny_inputs(rng, 2, Task::classification);
  const RecParams full = RecParams::init(tiny_shape(Variant::full), 6, 0.5);
  RecParams none = full;
  none.shape.variant = Variant::no_explanations;
  for (auto r : recs) {
    const double a = forward(r, none).yhat;
    r.pos = Embedding{};
    r.neg = Embedding{};
    CHECK(forward(r, full).yhat == a);
  }
}

TEST_CASE("loss values") {
  CHECK(loss(1, 1 - kProbEpsilon, Task::classification) < 1.1e-7);
  CHECK(loss(1, 0.5, Task::classification) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(loss(0.5, 0.75, Task::regression) == 0.0625);
  CHECK(std::isfinite(loss(1, 0.0, Task::classification)));
  CHECK(loss(1, 0.0, Task::classification) == doctest::Approx(-std::log(kProbEpsilon)));
  CHECK(loss_grad(1, 1.0, Task::classification) == 0.0);
}

TEST_CASE("an SGD step moves only the touched embedding rows, by -lr * grad") {
  std::mt19937_64 rng(14);
  auto recs = tiny_inputs(rng, 2, Task::classification);
  const RecParams before = RecParams::init(tiny_shape(Variant::full), 12, 0.5);
  const std::vector<RecordInput> batch = {recs[1]};

  RecParams grad = RecParams::zeros(before.shape);
  TouchedRows touched;
  backward(recs[1], before, 1.0, grad, touched);

  RecParams after = before;
  sgd_step(batch, after, 0.01);

  for (Eigen::Index u = 0; u < 3; ++u) {
    const bool touched_row = static_cast<std::size_t>(u) == recs[1].user;
    if (touched_row)
      CHECK((after.user_table.row(u) - (before.user_table.row(u) - 0.01 * grad.user_table.row(u))).norm() < 1e-15);
    else
      CHECK(after.user_table.row(u) == before.user_table.row(u));
  }
  std::set<std::size_t> items(recs[1].history.begin(), recs[1].history.end());
  items.insert(recs[1].item);
  for (Eigen::Index i = 0; i <= 10; ++i) {
    if (items.count(static_cast<std::size_t>(i)))
      CHECK((after.item_table.row(i) - (before.item_table.row(i) - 0.01 * grad.item_table.row(i))).norm() < 1e-15);
    else
      CHECK(after.item_table.row(i) == before.item_table.row(i));
  }
  CHECK(after.head[0].w != before.head[0].w);
  CHECK(after.free_pos == before.free_pos);
}

TEST_CASE("free parameters are shared and trained") {
  std::mt19937_64 rng(15);
  auto recs = tiny_inputs(rng, 0, Task::classification);
  for (auto& r : recs) r.pos.reset(), r.neg.reset();
  RecParams p = RecParams::init(tiny_shape(Variant::free_params_substitute, 0), 2, 0.5);
  const Vec8 before = p.free_pos;
  Cache c0, c1;
  assemble_input(recs[0], p, &c0);
  assemble_input(recs[3], p, &c1);
  CHECK(c0.input.row(kPos) == c1.input.row(kPos));
  sgd_step(recs, p, 0.1);
  CHECK(p.free_pos != before);
}

TEST_CASE("training is deterministic and epochs=0 returns the initial params") {
  std::mt19937_64 rng(16);
  const auto recs = tiny_inputs(rng, 2, Task::classification);
  const auto shape = tiny_shape(Variant::full);
  TrainConfig cfg;
  cfg.epochs = 0;
  const RecParams init = RecParams::init(shape, cfg.seed, cfg.init_scale);
  auto r0 = train(recs, shape, cfg);
  CHECK(r0.loss_trace.size() == 1);
  CHECK(r0.params.head[0].w == init.head[0].w);
  CHECK(r0.params.user_table == init.user_table);

  cfg.epochs = 5;
  cfg.batch = 3;
  cfg.lr = 0.1;
  auto a = train(recs, shape, cfg);
  auto b = train(recs, shape, cfg);
  CHECK(a.loss_trace == b.loss_trace);
  RecParams pa = a.params, pb = b.params;
  std::vector<double> va, vb;
  pa.visit([&](const char*, double* d, Eigen::Index n) { va.insert(va.end(), d, d + n); });
  pb.visit([&](const char*, double* d, Eigen::Index n) { vb.insert(vb.end(), d, d + n); });
  CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0);
}

TEST_CASE("training reduces the loss on a learnable toy problem") {
  std::mt19937_64 rng(17);
  auto recs = tiny_inputs(rng, 0, Task::classification);
  // Label readable from the positive slot.
  for (auto& r : recs) {
    r.pos = Embedding{};
    (*r.pos)[0] = r.target > 0.5 ? 1.0 : -1.0;
  }
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.batch = 4;
  cfg.lr = 0.5;
  const auto res = train(recs, tiny_shape(Variant::full, 0), cfg);
  CHECK(res.loss_trace.back() < 0.5 * res.loss_trace.front());
}

TEST_CASE("non-finite training aborts with epoch and batch") {
  std::mt19937_64 rng(18);
  auto recs = tiny_inputs(rng, 0, Task::classification);
  RecParams p = RecParams::init(tiny_shape(Variant::full, 0), 1, 0.5);
  p.head[0].w(0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(recs, p, cfg), NumericError);
  try {
    cfg.epochs = 2;
    RecParams q = RecParams::init(tiny_shape(Variant::full, 0), 1, 0.5);
    q.gru.w_cand(0, 0) = std::nan("");
    train(recs, q, cfg);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    // The initial loss evaluation trips first; the message names the layer.
    CHECK(std::string(e.what()).find("layer 2") != std::string::npos);
  }
}

TEST_CASE("predictions are pure and independent of batching") {
  std::mt19937_64 rng(19);
  auto recs = tiny_inputs(rng, 2, Task::classification);
  recs.push_back(recs[0]);
  const RecParams p = RecParams::init(tiny_shape(Variant::full), 7, 0.5);
  const auto all = predict_batch(recs, p);
  CHECK(all[0].yhat == all[4].yhat);
  const auto sharded = predict_batch(recs, p, 3);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(sharded[i].yhat == all[i].yhat);
    const auto single = predict_batch(std::span(recs).subspan(i, 1), p);
    CHECK(single[0].yhat == all[i].yhat);
    CHECK(*single[0].attention == *all[i].attention);
  }
}

TEST_CASE("id index and input building") {
  std::vector<data::InteractionRecord> records = {
      {"bob", "i2", 5, 1, {data::kSentinelItem, "i1"}},
      {"amy", "i1", 1, 2, {data::kSentinelItem, "i3"}},
  };
  const auto index = IdIndex::build(records, {});
  CHECK(index.n_users() == 2);
  CHECK(index.user_row("amy") == 0);
  CHECK(index.item_row(data::kSentinelItem) == 0);
  CHECK(index.item_row("i1") == 1);
  CHECK(index.item_row("i3") == 3);
  CHECK_THROWS_WITH_AS(index.user_row("zed"), doctest::Contains("consumer table"), ValidationError);
  CHECK_THROWS_WITH_AS(index.item_row("i9"), doctest::Contains("product table"), ValidationError);

  SlotTable slots;
  slots[records[0].key()] = {Embedding{}, Embedding{}};
  CHECK_THROWS_WITH_AS(build_inputs(records, index, slots, Variant::full), doctest::Contains(records[1].key().c_str()),
                       ValidationError);
  const auto zf = build_inputs(records, index, slots, Variant::pos_only, {Task::classification, false, true});
  CHECK(zf[1].pos == Embedding{});
  CHECK_FALSE(zf[1].neg.has_value());
  CHECK(zf[0].target == 1.0);
  CHECK(zf[1].target == 0.0);
  const auto none = build_inputs(records, index, {}, Variant::no_explanations);
  CHECK(none.size() == 2);

  llm::ExplanationPair pair;
  pair.positive_text = "p";
  pair.negative_text = "n";
  pair.alternatives[llm::Polarity::aspect] = "a";
  CHECK(slot_texts(pair, Variant::aspect_only).pos == "a");
  CHECK(slot_texts(pair, Variant::aspect_only).neg.empty());
  CHECK(slot_texts(pair, Variant::neg_only).pos.empty());
  CHECK(slot_texts(pair, Variant::full).neg == "n");
  CHECK(slot_texts(pair, Variant::summary_only).pos.empty());
}

TEST_CASE("checkpoint round trip") {
  testutil::TempDir dir("ckpt");
  Checkpoint ck;
  ck.index = IdIndex::from_ids({"a", "b", "c"}, {"x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9", "x10"});
  ck.params = RecParams::init(tiny_shape(Variant::ncf_head), 3);
  ck.config.seed = 42;
  save_checkpoint(dir.file("m.bin"), ck);
  const auto back = load_checkpoint(dir.file("m.bin"));
  CHECK(back.params.shape.variant == Variant::ncf_head);
  CHECK(back.config.seed == 42);
  CHECK(back.index.items() == ck.index.items());
  CHECK(back.params.head.size() == 4);
  CHECK(back.params.head[2].w == ck.params.head[2].w);
  CHECK(back.params.item_table == ck.params.item_table);
  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.bin")), PrerequisiteError);
}
