#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "lrrec/common/error.hpp"
#include "lrrec/common/log.hpp"
#include "lrrec/data/dataset.hpp"
#include "lrrec/data/synthetic.hpp"
#include "test_util.hpp"

using namespace lrrec;
using namespace lrrec::data;

namespace {

InteractionRecord rec(const std::string& u, const std::string& i, double rating, std::int64_t ts,
                      std::vector<std::string> hist = {}) {
  return InteractionRecord{u, i, rating, ts, std::move(hist)};
}

struct WarningCapture {
  std::vector<std::string> messages;
  log::Sink previous;
  WarningCapture() {
    previous = log::set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { log::set_warning_sink(previous); }
};

}  // namespace

TEST_CASE("short history is left-padded with the sentinel") {
  testutil::TempDir dir("pad");
  testutil::write_text(dir.file("r.jsonl"),
                       R"({"user_id":"u1","item_id":"i9","rating":5,"ts":3,"history":["i1","i2","i3"]})"
                       "\n");
  const auto records = load_records(dir.file("r.jsonl"));
  REQUIRE(records.size() == 1);
  CHECK(records[0].history ==
        std::vector<std::string>{kSentinelItem, kSentinelItem, "i1", "i2", "i3"});
}

TEST_CASE("rating outside [1,5] is rejected with the line number") {
  testutil::TempDir dir("bad_rating");
  testutil::write_text(dir.file("r.jsonl"),
                       R"({"user_id":"u1","item_id":"i1","rating":4,"ts":1,"history":[]})"
                       "\n"
                       R"({"user_id":"u1","item_id":"i2","rating":7,"ts":2,"history":[]})"
                       "\n");
  try {
    load_records(dir.file("r.jsonl"));
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("malformed line reports its line number") {
  testutil::TempDir dir("malformed");
  testutil::write_text(dir.file("r.jsonl"),
                       R"({"user_id":"u1","item_id":"i1","rating":4,"ts":1,"history":[]})"
                       "\n{not json\n");
  CHECK_THROWS_WITH_AS(load_records(dir.file("r.jsonl")), doctest::Contains(":2:"), ValidationError);
}

TEST_CASE("ten valid lines load in input order; duplicates are rejected") {
  testutil::TempDir dir("ten");
  std::string text;
  for (int i = 0; i < 10; ++i)
    text += R"({"user_id":"u)" + std::to_string(i % 3) + R"(","item_id":"i)" + std::to_string(i) +
            R"(","rating":3,"ts":)" + std::to_string(100 - i) + R"(,"history":[]})" + "\n";
  testutil::write_text(dir.file("r.jsonl"), text);
  const auto records = load_records(dir.file("r.jsonl"));
  REQUIRE(records.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(records[i].item_id == "i" + std::to_string(i));

  testutil::write_text(dir.file("dup.jsonl"), text + text.substr(0, text.find('\n') + 1));
  CHECK_THROWS_AS(load_records(dir.file("dup.jsonl")), ValidationError);
}

TEST_CASE("integer ids are accepted and candidate-in-history is rejected") {
  testutil::TempDir dir("ids");
  testutil::write_text(dir.file("r.jsonl"),
                       R"({"user_id":7,"item_id":12,"rating":2,"ts":1,"history":[3,4]})"
                       "\n");
  const auto records = load_records(dir.file("r.jsonl"), {}, 2);
  CHECK(records[0].user_id == "7");
  CHECK(records[0].history == std::vector<std::string>{"3", "4"});

  auto bad = rec("u", "i1", 3, 1, {"i0", "i1"});
  CHECK_THROWS_AS(validate_record(bad, 2), ValidationError);
}

TEST_CASE("profiles: empty augmented profile is rejected") {
  testutil::TempDir dir("profiles");
  testutil::write_text(dir.file("p.jsonl"),
                       R"({"item_id":"i1","name":"Siam Thai Kitchen","profile":"A Thai place."})"
                       "\n"
                       R"({"item_id":"i2","name":"Zen Japanese"})"
                       "\n");
  const auto profiles = load_profiles(dir.file("p.jsonl"));
  REQUIRE(profiles.size() == 2);
  CHECK(profiles[0].prompt_text() == "A Thai place.");
  CHECK(profiles[1].prompt_text() == "Zen Japanese");
  testutil::write_text(dir.file("bad.jsonl"), R"({"item_id":"i1","name":"x","profile":""})" "\n");
  CHECK_THROWS_AS(load_profiles(dir.file("bad.jsonl")), ValidationError);
}

TEST_CASE("records and profiles round-trip through files") {
  testutil::TempDir dir("roundtrip");
  SyntheticConfig cfg;
  cfg.n_users = 5;
  cfg.n_items = 12;
  const auto syn = gen_synthetic_recsys(cfg);
  write_records(dir.file("r.jsonl"), syn.records);
  write_profiles(dir.file("p.jsonl"), syn.profiles);
  const auto ds = load_dataset(dir.file("r.jsonl"), dir.file("p.jsonl"));
  REQUIRE(ds.records.size() == syn.records.size());
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(ds.records[i].key() == syn.records[i].key());
    CHECK(ds.records[i].history == syn.records[i].history);
    CHECK(ds.records[i].rating == syn.records[i].rating);
  }
  CHECK(ds.profiles.size() == syn.profiles.size());
}

TEST_CASE("user-temporal split: t=1..10 at 0.8") {
  std::vector<InteractionRecord> records;
  for (int t = 10; t >= 1; --t) records.push_back(rec("u", "i" + std::to_string(t), 3, t));
  const auto split = split_user_temporal(records, 0.8);
  std::set<std::int64_t> train_ts, test_ts;
  for (const auto& r : split.train) train_ts.insert(r.timestamp);
  for (const auto& r : split.test) test_ts.insert(r.timestamp);
  CHECK(train_ts == std::set<std::int64_t>{1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(test_ts == std::set<std::int64_t>{9, 10});
}

TEST_CASE("single-record users: empty test set with a warning") {
  WarningCapture warnings;
  std::vector<InteractionRecord> records;
  for (int u = 0; u < 4; ++u) records.push_back(rec("u" + std::to_string(u), "i", 3, 1));
  const auto split = split_user_temporal(records, 0.8);
  CHECK(split.train.size() == 4);
  CHECK(split.test.empty());
  CHECK_FALSE(warnings.messages.empty());
}

TEST_CASE("split is a temporal partition with an 80/20 global ratio") {
  SyntheticConfig cfg;
  cfg.seed = 11;
  const auto syn = gen_synthetic_recsys(cfg);
  const auto split = split_user_temporal(syn.records, 0.8);
  CHECK(split.train.size() + split.test.size() == syn.records.size());

  std::multiset<std::string> in, out;
  for (const auto& r : syn.records) in.insert(r.key());
  for (const auto& r : split.train) out.insert(r.key());
  for (const auto& r : split.test) out.insert(r.key());
  CHECK(in == out);

  std::map<std::string, std::int64_t> last_train, first_test;
  for (const auto& r : split.train)
    last_train[r.user_id] = std::max(last_train[r.user_id], r.timestamp);
  for (const auto& r : split.test) {
    auto [it, fresh] = first_test.emplace(r.user_id, r.timestamp);
    if (!fresh) it->second = std::min(it->second, r.timestamp);
  }
  for (const auto& [u, t] : first_test) CHECK(t >= last_train[u]);

  const double frac =
      static_cast<double>(split.train.size()) / static_cast<double>(syn.records.size());
  CHECK(frac == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("rating transforms") {
  CHECK(binarize_rating(5) == 1);
  CHECK(binarize_rating(3) == 0);
  CHECK(binarize_rating(4) == 1);
  CHECK_THROWS_AS(binarize_rating(0.5), ValidationError);
  CHECK(scale_rating(1) == 0.0);
  CHECK(scale_rating(5) == 1.0);
  CHECK(scale_rating(3) == 0.5);
  CHECK(unscale_rating(0.5) == 3.0);
  CHECK_THROWS_AS(scale_rating(6), ValidationError);

  int prev = 0;
  for (int k = 0; k <= 100; ++k) {
    const int b = binarize_rating(unscale_rating(k / 100.0));
    CHECK(b >= prev);
    prev = b;
  }
}

TEST_CASE("majority token prefers the most recent on ties") {
  CHECK(*majority_token({"a", "b", "a"}) == "a");
  CHECK(*majority_token({"a", "b"}) == "b");
  CHECK(*majority_token({"b", "a", "a", "b"}) == "b");
  CHECK_FALSE(majority_token({}).has_value());
}

TEST_CASE("synthetic generator: noiseless labels follow token match") {
  SyntheticConfig cfg;
  cfg.noise = 0.0;
  cfg.match_prob = 1.0;
  cfg.n_users = 50;
  const auto syn = gen_synthetic_recsys(cfg);
  REQUIRE_FALSE(syn.records.empty());
  for (const auto& r : syn.records) {
    std::vector<std::string> toks;
    for (const auto& h : r.history)
      if (h != kSentinelItem) toks.push_back(syn.planted_reason.at(h));
    const auto maj = majority_token(toks);
    const bool match = maj && *maj == syn.planted_reason.at(r.item_id);
    CHECK(binarize_rating(r.rating) == (match ? 1 : 0));
    CHECK(std::find(r.history.begin(), r.history.end(), r.item_id) == r.history.end());
  }
}

TEST_CASE("synthetic generator is byte-reproducible for a fixed seed") {
  testutil::TempDir dir("synrepro");
  SyntheticConfig cfg;
  cfg.seed = 42;
  write_records(dir.file("a.jsonl"), gen_synthetic_recsys(cfg).records);
  write_records(dir.file("b.jsonl"), gen_synthetic_recsys(cfg).records);
  CHECK(testutil::read_text(dir.file("a.jsonl")) == testutil::read_text(dir.file("b.jsonl")));
  cfg.seed = 43;
  write_records(dir.file("c.jsonl"), gen_synthetic_recsys(cfg).records);
  CHECK(testutil::read_text(dir.file("a.jsonl")) != testutil::read_text(dir.file("c.jsonl")));
}

TEST_CASE("Bayes-optimal AUC matches brute-force pair enumeration") {
  SyntheticConfig cfg;
  cfg.n_users = 200;
  cfg.n_items = 50;
  cfg.noise = 0.1;
  const auto syn = gen_synthetic_recsys(cfg);
  const auto& p = syn.label_probability;
  // Oracle: expected concordant mass over ordered pairs (i positive, j negative).
  double num = 0, den = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (i == j) continue;
      const double w = p[i] * (1 - p[j]);
      den += w;
      num += w * (p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0));
    }
  CHECK(bayes_optimal_auc(p) == doctest::Approx(num / den).epsilon(1e-9));
  // Two probability levels 0.9 / 0.1 give a known closed form above 0.5.
  CHECK(bayes_optimal_auc(p) > 0.8);
}
