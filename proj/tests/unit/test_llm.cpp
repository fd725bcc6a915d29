#include <doctest.h>

#include <array>
#include <atomic>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "lrrec/common/error.hpp"
#include "lrrec/common/hash.hpp"
#include "lrrec/data/synthetic.hpp"
#include "lrrec/llm/explain.hpp"
#include "test_util.hpp"

using namespace lrrec;
using namespace lrrec::llm;

namespace {

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

Generator stub_generator(std::map<std::string, std::string> table = {}, int concurrency = 1) {
  BackendConfig cfg;
  cfg.max_concurrency = concurrency;
  return Generator(make_backend(cfg, std::move(table)), cfg);
}

// Local chat-completion server. `reply` maps the prompt to the completion.
class FakeChatServer {
 public:
  explicit FakeChatServer(std::function<std::string(const std::string&)> reply)
      : reply_(std::move(reply)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const auto body = nlohmann::json::parse(req.body);
      last_model_ = body.value("model", "");
      const auto& messages = body.at("messages");
      message_count_ = messages.size();
      const std::string content = messages.at(0).at("content");
      const nlohmann::json reply = {
          {"choices", {{{"message", {{"role", "assistant"}, {"content", reply_(content)}}}}}}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeChatServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
  }
  int requests() const { return requests_; }
  std::size_t message_count() const { return message_count_; }
  std::string last_model() const { return last_model_; }

 private:
  std::function<std::string(const std::string&)> reply_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
  std::size_t message_count_ = 0;
  std::string last_model_;
};

const std::vector<std::string> kFiveNone(5, data::kSentinelItem);

}  // namespace

TEST_CASE("profile prompts carry the domain few-shot example and the name") {
  const auto hotel =
      build_profile_prompt({"h1", "JW Marriott Hotel Hong Kong", std::nullopt}, Domain::hotel);
  CHECK(contains(hotel, "[Example Output]\n\nRevitalize body, mind, and spirit"));
  CHECK(contains(hotel, "Create a succinct profile for a hotel based on its name"));
  CHECK(hotel.substr(hotel.size() - 27) == "JW Marriott Hotel Hong Kong");

  const auto restaurant =
      build_profile_prompt({"r1", "Thrill Korean Steak and Bar", std::nullopt}, Domain::restaurant);
  CHECK(contains(restaurant, "[Example Input]\n\nThrill Korean Steak and Bar"));
  CHECK(contains(restaurant, "over 20 meat options"));

  const auto product = build_profile_prompt({"p1", "Orange Juice", std::nullopt}, Domain::product);
  CHECK(contains(product, "Create a succinct profile for a product based on its name"));

  CHECK_THROWS_AS(build_profile_prompt({"x", "", std::nullopt}, Domain::hotel), ValidationError);
}

TEST_CASE("explanation prompts use the per-domain sentence formats") {
  const std::vector<std::string> hist = {"A", "B"};
  CHECK(contains(build_explanation_prompt(hist, "C", Polarity::negative, Domain::hotel),
                 "The consumer did not stay at this hotel because"));
  CHECK(contains(build_explanation_prompt(hist, "C", Polarity::positive, Domain::movie),
                 "The consumer watched this movie because"));
  CHECK(contains(build_explanation_prompt(hist, "C", Polarity::positive, Domain::restaurant),
                 "The consumer visited this restaurant because"));
  CHECK(contains(build_explanation_prompt(hist, "C", Polarity::negative, Domain::product),
                 "The consumer did not purchase this product because"));
  CHECK(contains(build_explanation_prompt(hist, "C", Polarity::positive, Domain::product),
                 "Provide a reason for why this consumer purchased this product"));
  // History order is preserved.
  const auto p = build_explanation_prompt({"first", "second"}, "C", Polarity::positive,
                                          Domain::product);
  CHECK(p.find("first") < p.find("second"));
  CHECK_THROWS_AS(build_explanation_prompt(hist, "C", Polarity::profile, Domain::hotel),
                  ValidationError);
  CHECK_THROWS_AS(build_explanation_prompt(hist, "", Polarity::positive, Domain::hotel),
                  ValidationError);
}

TEST_CASE("sentinel history renders as none placeholders") {
  const auto prompt =
      build_explanation_prompt({"", "", "", "", ""}, "C", Polarity::positive, Domain::hotel);
  CHECK(contains(prompt, "none | none | none | none | none"));

  std::vector<data::ItemProfile> profiles = {{"c", "Cand", std::nullopt}};
  ProfileIndex index(profiles);
  CHECK(index.text(data::kSentinelItem) == "none");
  auto gen = stub_generator();
  ResponseCache cache;
  const auto pair = generate_explanations({"u", "c", 3, 1, kFiveNone}, index, gen, cache);
  CHECK_FALSE(pair.positive_text.empty());
  CHECK_FALSE(pair.negative_text.empty());
}

TEST_CASE("parse_prompt inverts every rendered template") {
  for (auto d : {Domain::product, Domain::movie, Domain::restaurant, Domain::hotel}) {
    for (auto pol : {Polarity::positive, Polarity::negative, Polarity::aspect, Polarity::general,
                     Polarity::summary}) {
      const auto prompt =
          build_explanation_prompt({"alpha x", "beta y", "gamma"}, "cand text", pol, d);
      const auto parsed = parse_prompt(prompt);
      REQUIRE(parsed.has_value());
      CHECK(parsed->domain == d);
      CHECK(parsed->polarity == pol);
      CHECK(parsed->history == std::vector<std::string>{"alpha x", "beta y", "gamma"});
      if (pol != Polarity::summary) CHECK(parsed->candidate == "cand text");
    }
    const auto pp = parse_prompt(build_profile_prompt({"i", "Some Name", std::nullopt}, d));
    REQUIRE(pp.has_value());
    CHECK(pp->candidate == "Some Name");
  }
  CHECK_FALSE(parse_prompt("hello world").has_value());
}

TEST_CASE("prompt fingerprints differ whenever a slot differs") {
  std::set<std::string> seen;
  std::size_t rendered = 0;
  const std::vector<std::string> texts = {"a", "b", "a b", "ab", "none"};
  for (const auto& h0 : texts)
    for (const auto& h1 : texts)
      for (const auto& c : texts)
        for (auto pol : {Polarity::positive, Polarity::negative}) {
          seen.insert(fingerprint(build_explanation_prompt({h0, h1}, c, pol, Domain::product)));
          ++rendered;
        }
  CHECK(seen.size() == rendered);
}

TEST_CASE("stub backend is deterministic and surfaces planted tokens") {
  data::SyntheticConfig cfg;
  cfg.n_users = 10;
  const auto syn = data::gen_synthetic_recsys(cfg);
  auto gen = stub_generator(syn.planted_reason);
  ProfileIndex index(syn.profiles);
  ResponseCache cache;

  const auto& r = syn.records.back();
  const auto prompt = build_explanation_prompt(
      {index.text(r.history[0]), index.text(r.history[1]), index.text(r.history[2]),
       index.text(r.history[3]), index.text(r.history[4])},
      index.text(r.item_id), Polarity::positive, Domain::product);
  CHECK(gen.generate(prompt) == gen.generate(prompt));
  CHECK(contains(gen.generate(prompt), syn.planted_reason.at(r.item_id)));

  std::vector<std::string> toks;
  for (const auto& h : r.history)
    if (h != data::kSentinelItem) toks.push_back(syn.planted_reason.at(h));
  const auto pair = generate_explanations(r, index, gen, cache);
  CHECK(pair.positive_text == "The consumer purchased this product because the consumer likes " +
                                  *data::majority_token(toks) + " and the product is " +
                                  syn.planted_reason.at(r.item_id) + ".");
  CHECK(contains(pair.negative_text, "did not purchase this product"));
  CHECK(pair.positive_text != pair.negative_text);
}

TEST_CASE("stub positive and negative completions differ for every record") {
  data::SyntheticConfig cfg;
  cfg.n_users = 20;
  const auto syn = data::gen_synthetic_recsys(cfg);
  auto gen = stub_generator(syn.planted_reason);
  ResponseCache cache;
  const auto run = generate_all(syn.records, ProfileIndex(syn.profiles), gen, cache);
  CHECK(run.pending.empty());
  for (const auto& p : run.pairs) {
    REQUIRE(p.has_value());
    CHECK(p->positive_text != p->negative_text);
    CHECK_NOTHROW(p->validate());
  }
}

TEST_CASE("explanations are truncated to 50 words") {
  CHECK(truncate_words("a  b\tc\nd", 3) == "a b c");
  FakeChatServer server([](const std::string&) {
    std::string s;
    for (int i = 0; i < 80; ++i) s += "word" + std::to_string(i) + " ";
    return s;
  });
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = server.endpoint();
  Generator gen(make_backend(cfg), cfg);
  ResponseCache cache;
  std::vector<data::ItemProfile> profiles = {{"c", "Cand", std::nullopt}};
  const auto pair = generate_explanations({"u", "c", 3, 1, kFiveNone}, ProfileIndex(profiles), gen,
                                          cache);
  CHECK(pair.positive_text == truncate_words(pair.positive_text, 50));
  CHECK(contains(pair.positive_text, "word49"));
  CHECK_FALSE(contains(pair.positive_text, "word50"));
}

TEST_CASE("cache: second generation performs zero backend calls") {
  testutil::TempDir dir("cache");
  data::SyntheticConfig cfg;
  cfg.n_users = 15;
  const auto syn = data::gen_synthetic_recsys(cfg);
  ProfileIndex index(syn.profiles);
  std::size_t first_calls = 0;
  {
    auto gen = stub_generator(syn.planted_reason, 3);
    ResponseCache cache(dir.file("cache.jsonl"));
    generate_all(syn.records, index, gen, cache);
    first_calls = gen.calls();
    CHECK(first_calls == 2 * syn.records.size());
    // Same process, warm in-memory cache.
    generate_explanations(syn.records.front(), index, gen, cache);
    CHECK(gen.calls() == first_calls);
  }
  // Cold process replaying the file.
  auto gen = stub_generator(syn.planted_reason, 2);
  ResponseCache cache(dir.file("cache.jsonl"));
  const auto run = generate_all(syn.records, index, gen, cache);
  CHECK(gen.calls() == 0);
  CHECK(run.pending.empty());
}

TEST_CASE("cache replay: last writer wins and torn lines are skipped") {
  testutil::TempDir dir("cache_replay");
  {
    ResponseCache cache(dir.file("c.jsonl"));
    cache.put("u|i", "positive", "old", "fp");
    cache.put("u|i", "positive", "new", "fp");
  }
  std::ofstream(dir.file("c.jsonl"), std::ios::app) << R"({"key":"u|i","pol)";
  ResponseCache cache(dir.file("c.jsonl"));
  CHECK(cache.get("u|i", "positive", "fp") == std::optional<std::string>("new"));
  CHECK_FALSE(cache.get("u|i", "negative", "fp").has_value());
  CHECK_FALSE(cache.get("u|i", "positive", "other").has_value());
}

TEST_CASE("compacted cache files do not depend on insertion order") {
  testutil::TempDir dir("cache_compact");
  const std::vector<std::array<std::string, 2>> rows = {{"b|1", "negative"}, {"a|2", "positive"}, {"a|2", "negative"}};
  for (const char* name : {"x.jsonl", "y.jsonl"}) {
    ResponseCache cache(dir.file(name));
    if (std::string(name) == "x.jsonl")
      for (const auto& r : rows) cache.put(r[0], r[1], r[0] + r[1], "fp");
    else
      for (auto it = rows.rbegin(); it != rows.rend(); ++it) cache.put((*it)[0], (*it)[1], (*it)[0] + (*it)[1], "fp");
    cache.put("b|1", "negative", "b|1negative", "fp");
    cache.compact();
    cache.put("c|3", "positive", "late", "fp");
  }
  CHECK(testutil::read_text(dir.file("x.jsonl")) == testutil::read_text(dir.file("y.jsonl")));
  ResponseCache reread(dir.file("x.jsonl"));
  CHECK(reread.size() == 4);
  CHECK(reread.get("c|3", "positive", "fp") == std::optional<std::string>("late"));
}

TEST_CASE("profile augmentation: disabled, stub template and pre-seeded cache") {
  testutil::TempDir dir("augment");
  std::vector<data::ItemProfile> items = {{"h1", "Hilton Newark Airport", std::nullopt},
                                          {"h2", "Peppers Gallery Hotel", std::nullopt}};
  auto gen = stub_generator();
  ResponseCache mem;
  const auto off = augment_profiles(items, false, Domain::hotel, gen, mem);
  CHECK_FALSE(off.items[0].augmented_profile.has_value());
  CHECK(gen.calls() == 0);

  {
    ResponseCache cache(dir.file("p.jsonl"));
    const auto on = augment_profiles(items, true, Domain::hotel, gen, cache);
    REQUIRE(on.items[0].augmented_profile.has_value());
    CHECK(*on.items[0].augmented_profile ==
          "Hilton Newark Airport is a hotel for consumers who are looking for something like "
          "Hilton Newark Airport.");
    CHECK(gen.calls() == 2);
  }
  auto fresh = stub_generator();
  ResponseCache seeded(dir.file("p.jsonl"));
  const auto again = augment_profiles(items, true, Domain::hotel, fresh, seeded);
  CHECK(fresh.calls() == 0);
  CHECK(again.items[1].augmented_profile.has_value());
}

TEST_CASE("backend config validation") {
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg.endpoint = "http://127.0.0.1:1/x";
  CHECK_NOTHROW(cfg.validate());
  cfg.max_concurrency = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("http backend: unreachable endpoint fails after the configured retries") {
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = "http://127.0.0.1:9/v1/chat/completions";
  cfg.retry_count = 2;
  cfg.retry_backoff = std::chrono::milliseconds(1);
  cfg.timeout = std::chrono::milliseconds(200);
  Generator gen(make_backend(cfg), cfg);
  try {
    gen.generate("hello");
    FAIL("expected a backend error");
  } catch (const BackendError& e) {
    CHECK(e.fingerprint() == fingerprint("hello"));
  }
  CHECK(gen.calls() == 3);
}

TEST_CASE("http backend: empty completion is a failure and the record stays pending") {
  FakeChatServer server([](const std::string&) { return std::string(); });
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = server.endpoint();
  cfg.retry_count = 1;
  cfg.retry_backoff = std::chrono::milliseconds(1);
  Generator gen(make_backend(cfg), cfg);
  ResponseCache cache;
  std::vector<data::ItemProfile> profiles = {{"c", "Cand", std::nullopt}};
  const auto run =
      generate_all({{"u", "c", 3, 1, kFiveNone}}, ProfileIndex(profiles), gen, cache);
  CHECK(run.pending == std::vector<std::string>{"u|c|1"});
  CHECK_FALSE(run.pairs[0].has_value());
  CHECK(server.requests() == 2);
}

TEST_CASE("http backend: Siam Thai Kitchen case study round trip") {
  const std::string pos =
      "The consumer is looking for a unique and flavorful dining experience and the restaurant "
      "offers a variety of Asian cuisine.";
  const std::string neg =
      "The consumer is looking for a traditional Japanese experience and wants to escape the busy "
      "city life, while the restaurant is not a traditional Japanese experience and is located in "
      "a city";
  FakeChatServer server([&](const std::string& prompt) {
    return contains(prompt, "did not visit") ? neg : pos;
  });
  BackendConfig cfg;
  cfg.kind = BackendKind::http;
  cfg.endpoint = server.endpoint();
  cfg.model_name = "gpt-3.5-turbo";
  Generator gen(make_backend(cfg), cfg);
  ResponseCache cache;
  const std::vector<data::ItemProfile> profiles = {
      {"r0", "O-Ku Sushi", std::nullopt},     {"r1", "Zen Japanese", std::nullopt},
      {"r2", "MGM Grand Hotel", std::nullopt}, {"r3", "Sen of Japan", std::nullopt},
      {"r4", "Sushi Bong", std::nullopt},
      {"r5", "Siam Thai Kitchen",
       "Siam Thai Kitchen is a Thai restaurant that offers a unique dining experience in the "
       "city."}};
  ExplanationOptions opts;
  opts.domain = Domain::restaurant;
  const auto pair = generate_explanations({"u", "r5", 1, 10, {"r0", "r1", "r2", "r3", "r4"}},
                                          ProfileIndex(profiles), gen, cache, opts);
  CHECK(contains(pair.positive_text, "unique and flavorful dining experience"));
  CHECK(contains(pair.negative_text, "traditional Japanese experience"));
  CHECK(server.message_count() == 1);
  CHECK(server.last_model() == "gpt-3.5-turbo");
}

TEST_CASE("explanation files round-trip with embeddings") {
  testutil::TempDir dir("expl_io");
  ExplanationPair p;
  p.user_id = "u";
  p.item_id = "i";
  p.record_key = "u|i|3";
  p.positive_text = "pos text";
  p.negative_text = "neg text";
  p.prompt_fingerprint = "abc";
  p.positive_embedding = Embedding{1, 2, 3, 4, 5, 6, 7, 8};
  p.alternatives[Polarity::aspect] = "aspects";
  write_explanations(dir.file("e.jsonl"), {p});
  const auto back = load_explanations(dir.file("e.jsonl"));
  REQUIRE(back.size() == 1);
  CHECK(back[0].positive_embedding == p.positive_embedding);
  CHECK_FALSE(back[0].negative_embedding.has_value());
  CHECK(back[0].alternatives.at(Polarity::aspect) == "aspects");
  CHECK(back[0].record_key == "u|i|3");
}
