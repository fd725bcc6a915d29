#include "lrrec/cli/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lrrec/ae/autoencoder.hpp"
#include "lrrec/cli/stage.hpp"
#include "lrrec/common/error.hpp"
#include "lrrec/common/hash.hpp"
#include "lrrec/common/log.hpp"
#include "lrrec/data/dataset.hpp"
#include "lrrec/data/synthetic.hpp"
#include "lrrec/eval/analysis.hpp"
#include "lrrec/eval/metrics.hpp"
#include "lrrec/llm/explain.hpp"
#include "lrrec/rec/trainer.hpp"
#include "lrrec/theory/lab.hpp"

namespace lrrec::cli {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string join(const std::vector<std::string>& parts, char sep = ',') {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

// --- minimal CSV: fields are quoted only when they contain a comma or quote ---

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& expected_header) {
  std::ifstream in(path);
  if (!in) throw PrerequisiteError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != expected_header) throw ValidationError(path.string() + ": unexpected header '" + line + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(csv_split(line));
  return rows;
}

double parse_double(const std::string& s, const fs::path& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError(where.string() + ": not a number '" + s + "'");
}

// --- shared options ----------------------------------------------------------

struct Global {
  std::string outdir;
  bool force = false;
  bool resume = false;
  bool verbose = false;
};

struct BackendOpts {
  std::string kind = "stub";
  std::string endpoint;
  std::string model;
  int max_concurrency = 4;
  int timeout_ms = 30000;
  int retries = 3;
  int backoff_ms = 100;

  void add(CLI::App* app) {
    app->add_option("--backend", kind, "Text generation backend")->check(CLI::IsMember({"stub", "http"}))->capture_default_str();
    app->add_option("--endpoint", endpoint, "http backend URL (http://host:port/path)");
    app->add_option("--model", model, "Model name sent to the http backend");
    app->add_option("--max-concurrency", max_concurrency, "In-flight backend requests")->capture_default_str();
    app->add_option("--timeout-ms", timeout_ms, "Per-request timeout")->capture_default_str();
    app->add_option("--retries", retries, "Retries after a failed request")->capture_default_str();
    app->add_option("--backoff-ms", backoff_ms, "First retry delay, doubled per retry")->capture_default_str();
  }

  llm::BackendConfig config() const {
    llm::BackendConfig c;
    c.kind = llm::parse_backend_kind(kind);
    if (!endpoint.empty()) c.endpoint = endpoint;
    if (!model.empty()) c.model_name = model;
    c.max_concurrency = max_concurrency;
    c.timeout = std::chrono::milliseconds(timeout_ms);
    c.retry_count = retries;
    c.retry_backoff = std::chrono::milliseconds(backoff_ms);
    c.validate();
    return c;
  }

  // Settings that change completions; concurrency and retry policy do not.
  void describe(ConfigMap& m) const {
    m["backend"] = kind;
    m["endpoint"] = endpoint;
    m["model"] = model;
  }
};

void say(const std::string& stage, const std::string& msg) { std::cout << stage << ": " << msg << '\n'; }

void up_to_date(const StageRun& run) { say(run.manifest().stage, "up to date (" + run.dir().string() + ")"); }

// --- artifact locations --------------------------------------------------------

const std::string kTrainRecords = "ingest/train.jsonl";
const std::string kTestRecords = "ingest/test.jsonl";
const std::string kIngestProfiles = "ingest/profiles.jsonl";
const std::string kReasons = "ingest/reasons.json";
const std::string kAugmentProfiles = "augment/profiles.jsonl";
const std::string kExplanations = "explain/explanations.jsonl";
const std::string kEncoder = "train-ae/encoder.bin";

std::map<std::string, std::string> load_reasons(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw PrerequisiteError("cannot read " + path.string());
  return json::parse(in).get<std::map<std::string, std::string>>();
}

std::vector<data::InteractionRecord> load_split(const fs::path& outdir, const std::string& rel, std::size_t h) {
  return data::load_records((outdir / rel).string(), {}, h);
}

// Profiles the explain stage reads: augmented ones when that stage finished.
std::string profile_source(const fs::path& outdir) {
  const auto m = Manifest::load(outdir / manifest_rel("augment"));
  return m && m->status == "complete" ? kAugmentProfiles : kIngestProfiles;
}

// --- ingest ----------------------------------------------------------------------

struct IngestOpts {
  std::string records;
  std::string profiles;
  bool synthetic = false;
  std::size_t n_users = 200;
  std::size_t n_items = 50;
  std::size_t n_tokens = 6;
  double noise = 0.1;
  std::uint64_t seed = 1;
  std::size_t history_len = data::kDefaultHistoryLen;
  double split_ratio = 0.8;
};

void cmd_ingest(const Global& g, const IngestOpts& o) {
  if (o.synthetic == !o.records.empty())
    throw ValidationError("ingest needs either --synthetic or --records/--profiles");
  if (!o.synthetic && o.profiles.empty()) throw ValidationError("--records needs --profiles");
  if (!(o.split_ratio > 0.0 && o.split_ratio < 1.0)) throw ValidationError("--split-ratio must lie in (0, 1)");

  ConfigMap cfg{{"synthetic", fmt(o.synthetic)}, {"history_len", std::to_string(o.history_len)},
                {"split_ratio", fmt(o.split_ratio)}};
  std::vector<Input> inputs;
  if (o.synthetic) {
    cfg["n_users"] = std::to_string(o.n_users);
    cfg["n_items"] = std::to_string(o.n_items);
    cfg["n_tokens"] = std::to_string(o.n_tokens);
    cfg["noise"] = fmt(o.noise);
    cfg["seed"] = std::to_string(o.seed);
  } else {
    for (const auto& p : {o.records, o.profiles}) {
      if (!fs::exists(p)) throw PrerequisiteError("input file " + p + " does not exist");
      inputs.push_back({fs::absolute(p).string(), "ingest"});
    }
  }
  StageRun run(g.outdir, "ingest", "", cfg, {g.force, g.resume});
  if (!run.begin(inputs)) return up_to_date(run);

  data::Dataset ds;
  std::map<std::string, std::string> reasons;
  std::vector<double> label_prob;
  if (o.synthetic) {
    data::SyntheticConfig sc;
    sc.n_users = o.n_users;
    sc.n_items = o.n_items;
    sc.n_tokens = o.n_tokens;
    sc.noise = o.noise;
    sc.seed = o.seed;
    sc.history_len = o.history_len;
    auto syn = data::gen_synthetic_recsys(sc);
    ds.records = std::move(syn.records);
    ds.profiles = std::move(syn.profiles);
    reasons = std::move(syn.planted_reason);
    label_prob = std::move(syn.label_probability);
  } else {
    ds = data::load_dataset(o.records, o.profiles, {}, o.history_len);
  }
  const auto split = data::split_user_temporal(ds.records, o.split_ratio);

  data::write_records(run.path("train.jsonl").string(), split.train);
  data::write_records(run.path("test.jsonl").string(), split.test);
  data::write_profiles(run.path("profiles.jsonl").string(), ds.profiles);
  write_json(run.path("reasons.json"), json(reasons));

  std::set<std::string> users, items;
  for (const auto& r : ds.records) {
    users.insert(r.user_id);
    items.insert(r.item_id);
  }
  json summary{{"records", ds.records.size()}, {"train", split.train.size()}, {"test", split.test.size()},
               {"users", users.size()}, {"items", items.size()}};
  if (!label_prob.empty()) {
    std::set<std::string> test_keys;
    for (const auto& r : split.test) test_keys.insert(r.key());
    std::vector<double> test_prob;
    for (std::size_t i = 0; i < ds.records.size(); ++i)
      if (test_keys.count(ds.records[i].key())) test_prob.push_back(label_prob[i]);
    try {
      summary["bayes_auc_test"] = data::bayes_optimal_auc(test_prob);
    } catch (const ValidationError& e) {
      log::warn(e.what());
    }
  }
  write_json(run.path("summary.json"), summary);
  run.complete({"train.jsonl", "test.jsonl", "profiles.jsonl", "reasons.json", "summary.json"});
  say("ingest", std::to_string(split.train.size()) + " train / " + std::to_string(split.test.size()) + " test records");
}

// --- augment ---------------------------------------------------------------------

struct AugmentOpts {
  bool enabled = false;
  std::string domain = "product";
  BackendOpts backend;
};

void cmd_augment(const Global& g, const AugmentOpts& o) {
  ConfigMap cfg{{"enabled", fmt(o.enabled)}, {"domain", o.domain}};
  o.backend.describe(cfg);
  StageRun run(g.outdir, "augment", "", cfg, {g.force, g.resume});
  if (!run.begin({{kIngestProfiles, "ingest"}, {kReasons, "ingest"}})) return up_to_date(run);

  const auto items = data::load_profiles(run.input(kIngestProfiles).string());
  const auto bc = o.backend.config();
  llm::Generator gen(llm::make_backend(bc, load_reasons(run.input(kReasons))), bc);
  llm::ResponseCache cache(run.path("cache.jsonl").string());
  auto result = llm::augment_profiles(items, o.enabled, llm::parse_domain(o.domain), gen, cache);

  if (!result.pending.empty()) {
    open_out(run.path("pending.txt")) << join(result.pending, '\n') << '\n';
    run.partial({"pending.txt"}, gen.calls());
    throw BackendError(std::to_string(result.pending.size()) + " profiles pending; rerun augment with --resume", "");
  }
  fs::remove(run.path("pending.txt"));
  cache.compact();
  data::write_profiles(run.path("profiles.jsonl").string(), result.items);
  run.complete({"profiles.jsonl"}, gen.calls());
  say("augment", std::to_string(result.items.size()) + " profiles, " + std::to_string(gen.calls()) + " backend calls");
}

// --- explain ---------------------------------------------------------------------

struct ExplainOpts {
  std::string domain = "product";
  std::vector<std::string> alternatives;
  std::size_t max_words = llm::kMaxExplanationWords;
  std::size_t history_len = data::kDefaultHistoryLen;
  BackendOpts backend;
};

void cmd_explain(const Global& g, const ExplainOpts& o) {
  const fs::path outdir = g.outdir;
  const std::string profiles_rel = profile_source(outdir);
  std::vector<std::string> alts = o.alternatives;
  std::sort(alts.begin(), alts.end());
  ConfigMap cfg{{"domain", o.domain}, {"alternatives", join(alts)}, {"max_words", std::to_string(o.max_words)},
                {"profile_source", profiles_rel.substr(0, profiles_rel.find('/'))}};
  o.backend.describe(cfg);
  StageRun run(outdir, "explain", "", cfg, {g.force, g.resume});
  if (!run.begin({{kTrainRecords, "ingest"}, {kTestRecords, "ingest"}, {profiles_rel, "ingest"}, {kReasons, "ingest"}}))
    return up_to_date(run);

  auto records = load_split(outdir, kTrainRecords, o.history_len);
  const auto test = load_split(outdir, kTestRecords, o.history_len);
  records.insert(records.end(), test.begin(), test.end());
  const llm::ProfileIndex profiles(data::load_profiles(run.input(profiles_rel).string()));

  llm::ExplanationOptions eo;
  eo.domain = llm::parse_domain(o.domain);
  eo.max_words = o.max_words;
  for (const auto& a : alts) {
    const auto p = llm::parse_polarity(a);
    if (p != llm::Polarity::aspect && p != llm::Polarity::general && p != llm::Polarity::summary)
      throw ValidationError("--alternatives accepts aspect, general, summary (got " + a + ")");
    eo.alternatives.push_back(p);
  }
  const auto bc = o.backend.config();
  llm::Generator gen(llm::make_backend(bc, load_reasons(run.input(kReasons))), bc);
  llm::ResponseCache cache(run.path("cache.jsonl").string());
  auto result = llm::generate_all(records, profiles, gen, cache, eo);

  if (!result.pending.empty()) {
    open_out(run.path("pending.txt")) << join(result.pending, '\n') << '\n';
    run.partial({"pending.txt"}, gen.calls());
    throw BackendError(std::to_string(result.pending.size()) + " records pending; rerun explain with --resume", "");
  }
  fs::remove(run.path("pending.txt"));
  cache.compact();
  std::vector<llm::ExplanationPair> pairs;
  pairs.reserve(result.pairs.size());
  for (auto& p : result.pairs) pairs.push_back(std::move(*p));
  llm::write_explanations(run.path("explanations.jsonl").string(), pairs);
  run.complete({"explanations.jsonl"}, gen.calls());
  say("explain", std::to_string(pairs.size()) + " explanation pairs, " + std::to_string(gen.calls()) + " backend calls");
}

// --- train-ae --------------------------------------------------------------------

struct AeOpts {
  std::size_t maxlen = ae::kDefaultMaxLen;
  std::size_t dim = 8;
  std::size_t hidden = ae::kDefaultHidden;
  double lr = 0.1;
  std::size_t batch = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  bool tied = false;
  std::size_t history_len = data::kDefaultHistoryLen;
};

// Positive and negative texts of training-split records, duplicates kept.
std::vector<std::string> ae_corpus(const std::vector<llm::ExplanationPair>& pairs,
                                   const std::vector<data::InteractionRecord>& train) {
  std::set<std::string> keys;
  for (const auto& r : train) keys.insert(r.key());
  std::vector<std::string> corpus;
  for (const auto& p : pairs) {
    if (!keys.count(p.record_key)) continue;
    corpus.push_back(p.positive_text);
    corpus.push_back(p.negative_text);
  }
  if (corpus.empty()) throw ValidationError("no explanations for training-split records");
  return corpus;
}

void cmd_train_ae(const Global& g, const AeOpts& o) {
  ConfigMap cfg{{"maxlen", std::to_string(o.maxlen)}, {"dim", std::to_string(o.dim)},
                {"hidden", std::to_string(o.hidden)}, {"lr", fmt(o.lr)},
                {"batch", std::to_string(o.batch)}, {"epochs", std::to_string(o.epochs)},
                {"seed", std::to_string(o.seed)}, {"tied", fmt(o.tied)}};
  StageRun run(g.outdir, "train-ae", "", cfg, {g.force, g.resume});
  if (!run.begin({{kTrainRecords, "ingest"}, {kExplanations, "explain"}})) return up_to_date(run);

  const auto pairs = llm::load_explanations(run.input(kExplanations).string());
  const auto corpus = ae_corpus(pairs, load_split(g.outdir, kTrainRecords, o.history_len));
  auto vocab = ae::Vocab::build(corpus);
  std::vector<ae::TokenSequence> seqs;
  seqs.reserve(corpus.size());
  for (const auto& t : corpus) seqs.push_back(ae::tokenize_pad(t, vocab, o.maxlen));

  ae::Shape shape;
  shape.vocab = vocab.size();
  shape.maxlen = o.maxlen;
  shape.word_dim = o.dim;
  shape.hidden = o.hidden;
  shape.tied_output = o.tied;
  ae::TrainConfig tc;
  tc.lr = o.lr;
  tc.batch = o.batch;
  tc.epochs = o.epochs;
  tc.seed = o.seed;
  auto result = ae::train_autoencoder(seqs, shape, tc);
  const double acc = ae::reconstruction_accuracy(seqs, result.params, true);

  auto loss = open_out(run.path("loss.csv"));
  loss << "epoch,loss\n";
  for (std::size_t e = 0; e < result.loss_trace.size(); ++e) loss << e << ',' << fmt(result.loss_trace[e]) << '\n';
  loss.close();
  write_json(run.path("report.json"), {{"corpus", corpus.size()},
                                       {"vocab", vocab.size()},
                                       {"token_accuracy", acc},
                                       {"dense_weights", result.params.weight_count()},
                                       {"parameters", result.params.parameter_count()},
                                       {"bottleneck", kEmbeddingDim}});
  ae::Encoder(std::move(vocab), std::move(result.params)).save(run.path("encoder.bin").string());
  run.complete({"encoder.bin", "loss.csv", "report.json"});
  say("train-ae", std::to_string(corpus.size()) + " texts, token accuracy " + fmt(acc));
}

// --- recommender inputs shared by train / eval -------------------------------------

enum class TextSource { none, encoder, hashed };

TextSource text_source(rec::Variant v) {
  if (v == rec::Variant::no_autoencoder) return TextSource::hashed;
  const auto needs = rec::slot_needs(v);
  return needs.pos || needs.neg ? TextSource::encoder : TextSource::none;
}

std::vector<Input> text_inputs(rec::Variant v) {
  switch (text_source(v)) {
    case TextSource::encoder: return {{kExplanations, "explain"}, {kEncoder, "train-ae"}};
    case TextSource::hashed: return {{kExplanations, "explain"}};
    case TextSource::none: break;
  }
  return {};
}

void check_profile_source(const fs::path& outdir, rec::Variant v) {
  if (v != rec::Variant::no_profile_augmentation) return;
  const auto m = Manifest::load(outdir / manifest_rel("explain"));
  if (m && m->config.count("profile_source") && m->config.at("profile_source") != "ingest")
    throw ValidationError("no_profile_augmentation needs explanations generated from item names; run explain in an "
                          "output directory without the augment stage");
}

rec::SlotTable slot_table(const fs::path& outdir, rec::Variant v) {
  const auto source = text_source(v);
  if (source == TextSource::none) return {};
  const auto pairs = llm::load_explanations((outdir / kExplanations).string());
  if (source == TextSource::hashed) {
    const ae::HashedTextEmbedder hashed;
    return rec::embed_slots(pairs, v, [&](const std::string& t) { return hashed.embed(t); });
  }
  const auto encoder = ae::Encoder::load((outdir / kEncoder).string());
  return rec::embed_slots(pairs, v, [&](const std::string& t) { return encoder.embed(t); });
}

std::vector<data::ItemProfile> load_ingest_profiles(const fs::path& outdir) {
  return data::load_profiles((outdir / kIngestProfiles).string());
}

// --- train -----------------------------------------------------------------------

struct TrainOpts {
  std::string variant = "full";
  std::string task = "classification";
  std::string label;
  double lr = 0.01;
  std::size_t batch = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 1;
  std::size_t history_len = data::kDefaultHistoryLen;
  bool linear_output = false;
  bool zero_fill = false;
  double train_fraction = 1.0;
  std::size_t repeats = 1;
  std::string init = "glorot";
  double init_scale = 0.05;
};

// Deterministic subset of the training records, original order kept.
std::vector<data::InteractionRecord> subsample(const std::vector<data::InteractionRecord>& records, double fraction,
                                               std::uint64_t seed) {
  if (fraction >= 1.0) return records;
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ 0x7261746cULL);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(records.size()))));
  std::sort(order.begin(), order.end());
  std::vector<data::InteractionRecord> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(records[i]);
  return out;
}

std::string checkpoint_name(std::size_t rep) { return "model-" + std::to_string(rep) + ".ckpt"; }

void cmd_train(const Global& g, const TrainOpts& o) {
  const auto variant = rec::parse_variant(o.variant);
  const auto task = rec::parse_task(o.task);
  if (!(o.train_fraction > 0.0 && o.train_fraction <= 1.0)) throw ValidationError("--train-fraction must lie in (0, 1]");
  if (o.repeats < 1) throw ValidationError("--repeats must be at least 1");
  if (o.init != "glorot" && o.init != "uniform") throw ValidationError("--init must be glorot or uniform");
  const std::string label = o.label.empty() ? o.variant : o.label;
  if (label.find_first_of("/\\,") != std::string::npos || label == "." || label == "..")
    throw ValidationError("--label must be a plain name");

  ConfigMap cfg{{"variant", o.variant}, {"task", o.task}, {"lr", fmt(o.lr)}, {"batch", std::to_string(o.batch)},
                {"epochs", std::to_string(o.epochs)}, {"seed", std::to_string(o.seed)},
                {"history_len", std::to_string(o.history_len)}, {"linear_output", fmt(o.linear_output)},
                {"zero_fill", fmt(o.zero_fill)}, {"train_fraction", fmt(o.train_fraction)},
                {"repeats", std::to_string(o.repeats)}, {"init", o.init}, {"init_scale", fmt(o.init_scale)}};
  check_profile_source(g.outdir, variant);
  std::vector<Input> inputs{{kTrainRecords, "ingest"}, {kTestRecords, "ingest"}, {kIngestProfiles, "ingest"}};
  for (auto& in : text_inputs(variant)) inputs.push_back(in);
  StageRun run(g.outdir, "train", label, cfg, {g.force, g.resume});
  if (!run.begin(inputs)) return up_to_date(run);

  const auto train_all = load_split(g.outdir, kTrainRecords, o.history_len);
  auto all = train_all;
  const auto test = load_split(g.outdir, kTestRecords, o.history_len);
  all.insert(all.end(), test.begin(), test.end());
  const auto index = rec::IdIndex::build(all, load_ingest_profiles(g.outdir));
  const auto train = subsample(train_all, o.train_fraction, o.seed);

  rec::InputOptions io;
  io.task = task;
  io.linear_output = o.linear_output;
  io.zero_fill_missing = o.zero_fill;
  const auto inputs_rec = rec::build_inputs(train, index, slot_table(g.outdir, variant), variant, io);

  rec::ModelShape shape{index.n_users(), index.n_items(), 0, variant, task, o.linear_output};
  std::vector<std::string> outputs;
  for (std::size_t r = 0; r < o.repeats; ++r) {
    rec::TrainConfig tc;
    tc.lr = o.lr;
    tc.batch = o.batch;
    tc.epochs = o.epochs;
    tc.seed = o.seed + r;
    tc.init = o.init == "glorot" ? rec::Init::glorot : rec::Init::uniform;
    tc.init_scale = o.init_scale;
    auto result = rec::train(inputs_rec, shape, tc);
    const std::string loss_name = "loss-" + std::to_string(r) + ".csv";
    auto loss = open_out(run.path(loss_name));
    loss << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_trace.size(); ++e) loss << e << ',' << fmt(result.loss_trace[e]) << '\n';
    loss.close();
    rec::save_checkpoint(run.path(checkpoint_name(r)).string(), {std::move(result.params), index, tc});
    outputs.push_back(checkpoint_name(r));
    outputs.push_back(loss_name);
    say("train", label + " run " + std::to_string(r) + ": loss " + fmt(result.loss_trace.front()) + " -> " +
                     fmt(result.loss_trace.back()));
  }
  run.complete(outputs);
}

// --- eval ------------------------------------------------------------------------

struct EvalOpts {
  std::vector<std::string> labels;
  std::size_t threads = 1;
  std::size_t history_len = data::kDefaultHistoryLen;
};

std::vector<std::string> trained_labels(const fs::path& outdir) {
  std::vector<std::string> labels;
  const fs::path root = outdir / "train";
  if (!fs::exists(root)) return labels;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto m = Manifest::load(entry.path() / "manifest.json");
    if (entry.is_directory() && m && m->status == "complete") labels.push_back(entry.path().filename().string());
  }
  std::sort(labels.begin(), labels.end());
  return labels;
}

Manifest train_manifest(const fs::path& outdir, const std::string& label) {
  auto m = Manifest::load(outdir / manifest_rel("train", label));
  if (!m || m->status != "complete")
    throw PrerequisiteError("no trained model '" + label + "'; run the 'train' stage first");
  return *m;
}

std::string opt_fmt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

void cmd_eval(const Global& g, const EvalOpts& o) {
  auto labels = o.labels.empty() ? trained_labels(g.outdir) : o.labels;
  if (labels.empty()) throw PrerequisiteError("no trained models in " + g.outdir + "; run the 'train' stage first");
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());

  std::vector<Input> inputs{{kTestRecords, "ingest"}};
  std::map<std::string, Manifest> manifests;
  for (const auto& l : labels) {
    auto m = train_manifest(g.outdir, l);
    const auto reps = std::stoul(m.config.at("repeats"));
    for (std::size_t r = 0; r < reps; ++r) inputs.push_back({"train/" + l + "/" + checkpoint_name(r), "train"});
    for (auto& in : text_inputs(rec::parse_variant(m.config.at("variant")))) inputs.push_back(in);
    manifests.emplace(l, std::move(m));
  }
  // An implicit label set follows the trained runs; only an explicit one is configuration.
  StageRun run(g.outdir, "eval", "", {{"labels", o.labels.empty() ? "all" : join(labels)}}, {g.force, g.resume});
  if (!run.begin(inputs)) return up_to_date(run);
  fs::create_directories(run.path("predictions"));
  fs::create_directories(run.path("attention"));

  const auto test = load_split(g.outdir, kTestRecords, o.history_len);
  std::vector<std::string> outputs{"metrics.csv", "metrics.jsonl"};
  auto csv = open_out(run.path("metrics.csv"));
  auto jsonl = open_out(run.path("metrics.jsonl"));
  csv << "label,variant,task,runs,n,rmse,rmse_sd,mae,mae_sd,auc,auc_sd\n";

  for (const auto& label : labels) {
    const auto& m = manifests.at(label);
    const auto variant = rec::parse_variant(m.config.at("variant"));
    const auto reps = std::stoul(m.config.at("repeats"));
    const auto slots = slot_table(g.outdir, variant);
    std::vector<eval::MetricReport> reports;
    std::vector<rec::Prediction> first;
    std::vector<rec::RecordInput> inputs_rec;
    rec::Task task{};
    for (std::size_t r = 0; r < reps; ++r) {
      const auto ckpt = rec::load_checkpoint((run.input("train/" + label + "/" + checkpoint_name(r))).string());
      task = ckpt.params.shape.task;
      rec::InputOptions io;
      io.task = task;
      io.linear_output = ckpt.params.shape.linear_output;
      io.zero_fill_missing = m.config.at("zero_fill") == "true";
      inputs_rec = rec::build_inputs(test, ckpt.index, slots, variant, io);
      auto preds = rec::predict_batch(inputs_rec, ckpt.params, o.threads);
      std::vector<double> y, yhat;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        y.push_back(inputs_rec[i].target);
        yhat.push_back(preds[i].yhat);
      }
      reports.push_back(eval::compute_metrics(y, yhat, task, label));
      if (r == 0) first = std::move(preds);
    }
    const auto s = eval::summarize(reports);
    csv << csv_field(label) << ',' << rec::to_string(variant) << ',' << rec::to_string(task) << ',' << s.runs << ','
        << reports.front().n << ',' << fmt(s.rmse_mean) << ',' << fmt(s.rmse_sd) << ',' << fmt(s.mae_mean) << ','
        << fmt(s.mae_sd) << ',' << opt_fmt(s.auc_mean) << ',' << opt_fmt(s.auc_sd) << '\n';
    json j{{"label", label}, {"variant", rec::to_string(variant)}, {"task", rec::to_string(task)}, {"runs", s.runs},
           {"n", reports.front().n}, {"rmse", s.rmse_mean}, {"rmse_sd", s.rmse_sd}, {"mae", s.mae_mean},
           {"mae_sd", s.mae_sd}};
    j["auc"] = s.auc_mean ? json(*s.auc_mean) : json(nullptr);
    j["auc_sd"] = s.auc_sd ? json(*s.auc_sd) : json(nullptr);
    jsonl << j.dump() << '\n';

    const std::string pred_rel = "predictions/" + label + ".csv";
    auto pred = open_out(run.path(pred_rel));
    pred << "key,target,yhat\n";
    for (std::size_t i = 0; i < first.size(); ++i)
      pred << csv_field(inputs_rec[i].key) << ',' << fmt(inputs_rec[i].target) << ',' << fmt(first[i].yhat) << '\n';
    pred.close();
    outputs.push_back(pred_rel);

    if (!first.empty() && first.front().attention) {
      const std::string att_rel = "attention/" + label + ".csv";
      auto att = open_out(run.path(att_rel));
      att << "key,yhat";
      for (int a = 0; a < rec::kSlots; ++a)
        for (int b = 0; b < rec::kSlots; ++b) att << ",a" << a << '_' << b;
      att << '\n';
      for (std::size_t i = 0; i < first.size(); ++i) {
        att << csv_field(inputs_rec[i].key) << ',' << fmt(first[i].yhat);
        const auto& w = *first[i].attention;
        for (int a = 0; a < rec::kSlots; ++a)
          for (int b = 0; b < rec::kSlots; ++b) att << ',' << fmt(w(a, b));
        att << '\n';
      }
      att.close();
      outputs.push_back(att_rel);
    }
    say("eval", label + ": rmse " + fmt(s.rmse_mean) + ", auc " + (s.auc_mean ? fmt(*s.auc_mean) : "undefined"));
  }
  csv.close();
  jsonl.close();
  run.complete(outputs);
}

// --- analyze ---------------------------------------------------------------------

struct AnalyzeOpts {
  std::string label = "full";
  double threshold = 0.5;
  std::size_t top_k = 15;
  std::string stopwords;
  std::string item;
  std::string baseline;
};

struct PredictionTable {
  std::vector<std::string> keys;
  std::vector<double> target;
  std::vector<double> yhat;
};

PredictionTable read_predictions(const fs::path& path) {
  PredictionTable t;
  for (const auto& row : read_csv(path, "key,target,yhat")) {
    if (row.size() != 3) throw ValidationError(path.string() + ": expected 3 fields");
    t.keys.push_back(row[0]);
    t.target.push_back(parse_double(row[1], path));
    t.yhat.push_back(parse_double(row[2], path));
  }
  return t;
}

std::vector<std::string> evaluated_labels(const fs::path& outdir) {
  const auto m = Manifest::load(outdir / manifest_rel("eval"));
  if (!m || m->status != "complete") throw PrerequisiteError("no evaluation in " + outdir.string() + "; run the 'eval' stage first");
  std::vector<std::string> labels;
  std::ifstream in(outdir / "eval" / "metrics.jsonl");
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) labels.push_back(json::parse(line).at("label").get<std::string>());
  return labels;
}

double abs_err(double a, double b) { return std::abs(a - b); }

void cmd_analyze(const Global& g, const AnalyzeOpts& o) {
  const auto labels = evaluated_labels(g.outdir);
  if (std::find(labels.begin(), labels.end(), o.label) == labels.end())
    throw PrerequisiteError("label '" + o.label + "' was not evaluated; run 'eval' with it first");

  std::vector<Input> inputs{{kExplanations, "explain"}};
  for (const auto& l : labels) inputs.push_back({"eval/predictions/" + l + ".csv", "eval"});
  const std::string att_rel = "eval/attention/" + o.label + ".csv";
  const bool has_attention = fs::exists(fs::path(g.outdir) / att_rel);
  if (has_attention) inputs.push_back({att_rel, "eval"});
  if (!o.stopwords.empty()) {
    if (!fs::exists(o.stopwords)) throw PrerequisiteError("stopword file " + o.stopwords + " does not exist");
    inputs.push_back({fs::absolute(o.stopwords).string(), "analyze"});
  }
  ConfigMap cfg{{"label", o.label}, {"threshold", fmt(o.threshold)},
                {"top_k", std::to_string(o.top_k)}, {"item", o.item}, {"baseline", o.baseline},
                {"stopwords", o.stopwords.empty() ? "" : "file"}};
  StageRun run(g.outdir, "analyze", "", cfg, {g.force, g.resume});
  if (!run.begin(inputs)) return up_to_date(run);
  std::vector<std::string> outputs;

  if (has_attention) {
    const fs::path path = run.input(att_rel);
    std::string header = "key,yhat";
    for (int a = 0; a < rec::kSlots; ++a)
      for (int b = 0; b < rec::kSlots; ++b) header += ",a" + std::to_string(a) + '_' + std::to_string(b);
    std::vector<rec::SlotWeights> alphas;
    std::vector<double> yhat;
    for (const auto& row : read_csv(path, header)) {
      if (row.size() != 2 + rec::kSlots * rec::kSlots) throw ValidationError(path.string() + ": wrong field count");
      yhat.push_back(parse_double(row[1], path));
      rec::SlotWeights w;
      for (int a = 0; a < rec::kSlots; ++a)
        for (int b = 0; b < rec::kSlots; ++b) w(a, b) = parse_double(row[static_cast<std::size_t>(2 + a * rec::kSlots + b)], path);
      alphas.push_back(w);
    }
    const auto s = eval::attention_summary(alphas, yhat, o.threshold);
    eval::write_histogram_csv(run.path("attention_hist_high.csv").string(), eval::attention_histogram(s.high));
    eval::write_histogram_csv(run.path("attention_hist_low.csv").string(), eval::attention_histogram(s.low));
    eval::write_share_csv(run.path("attention_share.csv").string(), s.slot_share);
    json shares;
    for (std::size_t k = 0; k < s.slot_share.size(); ++k) shares[eval::kSlotNames[k]] = s.slot_share[k];
    write_json(run.path("attention_summary.json"),
               {{"label", o.label}, {"threshold", o.threshold},
                {"mean_pos", s.mean_pos}, {"mean_neg", s.mean_neg},
                {"high", {{"n", s.high.pos.size()}, {"mean_pos", s.high.mean_pos}, {"mean_neg", s.high.mean_neg}}},
                {"low", {{"n", s.low.pos.size()}, {"mean_pos", s.low.mean_pos}, {"mean_neg", s.low.mean_neg}}},
                {"slot_share", shares}});
    for (const char* f : {"attention_hist_high.csv", "attention_hist_low.csv", "attention_share.csv", "attention_summary.json"})
      outputs.push_back(f);
    say("analyze", "attention on pos " + fmt(s.high.mean_pos) + " (predicted high) vs " + fmt(s.low.mean_pos) +
                       " (predicted low)");
  } else {
    log::warn("label '" + o.label + "' has no input attention; attention analysis skipped");
  }

  {
    const auto pairs = llm::load_explanations(run.input(kExplanations).string());
    std::vector<std::string> pos, neg;
    for (const auto& p : pairs) {
      if (!o.item.empty() && p.item_id != o.item) continue;
      pos.push_back(p.positive_text);
      neg.push_back(p.negative_text);
    }
    if (pos.empty()) throw ValidationError("no explanations" + (o.item.empty() ? std::string() : " for item " + o.item));
    const auto blocked = o.stopwords.empty() ? eval::default_stopwords() : eval::load_word_list(o.stopwords);
    auto out = open_out(run.path("keywords.csv"));
    out << "polarity,word,count\n";
    for (const auto& wc : eval::keyword_frequencies(pos, o.top_k, blocked)) out << "positive," << csv_field(wc.word) << ',' << wc.count << '\n';
    for (const auto& wc : eval::keyword_frequencies(neg, o.top_k, blocked)) out << "negative," << csv_field(wc.word) << ',' << wc.count << '\n';
    outputs.push_back("keywords.csv");
  }

  if (labels.size() >= 2) {
    std::map<std::string, PredictionTable> tables;
    for (const auto& l : labels) tables[l] = read_predictions(run.input("eval/predictions/" + l + ".csv"));
    const auto& model = tables.at(o.label);
    for (const auto& [l, t] : tables)
      if (t.keys != model.keys) throw ValidationError("prediction files for '" + l + "' and '" + o.label + "' cover different records");

    std::string baseline = o.baseline;
    if (baseline.empty()) {
      double best = INFINITY;
      for (const auto& [l, t] : tables) {
        if (l == o.label) continue;
        const double e = eval::rmse(t.target, t.yhat);
        if (e < best) {
          best = e;
          baseline = l;
        }
      }
    }
    if (!tables.count(baseline) || baseline == o.label)
      throw ValidationError("baseline '" + baseline + "' must be another evaluated label");

    std::vector<std::vector<double>> ensemble;
    for (const auto& [l, t] : tables) ensemble.push_back(t.yhat);
    const auto unc = eval::uncertainty_scores(ensemble);
    const auto& base = tables.at(baseline);
    std::vector<double> base_err, model_err;
    for (std::size_t i = 0; i < model.keys.size(); ++i) {
      base_err.push_back(abs_err(base.target[i], base.yhat[i]));
      model_err.push_back(abs_err(model.target[i], model.yhat[i]));
    }
    auto out = open_out(run.path("uncertainty.csv"));
    out << "key,variance,normalized,improvement\n";
    for (std::size_t i = 0; i < model.keys.size(); ++i)
      out << csv_field(model.keys[i]) << ',' << fmt(unc.variance[i]) << ',' << fmt(unc.normalized[i]) << ','
          << fmt(base_err[i] - model_err[i]) << '\n';
    out.close();
    outputs.push_back("uncertainty.csv");

    json fit{{"label", o.label}, {"baseline", baseline}, {"models", labels}};
    try {
      const auto f = eval::improvement_vs_uncertainty(base_err, model_err, unc.normalized);
      fit["slope"] = f.slope;
      fit["intercept"] = f.intercept;
      fit["r"] = f.r ? json(*f.r) : json(nullptr);
      fit["n"] = f.n;
      say("analyze", "improvement over " + baseline + " vs uncertainty: slope " + fmt(f.slope));
    } catch (const ValidationError& e) {
      log::warn(std::string("uncertainty fit skipped: ") + e.what());
      fit["error"] = e.what();
    }
    write_json(run.path("uncertainty_fit.json"), fit);
    outputs.push_back("uncertainty_fit.json");
  } else {
    log::warn("uncertainty analysis needs at least two evaluated models; skipped");
  }
  run.complete(outputs);
}

// --- theory ----------------------------------------------------------------------

struct TheoryOpts {
  std::string experiment = "rates";
  int trials = 50;
  std::uint64_t seed = 1;
  std::vector<int> n_grid;
  std::vector<int> p_grid;
  int s_star = -1;
  std::vector<double> gamma_grid;
};

std::string join_ints(const std::vector<int>& v) {
  std::vector<std::string> s;
  for (int x : v) s.push_back(std::to_string(x));
  return join(s);
}

void write_support_csv(const fs::path& path, const std::vector<std::pair<std::string, theory::SelectionResult>>& rows) {
  auto out = open_out(path);
  out << "method,gamma,lambda,trials,exact_recovery,spurious_rate\n";
  for (const auto& [name, r] : rows) {
    out << "eills_" << name << ',' << fmt(r.gamma) << ',' << fmt(r.lambda) << ',' << r.trials << ','
        << fmt(r.eills_exact) << ',' << fmt(r.eills_spurious) << '\n';
  }
  const auto& r = rows.front().second;
  out << "single_env_ols,0,0," << r.trials << ',' << fmt(r.ols_exact) << ',' << fmt(r.ols_spurious) << '\n';
}

void cmd_theory(const Global& g, const TheoryOpts& o) {
  static const std::set<std::string> known{"rates", "nonlinear-rates", "selection", "eills", "lemma2"};
  if (!known.count(o.experiment)) throw ValidationError("unknown experiment " + o.experiment);
  if (o.trials < 1) throw ValidationError("--trials must be positive");
  std::vector<std::string> gammas;
  for (double x : o.gamma_grid) gammas.push_back(fmt(x));
  ConfigMap cfg{{"experiment", o.experiment}, {"trials", std::to_string(o.trials)}, {"seed", std::to_string(o.seed)},
                {"n", join_ints(o.n_grid)}, {"p", join_ints(o.p_grid)}, {"s_star", std::to_string(o.s_star)},
                {"gamma", join(gammas)}};
  StageRun run(g.outdir, "theory", o.experiment, cfg, {g.force, g.resume});
  if (!run.begin({})) return up_to_date(run);
  const std::string csv = o.experiment + ".csv";

  if (o.experiment == "rates") {
    theory::ConvergenceConfig cc;
    cc.trials = o.trials;
    cc.seed = o.seed;
    if (!o.p_grid.empty()) cc.p_grid = o.p_grid;
    if (o.s_star > 0) cc.s_star = o.s_star;
    auto main = theory::convergence_experiment(cc);
    // oracle error against n at the middle p, for the rate slope
    theory::ConvergenceConfig slope = cc;
    slope.lasso = false;
    slope.n_grid = o.n_grid.empty() ? std::vector<int>{250, 500, 1000, 2000, 4000} : o.n_grid;
    slope.p_grid = {cc.p_grid[cc.p_grid.size() / 2]};
    const auto by_n = theory::convergence_experiment(slope);
    auto rows = main.rows;
    for (const auto& r : by_n.rows) {
      const bool dup = std::any_of(rows.begin(), rows.end(), [&](const theory::RateRow& x) {
        return x.method == r.method && x.n == r.n && x.p == r.p;
      });
      if (!dup) rows.push_back(r);
    }
    theory::write_rate_csv(run.path(csv).string(), rows);
    const double s = theory::log_log_slope(by_n.rows, "oracle_ols");
    write_json(run.path("summary.json"), {{"lasso_c", main.c}, {"oracle_slope", s}, {"slope_p", slope.p_grid.front()}});
    run.complete({csv, "summary.json"});
    say("theory", "rates written, lasso c " + fmt(main.c) + ", oracle log-log slope " + fmt(s));
    return;
  }
  if (o.experiment == "nonlinear-rates") {
    const int n = o.n_grid.empty() ? 10000 : o.n_grid.front();
    const auto p = o.p_grid.empty() ? std::vector<int>{20, 50, 100, 200, 500, 1000} : o.p_grid;
    theory::write_rate_csv(run.path(csv).string(), theory::rate_curves_nonlinear(n, o.s_star > 0 ? o.s_star : 20, p));
    run.complete({csv});
    say("theory", "nonlinear rate curves written");
    return;
  }

  theory::SelectionConfig sc;
  sc.trials = o.trials;
  sc.seed = o.seed;
  if (!o.n_grid.empty()) sc.n = o.n_grid.front();
  if (!o.p_grid.empty()) sc.p = o.p_grid.front();
  if (o.s_star > 0) sc.s_star = o.s_star;
  sc.spurious = o.experiment != "selection";
  std::vector<std::pair<std::string, theory::SelectionResult>> results;
  if (o.experiment == "eills") {
    const auto grid = o.gamma_grid.empty() ? std::vector<double>{0.0, 1.0, 5.0, 20.0} : o.gamma_grid;
    for (double gn : grid) {
      sc.gamma = gn / sc.n;  // given in units of 1/n
      results.emplace_back("gamma_n=" + fmt(gn), theory::selection_experiment(sc));
    }
  } else {
    results.emplace_back("default", theory::selection_experiment(sc));
  }
  std::vector<theory::RateRow> rows;
  for (const auto& [name, r] : results)
    rows.push_back({"eills_" + name, sc.n, sc.p + (sc.spurious ? 1 : 0), sc.s_star, r.eills_mean_err, r.eills_sd_err});
  const auto& first = results.front().second;
  rows.push_back({"single_env_ols", sc.n, sc.p + (sc.spurious ? 1 : 0), sc.s_star, first.ols_mean_err, first.ols_sd_err});
  theory::write_rate_csv(run.path(csv).string(), rows);
  write_support_csv(run.path(o.experiment + "_support.csv"), results);
  run.complete({csv, o.experiment + "_support.csv"});
  say("theory", o.experiment + ": EILLS exact recovery " + fmt(first.eills_exact) + ", spurious " +
                    fmt(first.eills_spurious) + "; single-environment OLS spurious " + fmt(first.ols_spurious));
}

// Global options plus the invoked stage's section, in the --config format.
std::string effective_ini(const CLI::App& app, const CLI::App& sub) {
  std::ostringstream out;
  const auto dump = [&](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (opt->get_lnames().empty() || name == "help" || name == "config" || name == "force" || name == "resume") continue;
      std::string value = opt->count() ? join(opt->results()) : opt->get_default_str();
      if (opt->get_type_size() == 0 && opt->count()) value = "true";
      if (value.empty()) continue;
      if (opt->get_items_expected_max() > 1) value = "[" + value + "]";
      out << name << '=' << value << '\n';
    }
  };
  dump(app);
  out << "\n[" << sub.get_name() << "]\n";
  dump(sub);
  return out.str();
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const BackendError*>(&e)) return kExitBackend;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const PrerequisiteError*>(&e)) return kExitValidation;
  return kExitOther;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Explanation-augmented recommender workbench"};
  app.set_config("--config", "", "INI file; [section] per stage, flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  app.add_option("--outdir", g.outdir, "Output directory; artifacts go to <outdir>/<stage>/")->required();
  app.add_flag("--force", g.force, "Overwrite outputs produced with a different configuration");
  app.add_flag("--resume", g.resume, "Continue a stage that stopped with pending backend work");
  app.add_flag("--verbose", g.verbose, "Progress logging");

  IngestOpts ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Load or generate records and split them");
  c_ingest->add_option("--records", ingest.records, "Records file (one JSON object per line)");
  c_ingest->add_option("--profiles", ingest.profiles, "Item profile file");
  c_ingest->add_flag("--synthetic", ingest.synthetic, "Generate planted-signal data instead");
  c_ingest->add_option("--n-users", ingest.n_users)->capture_default_str();
  c_ingest->add_option("--n-items", ingest.n_items)->capture_default_str();
  c_ingest->add_option("--n-tokens", ingest.n_tokens, "Planted reason tokens")->capture_default_str();
  c_ingest->add_option("--noise", ingest.noise, "Label flip probability")->capture_default_str();
  c_ingest->add_option("--seed", ingest.seed)->capture_default_str();
  c_ingest->add_option("--history-len", ingest.history_len)->capture_default_str();
  c_ingest->add_option("--split-ratio", ingest.split_ratio)->capture_default_str();

  AugmentOpts augment;
  auto* c_augment = app.add_subcommand("augment", "Optional item profile augmentation");
  c_augment->add_flag("--augment", augment.enabled, "Generate profiles (otherwise names are kept)");
  c_augment->add_option("--domain", augment.domain)->check(CLI::IsMember({"product", "movie", "restaurant", "hotel"}))->capture_default_str();
  augment.backend.add(c_augment);

  ExplainOpts explain;
  auto* c_explain = app.add_subcommand("explain", "Generate positive and negative explanations");
  c_explain->add_option("--domain", explain.domain)->check(CLI::IsMember({"product", "movie", "restaurant", "hotel"}))->capture_default_str();
  c_explain->add_option("--alternatives", explain.alternatives, "Extra texts: aspect, general, summary");
  c_explain->add_option("--max-words", explain.max_words)->capture_default_str();
  c_explain->add_option("--history-len", explain.history_len)->capture_default_str();
  explain.backend.add(c_explain);

  AeOpts aeo;
  auto* c_ae = app.add_subcommand("train-ae", "Train the explanation AutoEncoder");
  c_ae->add_option("--maxlen", aeo.maxlen)->capture_default_str();
  c_ae->add_option("--dim", aeo.dim, "Word embedding size")->capture_default_str();
  c_ae->add_option("--hidden", aeo.hidden)->capture_default_str();
  c_ae->add_option("--lr", aeo.lr)->capture_default_str();
  c_ae->add_option("--batch", aeo.batch)->capture_default_str();
  c_ae->add_option("--epochs", aeo.epochs)->capture_default_str();
  c_ae->add_option("--seed", aeo.seed)->capture_default_str();
  c_ae->add_flag("--tied", aeo.tied, "Score outputs against the input word table");
  c_ae->add_option("--history-len", aeo.history_len)->capture_default_str();

  TrainOpts train;
  auto* c_train = app.add_subcommand("train", "Train the recommender");
  c_train->add_option("--variant", train.variant)->capture_default_str();
  c_train->add_option("--task", train.task)->check(CLI::IsMember({"classification", "regression"}))->capture_default_str();
  c_train->add_option("--label", train.label, "Run name under train/ (default: variant)");
  c_train->add_option("--lr", train.lr)->capture_default_str();
  c_train->add_option("--batch", train.batch)->capture_default_str();
  c_train->add_option("--epochs", train.epochs)->capture_default_str();
  c_train->add_option("--seed", train.seed)->capture_default_str();
  c_train->add_option("--history-len", train.history_len)->capture_default_str();
  c_train->add_flag("--linear-output", train.linear_output, "Regression on raw ratings without the sigmoid");
  c_train->add_flag("--zero-fill", train.zero_fill, "Missing explanation embeddings become zeros");
  c_train->add_option("--train-fraction", train.train_fraction, "Share of training records used")->capture_default_str();
  c_train->add_option("--repeats", train.repeats, "Models trained with seeds seed, seed+1, ...")->capture_default_str();
  c_train->add_option("--init", train.init)->check(CLI::IsMember({"glorot", "uniform"}))->capture_default_str();
  c_train->add_option("--init-scale", train.init_scale)->capture_default_str();

  EvalOpts evalo;
  auto* c_eval = app.add_subcommand("eval", "Score trained models on the test split");
  c_eval->add_option("--labels", evalo.labels, "Runs to evaluate (default: all)");
  c_eval->add_option("--threads", evalo.threads)->capture_default_str();
  c_eval->add_option("--history-len", evalo.history_len)->capture_default_str();

  AnalyzeOpts an;
  auto* c_analyze = app.add_subcommand("analyze", "Attention, keyword and uncertainty analyses");
  c_analyze->add_option("--label", an.label)->capture_default_str();
  c_analyze->add_option("--threshold", an.threshold, "Predicted-high cut")->capture_default_str();
  c_analyze->add_option("--top-k", an.top_k)->capture_default_str();
  c_analyze->add_option("--stopwords", an.stopwords, "Replacement word list");
  c_analyze->add_option("--item", an.item, "Restrict keywords to one item");
  c_analyze->add_option("--baseline", an.baseline, "Baseline label (default: best RMSE)");

  TheoryOpts th;
  auto* c_theory = app.add_subcommand("theory", "Statistical simulations");
  c_theory->add_option("--experiment", th.experiment)
      ->check(CLI::IsMember({"rates", "nonlinear-rates", "selection", "eills", "lemma2"}))
      ->capture_default_str();
  c_theory->add_option("--trials", th.trials)->capture_default_str();
  c_theory->add_option("--seed", th.seed)->capture_default_str();
  c_theory->add_option("--n", th.n_grid, "Sample sizes");
  c_theory->add_option("--p", th.p_grid, "Dimensions");
  c_theory->add_option("--s-star", th.s_star, "Support size");
  c_theory->add_option("--gamma-n", th.gamma_grid, "EILLS gamma values in units of 1/n");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  log::set_verbose(g.verbose);
  try {
    OutdirLock lock(g.outdir);
    if (c_ingest->parsed()) cmd_ingest(g, ingest);
    else if (c_augment->parsed()) cmd_augment(g, augment);
    else if (c_explain->parsed()) cmd_explain(g, explain);
    else if (c_ae->parsed()) cmd_train_ae(g, aeo);
    else if (c_train->parsed()) cmd_train(g, train);
    else if (c_eval->parsed()) cmd_eval(g, evalo);
    else if (c_analyze->parsed()) cmd_analyze(g, an);
    else if (c_theory->parsed()) cmd_theory(g, th);
    // the effective configuration, readable back through --config
    std::ofstream(fs::path(g.outdir) / "last_run.ini", std::ios::trunc) << effective_ini(app, *app.get_subcommands().front());
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace lrrec::cli
