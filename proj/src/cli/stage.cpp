#include "lrrec/cli/stage.hpp"

#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lrrec/common/error.hpp"
#include "lrrec/common/hash.hpp"

namespace lrrec::cli {

using nlohmann::json;

void Manifest::save(const fs::path& path) const {
  json j;
  j["stage"] = stage;
  j["version"] = 1;
  j["status"] = status;
  j["config_hash"] = config_hash;
  j["config"] = config;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["backend_calls"] = backend_calls;
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

std::optional<Manifest> Manifest::load(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  try {
    const json j = json::parse(in);
    Manifest m;
    m.stage = j.at("stage").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = j.at("config").get<ConfigMap>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.backend_calls = j.value("backend_calls", std::size_t{0});
    return m;
  } catch (const json::exception& e) {
    throw ValidationError("unreadable manifest " + path.string() + ": " + e.what());
  }
}

std::string config_hash(const ConfigMap& config) {
  std::string text;
  for (const auto& [k, v] : config) text += k + '=' + v + '\n';
  return fingerprint(text);
}

OutdirLock::OutdirLock(const fs::path& outdir) : path_(outdir / ".lock") {
  fs::create_directories(outdir);
  // "x": fail if the file exists, atomically
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f)
    throw ValidationError("another stage is running in " + outdir.string() + " (remove " + path_.string() +
                          " if no run is active)");
  std::fclose(f);
}

OutdirLock::~OutdirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string manifest_rel(const std::string& stage, const std::string& label) {
  return (label.empty() ? fs::path(stage) : fs::path(stage) / label).append("manifest.json").string();
}

StageRun::StageRun(fs::path outdir, std::string stage, std::string label, ConfigMap config, RunFlags flags)
    : outdir_(std::move(outdir)), flags_(flags) {
  dir_ = label.empty() ? outdir_ / stage : outdir_ / stage / label;
  manifest_.stage = std::move(stage);
  manifest_.config = std::move(config);
  manifest_.config_hash = config_hash(manifest_.config);
}

bool StageRun::begin(const std::vector<Input>& inputs) {
  for (const auto& in : inputs) {
    const fs::path p = outdir_ / in.rel;
    if (!fs::exists(p))
      throw PrerequisiteError("missing " + p.string() + "; run the '" + in.producer + "' stage first");
    manifest_.inputs[in.rel] = file_fingerprint(p.string());
  }

  const auto previous = Manifest::load(dir_ / "manifest.json");
  if (previous) {
    if (previous->config_hash != manifest_.config_hash && !flags_.force)
      throw ValidationError("'" + manifest_.stage + "' output in " + dir_.string() +
                            " was produced with a different configuration; rerun with --force to overwrite");
    if (previous->status != "complete" && !flags_.resume && !flags_.force)
      throw ValidationError("'" + manifest_.stage + "' stopped with pending work; rerun with --resume to continue "
                            "or --force to start over");
    if (previous->status == "complete" && previous->config_hash == manifest_.config_hash &&
        previous->inputs == manifest_.inputs) {
      bool intact = true;
      for (const auto& [rel, hash] : previous->outputs) intact = intact && file_fingerprint((outdir_ / rel).string()) == hash;
      if (intact) {
        manifest_ = *previous;
        return false;
      }
    }
  }
  fs::create_directories(dir_);
  return true;
}

void StageRun::finish(const std::string& status, const std::vector<std::string>& outputs, std::size_t calls) {
  manifest_.status = status;
  manifest_.backend_calls = calls;
  manifest_.outputs.clear();
  for (const auto& o : outputs) {
    const fs::path p = dir_ / o;
    manifest_.outputs[fs::relative(p, outdir_).string()] = file_fingerprint(p.string());
  }
  manifest_.save(dir_ / "manifest.json");
}

void StageRun::complete(const std::vector<std::string>& outputs, std::size_t backend_calls) {
  finish("complete", outputs, backend_calls);
}

void StageRun::partial(const std::vector<std::string>& outputs, std::size_t backend_calls) {
  finish("partial", outputs, backend_calls);
}

}  // namespace lrrec::cli
