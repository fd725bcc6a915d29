#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lrrec::cli {

namespace fs = std::filesystem;

using ConfigMap = std::map<std::string, std::string>;

// Written next to a stage's artifacts. Paths are relative to the output
// directory; hashes are FNV-1a of the file bytes.
struct Manifest {
  std::string stage;
  std::string status = "complete";  // or "partial"
  std::string config_hash;
  ConfigMap config;
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::size_t backend_calls = 0;

  void save(const fs::path& path) const;
  // nullopt when the file is absent; ValidationError when unreadable.
  static std::optional<Manifest> load(const fs::path& path);
};

std::string config_hash(const ConfigMap& config);

// One stage at a time per output directory. Holding the object holds the
// lock; the file is removed on destruction.
class OutdirLock {
 public:
  explicit OutdirLock(const fs::path& outdir);
  ~OutdirLock();
  OutdirLock(const OutdirLock&) = delete;
  OutdirLock& operator=(const OutdirLock&) = delete;

 private:
  fs::path path_;
};

// An artifact a stage reads, and the stage that writes it.
struct Input {
  std::string rel;  // relative to the output directory
  std::string producer;
};

struct RunFlags {
  bool force = false;   // overwrite despite a configuration change
  bool resume = false;  // continue a stage that stopped with pending work
};

class StageRun {
 public:
  // `label` adds a sub-directory, e.g. train/<label>.
  StageRun(fs::path outdir, std::string stage, std::string label, ConfigMap config, RunFlags flags);

  // Hashes inputs and compares with the previous manifest. Returns false
  // when every recorded output is present and unchanged, so the stage has
  // nothing to do. Throws PrerequisiteError for a missing input and
  // ValidationError when the configuration changed without --force or a
  // partial run is restarted without --resume/--force.
  bool begin(const std::vector<Input>& inputs);

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& file) const { return dir_ / file; }
  fs::path input(const std::string& rel) const { return outdir_ / rel; }
  const Manifest& manifest() const { return manifest_; }

  // Records outputs (relative to dir()) and writes the manifest.
  void complete(const std::vector<std::string>& outputs, std::size_t backend_calls = 0);
  void partial(const std::vector<std::string>& outputs, std::size_t backend_calls);

 private:
  void finish(const std::string& status, const std::vector<std::string>& outputs, std::size_t calls);

  fs::path outdir_;
  fs::path dir_;
  RunFlags flags_;
  Manifest manifest_;
};

// Relative artifact path for a stage's manifest.
std::string manifest_rel(const std::string& stage, const std::string& label = {});

}  // namespace lrrec::cli
