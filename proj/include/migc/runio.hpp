#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace migc {

// FNV-1a over a file's raw bytes; provenance fingerprint for manifests.
uint64_t hash_file(const std::string& path);  // ConfigError when unreadable
std::string hex64(uint64_t v);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Creates <root>/<name>-<utc stamp>[-k] (k disambiguates collisions within a
// second) and returns the path. Every run directory gets the resolved config
// snapshot plus a manifest, so results stay auditable and replayable.
std::string make_run_dir(const std::string& root, const std::string& name);

// Line-delimited manifest: one self-contained record per line, written in
// insertion order so identical runs produce identical files.
struct RunLog {
  std::vector<std::string> lines;

  void add_file(const std::string& role, const std::string& path);  // records the hash
  void add_note(const std::string& role, const std::string& text);
  void save(const std::string& path) const;
};

}  // namespace migc
