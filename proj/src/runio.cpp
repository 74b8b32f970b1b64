#include "migc/runio.hpp"

#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "migc/tensor.hpp"

namespace fs = std::filesystem;

namespace migc {

uint64_t hash_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot hash unreadable file '" + path + "'");
  uint64_t h = 14695981039346656037ull;  // FNV-1a 64 offset basis
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  os << content;
  if (!os) throw ConfigError("write to '" + path + "' failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string make_run_dir(const std::string& root, const std::string& name) {
  fs::create_directories(root);
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  for (int k = 0;; ++k) {
    fs::path p = fs::path(root) / (name + "-" + stamp + (k ? "-" + std::to_string(k) : ""));
    if (!fs::exists(p)) {
      fs::create_directories(p);
      return p.string();
    }
  }
}

void RunLog::add_file(const std::string& role, const std::string& path) {
  nlohmann::json j;
  j["role"] = role;
  j["path"] = fs::path(path).filename().string();
  j["fnv1a"] = hex64(hash_file(path));
  lines.push_back(j.dump());
}

void RunLog::add_note(const std::string& role, const std::string& text) {
  nlohmann::json j;
  j["role"] = role;
  j["note"] = text;
  lines.push_back(j.dump());
}

void RunLog::save(const std::string& path) const {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  write_text_file(path, out);
}

}  // namespace migc
