#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "acctdst/common.hpp"
#include "acctdst/metrics.hpp"

namespace acctdst {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// `git rev-parse HEAD` of the working directory, or "unknown".
inline std::string git_revision() {
  std::string out;
  if (FILE* p = popen("git rev-parse HEAD 2>/dev/null", "r")) {
    char buf[128];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    pclose(p);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? "unknown" : out;
}

/// Everything one CLI command produced. `metrics` maps a variant name
/// (base, account, self-correct, ...) to its MetricsReport JSON.
struct RunRecord {
  std::string id;
  std::string command;
  std::string created_at;
  json config = json::object();
  std::string config_hash;
  std::string corpus_hash;
  std::string git_revision;
  json checkpoints = json::object();  // name -> {path, hash}
  json metrics = json::object();
  json grids = json::object();
  json extra = json::object();

  json to_json() const {
    return {{"id", id},
            {"command", command},
            {"created_at", created_at},
            {"config", config},
            {"config_hash", config_hash},
            {"corpus_hash", corpus_hash},
            {"git_revision", git_revision},
            {"checkpoints", checkpoints},
            {"metrics", metrics},
            {"grids", grids},
            {"extra", extra}};
  }
  static RunRecord from_json(const json& j) {
    RunRecord r;
    r.id = j.at("id").get<std::string>();
    r.command = j.value("command", "");
    r.created_at = j.value("created_at", "");
    r.config = j.value("config", json::object());
    r.config_hash = j.value("config_hash", "");
    r.corpus_hash = j.value("corpus_hash", "");
    r.git_revision = j.value("git_revision", "");
    r.checkpoints = j.value("checkpoints", json::object());
    r.metrics = j.value("metrics", json::object());
    r.grids = j.value("grids", json::object());
    r.extra = j.value("extra", json::object());
    return r;
  }
};

/// Append-only run directory: one <id>.json per run plus index.json.
class RunStore {
 public:
  explicit RunStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  /// Assigns the id, writes the record, appends to the index. Returns the id.
  std::string append(RunRecord rec) {
    std::lock_guard lock(mu_);
    json index = read_index();
    char id[64];
    std::snprintf(id, sizeof id, "run-%04zu-%s", index.size() + 1, rec.command.c_str());
    rec.id = id;
    if (rec.created_at.empty()) rec.created_at = utc_timestamp();
    const auto path = dir_ / (rec.id + ".json");
    if (std::filesystem::exists(path)) throw Error("io_error", "run file exists: " + path.string());
    write_file(path.string(), rec.to_json().dump(2) + "\n");
    index.push_back({{"id", rec.id},
                     {"command", rec.command},
                     {"created_at", rec.created_at},
                     {"config_hash", rec.config_hash}});
    const auto tmp = dir_ / "index.json.tmp";
    write_file(tmp.string(), index.dump(2) + "\n");
    std::filesystem::rename(tmp, dir_ / "index.json");
    return rec.id;
  }

  json list() const {
    std::lock_guard lock(mu_);
    return read_index();
  }

  std::optional<RunRecord> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    if (id.find('/') != std::string::npos || id.find("..") != std::string::npos) return std::nullopt;
    const auto path = dir_ / (id + ".json");
    if (!std::filesystem::exists(path)) return std::nullopt;
    return RunRecord::from_json(json::parse(read_file(path.string())));
  }

 private:
  json read_index() const {
    const auto path = dir_ / "index.json";
    if (!std::filesystem::exists(path)) return json::array();
    return json::parse(read_file(path.string()));
  }

  std::filesystem::path dir_;
  mutable std::mutex mu_;
};

}  // namespace acctdst
