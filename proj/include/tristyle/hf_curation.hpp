#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tristyle/errors.hpp"
#include "tristyle/lora_finetune.hpp"

namespace httplib {
class Server;
}

namespace tristyle {

struct Candidate {
  CandidateRecord record;
  bool selected = false;
  std::string selected_at;
  std::string selected_by;

  nlohmann::json to_json() const;
};

struct CurationSession {
  std::string id;
  std::string name;
  int stage = 1;
  StageItem reference;
  StageQuotas quotas;
  std::string created_at;
  std::map<std::string, Candidate> candidates;
  // Frozen datasets by stage; stage 1 holds the reference alone.
  std::map<int, StageDataset> datasets;

  int selected_count(int at_stage) const;
  nlohmann::json status() const;
  nlohmann::json to_json() const;
  static CurationSession from_json(const nlohmann::json& j);
};

struct CandidatePage {
  int page = 0;
  int page_size = 50;
  int total = 0;
  std::vector<Candidate> items;

  int pages() const { return (total + page_size - 1) / page_size; }
  nlohmann::json to_json() const;
};

struct SelectionResult {
  int selected = 0;
  int quota = 0;
  nlohmann::json to_json() const { return {{"selected", selected}, {"quota", quota}}; }
};

// State is an append-only events.jsonl replayed over the last snapshot.json.
// A torn final line is dropped on load; any other corrupt line is an io error.
class CurationStore {
 public:
  static constexpr int kPageSize = 50;

  explicit CurationStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  CurationSession create_session(const std::string& name, const StageItem& reference, const StageQuotas& quotas,
                                 const std::string& actor = "local");
  std::vector<CurationSession> sessions() const;
  CurationSession session(const std::string& id) const;

  // Registers generated images. Ids already present are ignored.
  int add_candidates(const std::string& session_id, const std::vector<CandidateRecord>& records,
                     const std::string& actor = "local");
  CandidatePage list_candidates(const std::string& session_id, int stage, int page) const;

  // All-or-nothing: a quota overflow or bad id leaves the selection unchanged.
  SelectionResult select(const std::string& session_id, const std::vector<std::string>& ids,
                         const std::string& actor = "local");
  SelectionResult deselect(const std::string& session_id, const std::vector<std::string>& ids,
                           const std::string& actor = "local");
  StageDataset promote(const std::string& session_id, const std::string& actor = "local");

  // Path of a candidate or reference image by id, searching all sessions.
  std::optional<std::filesystem::path> image_path(const std::string& image_id,
                                                  const std::string& session_id = {}) const;
  std::filesystem::path dataset_path(const std::string& session_id, int stage) const;

  std::uint64_t last_seq() const;
  void write_snapshot();

 private:
  void load();
  void apply(const nlohmann::json& event);
  nlohmann::json append(nlohmann::json event);
  CurationSession& mutable_session(const std::string& id);
  const CurationSession& find_session(const std::string& id) const;
  void write_snapshot_locked();

  std::filesystem::path root_;
  mutable std::shared_mutex mu_;
  std::map<std::string, CurationSession> sessions_;
  std::uint64_t seq_ = 0;
  std::uint64_t since_snapshot_ = 0;
};

// HTTP status code for a library error kind.
int http_status(ErrorKind kind);

// JSON API under /api/v1. The X-Curator header names the actor in the log.
class CurationServer {
 public:
  explicit CurationServer(CurationStore& store);
  ~CurationServer();
  CurationServer(const CurationServer&) = delete;
  CurationServer& operator=(const CurationServer&) = delete;

  // Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  void routes();

  CurationStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace tristyle
