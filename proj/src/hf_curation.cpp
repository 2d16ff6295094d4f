#include "tristyle/hf_curation.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iterator>
#include <mutex>
#include <set>

#include <fcntl.h>
#include <unistd.h>

#include <httplib.h>

namespace tristyle {

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

nlohmann::json item_json(const StageItem& it) {
  return {{"id", it.id}, {"image", it.image.string()}, {"caption", it.caption}};
}

StageItem item_from(const nlohmann::json& j) {
  return {j.at("id").get<std::string>(), j.at("image").get<std::string>(), j.at("caption").get<std::string>()};
}

void write_all(int fd, const std::string& bytes, const std::filesystem::path& path) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + off, bytes.size() - off);
    if (n < 0) fail(ErrorKind::Io, "write to " + path.string() + " failed");
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

nlohmann::json Candidate::to_json() const {
  nlohmann::json j = record.to_json();
  j["selected"] = selected;
  if (selected) {
    j["selected_at"] = selected_at;
    j["selected_by"] = selected_by;
  }
  return j;
}

int CurationSession::selected_count(int at_stage) const {
  return static_cast<int>(std::count_if(candidates.begin(), candidates.end(), [&](const auto& kv) {
    return kv.second.selected && kv.second.record.stage == at_stage;
  }));
}

nlohmann::json CurationSession::status() const {
  nlohmann::json sizes = nlohmann::json::object();
  for (const auto& [s, d] : datasets) sizes[std::to_string(s)] = d.size();
  int in_stage = 0;
  for (const auto& [id, c] : candidates) in_stage += c.record.stage == stage;
  nlohmann::json j{{"id", id},
                   {"name", name},
                   {"stage", stage},
                   {"reference", item_json(reference)},
                   {"quotas", quotas.to_json()},
                   {"created_at", created_at},
                   {"candidates", in_stage},
                   {"dataset_sizes", sizes},
                   {"final", stage >= 3}};
  if (stage < 3) {
    j["selected"] = selected_count(stage);
    j["quota"] = quotas.quota_after(stage);
  }
  return j;
}

nlohmann::json CurationSession::to_json() const {
  nlohmann::json cands = nlohmann::json::array();
  for (const auto& [id, c] : candidates) cands.push_back(c.to_json());
  nlohmann::json ds = nlohmann::json::object();
  for (const auto& [s, d] : datasets) ds[std::to_string(s)] = d.to_json();
  return {{"id", id},         {"name", name}, {"stage", stage},         {"reference", item_json(reference)},
          {"quotas", quotas.to_json()}, {"created_at", created_at}, {"candidates", cands}, {"datasets", ds}};
}

CurationSession CurationSession::from_json(const nlohmann::json& j) {
  CurationSession s;
  s.id = j.at("id").get<std::string>();
  s.name = j.value("name", "");
  s.stage = j.at("stage").get<int>();
  s.reference = item_from(j.at("reference"));
  s.quotas = StageQuotas::from_json(j.at("quotas"));
  s.created_at = j.value("created_at", "");
  for (const auto& c : j.at("candidates")) {
    Candidate cand{CandidateRecord::from_json(c), c.value("selected", false), c.value("selected_at", ""),
                   c.value("selected_by", "")};
    s.candidates.emplace(cand.record.id, std::move(cand));
  }
  for (const auto& [k, d] : j.at("datasets").items()) s.datasets.emplace(std::stoi(k), StageDataset::from_json(d));
  return s;
}

nlohmann::json CandidatePage::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : items) arr.push_back(c.to_json());
  return {{"page", page}, {"page_size", page_size}, {"total", total}, {"pages", pages()}, {"items", arr}};
}

CurationStore::CurationStore(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
  load();
}

void CurationStore::load() {
  std::uint64_t snap_seq = 0;
  const auto snap_path = root_ / "snapshot.json";
  if (std::ifstream is(snap_path); is) {
    try {
      const auto snap = nlohmann::json::parse(is);
      snap_seq = snap.at("seq").get<std::uint64_t>();
      for (const auto& s : snap.at("sessions")) {
        auto sess = CurationSession::from_json(s);
        sessions_.emplace(sess.id, std::move(sess));
      }
    } catch (const nlohmann::json::exception&) {
      // A snapshot is only a cache of the log; rebuild from scratch.
      sessions_.clear();
      snap_seq = 0;
    }
  }
  seq_ = snap_seq;

  const auto log_path = root_ / "events.jsonl";
  std::ifstream is(log_path, std::ios::binary);
  if (!is) return;
  const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  std::size_t pos = 0, good_end = 0;
  int line_no = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = text.substr(pos, complete ? nl - pos : std::string::npos);
    const std::size_t next = complete ? nl + 1 : text.size();
    ++line_no;
    nlohmann::json ev;
    try {
      ev = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      if (next >= text.size()) break;  // torn final write
      fail(ErrorKind::Io, "corrupt event at line " + std::to_string(line_no) + " of " + log_path.string(),
           {{"line", line_no}});
    }
    if (!complete) break;  // parsed, but the newline never landed: treat as torn
    const auto seq = ev.at("seq").get<std::uint64_t>();
    if (seq > snap_seq) {
      apply(ev);
      seq_ = seq;
    }
    good_end = next;
    pos = next;
  }
  if (good_end < text.size()) std::filesystem::resize_file(log_path, good_end);
}

nlohmann::json CurationStore::append(nlohmann::json event) {
  event["seq"] = seq_ + 1;
  event["ts"] = now_iso8601();
  const auto path = root_ / "events.jsonl";
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) fail(ErrorKind::Io, "cannot open " + path.string());
  try {
    write_all(fd, event.dump() + "\n", path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::fsync(fd);
  ::close(fd);
  apply(event);
  seq_ = event["seq"].get<std::uint64_t>();
  if (++since_snapshot_ >= 200) write_snapshot_locked();
  return event;
}

void CurationStore::apply(const nlohmann::json& ev) {
  const std::string type = ev.at("type").get<std::string>();
  const std::string ts = ev.at("ts").get<std::string>();
  if (type == "create_session") {
    CurationSession s;
    s.id = ev.at("session").get<std::string>();
    s.name = ev.value("name", "");
    s.reference = item_from(ev.at("reference"));
    s.quotas = StageQuotas::from_json(ev.at("quotas"));
    s.created_at = ts;
    s.datasets.emplace(1, StageDataset{1, {s.reference}});
    sessions_[s.id] = std::move(s);
    return;
  }
  auto& s = mutable_session(ev.at("session").get<std::string>());
  if (type == "add_candidates") {
    for (const auto& r : ev.at("records")) {
      auto rec = CandidateRecord::from_json(r);
      const std::string id = rec.id;
      s.candidates.emplace(id, Candidate{std::move(rec), false, "", ""});
    }
  } else if (type == "select" || type == "deselect") {
    const bool on = type == "select";
    for (const auto& id : ev.at("ids")) {
      auto& c = s.candidates.at(id.get<std::string>());
      c.selected = on;
      c.selected_at = on ? ts : "";
      c.selected_by = on ? ev.value("actor", "") : "";
    }
  } else if (type == "promote") {
    const auto ds = StageDataset::from_json(ev.at("dataset"));
    s.datasets[ds.stage] = ds;
    s.stage = ds.stage;
  } else {
    fail(ErrorKind::Io, "unknown event type '" + type + "' in curation log");
  }
}

void CurationStore::write_snapshot_locked() {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, s] : sessions_) arr.push_back(s.to_json());
  const auto path = root_ / "snapshot.json";
  const auto tmp = root_ / "snapshot.json.tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) fail(ErrorKind::Io, "cannot write " + tmp.string());
    os << nlohmann::json{{"seq", seq_}, {"sessions", arr}}.dump() << '\n';
  }
  std::filesystem::rename(tmp, path);
  since_snapshot_ = 0;
}

void CurationStore::write_snapshot() {
  std::unique_lock lock(mu_);
  write_snapshot_locked();
}

std::uint64_t CurationStore::last_seq() const {
  std::shared_lock lock(mu_);
  return seq_;
}

CurationSession& CurationStore::mutable_session(const std::string& id) {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorKind::NotFound, "unknown session " + id, {{"session", id}});
  return it->second;
}

const CurationSession& CurationStore::find_session(const std::string& id) const {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorKind::NotFound, "unknown session " + id, {{"session", id}});
  return it->second;
}

CurationSession CurationStore::create_session(const std::string& name, const StageItem& reference,
                                              const StageQuotas& quotas, const std::string& actor) {
  if (reference.id.empty() || reference.caption.empty())
    fail(ErrorKind::InvalidInput, "reference image needs an id and a caption");
  if (!std::filesystem::is_regular_file(reference.image))
    fail(ErrorKind::NotFound, "reference image " + reference.image.string() + " does not exist");
  if (quotas.stage1_to_2 < 1 || quotas.stage2_to_3 < 1) fail(ErrorKind::InvalidInput, "stage quotas must be positive");
  std::unique_lock lock(mu_);
  const std::string id = "session-" + std::to_string(sessions_.size() + 1);
  append({{"type", "create_session"},
          {"session", id},
          {"name", name},
          {"reference", item_json({reference.id, std::filesystem::absolute(reference.image), reference.caption})},
          {"quotas", quotas.to_json()},
          {"actor", actor}});
  const auto& s = sessions_.at(id);
  s.datasets.at(1).save(dataset_path(id, 1));
  return s;
}

std::vector<CurationSession> CurationStore::sessions() const {
  std::shared_lock lock(mu_);
  std::vector<CurationSession> out;
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

CurationSession CurationStore::session(const std::string& id) const {
  std::shared_lock lock(mu_);
  return find_session(id);
}

int CurationStore::add_candidates(const std::string& session_id, const std::vector<CandidateRecord>& records,
                                  const std::string& actor) {
  std::unique_lock lock(mu_);
  const auto& s = find_session(session_id);
  nlohmann::json fresh = nlohmann::json::array();
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.id.empty()) fail(ErrorKind::InvalidInput, "candidate record without an id");
    if (r.stage < 1 || r.stage > 2)
      fail(ErrorKind::InvalidInput, "candidate " + r.id + " has stage " + std::to_string(r.stage) +
                                        "; only stages 1 and 2 feed a promotion");
    if (r.id == s.reference.id) fail(ErrorKind::InvalidInput, "candidate id " + r.id + " collides with the reference");
    if (s.candidates.count(r.id) || !seen.insert(r.id).second) continue;
    CandidateRecord abs = r;
    abs.image = std::filesystem::absolute(r.image);
    fresh.push_back(abs.to_json());
  }
  if (fresh.empty()) return 0;
  append({{"type", "add_candidates"}, {"session", session_id}, {"records", fresh}, {"actor", actor}});
  return static_cast<int>(fresh.size());
}

CandidatePage CurationStore::list_candidates(const std::string& session_id, int stage, int page) const {
  std::shared_lock lock(mu_);
  const auto& s = find_session(session_id);
  if (page < 0) fail(ErrorKind::InvalidInput, "page must be non-negative");
  if (stage <= 0) stage = s.stage;
  CandidatePage out;
  out.page = page;
  out.page_size = kPageSize;
  const std::size_t first = static_cast<std::size_t>(page) * kPageSize;
  std::size_t idx = 0;
  for (const auto& [id, c] : s.candidates) {
    if (c.record.stage != stage) continue;
    if (idx >= first && idx < first + kPageSize) out.items.push_back(c);
    ++idx;
  }
  out.total = static_cast<int>(idx);
  return out;
}

SelectionResult CurationStore::select(const std::string& session_id, const std::vector<std::string>& ids,
                                      const std::string& actor) {
  std::unique_lock lock(mu_);
  const auto& s = find_session(session_id);
  if (s.stage >= 3) fail(ErrorKind::Precondition, "session " + session_id + " is at the final stage");
  if (ids.empty()) fail(ErrorKind::InvalidInput, "no candidate ids given");
  const int quota = s.quotas.quota_after(s.stage);
  const int current = s.selected_count(s.stage);
  std::set<std::string> fresh;
  for (const auto& id : ids) {
    const auto it = s.candidates.find(id);
    if (it == s.candidates.end())
      fail(ErrorKind::NotFound, "unknown candidate " + id + " in session " + session_id, {{"candidate", id}});
    const auto& c = it->second;
    if (c.record.stage != s.stage)
      fail(ErrorKind::InvalidInput,
           "candidate " + id + " belongs to stage " + std::to_string(c.record.stage) + ", session is at stage " +
               std::to_string(s.stage),
           {{"candidate", id}, {"candidate_stage", c.record.stage}, {"session_stage", s.stage}});
    if (!std::filesystem::is_regular_file(c.record.image))
      fail(ErrorKind::NotFound, "image for candidate " + id + " is missing on disk", {{"candidate", id}});
    if (!c.selected) fresh.insert(id);
  }
  if (current + static_cast<int>(fresh.size()) > quota)
    fail(ErrorKind::Quota,
         "selection would exceed the quota of " + std::to_string(quota) + " (currently " + std::to_string(current) +
             ")",
         {{"selected", current}, {"quota", quota}, {"requested", fresh.size()}});
  if (!fresh.empty())
    append({{"type", "select"}, {"session", session_id}, {"ids", fresh}, {"stage", s.stage}, {"actor", actor}});
  return {s.selected_count(s.stage), quota};
}

SelectionResult CurationStore::deselect(const std::string& session_id, const std::vector<std::string>& ids,
                                        const std::string& actor) {
  std::unique_lock lock(mu_);
  const auto& s = find_session(session_id);
  if (s.stage >= 3) fail(ErrorKind::Precondition, "session " + session_id + " is at the final stage");
  if (ids.empty()) fail(ErrorKind::InvalidInput, "no candidate ids given");
  std::set<std::string> on;
  for (const auto& id : ids) {
    const auto it = s.candidates.find(id);
    if (it == s.candidates.end())
      fail(ErrorKind::NotFound, "unknown candidate " + id + " in session " + session_id, {{"candidate", id}});
    if (it->second.record.stage != s.stage)
      fail(ErrorKind::InvalidInput,
           "candidate " + id + " belongs to stage " + std::to_string(it->second.record.stage) +
               ", session is at stage " + std::to_string(s.stage),
           {{"candidate", id}, {"candidate_stage", it->second.record.stage}, {"session_stage", s.stage}});
    if (it->second.selected) on.insert(id);
  }
  if (!on.empty())
    append({{"type", "deselect"}, {"session", session_id}, {"ids", on}, {"stage", s.stage}, {"actor", actor}});
  return {s.selected_count(s.stage), s.quotas.quota_after(s.stage)};
}

std::filesystem::path CurationStore::dataset_path(const std::string& session_id, int stage) const {
  return root_ / "sessions" / session_id / ("stage" + std::to_string(stage) + ".json");
}

StageDataset CurationStore::promote(const std::string& session_id, const std::string& actor) {
  std::unique_lock lock(mu_);
  const auto& s = find_session(session_id);
  if (s.stage >= 3) fail(ErrorKind::Precondition, "session " + session_id + " is at the final stage; nothing to promote");
  const int quota = s.quotas.quota_after(s.stage);
  const int have = s.selected_count(s.stage);
  if (have != quota)
    fail(ErrorKind::Precondition,
         "promotion from stage " + std::to_string(s.stage) + " requires exactly " + std::to_string(quota) +
             " selections, have " + std::to_string(have),
         {{"required", quota}, {"selected", have}, {"stage", s.stage}});

  const StageDataset& prev = s.datasets.at(s.stage);
  StageDataset next{s.stage + 1, prev.items};
  for (const auto& [id, c] : s.candidates)
    if (c.selected && c.record.stage == s.stage)
      next.items.push_back({id, c.record.image, c.record.prompt.empty() ? s.reference.caption : c.record.prompt});
  next.validate(s.quotas);
  validate_nesting(prev, next);
  next.save(dataset_path(session_id, next.stage));
  append({{"type", "promote"},
          {"session", session_id},
          {"from_stage", s.stage},
          {"dataset", next.to_json()},
          {"dataset_hash", next.hash()},
          {"actor", actor}});
  write_snapshot_locked();
  return next;
}

std::optional<std::filesystem::path> CurationStore::image_path(const std::string& image_id,
                                                               const std::string& session_id) const {
  std::shared_lock lock(mu_);
  for (const auto& [sid, s] : sessions_) {
    if (!session_id.empty() && sid != session_id) continue;
    if (s.reference.id == image_id) return s.reference.image;
    const auto it = s.candidates.find(image_id);
    if (it != s.candidates.end()) return it->second.record.image;
  }
  return std::nullopt;
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return 400;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Quota:
    case ErrorKind::Precondition:
    case ErrorKind::State: return 409;
    case ErrorKind::DegenerateCaption: return 422;
    case ErrorKind::Transport: return 502;
    default: return 500;
  }
}

namespace {

void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("request body is not JSON: ") + e.what());
  }
}

std::vector<std::string> ids_from(const nlohmann::json& body) {
  if (body.contains("ids") && body["ids"].is_array()) {
    std::vector<std::string> ids;
    for (const auto& v : body["ids"]) {
      if (!v.is_string()) fail(ErrorKind::InvalidInput, "'ids' must hold strings");
      ids.push_back(v.get<std::string>());
    }
    return ids;
  }
  if (body.contains("id") && body["id"].is_string()) return {body["id"].get<std::string>()};
  fail(ErrorKind::InvalidInput, "expected 'ids' (array of strings) or 'id'");
}

int int_param(const httplib::Request& req, const char* key, int fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const int n = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    fail(ErrorKind::InvalidInput, std::string("query parameter '") + key + "' must be an integer, got '" + v + "'");
  }
}

std::string actor_of(const httplib::Request& req) {
  return req.has_header("X-Curator") ? req.get_header_value("X-Curator") : "anonymous";
}

template <class F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_json(res, e.to_json(), http_status(e.kind()));
    } catch (const nlohmann::json::exception& e) {
      send_json(res, Error(ErrorKind::InvalidInput, e.what()).to_json(), 400);
    } catch (const std::exception& e) {
      send_json(res, Error(ErrorKind::Io, e.what()).to_json(), 500);
    }
  };
}

}  // namespace

CurationServer::CurationServer(CurationStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  routes();
}

CurationServer::~CurationServer() { stop(); }

void CurationServer::routes() {
  auto& srv = *server_;
  srv.Get("/api/v1/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& s : store_.sessions()) arr.push_back(s.status());
            send_json(res, {{"sessions", arr}});
          }));
  srv.Post("/api/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             const StageQuotas q = StageQuotas::from_json(body.value("quotas", nlohmann::json::object()));
             const auto s = store_.create_session(body.value("name", ""), item_from(body.at("reference")), q,
                                                  actor_of(req));
             send_json(res, s.status(), 201);
           }));
  srv.Get("/api/v1/sessions/:id/status", guarded([this](const httplib::Request& req, httplib::Response& res) {
            send_json(res, store_.session(req.path_params.at("id")).status());
          }));
  srv.Get("/api/v1/sessions/:id/candidates", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto page = store_.list_candidates(req.path_params.at("id"), int_param(req, "stage", 0),
                                                     int_param(req, "page", 0));
            send_json(res, page.to_json());
          }));
  srv.Post("/api/v1/sessions/:id/candidates", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             std::vector<CandidateRecord> recs;
             for (const auto& r : body.at("records")) recs.push_back(CandidateRecord::from_json(r));
             const int added = store_.add_candidates(req.path_params.at("id"), recs, actor_of(req));
             send_json(res, {{"added", added}});
           }));
  srv.Post("/api/v1/sessions/:id/select", guarded([this](const httplib::Request& req, httplib::Response& res) {
             send_json(res, store_.select(req.path_params.at("id"), ids_from(parse_body(req)), actor_of(req)).to_json());
           }));
  srv.Post("/api/v1/sessions/:id/deselect", guarded([this](const httplib::Request& req, httplib::Response& res) {
             send_json(res,
                       store_.deselect(req.path_params.at("id"), ids_from(parse_body(req)), actor_of(req)).to_json());
           }));
  srv.Post("/api/v1/sessions/:id/promote", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const std::string id = req.path_params.at("id");
             const auto ds = store_.promote(id, actor_of(req));
             send_json(res, {{"stage", ds.stage},
                             {"size", ds.size()},
                             {"path", store_.dataset_path(id, ds.stage).string()},
                             {"dataset", ds.to_json()}});
           }));
  srv.Get("/api/v1/images/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.path_params.at("id");
            const auto path = store_.image_path(id, req.has_param("session") ? req.get_param_value("session") : "");
            if (!path) fail(ErrorKind::NotFound, "unknown image " + id);
            std::ifstream is(*path, std::ios::binary);
            if (!is) fail(ErrorKind::NotFound, "image " + id + " is missing on disk");
            res.set_content(std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>()),
                            "image/png");
          }));
  srv.set_pre_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    return httplib::Server::HandlerResponse::Unhandled;
  });
  srv.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Curator");
    res.status = 204;
  });
  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty())
      send_json(res, Error(ErrorKind::NotFound, "no route for " + req.method + " " + req.path).to_json(), 404);
  });
}

int CurationServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void CurationServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) fail(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
  server_->listen_after_bind();
}

void CurationServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace tristyle
