#include <fstream>
#include <set>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "curation_fixture.hpp"
#include "tiny_models.hpp"
#include "tristyle/errors.hpp"
#include "tristyle/hf_curation.hpp"

using namespace tristyle;
using fixtures::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::Io;
}

struct Session {
  TempDir dir{"curation"};
  CurationStore store{dir / "store"};
  std::string id;
  std::vector<CandidateRecord> stage1;

  explicit Session(StageQuotas q = {5, 5}, int candidates = 20) {
    id = store.create_session("t", fixtures::write_reference(dir / "img"), q).id;
    stage1 = fixtures::write_candidates(dir / "img" / "c1", 1, candidates);
    store.add_candidates(id, stage1);
  }
  std::vector<std::string> ids(int from, int to) const {
    std::vector<std::string> out;
    for (int k = from; k < to; ++k) out.push_back(stage1[static_cast<std::size_t>(k)].id);
    return out;
  }
};

}  // namespace

TEST(StageQuotas, ExpectedSizes) {
  const StageQuotas q{5, 5};
  EXPECT_EQ(q.expected_size(1), 1);
  EXPECT_EQ(q.expected_size(2), 6);
  EXPECT_EQ(q.expected_size(3), 11);
  EXPECT_EQ(StageQuotas{}.expected_size(3), 101);
}

TEST(CurationStore, StagedSizesWithSmallQuota) {
  TempDir dir("loop5");
  CurationStore store(dir / "store");
  EXPECT_EQ(fixtures::run_staged_loop(store, dir / "img", {5, 5}, 12), (std::vector<int>{1, 6, 11}));
}

TEST(CurationStore, StagedSizesWithDefaultQuota) {
  TempDir dir("loop50");
  CurationStore store(dir / "store");
  EXPECT_EQ(fixtures::run_staged_loop(store, dir / "img", {}, 60), (std::vector<int>{1, 51, 101}));
}

TEST(CurationStore, DatasetsNestAndPersist) {
  TempDir dir("nest");
  fixtures::write_reference(dir / "img");
  {
    CurationStore store(dir / "store");
    fixtures::run_staged_loop(store, dir / "img", {3, 4}, 8);
  }
  CurationStore store(dir / "store");
  const auto s = store.sessions().at(0);
  EXPECT_EQ(s.stage, 3);
  const auto d1 = StageDataset::load(store.dataset_path(s.id, 1));
  const auto d2 = StageDataset::load(store.dataset_path(s.id, 2));
  const auto d3 = StageDataset::load(store.dataset_path(s.id, 3));
  EXPECT_NO_THROW(validate_nesting(d1, d2));
  EXPECT_NO_THROW(validate_nesting(d2, d3));
  EXPECT_EQ(d3.size(), 8);
  EXPECT_EQ(d2.items.at(0).id, "ref");
  EXPECT_EQ(s.datasets.at(3).hash(), d3.hash());
}

TEST(CurationStore, PromoteRejectedOffQuota) {
  Session s;
  s.store.select(s.id, s.ids(0, 4));
  EXPECT_EQ(kind_of([&] { s.store.promote(s.id); }), ErrorKind::Precondition);
  EXPECT_EQ(s.store.session(s.id).stage, 1);
  s.store.select(s.id, s.ids(4, 5));
  EXPECT_EQ(s.store.promote(s.id).size(), 6);
  // Stage 2 has no selections yet.
  EXPECT_EQ(kind_of([&] { s.store.promote(s.id); }), ErrorKind::Precondition);
}

TEST(CurationStore, PromoteAfterFinalStageIsPrecondition) {
  TempDir dir("final");
  CurationStore store(dir / "store");
  fixtures::run_staged_loop(store, dir / "img", {1, 1}, 2);
  const auto id = store.sessions().at(0).id;
  EXPECT_EQ(kind_of([&] { store.promote(id); }), ErrorKind::Precondition);
  EXPECT_EQ(kind_of([&] { store.select(id, {"s2-0000"}); }), ErrorKind::Precondition);
  EXPECT_TRUE(store.session(id).status().at("final").get<bool>());
}

TEST(CurationStore, OverflowLeavesSelectionUnchanged) {
  Session s;
  s.store.select(s.id, s.ids(0, 3));
  try {
    s.store.select(s.id, s.ids(3, 6));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Quota);
    EXPECT_EQ(e.details().at("selected"), 3);
    EXPECT_EQ(e.details().at("quota"), 5);
  }
  EXPECT_EQ(s.store.session(s.id).selected_count(1), 3);
}

TEST(CurationStore, BadIdsRejectWholeRequest) {
  Session s;
  auto ids = s.ids(0, 2);
  ids.push_back("nope");
  EXPECT_EQ(kind_of([&] { s.store.select(s.id, ids); }), ErrorKind::NotFound);
  EXPECT_EQ(s.store.session(s.id).selected_count(1), 0);
  EXPECT_EQ(kind_of([&] { s.store.select(s.id, {}); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([&] { s.store.select("session-99", s.ids(0, 1)); }), ErrorKind::NotFound);
}

TEST(CurationStore, CrossStageSelectionRejected) {
  Session s;
  const auto later = fixtures::write_candidates(s.dir / "img" / "c2", 2, 3);
  s.store.add_candidates(s.id, later);
  try {
    s.store.select(s.id, {later[0].id});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
    EXPECT_EQ(e.details().at("candidate_stage"), 2);
    EXPECT_EQ(e.details().at("session_stage"), 1);
  }
}

TEST(CurationStore, MissingImageFileRejected) {
  Session s;
  std::filesystem::remove(s.stage1[0].image);
  EXPECT_EQ(kind_of([&] { s.store.select(s.id, s.ids(0, 1)); }), ErrorKind::NotFound);
}

TEST(CurationStore, ReferenceIdCollisionRejected) {
  Session s;
  auto clash = s.stage1[0];
  clash.id = "ref";
  EXPECT_EQ(kind_of([&] { s.store.add_candidates(s.id, {clash}); }), ErrorKind::InvalidInput);
  EXPECT_EQ(s.store.add_candidates(s.id, s.stage1), 0);
}

TEST(CurationStore, SelectDeselectAreInverseAndIdempotent) {
  Session s;
  const auto before = s.store.last_seq();
  s.store.select(s.id, s.ids(0, 3));
  s.store.select(s.id, s.ids(0, 3));
  EXPECT_EQ(s.store.last_seq(), before + 1);
  s.store.deselect(s.id, s.ids(0, 3));
  s.store.deselect(s.id, s.ids(0, 3));
  EXPECT_EQ(s.store.session(s.id).selected_count(1), 0);
  for (const auto& [id, c] : s.store.session(s.id).candidates) EXPECT_FALSE(c.selected) << id;
}

TEST(CurationStore, ConcurrentSelectsOfSameIdsCountOnce) {
  Session s;
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) threads.emplace_back([&] { s.store.select(s.id, s.ids(0, 5)); });
  for (auto& th : threads) th.join();
  EXPECT_EQ(s.store.session(s.id).selected_count(1), 5);
}

TEST(CurationStore, ConcurrentOverflowNeverExceedsQuota) {
  Session s;
  std::atomic<int> ok{0}, quota{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 10; ++t)
    threads.emplace_back([&, t] {
      try {
        s.store.select(s.id, s.ids(2 * t, 2 * t + 2));
        ++ok;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Quota) ++quota;
      }
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(ok.load(), 2);
  EXPECT_EQ(quota.load(), 8);
  EXPECT_EQ(s.store.session(s.id).selected_count(1), 4);
}

TEST(CurationStore, PaginationIsDisjointAndOrdered) {
  Session s({5, 5}, 200);
  std::set<std::string> seen;
  std::string last;
  for (int p = 0; p < 4; ++p) {
    const auto page = s.store.list_candidates(s.id, 1, p);
    EXPECT_EQ(page.total, 200);
    EXPECT_EQ(page.pages(), 4);
    ASSERT_EQ(page.items.size(), 50u);
    for (const auto& c : page.items) {
      EXPECT_GT(c.record.id, last);
      last = c.record.id;
      EXPECT_TRUE(seen.insert(c.record.id).second);
    }
  }
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_TRUE(s.store.list_candidates(s.id, 1, 4).items.empty());
  EXPECT_EQ(s.store.list_candidates(s.id, 2, 0).total, 0);
  EXPECT_EQ(kind_of([&] { s.store.list_candidates(s.id, 1, -1); }), ErrorKind::InvalidInput);
}

TEST(CurationStore, ReplaysLogAfterRestart) {
  TempDir dir("replay");
  std::string id;
  {
    CurationStore store(dir / "store");
    id = store.create_session("t", fixtures::write_reference(dir / "img"), {5, 5}).id;
    const auto recs = fixtures::write_candidates(dir / "img", 1, 6);
    store.add_candidates(id, recs);
    store.select(id, {recs[0].id, recs[1].id});
  }
  CurationStore store(dir / "store");
  EXPECT_EQ(store.session(id).selected_count(1), 2);
  EXPECT_EQ(store.session(id).candidates.size(), 6u);
}

TEST(CurationStore, TornFinalLineIsDropped) {
  TempDir dir("torn");
  std::string id;
  std::uint64_t seq = 0;
  {
    CurationStore store(dir / "store");
    id = store.create_session("t", fixtures::write_reference(dir / "img"), {5, 5}).id;
    const auto recs = fixtures::write_candidates(dir / "img", 1, 6);
    store.add_candidates(id, recs);
    store.select(id, {recs[0].id});
    seq = store.last_seq();
  }
  {
    std::ofstream os(dir / "store" / "events.jsonl", std::ios::app);
    os << R"({"seq": 99, "type": "select", "session": ")";
  }
  {
    CurationStore store(dir / "store");
    EXPECT_EQ(store.last_seq(), seq);
    EXPECT_EQ(store.session(id).selected_count(1), 1);
    store.select(id, {"s1-0001"});
  }
  CurationStore store(dir / "store");
  EXPECT_EQ(store.session(id).selected_count(1), 2);
}

TEST(CurationStore, CorruptMiddleLineIsIoError) {
  TempDir dir("corrupt");
  {
    CurationStore store(dir / "store");
    const auto id = store.create_session("t", fixtures::write_reference(dir / "img"), {5, 5}).id;
    store.add_candidates(id, fixtures::write_candidates(dir / "img", 1, 2));
  }
  std::ifstream is(dir / "store" / "events.jsonl");
  std::string first, rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  is.close();
  std::ofstream os(dir / "store" / "events.jsonl", std::ios::trunc);
  os << "{not json}\n" << rest;
  os.close();
  EXPECT_EQ(kind_of([&] { CurationStore store(dir / "store"); }), ErrorKind::Io);
}

TEST(CurationStore, SnapshotPlusReplayMatchesFullState) {
  TempDir dir("snap");
  std::string id;
  nlohmann::json expected;
  {
    CurationStore store(dir / "store");
    id = store.create_session("t", fixtures::write_reference(dir / "img"), {5, 5}).id;
    const auto recs = fixtures::write_candidates(dir / "img", 1, 10);
    store.add_candidates(id, recs);
    store.select(id, {recs[0].id, recs[1].id});
    store.write_snapshot();
    store.select(id, {recs[2].id});
    store.deselect(id, {recs[0].id});
    expected = store.session(id).to_json();
  }
  CurationStore store(dir / "store");
  EXPECT_EQ(store.session(id).to_json(), expected);
}

TEST(CurationStore, CreateValidatesReference) {
  TempDir dir("create");
  CurationStore store(dir / "store");
  EXPECT_EQ(kind_of([&] { store.create_session("t", {"ref", dir / "missing.png", "x"}, {5, 5}); }),
            ErrorKind::NotFound);
  EXPECT_EQ(kind_of([&] { store.create_session("t", fixtures::write_reference(dir / "img"), {0, 5}); }),
            ErrorKind::InvalidInput);
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(ErrorKind::InvalidInput), 400);
  EXPECT_EQ(http_status(ErrorKind::NotFound), 404);
  EXPECT_EQ(http_status(ErrorKind::Quota), 409);
  EXPECT_EQ(http_status(ErrorKind::Precondition), 409);
  EXPECT_EQ(http_status(ErrorKind::DegenerateCaption), 422);
  EXPECT_EQ(http_status(ErrorKind::Io), 500);
}

class CurationApi : public ::testing::Test {
 protected:
  void SetUp() override {
    port_ = server_.start();
    ref_ = fixtures::write_reference(dir_ / "img");
  }
  httplib::Client client() {
    httplib::Client c("127.0.0.1", port_);
    c.set_default_headers({{"X-Curator", "tester"}});
    return c;
  }
  nlohmann::json post(const std::string& path, const nlohmann::json& body, int expect) {
    auto res = client().Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return nlohmann::json::parse(res->body);
  }
  nlohmann::json get(const std::string& path, int expect = 200) {
    auto res = client().Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return nlohmann::json::parse(res->body);
  }
  std::string create() {
    const auto s = post("/api/v1/sessions",
                        {{"name", "api"},
                         {"reference", {{"id", ref_.id}, {"image", ref_.image.string()}, {"caption", ref_.caption}}},
                         {"quotas", {{"stage1_to_2", 5}, {"stage2_to_3", 5}}}},
                        201);
    return s.at("id").get<std::string>();
  }
  void add(const std::string& id, const std::vector<CandidateRecord>& recs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : recs) arr.push_back(r.to_json());
    post("/api/v1/sessions/" + id + "/candidates", {{"records", arr}}, 200);
  }

  TempDir dir_{"api"};
  CurationStore store_{dir_ / "store"};
  CurationServer server_{store_};
  int port_ = 0;
  StageItem ref_;
};

TEST_F(CurationApi, FullLoopOverHttp) {
  const auto id = create();
  for (int stage = 1; stage <= 2; ++stage) {
    const auto recs = fixtures::write_candidates(dir_ / "img" / std::to_string(stage), stage, 8);
    add(id, recs);
    const auto page = get("/api/v1/sessions/" + id + "/candidates?page=0");
    EXPECT_EQ(page.at("total"), 8);
    nlohmann::json ids = nlohmann::json::array();
    for (int k = 0; k < 5; ++k) ids.push_back(recs[static_cast<std::size_t>(k)].id);
    const auto sel = post("/api/v1/sessions/" + id + "/select", {{"ids", ids}}, 200);
    EXPECT_EQ(sel.at("selected"), 5);
    const auto prom = post("/api/v1/sessions/" + id + "/promote", nlohmann::json::object(), 200);
    EXPECT_EQ(prom.at("size"), 1 + 5 * stage);
  }
  const auto st = get("/api/v1/sessions/" + id + "/status");
  EXPECT_EQ(st.at("stage"), 3);
  EXPECT_TRUE(st.at("final").get<bool>());
  EXPECT_EQ(st.at("dataset_sizes").at("3"), 11);
}

TEST_F(CurationApi, ErrorsCarryStatusAndKind) {
  const auto id = create();
  const auto recs = fixtures::write_candidates(dir_ / "img" / "c", 1, 8);
  add(id, recs);
  nlohmann::json six = nlohmann::json::array();
  for (int k = 0; k < 6; ++k) six.push_back(recs[static_cast<std::size_t>(k)].id);
  EXPECT_EQ(post("/api/v1/sessions/" + id + "/select", {{"ids", six}}, 409).at("error"), "quota");
  EXPECT_EQ(post("/api/v1/sessions/" + id + "/promote", nlohmann::json::object(), 409).at("error"), "precondition");
  EXPECT_EQ(post("/api/v1/sessions/" + id + "/select", {{"ids", {"ghost"}}}, 404).at("error"), "not-found");
  EXPECT_EQ(post("/api/v1/sessions/" + id + "/select", nlohmann::json::object(), 400).at("error"), "invalid-input");
  EXPECT_EQ(get("/api/v1/sessions/session-42/status", 404).at("error"), "not-found");
  EXPECT_EQ(get("/api/v1/sessions/" + id + "/candidates?page=x", 400).at("error"), "invalid-input");
  EXPECT_EQ(get("/api/v1/nowhere", 404).at("error"), "not-found");
  auto res = client().Post("/api/v1/sessions/" + id + "/select", "{oops", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
}

TEST_F(CurationApi, StateSurvivesServerRestart) {
  const auto id = create();
  const auto recs = fixtures::write_candidates(dir_ / "img" / "c", 1, 8);
  add(id, recs);
  post("/api/v1/sessions/" + id + "/select", {{"id", recs[3].id}}, 200);
  server_.stop();
  CurationStore reopened(dir_ / "store");
  CurationServer again(reopened);
  port_ = again.start();
  const auto page = get("/api/v1/sessions/" + id + "/candidates");
  int selected = 0;
  for (const auto& c : page.at("items")) selected += c.at("selected").get<bool>();
  EXPECT_EQ(selected, 1);
  EXPECT_EQ(get("/api/v1/sessions/" + id + "/status").at("selected"), 1);
  again.stop();
}

TEST_F(CurationApi, ServesImagesWithCors) {
  const auto id = create();
  auto res = client().Get("/api/v1/images/ref?session=" + id);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->body.substr(1, 3), "PNG");
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  auto opt = client().Options("/api/v1/sessions");
  ASSERT_TRUE(opt);
  EXPECT_EQ(opt->status, 204);
  EXPECT_EQ(get("/api/v1/images/ghost", 404).at("error"), "not-found");
  EXPECT_EQ(get("/api/v1/sessions").at("sessions").size(), 1u);
}
