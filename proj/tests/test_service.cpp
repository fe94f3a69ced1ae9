#include <gtest/gtest.h>

#include <future>

#include "service_fixture.hpp"

using namespace neuroprobe;
using nlohmann::json;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    fixture::write_workspace(dir_->path("ws"));
    running_ = new fixture::RunningService(dir_->path("ws"));
  }
  static void TearDownTestSuite() {
    delete running_;
    delete dir_;
  }

  static httplib::Result get(const std::string& path) { return running_->client().Get(path); }
  static httplib::Result post(const std::string& path, const std::string& body) {
    return running_->client().Post(path, body, "application/json");
  }
  static json body(const httplib::Result& r) { return json::parse(r->body); }

  static void expect_error(const httplib::Result& r, int status) {
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, status) << r->body;
    const auto j = json::parse(r->body);
    EXPECT_EQ(j.at("version"), 1);
    EXPECT_TRUE(j.at("error").is_string());
  }

  static TempDir* dir_;
  static fixture::RunningService* running_;
};

TempDir* ServiceTest::dir_ = nullptr;
fixture::RunningService* ServiceTest::running_ = nullptr;

}  // namespace

TEST_F(ServiceTest, Meta) {
  const auto r = get("/api/meta");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->get_header_value("Content-Type"), "application/json");
  const auto j = body(r);
  EXPECT_EQ(j.at("version"), 1);
  EXPECT_EQ(j.at("layers"), 1);
  EXPECT_EQ(j.at("neurons_per_layer"), 8);
  EXPECT_EQ(j.at("sentences"), 60);
  EXPECT_EQ(j.at("models"), (json{"m1", "m2"}));
  EXPECT_EQ(j.at("default_model"), "m1");
  EXPECT_EQ(j.at("tasks"), (json{"position"}));
  EXPECT_EQ(j.at("methods"), (json{"variance", "meandev", "crossmodel", "probe:position"}));
  EXPECT_EQ(j.at("live_model"), true);
  expect_error(get("/api/meta?model=nope"), 404);
}

TEST_F(ServiceTest, RankingsMatchLibraryBytes) {
  const auto& ws = running_->service().workspace();
  for (const std::string method : {"variance", "meandev", "crossmodel", "probe:position"}) {
    const auto r = get("/api/rankings?method=" + method);
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 200) << r->body;
    std::vector<const ActivationCorpus*> corpora{&ws.corpus("m1"), &ws.corpus("m2")};
    const auto labeled = ws.labeled_corpus("m1", "position");
    EXPECT_EQ(r->body, ranking_to_string(compute_ranking(method, "m1", corpora, &*labeled))) << method;
    const auto j = body(r);
    EXPECT_EQ(j.at("method"), method);
    EXPECT_EQ(j.at("model"), "m1");
    EXPECT_EQ(j.at("entries").size(), 8u);
    EXPECT_EQ(get("/api/rankings?method=" + method)->body, r->body);
  }
  EXPECT_EQ(body(get("/api/rankings?method=variance&model=m2")).at("model"), "m2");
}

TEST_F(ServiceTest, RankingErrors) {
  expect_error(get("/api/rankings?method=spearman"), 400);
  expect_error(get("/api/rankings"), 400);
  expect_error(get("/api/rankings?method=probe:month"), 400);
  expect_error(get("/api/rankings?method=variance&model=zz"), 404);
}

TEST_F(ServiceTest, NeuronCardAndTrace) {
  const auto& c = running_->service().workspace().corpus("m1");
  const auto r = get("/api/neurons/L0:3?k=4");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(r->body, card_json(neuron_card(c, {0, 3}, 4)).dump());
  const auto t = get("/api/neurons/L0:3/trace?sentence=7");
  ASSERT_EQ(t->status, 200);
  const auto j = body(t);
  EXPECT_EQ(j.at("version"), 1);
  EXPECT_EQ(j.at("sentence"), 7);
  EXPECT_EQ(j.at("tokens").size(), c.sentence(7).tokens.size());
  for (const auto& p : j.at("tokens")) {
    EXPECT_LE(std::abs(p.at("intensity").get<double>()), 1.0);
    EXPECT_TRUE(p.at("token").is_string());
  }
  const auto multi = get("/api/trace?neurons=L0:1,L0:3&sentence=7");
  ASSERT_EQ(multi->status, 200);
  const std::vector<NeuronId> ids{{0, 1}, {0, 3}};
  EXPECT_EQ(multi->body, trace_json(multi_trace(c, ids, 7), 7, {"L0:1", "L0:3"}).dump());
}

TEST_F(ServiceTest, NeuronErrors) {
  expect_error(get("/api/neurons/Lx:2"), 400);
  expect_error(get("/api/neurons/L0:8"), 400);
  expect_error(get("/api/neurons/L1:0"), 400);
  expect_error(get("/api/neurons/L0:1?k=0"), 400);
  expect_error(get("/api/neurons/L0:1?k=abc"), 400);
  expect_error(get("/api/neurons/L0:1/trace?sentence=999"), 404);
  expect_error(get("/api/neurons/L0:1/trace"), 400);
  expect_error(get("/api/neurons/L0:99/trace?sentence=1"), 400);
  expect_error(get("/api/trace?sentence=1"), 400);
  expect_error(get("/api/nothing"), 404);
}

TEST_F(ServiceTest, Sentences) {
  const auto j = body(get("/api/sentences?offset=58&limit=5"));
  EXPECT_EQ(j.at("version"), 1);
  EXPECT_EQ(j.at("total"), 60);
  ASSERT_EQ(j.at("sentences").size(), 2u);
  EXPECT_EQ(j.at("sentences")[0].at("id"), 58);
  expect_error(get("/api/sentences?offset=-1"), 400);
}

TEST_F(ServiceTest, Interventions) {
  const auto empty = post("/api/interventions", R"({"spec":{},"scope":"all"})");
  ASSERT_EQ(empty->status, 200) << empty->body;
  const auto e = body(empty);
  EXPECT_EQ(e.at("version"), 1);
  EXPECT_TRUE(e.at("diffs").empty());
  EXPECT_EQ(e.at("baseline_accuracy"), e.at("intervened_accuracy"));

  const auto ablate = post("/api/interventions", R"({"spec":{"L0:1":"ablate","L0:4":"ablate"}})");
  const auto clamp = post("/api/interventions", R"({"spec":{"L0:1":{"clamp":0},"L0:4":{"clamp":0.0}}})");
  ASSERT_EQ(ablate->status, 200);
  EXPECT_EQ(ablate->body, clamp->body);

  const auto& ws = running_->service().workspace();
  const auto text = text_from_activations(ws.corpus("m1"), ws.model()->task());
  const auto direct = manipulate(*ws.model(), restrict_to(text, {2, 3}),
                                 InterventionSpec::from_json(json::parse(R"({"L0:0":{"clamp":0.9}})")));
  const auto scoped = post("/api/interventions", R"({"spec":{"L0:0":{"clamp":0.9}},"scope":[2,3]})");
  ASSERT_EQ(scoped->status, 200);
  EXPECT_EQ(scoped->body, effect_report_json(direct).dump());
}

TEST_F(ServiceTest, InterventionErrors) {
  expect_error(post("/api/interventions", R"({"spec":{"L0:8":"ablate"}})"), 422);
  expect_error(post("/api/interventions", R"({"spec":{"L0:1":{"clamp":"x"}}})"), 422);
  expect_error(post("/api/interventions", R"({"spec":{"L0:1":"melt"}})"), 422);
  expect_error(post("/api/interventions", R"({"spec":{},"scope":[9999]})"), 422);
  expect_error(post("/api/interventions", R"({"spec":{},"scope":"some"})"), 422);
  expect_error(post("/api/interventions", "not json"), 422);
  expect_error(post("/api/interventions", "[1,2]"), 422);
}

TEST_F(ServiceTest, ConcurrentRequestsAgree) {
  const std::string req = R"({"spec":{"L0:2":{"clamp":0.7},"L0:5":"ablate"}})";
  std::vector<std::future<std::string>> posts, gets;
  for (int i = 0; i < 6; ++i) {
    posts.push_back(std::async(std::launch::async, [&] { return post("/api/interventions", req)->body; }));
    gets.push_back(std::async(std::launch::async, [] { return get("/api/rankings?method=meandev&model=m2")->body; }));
  }
  const auto first_post = posts[0].get(), first_get = gets[0].get();
  for (std::size_t i = 1; i < posts.size(); ++i) {
    EXPECT_EQ(posts[i].get(), first_post);
    EXPECT_EQ(gets[i].get(), first_get);
  }
}

TEST_F(ServiceTest, RootServesPlaceholderWithoutUi) {
  const auto r = get("/");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_NE(r->body.find("/api/"), std::string::npos);
}

TEST(ServiceWorkspaces, EmptyWorkspaceIs404Everywhere) {
  TempDir dir;
  std::filesystem::create_directories(dir.path("empty"));
  fixture::RunningService running(dir.path("empty"));
  auto c = running.client();
  for (const char* path : {"/api/meta", "/api/rankings?method=variance", "/api/neurons/L0:0",
                           "/api/neurons/L0:0/trace?sentence=0", "/api/sentences"}) {
    const auto r = c.Get(path);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 404) << path;
    EXPECT_EQ(json::parse(r->body).at("version"), 1);
  }
  EXPECT_EQ(c.Post("/api/interventions", "{}", "application/json")->status, 404);
}

TEST(ServiceWorkspaces, ExternalDumpsOnly) {
  TempDir dir;
  fixture::write_workspace(dir.path("ws"), false, false);
  const auto before = read_file(dir.path("ws") / "m1.activations.jsonl");
  fixture::RunningService running(dir.path("ws"));
  auto c = running.client();
  const auto meta = json::parse(c.Get("/api/meta")->body);
  EXPECT_EQ(meta.at("methods"), (json{"variance", "meandev", "probe:position"}));
  EXPECT_EQ(meta.at("live_model"), false);
  EXPECT_EQ(c.Get("/api/rankings?method=crossmodel")->status, 409);
  EXPECT_EQ(c.Post("/api/interventions", R"({"spec":{}})", "application/json")->status, 409);
  EXPECT_EQ(c.Get("/api/rankings?method=variance")->status, 200);
  EXPECT_EQ(read_file(dir.path("ws") / "m1.activations.jsonl"), before);
}
