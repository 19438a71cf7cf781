#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "ecorec/error.hpp"
#include "ecorec/ingest.hpp"
#include "ecorec/service.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ecorec;
using ecorec::testing::ev;
using ecorec::testing::id_of;
using ecorec::testing::t0;

namespace {

const std::string kToken = "secret";

AssociationRule make_rule(const std::string& id, const std::vector<std::string>& cond, const std::string& action,
                          double confidence = 0.9, const std::string& home = "h1") {
  AssociationRule r;
  r.rule_id = id;
  r.home_id = home;
  for (const auto& c : cond) r.condition.push_back(id_of(c));
  r.action = id_of(action);
  r.action_category = ActionCategory::off;
  r.source_pattern = r.condition;
  r.source_pattern.push_back(r.action);
  r.pattern_length = r.source_pattern.size();
  r.confidence = confidence;
  r.mined_date = t0();
  return r;
}

std::filesystem::path write_rules(const std::filesystem::path& dir, std::vector<AssociationRule> rules) {
  RuleDB db;
  for (auto& r : rules) db.add(std::move(r));
  db.recompute();
  const auto path = dir / "rules.jsonl";
  db.save(path);
  return path;
}

ServiceConfig config_for(const std::filesystem::path& dir, const std::filesystem::path& rules) {
  ServiceConfig cfg;
  cfg.port = 0;
  cfg.store_dir = dir / "store";
  cfg.rules_path = rules;
  cfg.token = kToken;
  return cfg;
}

struct Api {
  httplib::Client client;
  explicit Api(int port) : client("127.0.0.1", port) {
    client.set_bearer_token_auth(kToken);
  }

  httplib::Result post_events(const std::string& home, const std::vector<EventRecord>& events) {
    auto body = nlohmann::json::array();
    for (const auto& e : events) body.push_back(event_to_json(e));
    return client.Post("/homes/" + home + "/events", body.dump(), "application/json");
  }

  nlohmann::json get(const std::string& path) {
    auto res = client.Get(path);
    REQUIRE(res);
    REQUIRE(res->status == 200);
    return nlohmann::json::parse(res->body);
  }

  httplib::Result feedback(const std::string& id, const std::string& verdict, std::int64_t at = 0) {
    nlohmann::json body{{"verdict", verdict}};
    if (at) body["received_at"] = format_timestamp(t0() + Seconds{at});
    return client.Post("/recommendations/" + id + "/feedback", body.dump(), "application/json");
  }
};

// One forgotten episode of rule r<i> (X = a<i>, b<i>; Y = off<i>) at `at`.
std::vector<EventRecord> forgotten(int i, std::int64_t at) {
  const auto n = std::to_string(i);
  return {ev(at, "a" + n), ev(at + 10, "b" + n), ev(at + 20, "noise")};
}

}  // namespace

TEST_CASE("A,B then D gives one pending recommendation, equal to the replay oracle") {
  const auto dir = testing::scratch_dir("svc-basic");
  const std::vector<AssociationRule> rules{make_rule("r1", {"A", "B"}, "Turn off C")};
  Service svc(config_for(dir, write_rules(dir, rules)));
  Api api(svc.start());

  const std::vector<EventRecord> events{ev(0, "A"), ev(10, "B")};
  auto res = api.post_events("h1", events);
  REQUIRE(res);
  CHECK(res->status == 202);
  CHECK(api.get("/homes/h1/recommendations?status=pending").empty());

  res = api.post_events("h1", {ev(20, "D")});
  REQUIRE(res);
  CHECK(res->status == 202);
  const auto body = nlohmann::json::parse(res->body);
  CHECK(body["matched"] == 1);
  CHECK(body["recommendations"].size() == 1);

  const auto pending = api.get("/homes/h1/recommendations?status=pending");
  REQUIRE(pending.size() == 1);
  const auto rec = recommendation_from_json(pending[0]);

  RuleDB db;
  for (auto r : rules) db.add(r);
  db.recompute();
  const auto expected = oracle::replay({ev(0, "A"), ev(10, "B"), ev(20, "D")}, db, MatcherConfig{});
  REQUIRE(expected.size() == 1);
  CHECK(rec.rule_id == expected[0].rule_id);
  CHECK(rec.action == expected[0].action);
  CHECK(rec.created_at == expected[0].created_at);
  CHECK(rec.trigger_events == expected[0].trigger_events);
  CHECK(pending[0]["feedback"]["href"] == "/recommendations/" + rec.recommendation_id + "/feedback");

  // responses are stable
  CHECK(api.get("/homes/h1/recommendations") == api.get("/homes/h1/recommendations"));
}

TEST_CASE("A,B,C gives no recommendation") {
  const auto dir = testing::scratch_dir("svc-suppress");
  Service svc(config_for(dir, write_rules(dir, {make_rule("r1", {"A", "B"}, "Turn off C")})));
  Api api(svc.start());
  REQUIRE(api.post_events("h1", {ev(0, "A"), ev(10, "B"), ev(20, "Turn off C"), ev(30, "D")})->status == 202);
  CHECK(api.get("/homes/h1/recommendations").empty());
}

TEST_CASE("recommendation text names the device and the room") {
  const auto dir = testing::scratch_dir("svc-text");
  auto rule = make_rule("r1", {"A", "B"}, "Turn off lamp");
  rule.action = {"z1", "dev-7", "Turn off"};
  const auto rules = write_rules(dir, {rule});
  {
    EventStore store(dir / "store");
    HomeTopology topo;
    topo.home_id = "h1";
    topo.meters = {{"m1", "Main"}};
    topo.zones = {{"z1", "Bedroom"}};
    topo.devices = {{"dev-7", "z1", "Bed side lamp", "m1"}};
    store.set_topology({{"h1", topo}});
  }
  Service svc(config_for(dir, rules));
  Api api(svc.start());
  REQUIRE(api.post_events("h1", {ev(0, "A"), ev(10, "B"), ev(20, "D")})->status == 202);
  const auto pending = api.get("/homes/h1/recommendations?status=pending");
  REQUIRE(pending.size() == 1);
  const auto text = pending[0]["text"].get<std::string>();
  CHECK(text.find("Bed side lamp") != std::string::npos);
  CHECK(text.find("Bedroom") != std::string::npos);

  // events for homes or zones outside the topology are rejected
  CHECK(api.post_events("h2", {ev(30, "A", "z1", "h2")})->status == 404);
  CHECK(api.post_events("h1", {ev(30, "A", "z9")})->status == 400);
}

TEST_CASE("auth, CORS and malformed requests") {
  const auto dir = testing::scratch_dir("svc-auth");
  Service svc(config_for(dir, write_rules(dir, {make_rule("r1", {"A", "B"}, "Turn off C")})));
  const int port = svc.start();
  Api api(port);

  httplib::Client anon("127.0.0.1", port);
  const auto body = nlohmann::json::array({event_to_json(ev(0, "A"))}).dump();
  auto res = anon.Post("/homes/h1/events", body, "application/json");
  REQUIRE(res);
  CHECK(res->status == 401);
  anon.set_bearer_token_auth("wrong");
  CHECK(anon.Post("/homes/h1/events", body, "application/json")->status == 401);
  CHECK(anon.Get("/rules")->status == 401);
  CHECK(EventStore(dir / "store").event_count("h1") == 0);
  CHECK(svc.ledger_summary().recommendations == 0);

  res = anon.Options("/homes/h1/events");
  REQUIRE(res);
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(res->get_header_value("Access-Control-Allow-Headers").find("Authorization") != std::string::npos);
  CHECK(api.client.Get("/rules")->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(anon.Get("/health")->status == 200);

  CHECK(api.client.Post("/homes/h1/events", "{not json", "application/json")->status == 400);
  CHECK(api.client.Post("/homes/h1/events", R"({"timestamp":"2014-11-14T00:00:00Z"})", "application/json")->status ==
        400);
  const auto foreign = nlohmann::json::array({event_to_json(ev(0, "A", "z1", "h2"))}).dump();
  CHECK(api.client.Post("/homes/h1/events", foreign, "application/json")->status == 400);
  CHECK(api.client.Get("/homes/h1/recommendations?status=bogus")->status == 400);
  CHECK(api.client.Get("/homes/nowhere/recommendations")->status == 404);
  CHECK(api.feedback("nope", "useful")->status == 404);
  CHECK(EventStore(dir / "store").event_count("h1") == 0);

  // line-delimited bodies are accepted too
  const auto lines = event_to_json(ev(0, "A")).dump() + "\n" + event_to_json(ev(5, "B")).dump() + "\n";
  res = api.client.Post("/homes/h1/events", lines, "application/x-ndjson");
  REQUIRE(res);
  CHECK(res->status == 202);
  CHECK(EventStore(dir / "store").event_count("h1") == 2);
}

TEST_CASE("feedback updates aggregates and rejects double answers") {
  const auto dir = testing::scratch_dir("svc-feedback");
  Service svc(config_for(dir, write_rules(dir, {make_rule("r1", {"A", "B"}, "Turn off C")})));
  Api api(svc.start());
  REQUIRE(api.post_events("h1", {ev(0, "A"), ev(10, "B"), ev(20, "D")})->status == 202);
  const auto id = api.get("/homes/h1/recommendations")[0]["recommendation_id"].get<std::string>();

  auto res = api.feedback(id, "useful", 100);
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(nlohmann::json::parse(res->body)["rule_state"] == "active");
  CHECK(api.feedback(id, "not_useful", 110)->status == 409);
  CHECK(api.client.Post("/recommendations/" + id + "/feedback", R"({"verdict":"maybe"})", "application/json")->status ==
        400);

  const auto rules = api.get("/rules");
  CHECK(rules["rules"][0]["feedback"]["useful"] == 1);
  CHECK(rules["rules"][0]["feedback"]["recommended"] == 1);
  CHECK(api.get("/homes/h1/recommendations?status=useful").size() == 1);
  CHECK(api.get("/homes/h1/recommendations?status=pending").empty());
}

TEST_CASE("ten consecutive not_useful answers exclude the rule") {
  const auto dir = testing::scratch_dir("svc-exclude");
  Service svc(config_for(dir, write_rules(dir, {make_rule("r1", {"a1", "b1"}, "off1"),
                                                make_rule("r2", {"a2", "b2"}, "off2")})));
  Api api(svc.start());
  for (int k = 0; k < 12; ++k) {
    REQUIRE(api.post_events("h1", forgotten(1, k * 7200))->status == 202);
  }
  auto recs = api.get("/homes/h1/recommendations?status=pending");
  REQUIRE(recs.size() == 12);
  for (int k = 0; k < 9; ++k) {
    CHECK(api.feedback(recs[k]["recommendation_id"], "not_useful", k * 7200 + 100)->status == 200);
  }
  CHECK(api.get("/rules")["census"]["by_state"]["excluded_by_feedback"] == 0);
  const auto res = api.feedback(recs[9]["recommendation_id"], "not_useful", 9 * 7200 + 100);
  CHECK(nlohmann::json::parse(res->body)["rule_state"] == "excluded_by_feedback");

  const auto rules = api.get("/rules");
  CHECK(rules["census"]["by_state"]["excluded_by_feedback"] == 1);
  CHECK(rules["census"]["by_state"]["active"] == 1);
  CHECK(svc.rules()->find("r1")->state == RuleState::excluded_by_feedback);
  CHECK(RuleDB::load(dir / "rules.jsonl").find("r1")->state == RuleState::excluded_by_feedback);

  // the excluded rule no longer fires
  REQUIRE(api.post_events("h1", forgotten(1, 20 * 7200))->status == 202);
  CHECK(api.get("/homes/h1/recommendations").size() == 12);
}

TEST_CASE("rule census reconciles with the rule database and the ledger") {
  SUBCASE("empty database") {
    const auto dir = testing::scratch_dir("svc-census-empty");
    Service svc(config_for(dir, dir / "missing.jsonl"));
    Api api(svc.start());
    const auto rules = api.get("/rules");
    CHECK(rules["census"]["total"] == 0);
    CHECK(rules["rules"].empty());
    CHECK(rules["rules_with_recommendations"] == 0);
  }

  SUBCASE("54 rules, 23 of them recommend") {
    const auto dir = testing::scratch_dir("svc-census");
    std::vector<AssociationRule> rules;
    for (int i = 0; i < 54; ++i) {
      const auto n = std::to_string(i);
      rules.push_back(make_rule("r" + n, {"a" + n, "b" + n}, "off" + n, 0.5 + i * 0.005));
    }
    Service svc(config_for(dir, write_rules(dir, rules)));
    Api api(svc.start());
    for (int i = 0; i < 23; ++i) REQUIRE(api.post_events("h1", forgotten(i * 2, i * 1000))->status == 202);

    const auto report = api.get("/rules");
    CHECK(report["census"]["total"] == 54);
    CHECK(report["rules_with_recommendations"] == 23);
    std::size_t sum = 0;
    for (const auto& [state, n] : report["census"]["by_state"].items()) sum += n.get<std::size_t>();
    CHECK(sum == 54);
    CHECK(report["rules"].size() == 54);
    std::size_t recommended = 0;
    for (const auto& r : report["rules"]) recommended += r["feedback"]["recommended"].get<std::size_t>();
    CHECK(recommended == svc.ledger_summary().recommendations);
    CHECK(recommended == 23);
    // ranked by priority
    CHECK(report["rules"][0]["rule_id"] == "r53");
  }
}

TEST_CASE("events up to the reorder tolerance are stored unmatched; older ones get 409") {
  const auto dir = testing::scratch_dir("svc-order");
  Service svc(config_for(dir, write_rules(dir, {make_rule("r1", {"A", "B"}, "Turn off C")})));
  Api api(svc.start());
  REQUIRE(api.post_events("h1", {ev(100, "X")})->status == 202);

  // a batch is sorted before matching
  auto res = api.post_events("h1", {ev(130, "D"), ev(110, "A"), ev(120, "B")});
  REQUIRE(res);
  CHECK(res->status == 202);
  CHECK(nlohmann::json::parse(res->body)["matched"] == 3);
  CHECK(api.get("/homes/h1/recommendations").size() == 1);

  res = api.post_events("h1", {ev(75, "late")});
  CHECK(res->status == 202);
  const auto body = nlohmann::json::parse(res->body);
  CHECK(body["late"] == 1);
  CHECK(body["matched"] == 0);
  CHECK(EventStore(dir / "store").event_count("h1") == 5);

  res = api.post_events("h1", {ev(200, "fine"), ev(60, "too old")});
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(nlohmann::json::parse(res->body)["error"] == "out_of_order");
  CHECK(EventStore(dir / "store").event_count("h1") == 5);

  // resending an already matched batch changes nothing
  res = api.post_events("h1", {ev(130, "D"), ev(110, "A"), ev(120, "B")});
  CHECK(res->status == 202);
  CHECK(nlohmann::json::parse(res->body)["duplicates"] == 3);
  CHECK(api.get("/homes/h1/recommendations").size() == 1);
}

TEST_CASE("expired recommendations leave the pending list") {
  const auto dir = testing::scratch_dir("svc-expire");
  Service svc(config_for(dir, write_rules(dir, {make_rule("r1", {"A", "B"}, "Turn off C")})));
  Api api(svc.start());
  REQUIRE(api.post_events("h1", {ev(0, "A"), ev(10, "B"), ev(20, "D")})->status == 202);
  REQUIRE(api.get("/homes/h1/recommendations?status=pending").size() == 1);
  REQUIRE(api.post_events("h1", {ev(49 * 3600, "later")})->status == 202);
  CHECK(api.get("/homes/h1/recommendations?status=pending").empty());
  CHECK(api.get("/homes/h1/recommendations?status=expired").size() == 1);
}

TEST_CASE("restart keeps events, recommendations, feedback and live instances") {
  const auto dir = testing::scratch_dir("svc-restart");
  const auto rules = write_rules(dir, {make_rule("r1", {"A", "B"}, "Turn off C"), make_rule("r2", {"P", "Q"}, "off2")});
  std::string first_id;
  {
    Service svc(config_for(dir, rules));
    Api api(svc.start());
    REQUIRE(api.post_events("h1", {ev(0, "A"), ev(10, "B"), ev(20, "D")})->status == 202);
    first_id = api.get("/homes/h1/recommendations")[0]["recommendation_id"];
    REQUIRE(api.feedback(first_id, "useful", 30)->status == 200);
    // P,Q completes right before shutdown; its next event arrives after the restart
    REQUIRE(api.post_events("h1", {ev(1000, "P"), ev(1010, "Q")})->status == 202);
  }
  Service svc(config_for(dir, rules));
  Api api(svc.start());
  auto recs = api.get("/homes/h1/recommendations");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0]["status"] == "useful");
  CHECK(EventStore(dir / "store").event_count("h1") == 5);

  REQUIRE(api.post_events("h1", {ev(1020, "E")})->status == 202);
  recs = api.get("/homes/h1/recommendations?status=pending");
  REQUIRE(recs.size() == 1);
  CHECK(recs[0]["rule_id"] == "r2");
  CHECK(recs[0]["recommendation_id"] != first_id);

  // the cooldown of r1 survives the restart
  REQUIRE(api.post_events("h1", {ev(2000, "A"), ev(2010, "B"), ev(2020, "D")})->status == 202);
  CHECK(api.get("/homes/h1/recommendations").size() == 2);
  REQUIRE(api.post_events("h1", {ev(9000, "A"), ev(9010, "B"), ev(9020, "D")})->status == 202);
  CHECK(api.get("/homes/h1/recommendations").size() == 3);
}

TEST_CASE("homes are served concurrently and match their sequential replay") {
  const auto dir = testing::scratch_dir("svc-concurrent");
  std::vector<AssociationRule> rules;
  for (int h = 0; h < 4; ++h) {
    rules.push_back(make_rule("r" + std::to_string(h), {"a1", "b1"}, "off1", 0.9, "h" + std::to_string(h)));
  }
  Service svc(config_for(dir, write_rules(dir, rules)));
  const int port = svc.start();

  std::vector<std::thread> threads;
  std::atomic<int> failures{0};
  for (int h = 0; h < 4; ++h) {
    threads.emplace_back([&, h] {
      Api api(port);
      const auto home = "h" + std::to_string(h);
      for (int k = 0; k < 10; ++k) {
        auto batch = forgotten(1, k * 4000);
        for (auto& e : batch) e.home_id = home;
        auto res = api.post_events(home, batch);
        if (!res || res->status != 202) ++failures;
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(failures == 0);

  for (int h = 0; h < 4; ++h) {
    const auto home = "h" + std::to_string(h);
    std::vector<EventRecord> all;
    for (int k = 0; k < 10; ++k)
      for (auto e : forgotten(1, k * 4000)) {
        e.home_id = home;
        all.push_back(e);
      }
    RuleDB db;
    db.add(rules[static_cast<std::size_t>(h)]);
    db.recompute();
    const auto expected = oracle::replay(all, db, MatcherConfig{});
    const auto got = svc.recommendations(home);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].created_at == expected[i].created_at);
      CHECK(got[i].rule_id == expected[i].rule_id);
    }
  }
}

TEST_CASE("webhook delivery retries with a stable idempotency key") {
  httplib::Server hook;
  std::mutex m;
  std::vector<std::string> keys;
  std::vector<std::string> bodies;
  hook.Post("/hook", [&](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(m);
    keys.push_back(req.get_header_value("Idempotency-Key"));
    bodies.push_back(req.body);
    res.status = keys.size() == 1 ? 500 : 200;
  });
  const int hook_port = hook.bind_to_any_port("127.0.0.1");
  std::thread hook_thread([&] { hook.listen_after_bind(); });
  hook.wait_until_ready();

  const auto dir = testing::scratch_dir("svc-hook");
  auto cfg = config_for(dir, write_rules(dir, {make_rule("r1", {"A", "B"}, "Turn off C")}));
  cfg.webhooks["h1"] = "http://127.0.0.1:" + std::to_string(hook_port) + "/hook";
  cfg.webhook_backoff = std::chrono::milliseconds(10);
  {
    Service svc(cfg);
    svc.post_events("h1", {ev(0, "A"), ev(10, "B"), ev(20, "D")});
    svc.drain_webhooks();
    const auto stats = svc.webhook_stats();
    CHECK(stats.delivered == 1);
    CHECK(stats.attempts == 2);
    CHECK(stats.failed == 0);
  }
  hook.stop();
  hook_thread.join();
  REQUIRE(keys.size() == 2);
  CHECK(keys[0] == keys[1]);
  CHECK(keys[0] == nlohmann::json::parse(bodies[1])["recommendation_id"]);
}

TEST_CASE("error codes map to HTTP status codes") {
  CHECK(http_status_for("invalid_argument") == 400);
  CHECK(http_status_for("unauthorized") == 401);
  CHECK(http_status_for("not_found") == 404);
  CHECK(http_status_for("conflict") == 409);
  CHECK(http_status_for("out_of_order") == 409);
  CHECK(http_status_for("io") == 500);
}
