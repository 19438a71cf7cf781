#include <doctest.h>

#include <algorithm>
#include <random>

#include "ecorec/error.hpp"
#include "ecorec/matcher.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ecorec;
using ecorec::testing::ev;
using ecorec::testing::id_of;
using ecorec::testing::t0;

namespace {

AssociationRule make_rule(const std::string& id, const std::vector<std::string>& cond, const std::string& action,
                          double confidence = 0.9) {
  AssociationRule r;
  r.rule_id = id;
  r.home_id = "h1";
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

std::shared_ptr<const RuleDB> db_of(std::vector<AssociationRule> rules, double threshold = 0.0) {
  RuleDB db;
  for (auto& r : rules) db.add(std::move(r));
  db.threshold = threshold;
  db.recompute();
  return std::make_shared<const RuleDB>(std::move(db));
}

std::vector<Recommendation> run(const std::vector<EventRecord>& events, std::shared_ptr<const RuleDB> db,
                                MatcherConfig cfg = {}) {
  return replay(events, std::move(db), cfg);
}

}  // namespace

TEST_CASE("A,B then the action: suppressed") {
  const auto db = db_of({make_rule("r1", {"A", "B"}, "turn off C")});
  MatcherStats stats;
  const auto recs = replay(std::vector<EventRecord>{ev(0, "A"), ev(10, "B"), ev(20, "turn off C")}, db, {}, nullptr,
                           &stats);
  CHECK(recs.empty());
  CHECK(stats.suppressed == 1);
}

TEST_CASE("A,B then something else: one recommendation at that event") {
  const auto db = db_of({make_rule("r1", {"A", "B"}, "turn off C")});
  const std::vector<EventRecord> events{ev(0, "A"), ev(10, "B"), ev(20, "D")};
  const auto recs = run(events, db);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].rule_id == "r1");
  CHECK(recs[0].action == id_of("turn off C"));
  CHECK(recs[0].created_at == events[2].timestamp);
  CHECK(recs[0].trigger_events == std::vector<EventRecord>{events[0], events[1]});
  CHECK(recs[0].recommendation_id == "h1-1");
  CHECK(recs[0].status == RecommendationStatus::pending);
  CHECK(recs[0].text == "turn off C (s-turn off C, z1)");
}

TEST_CASE("empty stream") {
  const auto db = db_of({make_rule("r1", {"A", "B"}, "turn off C")});
  CHECK(run({}, db).empty());
  Matcher m("h1", {}, db);
  CHECK(m.flush().empty());
  CHECK(m.live_instances() == 0);
}

TEST_CASE("conflict: two rules complete on the same event, the higher priority wins") {
  const auto db = db_of({make_rule("low", {"A", "B"}, "turn off C", 0.6), make_rule("high", {"X", "B"}, "Sleep", 0.8)});
  const std::vector<EventRecord> events{ev(0, "A"), ev(5, "X"), ev(10, "B"), ev(20, "D")};
  const auto recs = run(events, db);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].rule_id == "high");
  CHECK(recs == oracle::replay(events, *db, {}));
  MatcherStats stats;
  replay(events, db, {}, nullptr, &stats);
  CHECK(stats.dropped_conflict == 1);
}

TEST_CASE("gap and timeout handling") {
  const auto db = db_of({make_rule("r1", {"A", "B"}, "turn off C")});
  SUBCASE("partial instance idle beyond the gap is dropped") {
    CHECK(run({ev(0, "A"), ev(601, "B"), ev(610, "D")}, db).empty());
    CHECK(run({ev(0, "A"), ev(600, "B"), ev(610, "D")}, db).size() == 1);
  }
  SUBCASE("no next event: emitted at the wait deadline") {
    const auto recs = run({ev(0, "A"), ev(10, "B")}, db);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].created_at == t0() + Seconds{310});
  }
  SUBCASE("next event after the wait: emitted at the deadline, not at the event") {
    const auto recs = run({ev(0, "A"), ev(10, "B"), ev(311, "turn off C")}, db);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].created_at == t0() + Seconds{310});
  }
  SUBCASE("action exactly at the deadline still suppresses") {
    CHECK(run({ev(0, "A"), ev(10, "B"), ev(310, "turn off C")}, db).empty());
  }
  SUBCASE("expire with an injected clock, idempotent") {
    Matcher m("h1", {}, db);
    m.on_event(ev(0, "A"));
    m.on_event(ev(10, "B"));
    CHECK(m.expire(t0() + Seconds{200}).empty());
    const auto first = m.expire(t0() + Seconds{400});
    REQUIRE(first.size() == 1);
    CHECK(first[0].created_at == t0() + Seconds{310});
    CHECK(m.expire(t0() + Seconds{400}).empty());
    CHECK(m.live_instances() == 0);
  }
}

TEST_CASE("cooldown") {
  const auto db = db_of({make_rule("r1", {"A", "B"}, "turn off C")});
  std::vector<EventRecord> events;
  for (int i = 0; i < 5; ++i) {
    const std::int64_t t = i * 900;  // every 15 minutes
    events.push_back(ev(t, "A"));
    events.push_back(ev(t + 10, "B"));
    events.push_back(ev(t + 20, "D"));
  }
  MatcherConfig cfg;
  const auto recs = run(events, db, cfg);
  // emissions at 20 and 3620 would be the first two; the stream ends at 3620
  REQUIRE(recs.size() == 2);
  CHECK(recs[1].created_at - recs[0].created_at >= cfg.cooldown);
  cfg.cooldown = Seconds{0};
  CHECK(run(events, db, cfg).size() == 5);
}

TEST_CASE("rules that do not emit are never matched") {
  auto below = make_rule("below", {"A", "B"}, "turn off C", 0.3);
  auto excluded = make_rule("excluded", {"A", "B"}, "Sleep", 0.9);
  RuleDB db;
  db.add(below);
  db.add(excluded);
  db.threshold = 0.5;
  db.exclude_by_feedback("excluded");
  db.recompute();
  const auto snapshot = std::make_shared<const RuleDB>(db);
  CHECK(run({ev(0, "A"), ev(10, "B"), ev(20, "D")}, snapshot).empty());
}

TEST_CASE("order-insensitive mode") {
  const auto db = db_of({make_rule("r1", {"A", "B"}, "turn off C")});
  const std::vector<EventRecord> swapped{ev(0, "B"), ev(10, "A"), ev(20, "D")};
  CHECK(run(swapped, db).empty());
  MatcherConfig cfg;
  cfg.order_insensitive = true;
  const auto recs = run(swapped, db, cfg);
  REQUIRE(recs.size() == 1);
  CHECK(recs == oracle::replay(swapped, *db, cfg));
}

TEST_CASE("planted forgotten actions are each recommended once") {
  const auto db = db_of({make_rule("r1", {"A", "B"}, "turn off C")});
  std::vector<EventRecord> events;
  int forgotten = 0;
  for (int day = 0; day < 30; ++day) {
    const std::int64_t t = day * 86400;
    events.push_back(ev(t, "A"));
    events.push_back(ev(t + 40, "B"));
    if (day % 4 == 0) {
      ++forgotten;
    } else {
      events.push_back(ev(t + 60, "turn off C"));
    }
    events.push_back(ev(t + 5000, "noise"));
  }
  CHECK(run(events, db).size() == static_cast<std::size_t>(forgotten));
}

TEST_CASE("unknown home and out-of-order events are rejected") {
  Matcher m("h1", {}, db_of({}));
  CHECK_THROWS_AS(m.on_event(ev(0, "A", "z1", "h2")), Error);
  m.on_event(ev(10, "A"));
  CHECK_THROWS_AS(m.on_event(ev(5, "A")), Error);
}

TEST_CASE("matcher equals the naive replayer on random streams") {
  std::mt19937_64 rng(4242);
  const std::vector<std::string> normals{"A", "B", "C", "D", "E"};
  const std::vector<std::string> actions{"turn off X", "Sleep", "Dim Y"};
  MatcherStats total;
  for (int round = 0; round < 80; ++round) {
    std::vector<AssociationRule> rules;
    const int nrules = 1 + static_cast<int>(rng() % 12);
    for (int k = 0; k < nrules; ++k) {
      std::vector<std::string> cond;
      const std::size_t len = 2 + rng() % 3;
      for (std::size_t i = 0; i < len; ++i) cond.push_back(normals[rng() % normals.size()]);
      auto r = make_rule("r" + std::to_string(k), cond, actions[rng() % actions.size()],
                         static_cast<double>(rng() % 5) / 4.0);
      r.pattern_support = static_cast<double>(rng() % 3);
      rules.push_back(r);
    }
    const auto db = db_of(rules, 0.2);
    std::vector<EventRecord> events;
    std::int64_t t = 0;
    const std::size_t n = 50 + rng() % 400;
    for (std::size_t i = 0; i < n; ++i) {
      t += static_cast<std::int64_t>(rng() % 4 == 0 ? 0 : rng() % 500);
      const bool act = rng() % 4 == 0;
      events.push_back(ev(t, act ? actions[rng() % actions.size()] : normals[rng() % normals.size()]));
    }
    std::sort(events.begin(), events.end(), event_order_less);
    MatcherConfig cfg;
    cfg.max_gap = Seconds{100 + static_cast<std::int64_t>(rng() % 600)};
    cfg.action_wait = Seconds{static_cast<std::int64_t>(rng() % 400)};
    cfg.cooldown = Seconds{static_cast<std::int64_t>(rng() % 3000)};
    cfg.order_insensitive = round % 3 == 0;

    const auto expected = oracle::replay(events, *db, cfg);
    MatcherStats stats;
    const auto got = replay(events, db, cfg, nullptr, &stats);
    CHECK(got == expected);
    CHECK(stats.emitted == got.size());
    total.suppressed += stats.suppressed;
    total.timeouts += stats.timeouts;
    total.dropped_conflict += stats.dropped_conflict;
    total.dropped_cooldown += stats.dropped_cooldown;
    total.emitted += stats.emitted;
    CHECK(replay(events, db, cfg) == got);

    // invariants: cooldown per rule, at most one emission per instant
    std::map<std::string, Timestamp> last;
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (i > 0) CHECK(got[i].created_at >= got[i - 1].created_at);
      if (auto it = last.find(got[i].rule_id); it != last.end()) {
        CHECK(got[i].created_at - it->second >= cfg.cooldown);
      }
      last[got[i].rule_id] = got[i].created_at;
      CHECK(db->find(got[i].rule_id)->emits());
    }
  }
  // the streams exercise every branch
  CHECK(total.suppressed > 0);
  CHECK(total.timeouts > 0);
  CHECK(total.dropped_conflict > 0);
  CHECK(total.dropped_cooldown > 0);
  MESSAGE("emitted " << total.emitted << ", suppressed " << total.suppressed << ", timeouts " << total.timeouts
                     << ", conflicts " << total.dropped_conflict << ", cooldown " << total.dropped_cooldown);
}

TEST_CASE("live instances stay bounded") {
  std::vector<AssociationRule> rules;
  for (int k = 0; k < 5; ++k) rules.push_back(make_rule("r" + std::to_string(k), {"A", "A", "B", "A"}, "Sleep"));
  const auto db = db_of(rules);
  Matcher m("h1", {}, db);
  std::size_t peak = 0;
  for (int i = 0; i < 2000; ++i) {
    m.on_event(ev(i, i % 7 == 0 ? "B" : "A"));
    peak = std::max(peak, m.live_instances());
  }
  CHECK(peak <= 5 * 4);
}

TEST_CASE("rule swap keeps live instances of surviving rules") {
  auto r1 = make_rule("r1", {"A", "B"}, "turn off C");
  Matcher m("h1", {}, db_of({r1}));
  m.on_event(ev(0, "A"));
  m.set_rules(db_of({r1, make_rule("r2", {"E", "F"}, "Sleep")}));
  m.on_event(ev(10, "B"));
  const auto recs = m.on_event(ev(20, "D"));
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].rule_id == "r1");
}

TEST_CASE("recommendation text uses topology names") {
  auto topo = std::make_shared<HomeTopology>();
  topo->home_id = "h1";
  topo->zones = {{"z1", "Kitchen"}};
  topo->devices = {{"s-turn off C", "z1", "Ceiling light", ""}};
  const auto recs = replay(std::vector<EventRecord>{ev(0, "A"), ev(10, "B"), ev(20, "D")},
                           db_of({make_rule("r1", {"A", "B"}, "turn off C")}), {}, topo);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].text == "turn off C (Ceiling light, Kitchen)");
  CHECK(recommendation_from_json(recommendation_to_json(recs[0])) == recs[0]);
}
