#include <doctest.h>

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "ecorec/error.hpp"
#include "ecorec/feedback.hpp"
#include "ecorec/matcher.hpp"
#include "test_util.hpp"

using namespace ecorec;
using ecorec::testing::id_of;
using ecorec::testing::scratch_dir;
using ecorec::testing::t0;

namespace {

Recommendation rec_for(const std::string& rule_id, int n, std::int64_t at = 0, const std::string& home = "h1") {
  Recommendation r;
  r.recommendation_id = home + "-" + std::to_string(n);
  r.home_id = home;
  r.rule_id = rule_id;
  r.action = id_of("Turn off tv");
  r.created_at = t0() + Seconds{at};
  return r;
}

AssociationRule rule_of(const std::string& id, double confidence, std::size_t length,
                        ActionCategory cat = ActionCategory::off) {
  AssociationRule r;
  r.rule_id = id;
  r.home_id = "h1";
  r.condition = {id_of("a"), id_of("b")};
  r.action = id_of("Turn off tv");
  r.action_category = cat;
  r.confidence = confidence;
  r.pattern_length = length;
  return r;
}

// Normal equations for y ~ 1 + a + b solved with Cramer's rule.
std::array<double, 3> normal_equations(const std::vector<RegressionPoint>& pts) {
  double m[3][3] = {};
  double v[3] = {};
  for (const auto& p : pts) {
    const double row[3] = {1.0, p.confidence, p.length};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) m[i][j] += row[i] * row[j];
      v[i] += row[i] * p.weighted_feedback;
    }
  }
  auto det = [](double a[3][3]) {
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  };
  const double d = det(m);
  std::array<double, 3> out{};
  for (int k = 0; k < 3; ++k) {
    double c[3][3];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) c[i][j] = j == k ? v[i] : m[i][j];
    }
    out[static_cast<std::size_t>(k)] = det(c) / d;
  }
  return out;
}

}  // namespace

TEST_CASE("ten negatives in a row exclude the rule") {
  FeedbackLedger ledger;
  RuleDB db;
  db.add(rule_of("r1", 0.9, 3));
  db.recompute();
  for (int i = 1; i <= 10; ++i) {
    ledger.add_recommendation(rec_for("r1", i, i * 100));
    const auto out = ledger.record("h1-" + std::to_string(i), Verdict::not_useful, t0() + Seconds{i * 100 + 5});
    CHECK(out.streak == static_cast<std::uint64_t>(i));
    CHECK(out.reached_exclusion == (i == 10));
  }
  CHECK(ledger.rules_at_streak() == std::vector<std::string>{"r1"});
  CHECK(apply_feedback_exclusions(db, ledger) == std::vector<std::string>{"r1"});
  CHECK(db.find("r1")->state == RuleState::excluded_by_feedback);
  db.recompute();
  CHECK(db.find("r1")->state == RuleState::excluded_by_feedback);

  // an excluded rule no longer matches
  const std::vector<EventRecord> events{ecorec::testing::ev(0, "a"), ecorec::testing::ev(5, "b"),
                                        ecorec::testing::ev(10, "x")};
  CHECK(replay(events, std::make_shared<const RuleDB>(db), {}).empty());
}

TEST_CASE("a useful verdict resets the streak") {
  FeedbackLedger ledger;
  for (int i = 1; i <= 10; ++i) ledger.add_recommendation(rec_for("r1", i));
  for (int i = 1; i <= 9; ++i) ledger.record("h1-" + std::to_string(i), Verdict::not_useful, t0());
  const auto out = ledger.record("h1-10", Verdict::useful, t0());
  CHECK(out.streak == 0);
  CHECK_FALSE(out.reached_exclusion);
  CHECK(ledger.rules_at_streak().empty());
}

TEST_CASE("verdicts are final and ids must exist") {
  FeedbackLedger ledger;
  ledger.add_recommendation(rec_for("r1", 1));
  ledger.record("h1-1", Verdict::useful, t0());
  const auto before = ledger.entries();
  const auto agg = ledger.aggregate("r1");
  CHECK_THROWS_AS(ledger.record("h1-1", Verdict::not_useful, t0()), Error);
  CHECK(ledger.entries() == before);
  CHECK(ledger.aggregate("r1") == agg);
  CHECK_THROWS_AS(ledger.record("nope", Verdict::useful, t0()), Error);
  CHECK_THROWS_AS(ledger.add_recommendation(rec_for("r1", 1)), Error);
  CHECK(ledger.find("h1-1")->status == RecommendationStatus::useful);
}

TEST_CASE("weighted feedback") {
  FeedbackLedger ledger;
  int n = 0;
  for (int i = 0; i < 7; ++i) {
    ledger.add_recommendation(rec_for("mixed", ++n));
    ledger.record("h1-" + std::to_string(n), Verdict::useful, t0());
  }
  for (int i = 0; i < 69; ++i) {
    ledger.add_recommendation(rec_for("mixed", ++n));
    ledger.record("h1-" + std::to_string(n), Verdict::not_useful, t0());
  }
  CHECK(*ledger.weighted_feedback("mixed") == doctest::Approx(-62.0 / 76.0));
  CHECK(*ledger.weighted_feedback("mixed") == doctest::Approx(-0.8158).epsilon(1e-4));

  for (int i = 0; i < 3; ++i) {
    ledger.add_recommendation(rec_for("good", ++n));
    ledger.record("h1-" + std::to_string(n), Verdict::useful, t0());
  }
  CHECK(*ledger.weighted_feedback("good") == 1.0);
  for (int i = 0; i < 4; ++i) {
    ledger.add_recommendation(rec_for("even", ++n));
    ledger.record("h1-" + std::to_string(n), i % 2 ? Verdict::useful : Verdict::not_useful, t0());
  }
  CHECK(*ledger.weighted_feedback("even") == 0.0);
  ledger.add_recommendation(rec_for("silent", ++n));
  CHECK_FALSE(ledger.weighted_feedback("silent"));
}

TEST_CASE("aggregates always equal recomputation from the records") {
  std::mt19937_64 rng(31);
  FeedbackLedger ledger;
  int n = 0;
  std::int64_t clock = 0;
  for (int step = 0; step < 2000; ++step) {
    clock += static_cast<std::int64_t>(rng() % 7200);
    const int op = static_cast<int>(rng() % 10);
    if (op < 5) {
      ledger.add_recommendation(rec_for("r" + std::to_string(rng() % 6), ++n, clock));
    } else if (op < 9 && n > 0) {
      const auto id = "h1-" + std::to_string(1 + rng() % static_cast<std::uint64_t>(n));
      if (ledger.find(id)->status == RecommendationStatus::pending) {
        ledger.record(id, rng() % 3 ? Verdict::not_useful : Verdict::useful, t0() + Seconds{clock});
      }
    } else {
      ledger.expire(t0() + Seconds{clock});
    }
    if (step == 1000) ledger.new_phase(t0() + Seconds{clock});
    if (step % 100 == 0) CHECK(ledger.aggregates() == ledger.recompute_aggregates());
  }
  CHECK(ledger.aggregates() == ledger.recompute_aggregates());
  const auto summary = ledger.summary();
  CHECK(summary.phase == 1);
  CHECK(summary.response_rate() >= 0.0);
  CHECK(summary.response_rate() <= 1.0);
}

TEST_CASE("unanswered recommendations expire after 48 hours") {
  FeedbackLedger ledger;
  ledger.add_recommendation(rec_for("r1", 1, 0));
  ledger.add_recommendation(rec_for("r1", 2, 0, "h2"));
  CHECK(ledger.expire(t0() + Seconds{48 * 3600}).empty());
  CHECK(ledger.expire(t0() + Seconds{48 * 3600 + 1}, "h1") == std::vector<std::string>{"h1-1"});
  CHECK(ledger.find("h2-2")->status == RecommendationStatus::pending);
  CHECK_THROWS_AS(ledger.record("h1-1", Verdict::not_useful, t0()), Error);
  CHECK(ledger.aggregate("r1").expired == 1);
  CHECK(ledger.aggregate("r1").streak == 0);
  CHECK(ledger.aggregate("r1").answered() == 0);
}

TEST_CASE("journal survives a reopen and a torn tail") {
  const auto dir = scratch_dir("ledger");
  const auto path = dir / "ledger.jsonl";
  {
    auto ledger = FeedbackLedger::open(path);
    for (int i = 1; i <= 12; ++i) ledger.add_recommendation(rec_for("r" + std::to_string(i % 3), i, i * 60));
    for (int i = 1; i <= 8; ++i) ledger.record("h1-" + std::to_string(i), Verdict::not_useful, t0());
    ledger.new_phase(t0() + Seconds{3600});
    ledger.record("h1-9", Verdict::useful, t0() + Seconds{4000});
    ledger.expire(t0() + Seconds{72 * 3600});
  }
  {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << R"({"type":"verdict","entry":{"recommendation_id")";  // crash mid-write
  }
  auto reopened = FeedbackLedger::open(path);
  CHECK(reopened.phase() == 1);
  CHECK(reopened.entries().size() == 9);
  CHECK(reopened.aggregates() == reopened.recompute_aggregates());
  CHECK(reopened.aggregate("r0").useful == 1);
  CHECK(reopened.find("h1-12")->status == RecommendationStatus::expired);
  CHECK(reopened.summary().expired == 3);
  reopened.add_recommendation(rec_for("r1", 13, 0));
  CHECK(FeedbackLedger::open(path).size() == 13);
  std::filesystem::remove_all(dir);
}

TEST_CASE("regression: exact linear relation is recovered") {
  std::vector<RegressionPoint> pts;
  for (int i = 0; i < 12; ++i) {
    RegressionPoint p;
    p.rule_id = "r" + std::to_string(i);
    p.confidence = 0.3 + 0.05 * i;
    p.length = 3 + i % 4;
    p.weighted_feedback = p.confidence;
    pts.push_back(p);
  }
  const auto fit = fit_points(pts);
  REQUIRE(fit.valid);
  CHECK(fit.beta_confidence == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(fit.beta_length) < 1e-9);
  CHECK(std::abs(fit.intercept) < 1e-9);
  CHECK(fit.r_squared == doctest::Approx(1.0));
}

TEST_CASE("regression: planted coefficients within three standard errors") {
  std::mt19937_64 rng(2016);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::uniform_real_distribution<double> conf(0.2, 1.0);
  std::vector<RegressionPoint> pts;
  for (int i = 0; i < 54; ++i) {
    RegressionPoint p;
    p.rule_id = "r" + std::to_string(i);
    p.confidence = conf(rng);
    p.length = static_cast<double>(3 + rng() % 5);
    p.weighted_feedback = 0.5 * p.confidence + 0.1 * p.length + noise(rng);
    pts.push_back(p);
  }
  const auto fit = fit_points(pts);
  REQUIRE(fit.valid);
  CHECK(std::abs(fit.beta_confidence - 0.5) <= 3 * fit.se_confidence);
  CHECK(std::abs(fit.beta_length - 0.1) <= 3 * fit.se_length);
  CHECK(std::abs(fit.intercept) <= 3 * fit.se_intercept);
  const auto oracle = normal_equations(pts);
  CHECK(fit.intercept == doctest::Approx(oracle[0]).epsilon(1e-8));
  CHECK(fit.beta_confidence == doctest::Approx(oracle[1]).epsilon(1e-8));
  CHECK(fit.beta_length == doctest::Approx(oracle[2]).epsilon(1e-8));
  CHECK(fit.weights() == RegressionWeights{fit.beta_confidence, fit.beta_length, fit.intercept});
}

TEST_CASE("regression: too few rules and degenerate designs") {
  std::vector<RegressionPoint> two(2);
  CHECK_THROWS_AS(fit_points(two), Error);
  std::vector<RegressionPoint> flat(5);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    flat[i].confidence = 0.1 * static_cast<double>(i);
    flat[i].length = 4;
    flat[i].weighted_feedback = 0.2;
  }
  const auto fit = fit_points(flat);
  CHECK_FALSE(fit.valid);
  CHECK_FALSE(fit.note.empty());
  CHECK(fit.weights() == RegressionWeights{});
  std::vector<RegressionPoint> three(3);
  for (std::size_t i = 0; i < 3; ++i) {
    three[i].confidence = 0.2 * static_cast<double>(i);
    three[i].length = static_cast<double>(3 + i * i);
    three[i].weighted_feedback = 0.1 * static_cast<double>(i);
  }
  const auto exact = fit_points(three);
  CHECK(exact.valid);
  CHECK(std::isnan(exact.se_confidence));
  CHECK(exact.to_json()["confidence"]["se"].is_null());
}

TEST_CASE("fit_regression uses one point per rule with answers") {
  FeedbackLedger ledger;
  RuleDB db;
  int n = 0;
  for (int r = 0; r < 4; ++r) {
    db.add(rule_of("r" + std::to_string(r), 0.25 * (r + 1), 3 + static_cast<std::size_t>(r % 2)));
    for (int k = 0; k <= r; ++k) {
      ledger.add_recommendation(rec_for("r" + std::to_string(r), ++n));
      ledger.record("h1-" + std::to_string(n), k % 2 ? Verdict::useful : Verdict::not_useful, t0());
    }
  }
  db.add(rule_of("quiet", 0.5, 3));
  const auto points = regression_points(ledger, db);
  REQUIRE(points.size() == 4);
  CHECK(points[3].answered == 4);
  CHECK(points[3].weighted_feedback == 0.0);
  CHECK(fit_regression(ledger, db).n == 4);
}

TEST_CASE("adapt_phase2") {
  RuleDB db;
  db.add(rule_of("keep", 0.9, 4));
  db.add(rule_of("weak", 0.2, 3));
  db.add(rule_of("away", 0.95, 5, ActionCategory::absent));
  db.add(rule_of("bad", 0.8, 4));
  db.recompute();
  FeedbackLedger ledger;
  for (int i = 1; i <= 10; ++i) {
    ledger.add_recommendation(rec_for("bad", i));
    ledger.record("h1-" + std::to_string(i), Verdict::not_useful, t0());
  }
  RegressionFit fit;
  fit.valid = true;
  fit.beta_confidence = 1.0;
  fit.beta_length = 0.0;

  SUBCASE("threshold and policy") {
    const auto result = adapt_phase2(db, fit, 0.5, &ledger, t0());
    CHECK(result.report.removed_by_feedback == 1);
    CHECK(result.db.find("bad") == nullptr);
    CHECK(result.db.find("keep")->state == RuleState::active);
    CHECK(result.db.find("weak")->state == RuleState::below_threshold);
    CHECK(result.db.find("away")->state == RuleState::excluded_by_policy);
    CHECK(result.report.before.total == 4);
    CHECK(result.report.after.total == 3);
    CHECK(result.report.after.by_state.at(RuleState::active) == 1);
    CHECK(ledger.phase() == 1);
    CHECK(ledger.rules_at_streak().empty());
    CHECK(result.report.table().find("below_threshold") != std::string::npos);

    const auto again = adapt_phase2(result.db, fit, 0.5, &ledger, t0());
    CHECK(again.db == result.db);
  }
  SUBCASE("threshold -inf keeps only feedback and policy exclusions") {
    const auto result = adapt_phase2(db, fit, -std::numeric_limits<double>::infinity(), &ledger, t0());
    CHECK(result.db.find("weak")->state == RuleState::active);
    CHECK(result.db.find("keep")->state == RuleState::active);
    CHECK(result.db.find("away")->state == RuleState::excluded_by_policy);
    CHECK(result.db.size() == 3);
    CHECK(result.report.to_json()["threshold"].is_null());
  }
  SUBCASE("invalid fit falls back to default weights") {
    const auto result = adapt_phase2(db, RegressionFit{}, 0.5);
    CHECK(result.db.weights == RegressionWeights{});
    CHECK(result.db.find("bad") != nullptr);  // no ledger, no streak exclusion
  }
}
