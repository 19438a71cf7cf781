#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecorec/domain.hpp"
#include "ecorec/rules.hpp"

namespace ecorec {

struct FeedbackConfig {
  std::size_t exclusion_streak = 10;  // consecutive not_useful verdicts that exclude a rule
  Seconds expiry{48 * 3600};          // unanswered recommendations expire after this
};

// Counts for one rule within the current phase.
struct RuleAggregate {
  std::uint64_t recommended = 0;
  std::uint64_t useful = 0;
  std::uint64_t not_useful = 0;
  std::uint64_t expired = 0;
  std::uint64_t streak = 0;  // consecutive not_useful verdicts

  std::uint64_t answered() const { return useful + not_useful; }
  friend bool operator==(const RuleAggregate&, const RuleAggregate&) = default;
};

struct RecordOutcome {
  std::string rule_id;
  std::uint64_t streak = 0;
  bool reached_exclusion = false;  // this verdict brought the streak to the limit
};

struct LedgerSummary {
  int phase = 0;
  std::uint64_t recommendations = 0;
  std::uint64_t useful = 0;
  std::uint64_t not_useful = 0;
  std::uint64_t expired = 0;
  std::uint64_t pending = 0;
  std::size_t rules_at_streak = 0;

  double response_rate() const;
  nlohmann::json to_json() const;
};

/// Recommendations and the verdicts given on them. Append-only; every change
/// is written to the journal (when one is attached) before it is applied.
/// Aggregates and streaks cover the current phase only.
class FeedbackLedger {
 public:
  explicit FeedbackLedger(FeedbackConfig cfg = {});

  // Opens or creates a journal file and replays it.
  static FeedbackLedger open(const std::filesystem::path& journal, FeedbackConfig cfg = {});

  // Throws Error("conflict") when the id is already known.
  void add_recommendation(const Recommendation& rec);

  // Throws Error("not_found") for an unknown id and Error("conflict") when the
  // recommendation is no longer pending.
  RecordOutcome record(const std::string& recommendation_id, Verdict verdict, Timestamp received_at);

  // Expires pending recommendations of `home_id` (all homes when empty) older
  // than the expiry window at `now`. Returns the expired ids.
  std::vector<std::string> expire(Timestamp now, const std::string& home_id = {});

  // Starts a new phase: streaks and aggregates restart from zero.
  void new_phase(Timestamp at);

  int phase() const { return phase_; }
  const FeedbackConfig& config() const { return cfg_; }
  const std::vector<FeedbackEntry>& entries() const { return entries_; }
  const Recommendation* find(const std::string& recommendation_id) const;
  std::vector<const Recommendation*> recommendations(const std::string& home_id = {},
                                                     std::optional<RecommendationStatus> status = {}) const;
  std::size_t size() const { return recs_.size(); }

  const std::map<std::string, RuleAggregate>& aggregates() const { return aggregates_; }
  RuleAggregate aggregate(const std::string& rule_id) const;

  // Aggregates rebuilt from scratch out of the stored records.
  std::map<std::string, RuleAggregate> recompute_aggregates() const;

  // (useful - not_useful) / answered for the current phase; empty when the
  // rule has no answered recommendation.
  std::optional<double> weighted_feedback(const std::string& rule_id) const;

  std::vector<std::string> rules_at_streak() const;
  LedgerSummary summary() const;

 private:
  struct Stored {
    Recommendation rec;
    int phase = 0;
  };

  void journal(const nlohmann::json& line);
  void apply(const nlohmann::json& line);
  void apply_recommendation(const Recommendation& rec, int phase);
  RecordOutcome apply_verdict(const FeedbackEntry& entry);
  void apply_expired(const std::string& id, int phase);

  FeedbackConfig cfg_;
  int phase_ = 0;
  std::vector<FeedbackEntry> entries_;
  std::vector<int> entry_phase_;
  std::vector<std::pair<std::string, int>> expired_;  // id, phase
  std::vector<Stored> recs_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, RuleAggregate> aggregates_;
  std::optional<std::filesystem::path> journal_path_;
  std::shared_ptr<std::ofstream> journal_;
};

// Marks every rule whose streak reached the limit as excluded_by_feedback.
// Returns the ids that changed.
std::vector<std::string> apply_feedback_exclusions(RuleDB& db, const FeedbackLedger& ledger);

struct RegressionPoint {
  std::string rule_id;
  double confidence = 0.0;
  double length = 0.0;
  double support = 0.0;
  double action_position = 0.0;
  double weighted_feedback = 0.0;
  std::uint64_t answered = 0;
};

// Ordinary least squares of weighted feedback on (1, confidence, length).
struct RegressionFit {
  bool valid = false;
  std::string note;  // why the fit is not valid
  std::size_t n = 0;
  double intercept = 0.0;
  double beta_confidence = 0.0;
  double beta_length = 0.0;
  double se_intercept = 0.0;  // NaN when there are no residual degrees of freedom
  double se_confidence = 0.0;
  double se_length = 0.0;
  double r_squared = 0.0;
  std::vector<RegressionPoint> points;

  // Estimates when valid, the default weights otherwise.
  RegressionWeights weights() const;
  nlohmann::json to_json() const;
};

// Throws Error("insufficient_data") with fewer than three points. A rank
// deficient design gives valid == false.
RegressionFit fit_points(std::span<const RegressionPoint> points);

// One point per rule with at least one answered recommendation this phase.
std::vector<RegressionPoint> regression_points(const FeedbackLedger& ledger, const RuleDB& db);
RegressionFit fit_regression(const FeedbackLedger& ledger, const RuleDB& db);

struct AdaptReport {
  RuleCensus before;
  RuleCensus after;
  std::size_t removed_by_feedback = 0;
  RegressionWeights weights;
  double threshold = 0.0;

  std::string table() const;
  nlohmann::json to_json() const;
};

struct AdaptResult {
  RuleDB db;
  AdaptReport report;
};

// Removes feedback-excluded rules, excludes absent actions, takes the fitted
// weights and the threshold, and recomputes every state. When a ledger is
// given its streaks restart in a new phase. Idempotent on the rule database.
AdaptResult adapt_phase2(const RuleDB& db, const RegressionFit& fit, double threshold,
                         FeedbackLedger* ledger = nullptr, Timestamp at = {});

nlohmann::json feedback_entry_to_json(const FeedbackEntry& e);
FeedbackEntry feedback_entry_from_json(const nlohmann::json& j);

}  // namespace ecorec
