#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecorec/catalog.hpp"
#include "ecorec/domain.hpp"
#include "ecorec/miner.hpp"

namespace ecorec {

struct DerivationOptions {
  // Keep the pattern's other actions in the condition instead of dropping them.
  bool keep_other_actions = false;
};

// One candidate rule per action occurrence in the pattern. Candidates whose
// condition would have fewer than two events are discarded.
std::vector<AssociationRule> derive_rules(const Pattern& pattern, const DerivationOptions& options = {});

struct ConfidenceCounts {
  std::uint64_t with_action = 0;     // starts of the full source pattern
  std::uint64_t without_action = 0;  // condition starts with no action in or just after the match

  double confidence() const;
};

// Counts on an already encoded log. The condition counts as "without the
// action" at a start when some gap-valid embedding of the condition has no
// action event between its first and last item and none within max_gap
// after the last item.
ConfidenceCounts confidence_counts(const AssociationRule& rule, const EncodedLog& log, const MiningConfig& cfg);

double compute_confidence(const AssociationRule& rule, std::span<const EventRecord> events, const MiningConfig& cfg);

// Fills support_with/support_without/confidence for rules of one home.
void assign_confidence(std::span<AssociationRule> rules, std::span<const EventRecord> events, const MiningConfig& cfg);

// priority = intercept + confidence * rule.confidence + length * rule.pattern_length
struct RegressionWeights {
  double confidence = 1.0;
  double length = 0.0;
  double intercept = 0.0;

  friend bool operator==(const RegressionWeights&, const RegressionWeights&) = default;
};

double compute_priority(const AssociationRule& rule, const RegressionWeights& weights);

// Total order used everywhere rules compete: higher priority, then higher
// pattern support, newer mined date, smaller action position, rule id.
bool ranks_before(const AssociationRule& a, const AssociationRule& b);

struct RulePolicy {
  bool exclude_absent_actions = false;

  friend bool operator==(const RulePolicy&, const RulePolicy&) = default;
};

struct RuleCensus {
  std::size_t total = 0;
  std::map<RuleState, std::size_t> by_state;
};

/// The rule database: rules keyed by id plus the weights, threshold and
/// policy that decide each rule's priority and state.
///
/// RuleDB is a plain value. Writers modify a copy and publish it; readers keep
/// whatever snapshot they hold.
class RuleDB {
 public:
  RegressionWeights weights;
  double threshold = 0.0;
  RulePolicy policy;

  // Throws when the id is already present.
  void add(AssociationRule rule);
  bool erase(const std::string& rule_id);
  const AssociationRule* find(const std::string& rule_id) const;
  AssociationRule* find(const std::string& rule_id);

  const std::map<std::string, AssociationRule>& rules() const { return rules_; }
  std::size_t size() const { return rules_.size(); }
  bool empty() const { return rules_.empty(); }

  // Rules of one home in ranks_before order.
  std::vector<const AssociationRule*> ranked(const std::string& home_id = {}) const;

  // Recomputes every priority and state from weights/threshold/policy. Rules
  // excluded by feedback stay excluded.
  void recompute();

  void exclude_by_feedback(const std::string& rule_id);

  RuleCensus census() const;

  void save(const std::filesystem::path& path) const;
  static RuleDB load(const std::filesystem::path& path);

  friend bool operator==(const RuleDB& a, const RuleDB& b);

 private:
  std::map<std::string, AssociationRule> rules_;
};

// Recomputes states with the policy flags applied. Idempotent.
RuleDB apply_policies(RuleDB db);

struct BuildOptions {
  DerivationOptions derivation;
  const ActionCatalog* catalog = nullptr;
};

// Relevant patterns -> deduplicated rules with confidence, for one home. When
// several patterns give the same (condition, action), the one with the
// highest support is kept.
std::vector<AssociationRule> build_rules(std::span<const Pattern> patterns, std::span<const EventRecord> events,
                                         const MiningConfig& cfg, const BuildOptions& options = {});

nlohmann::json rule_to_json(const AssociationRule& r);
AssociationRule rule_from_json(const nlohmann::json& j);

}  // namespace ecorec
