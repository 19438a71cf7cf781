#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecorec/domain.hpp"
#include "ecorec/rules.hpp"
#include "ecorec/topology.hpp"

namespace ecorec {

struct MatcherConfig {
  Seconds action_wait{300};  // how long a completed condition waits for the next event
  Seconds max_gap{600};      // per-step gap between consecutive condition events
  Seconds cooldown{3600};    // minimum spacing between two emissions of one rule
  bool order_insensitive = false;

  void validate() const;
};

// A partially or fully matched condition. `matched` is a bit set over the
// positions of X; in ordered mode it is always a prefix.
struct FsmInstance {
  std::string rule_id;
  std::uint32_t matched = 0;
  std::vector<EventRecord> matched_events;
  Timestamp created_at{};
  Timestamp last_at{};

  std::size_t next_index() const;
};

struct MatcherStats {
  std::uint64_t events = 0;
  std::uint64_t completions = 0;
  std::uint64_t suppressed = 0;         // next event was the action
  std::uint64_t emitted = 0;
  std::uint64_t dropped_cooldown = 0;
  std::uint64_t dropped_conflict = 0;
  std::uint64_t timeouts = 0;           // emissions triggered by action_wait
};

// "Turn off light (Ceiling light, Kitchen)", names resolved through the
// topology when one is given.
std::string recommendation_text(const AssociationRule& rule, const HomeTopology* topology);

/// Streaming matcher for one home. Feed events in storage order; the event
/// timestamps are the clock.
class Matcher {
 public:
  Matcher(std::string home_id, MatcherConfig cfg, std::shared_ptr<const RuleDB> db,
          std::shared_ptr<const HomeTopology> topology = nullptr);

  // Swaps the rule snapshot. Live instances of rules that stay active are kept.
  void set_rules(std::shared_ptr<const RuleDB> db);

  std::vector<Recommendation> on_event(const EventRecord& e);

  // Emits completed instances whose wait ended before `now` and drops stale
  // partial instances. Idempotent for a fixed `now`.
  std::vector<Recommendation> expire(Timestamp now);

  // Emits every waiting completion at its deadline. Used at end of stream.
  std::vector<Recommendation> flush();

  std::optional<Timestamp> watermark() const { return watermark_; }
  std::size_t live_instances() const;
  const MatcherStats& stats() const { return stats_; }
  const MatcherConfig& config() const { return cfg_; }

  // State restored from persisted recommendations after a restart.
  void restore_cooldown(const std::string& rule_id, Timestamp last_emitted);
  void set_next_sequence(std::uint64_t next) { next_seq_ = next; }
  std::uint64_t next_sequence() const { return next_seq_; }

 private:
  struct Compiled {
    const AssociationRule* rule;
    std::uint32_t full_mask;
    std::vector<FsmInstance> instances;  // at most one per matched set
  };
  struct Pending {
    std::size_t rule;
    FsmInstance instance;
    Timestamp completed_at;
  };
  struct Candidate {
    std::size_t rule;
    std::vector<EventRecord> triggers;
  };

  void compile(const std::map<std::string, std::vector<FsmInstance>>& carry);
  void drop_stale(Timestamp now);
  std::vector<Recommendation> emit_timeouts_before(Timestamp now);
  std::vector<Recommendation> emit_timeouts();
  void decide(std::vector<Candidate>& group, Timestamp at, std::vector<Recommendation>& out);
  std::optional<std::size_t> advance_position(const Compiled& c, std::uint32_t matched, const EventIdentity& id) const;

  std::string home_id_;
  MatcherConfig cfg_;
  std::shared_ptr<const RuleDB> db_;
  std::shared_ptr<const HomeTopology> topology_;
  std::vector<Compiled> rules_;
  std::unordered_map<EventIdentity, std::vector<std::size_t>, EventIdentityHash> by_identity_;
  std::vector<Pending> pending_;
  std::unordered_map<std::string, Timestamp> last_emitted_;
  std::optional<Timestamp> watermark_;
  std::optional<Timestamp> last_sweep_;
  std::uint64_t next_seq_ = 1;
  MatcherStats stats_;
};

// Folds a whole stream through a fresh matcher and flushes at the end.
std::vector<Recommendation> replay(std::span<const EventRecord> events, std::shared_ptr<const RuleDB> db,
                                   const MatcherConfig& cfg, std::shared_ptr<const HomeTopology> topology = nullptr,
                                   MatcherStats* stats = nullptr);

nlohmann::json recommendation_to_json(const Recommendation& r);
Recommendation recommendation_from_json(const nlohmann::json& j);

}  // namespace ecorec
