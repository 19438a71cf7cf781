#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ecorec/time.hpp"

namespace ecorec {

enum class EventSource { button_click, sensor };

std::string_view to_string(EventSource s);
std::optional<EventSource> parse_event_source(std::string_view s);

struct EventRecord {
  Timestamp timestamp{};
  std::string home_id;
  std::string zone_id;
  std::string subject_id;  // scene or device
  std::string event_name;
  EventSource source = EventSource::button_click;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

// Per-home storage order: timestamp, then (subject_id, event_name), then the
// remaining fields so the order is total.
bool event_order_less(const EventRecord& a, const EventRecord& b);

// Key under which two events count as "the same event" for mining and matching.
struct EventIdentity {
  std::string zone_id;
  std::string subject_id;
  std::string event_name;

  friend bool operator==(const EventIdentity&, const EventIdentity&) = default;
  friend auto operator<=>(const EventIdentity&, const EventIdentity&) = default;
};

struct EventIdentityHash {
  std::size_t operator()(const EventIdentity& id) const noexcept;
};

EventIdentity event_identity(const EventRecord& e);

// "zone/subject/name", used in reports and rule listings.
std::string describe(const EventIdentity& id);

enum class ActionCategory { absent, dim, off, sleep, standby };

std::string_view to_string(ActionCategory c);
std::optional<ActionCategory> parse_action_category(std::string_view s);

struct EventClass {
  std::optional<ActionCategory> action;  // empty for a normal event

  bool is_action() const { return action.has_value(); }
  bool is_normal() const { return !action.has_value(); }

  static EventClass normal() { return {}; }
  static EventClass of(ActionCategory c) { return EventClass{c}; }

  friend bool operator==(const EventClass&, const EventClass&) = default;
};

struct Pattern {
  std::string home_id;
  std::vector<EventIdentity> items;
  std::vector<EventClass> classes;  // parallel to items
  std::uint64_t support_count = 0;
  double support = 0.0;
  Timestamp first_mined{};

  std::size_t length() const { return items.size(); }
  std::size_t action_count() const;
  std::size_t normal_count() const { return length() - action_count(); }
};

enum class RuleState { active, below_threshold, excluded_by_feedback, excluded_by_policy };

std::string_view to_string(RuleState s);
std::optional<RuleState> parse_rule_state(std::string_view s);

struct AssociationRule {
  std::string rule_id;
  std::string home_id;
  std::vector<EventIdentity> condition;  // X, normal events in source order
  EventIdentity action;                  // Y
  ActionCategory action_category = ActionCategory::off;
  std::size_t action_position = 0;  // index of Y in the source pattern
  std::vector<EventIdentity> source_pattern;

  std::uint64_t support_with = 0;     // support count of the source pattern
  std::uint64_t support_without = 0;  // condition occurrences without the action
  double confidence = 0.0;
  double pattern_support = 0.0;
  std::size_t pattern_length = 0;
  Timestamp mined_date{};

  double priority = 0.0;
  RuleState state = RuleState::active;

  bool emits() const { return state == RuleState::active; }

  friend bool operator==(const AssociationRule&, const AssociationRule&) = default;
};

enum class RecommendationStatus { pending, useful, not_useful, expired };

std::string_view to_string(RecommendationStatus s);
std::optional<RecommendationStatus> parse_recommendation_status(std::string_view s);

struct Recommendation {
  std::string recommendation_id;
  std::string home_id;
  std::string rule_id;
  EventIdentity action;
  ActionCategory action_category = ActionCategory::off;
  std::string text;
  std::vector<EventRecord> trigger_events;
  Timestamp created_at{};
  RecommendationStatus status = RecommendationStatus::pending;

  friend bool operator==(const Recommendation&, const Recommendation&) = default;
};

enum class Verdict { useful, not_useful };

std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict(std::string_view s);

struct FeedbackEntry {
  std::string recommendation_id;
  std::string rule_id;
  Verdict verdict = Verdict::useful;
  Timestamp received_at{};

  friend bool operator==(const FeedbackEntry&, const FeedbackEntry&) = default;
};

}  // namespace ecorec
