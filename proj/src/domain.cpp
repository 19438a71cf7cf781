#include "ecorec/domain.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <tuple>
#include <utility>

namespace ecorec {

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<std::string_view, E>, N>& table, std::string_view s) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<std::string_view, E>, N>& table, E v) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<std::string_view, EventSource>, 2> kSources{{
    {"button_click", EventSource::button_click},
    {"sensor", EventSource::sensor},
}};

constexpr std::array<std::pair<std::string_view, ActionCategory>, 5> kCategories{{
    {"absent", ActionCategory::absent},
    {"dim", ActionCategory::dim},
    {"off", ActionCategory::off},
    {"sleep", ActionCategory::sleep},
    {"standby", ActionCategory::standby},
}};

constexpr std::array<std::pair<std::string_view, RuleState>, 4> kRuleStates{{
    {"active", RuleState::active},
    {"below_threshold", RuleState::below_threshold},
    {"excluded_by_feedback", RuleState::excluded_by_feedback},
    {"excluded_by_policy", RuleState::excluded_by_policy},
}};

constexpr std::array<std::pair<std::string_view, RecommendationStatus>, 4> kRecStatuses{{
    {"pending", RecommendationStatus::pending},
    {"useful", RecommendationStatus::useful},
    {"not_useful", RecommendationStatus::not_useful},
    {"expired", RecommendationStatus::expired},
}};

constexpr std::array<std::pair<std::string_view, Verdict>, 2> kVerdicts{{
    {"useful", Verdict::useful},
    {"not_useful", Verdict::not_useful},
}};

}  // namespace

std::string_view to_string(EventSource s) { return name_of(kSources, s); }
std::optional<EventSource> parse_event_source(std::string_view s) { return lookup(kSources, s); }

std::string_view to_string(ActionCategory c) { return name_of(kCategories, c); }
std::optional<ActionCategory> parse_action_category(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return lookup(kCategories, lower);
}

std::string_view to_string(RuleState s) { return name_of(kRuleStates, s); }
std::optional<RuleState> parse_rule_state(std::string_view s) { return lookup(kRuleStates, s); }

std::string_view to_string(RecommendationStatus s) { return name_of(kRecStatuses, s); }
std::optional<RecommendationStatus> parse_recommendation_status(std::string_view s) {
  return lookup(kRecStatuses, s);
}

std::string_view to_string(Verdict v) { return name_of(kVerdicts, v); }
std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "yes" || s == "1") return Verdict::useful;
  if (s == "no" || s == "0") return Verdict::not_useful;
  return lookup(kVerdicts, s);
}

bool event_order_less(const EventRecord& a, const EventRecord& b) {
  return std::tie(a.timestamp, a.subject_id, a.event_name, a.zone_id, a.source, a.home_id) <
         std::tie(b.timestamp, b.subject_id, b.event_name, b.zone_id, b.source, b.home_id);
}

std::size_t EventIdentityHash::operator()(const EventIdentity& id) const noexcept {
  const std::hash<std::string> h;
  std::size_t seed = h(id.zone_id);
  seed ^= h(id.subject_id) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2);
  seed ^= h(id.event_name) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2);
  return seed;
}

EventIdentity event_identity(const EventRecord& e) { return {e.zone_id, e.subject_id, e.event_name}; }

std::string describe(const EventIdentity& id) { return id.zone_id + "/" + id.subject_id + "/" + id.event_name; }

std::size_t Pattern::action_count() const {
  return static_cast<std::size_t>(
      std::count_if(classes.begin(), classes.end(), [](const EventClass& c) { return c.is_action(); }));
}

}  // namespace ecorec
