#include "ecorec/rules.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <tuple>

#include "ecorec/error.hpp"
#include "ecorec/hash.hpp"

namespace ecorec {

namespace {

constexpr std::size_t kNoPos = std::numeric_limits<std::size_t>::max();
constexpr const char* kFormat = "ecorec-rules";
constexpr int kVersion = 1;

std::string make_rule_id(const std::string& home, const std::vector<EventIdentity>& items, std::size_t position) {
  Fnv1a h;
  h.add(home).sep();
  for (const auto& id : items) h.add(id.zone_id).sep().add(id.subject_id).sep().add(id.event_name).sep();
  h.add(static_cast<std::uint64_t>(position));
  return "r-" + to_hex(h.value());
}

// Per-symbol ascending position lists.
std::vector<std::vector<std::uint32_t>> positions_by_symbol(const EncodedLog& log) {
  std::vector<std::vector<std::uint32_t>> pos(log.table.size());
  for (std::uint32_t i = 0; i < log.size(); ++i) pos[log.symbols[i]].push_back(i);
  return pos;
}

// Earliest position where a gap-valid embedding of `items` starting at
// `start` can end, or kNoPos. Keeps every reachable end per depth since a
// later end can reach further than an earlier one.
std::size_t min_embedding_end(const EncodedLog& log, const std::vector<std::vector<std::uint32_t>>& pos,
                              std::span<const Symbol> items, std::uint32_t start, std::int64_t gap) {
  std::vector<std::uint32_t> reach{start};
  std::vector<std::uint32_t> next;
  for (std::size_t depth = 1; depth < items.size(); ++depth) {
    next.clear();
    const auto& cand = pos[items[depth]];
    auto it = std::upper_bound(cand.begin(), cand.end(), reach.front());
    std::size_t r = 0;  // reach[r] is the latest reachable position before *it
    const std::int64_t horizon = log.times[reach.back()] + gap;
    for (; it != cand.end() && log.times[*it] <= horizon; ++it) {
      while (r + 1 < reach.size() && reach[r + 1] < *it) ++r;
      if (log.times[*it] - log.times[reach[r]] <= gap) next.push_back(*it);
    }
    if (next.empty()) return kNoPos;
    reach.swap(next);
  }
  return reach.front();
}

std::optional<std::vector<Symbol>> encode(const EncodedLog& log, std::span<const EventIdentity> items) {
  std::vector<Symbol> out;
  for (const auto& id : items) {
    const auto s = log.table.find(id);
    if (!s) return std::nullopt;
    out.push_back(*s);
  }
  return out;
}

nlohmann::json double_or_inf(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  return v;
}

double double_from(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    throw Error("parse", "bad number: " + s);
  }
  return j.get<double>();
}

nlohmann::json identities_to_json(const std::vector<EventIdentity>& ids) {
  auto arr = nlohmann::json::array();
  for (const auto& id : ids) arr.push_back(identity_to_json(id));
  return arr;
}

std::vector<EventIdentity> identities_from_json(const nlohmann::json& j) {
  std::vector<EventIdentity> out;
  for (const auto& item : j) out.push_back(identity_from_json(item));
  return out;
}

}  // namespace

std::vector<AssociationRule> derive_rules(const Pattern& pattern, const DerivationOptions& options) {
  if (pattern.classes.size() != pattern.items.size()) {
    throw Error("invalid_argument", "pattern items and classes differ in length");
  }
  std::vector<AssociationRule> out;
  for (std::size_t y = 0; y < pattern.items.size(); ++y) {
    if (pattern.classes[y].is_normal()) continue;
    AssociationRule r;
    for (std::size_t k = 0; k < pattern.items.size(); ++k) {
      if (k == y) continue;
      if (pattern.classes[k].is_normal() || options.keep_other_actions) r.condition.push_back(pattern.items[k]);
    }
    if (r.condition.size() < 2) continue;
    r.home_id = pattern.home_id;
    r.action = pattern.items[y];
    r.action_category = *pattern.classes[y].action;
    r.action_position = y;
    r.source_pattern = pattern.items;
    r.support_with = pattern.support_count;
    r.pattern_support = pattern.support;
    r.pattern_length = pattern.length();
    r.mined_date = pattern.first_mined;
    r.rule_id = make_rule_id(pattern.home_id, pattern.items, y);
    out.push_back(std::move(r));
  }
  return out;
}

double ConfidenceCounts::confidence() const {
  if (with_action == 0 && without_action == 0) return 0.0;
  if (without_action == 0) return 1.0;
  return static_cast<double>(with_action) / static_cast<double>(with_action + without_action);
}

ConfidenceCounts confidence_counts(const AssociationRule& rule, const EncodedLog& log, const MiningConfig& cfg) {
  ConfidenceCounts counts;
  const auto cond = encode(log, rule.condition);
  if (!cond || cond->empty()) return counts;
  const auto pos = positions_by_symbol(log);
  const std::int64_t gap = cfg.max_gap.count();

  if (const auto full = encode(log, rule.source_pattern); full && !full->empty()) {
    for (const auto start : pos[full->front()]) {
      if (min_embedding_end(log, pos, *full, start, gap) != kNoPos) ++counts.with_action;
    }
  }

  const auto action = log.table.find(rule.action);
  static const std::vector<std::uint32_t> kEmpty;
  const auto& action_pos = action ? pos[*action] : kEmpty;
  for (const auto start : pos[cond->front()]) {
    const auto end = min_embedding_end(log, pos, *cond, start, gap);
    if (end == kNoPos) continue;
    const auto next_y = std::upper_bound(action_pos.begin(), action_pos.end(), start);
    if (next_y == action_pos.end()) {
      ++counts.without_action;
      continue;
    }
    if (*next_y > end && log.times[*next_y] - log.times[end] > gap) ++counts.without_action;
  }
  return counts;
}

double compute_confidence(const AssociationRule& rule, std::span<const EventRecord> events, const MiningConfig& cfg) {
  return confidence_counts(rule, EncodedLog::from_events(events), cfg).confidence();
}

void assign_confidence(std::span<AssociationRule> rules, std::span<const EventRecord> events, const MiningConfig& cfg) {
  const auto log = EncodedLog::from_events(events);
  for (auto& r : rules) {
    const auto c = confidence_counts(r, log, cfg);
    r.support_with = c.with_action;
    r.support_without = c.without_action;
    r.confidence = c.confidence();
  }
}

double compute_priority(const AssociationRule& rule, const RegressionWeights& weights) {
  return weights.intercept + weights.confidence * rule.confidence +
         weights.length * static_cast<double>(rule.pattern_length);
}

bool ranks_before(const AssociationRule& a, const AssociationRule& b) {
  if (a.priority != b.priority) return a.priority > b.priority;
  if (a.pattern_support != b.pattern_support) return a.pattern_support > b.pattern_support;
  if (a.mined_date != b.mined_date) return a.mined_date > b.mined_date;
  if (a.action_position != b.action_position) return a.action_position < b.action_position;
  return a.rule_id < b.rule_id;
}

void RuleDB::add(AssociationRule rule) {
  if (rule.rule_id.empty()) throw Error("invalid_argument", "rule without id");
  const auto id = rule.rule_id;
  if (!rules_.emplace(id, std::move(rule)).second) throw Error("conflict", "duplicate rule id " + id);
}

bool RuleDB::erase(const std::string& rule_id) { return rules_.erase(rule_id) > 0; }

const AssociationRule* RuleDB::find(const std::string& rule_id) const {
  const auto it = rules_.find(rule_id);
  return it == rules_.end() ? nullptr : &it->second;
}

AssociationRule* RuleDB::find(const std::string& rule_id) {
  const auto it = rules_.find(rule_id);
  return it == rules_.end() ? nullptr : &it->second;
}

std::vector<const AssociationRule*> RuleDB::ranked(const std::string& home_id) const {
  std::vector<const AssociationRule*> out;
  for (const auto& [id, r] : rules_) {
    if (home_id.empty() || r.home_id == home_id) out.push_back(&r);
  }
  std::sort(out.begin(), out.end(), [](const auto* a, const auto* b) { return ranks_before(*a, *b); });
  return out;
}

void RuleDB::recompute() {
  for (auto& [id, r] : rules_) {
    r.priority = compute_priority(r, weights);
    if (r.state == RuleState::excluded_by_feedback) continue;
    if (policy.exclude_absent_actions && r.action_category == ActionCategory::absent) {
      r.state = RuleState::excluded_by_policy;
    } else if (r.priority < threshold) {
      r.state = RuleState::below_threshold;
    } else {
      r.state = RuleState::active;
    }
  }
}

void RuleDB::exclude_by_feedback(const std::string& rule_id) {
  auto* r = find(rule_id);
  if (!r) throw Error("not_found", "unknown rule " + rule_id);
  r->state = RuleState::excluded_by_feedback;
}

RuleCensus RuleDB::census() const {
  RuleCensus c;
  c.total = rules_.size();
  for (const auto s : {RuleState::active, RuleState::below_threshold, RuleState::excluded_by_feedback,
                       RuleState::excluded_by_policy}) {
    c.by_state[s] = 0;
  }
  for (const auto& [id, r] : rules_) ++c.by_state[r.state];
  return c;
}

void RuleDB::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + tmp);
    const nlohmann::json header{{"format", kFormat},
                                {"version", kVersion},
                                {"weights",
                                 {{"confidence", weights.confidence},
                                  {"length", weights.length},
                                  {"intercept", weights.intercept}}},
                                {"threshold", double_or_inf(threshold)},
                                {"policy", {{"exclude_absent_actions", policy.exclude_absent_actions}}},
                                {"rules", rules_.size()}};
    out << header.dump() << '\n';
    for (const auto& [id, r] : rules_) out << rule_to_json(r).dump() << '\n';
    out.flush();
    if (!out) throw Error("io", "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

RuleDB RuleDB::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("parse", "empty rule database " + path.string());
  RuleDB db;
  std::size_t expected = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", std::string()) != kFormat) throw Error("parse", "not a rule database");
    if (header.value("version", 0) != kVersion) throw Error("parse", "unsupported rule database version");
    db.weights.confidence = header.at("weights").at("confidence").get<double>();
    db.weights.length = header.at("weights").at("length").get<double>();
    db.weights.intercept = header.at("weights").value("intercept", 0.0);
    db.threshold = double_from(header.at("threshold"));
    db.policy.exclude_absent_actions = header.at("policy").at("exclude_absent_actions").get<bool>();
    expected = header.at("rules").get<std::size_t>();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      db.add(rule_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse", path.string() + ": " + e.what());
  }
  if (db.size() != expected) {
    throw Error("parse", path.string() + ": header says " + std::to_string(expected) + " rules, found " +
                             std::to_string(db.size()));
  }
  return db;
}

bool operator==(const RuleDB& a, const RuleDB& b) {
  return a.weights == b.weights && a.threshold == b.threshold && a.policy == b.policy && a.rules_ == b.rules_;
}

RuleDB apply_policies(RuleDB db) {
  db.recompute();
  return db;
}

std::vector<AssociationRule> build_rules(std::span<const Pattern> patterns, std::span<const EventRecord> events,
                                         const MiningConfig& cfg, const BuildOptions& options) {
  std::vector<AssociationRule> candidates;
  for (Pattern p : patterns) {
    if (options.catalog) {
      p.classes.clear();
      for (const auto& id : p.items) p.classes.push_back(options.catalog->classify(id.event_name));
    }
    if (!is_relevant(p)) continue;
    for (auto& r : derive_rules(p, options.derivation)) candidates.push_back(std::move(r));
  }
  // one rule per (home, condition, action)
  std::sort(candidates.begin(), candidates.end(), [](const AssociationRule& a, const AssociationRule& b) {
    return std::tie(a.home_id, a.condition, a.action) < std::tie(b.home_id, b.condition, b.action);
  });
  std::vector<AssociationRule> rules;
  for (auto& r : candidates) {
    if (!rules.empty()) {
      auto& last = rules.back();
      if (std::tie(last.home_id, last.condition, last.action) == std::tie(r.home_id, r.condition, r.action)) {
        const bool better = std::make_tuple(-static_cast<std::int64_t>(r.support_with), r.action_position, r.rule_id) <
                            std::make_tuple(-static_cast<std::int64_t>(last.support_with), last.action_position,
                                            last.rule_id);
        if (better) last = std::move(r);
        continue;
      }
    }
    rules.push_back(std::move(r));
  }
  assign_confidence(rules, events, cfg);
  std::sort(rules.begin(), rules.end(),
            [](const AssociationRule& a, const AssociationRule& b) { return a.rule_id < b.rule_id; });
  return rules;
}

nlohmann::json rule_to_json(const AssociationRule& r) {
  return {{"rule_id", r.rule_id},
          {"home_id", r.home_id},
          {"condition", identities_to_json(r.condition)},
          {"action", identity_to_json(r.action)},
          {"action_category", std::string(to_string(r.action_category))},
          {"action_position", r.action_position},
          {"source_pattern", identities_to_json(r.source_pattern)},
          {"support_with", r.support_with},
          {"support_without", r.support_without},
          {"confidence", r.confidence},
          {"pattern_support", r.pattern_support},
          {"pattern_length", r.pattern_length},
          {"mined_date", format_timestamp(r.mined_date)},
          {"priority", double_or_inf(r.priority)},
          {"state", std::string(to_string(r.state))}};
}

AssociationRule rule_from_json(const nlohmann::json& j) {
  AssociationRule r;
  r.rule_id = j.at("rule_id").get<std::string>();
  r.home_id = j.at("home_id").get<std::string>();
  r.condition = identities_from_json(j.at("condition"));
  r.action = identity_from_json(j.at("action"));
  const auto cat = parse_action_category(j.at("action_category").get<std::string>());
  if (!cat) throw Error("parse", "bad action_category in rule " + r.rule_id);
  r.action_category = *cat;
  r.action_position = j.at("action_position").get<std::size_t>();
  r.source_pattern = identities_from_json(j.at("source_pattern"));
  r.support_with = j.at("support_with").get<std::uint64_t>();
  r.support_without = j.at("support_without").get<std::uint64_t>();
  r.confidence = j.at("confidence").get<double>();
  r.pattern_support = j.at("pattern_support").get<double>();
  r.pattern_length = j.at("pattern_length").get<std::size_t>();
  const auto ts = parse_timestamp(j.at("mined_date").get<std::string>());
  if (!ts) throw Error("parse", "bad mined_date in rule " + r.rule_id);
  r.mined_date = *ts;
  r.priority = double_from(j.at("priority"));
  const auto state = parse_rule_state(j.at("state").get<std::string>());
  if (!state) throw Error("parse", "bad state in rule " + r.rule_id);
  r.state = *state;
  return r;
}

}  // namespace ecorec
