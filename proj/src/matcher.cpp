#include "ecorec/matcher.hpp"

#include <algorithm>
#include <bit>
#include <iterator>

#include "ecorec/error.hpp"
#include "ecorec/ingest.hpp"
#include "ecorec/miner.hpp"

namespace ecorec {

namespace {

constexpr std::size_t kMaxCondition = 31;

bool visit_before(const FsmInstance& a, const FsmInstance& b) {
  const int pa = std::popcount(a.matched);
  const int pb = std::popcount(b.matched);
  if (pa != pb) return pa > pb;
  return a.matched < b.matched;
}

void put(std::vector<FsmInstance>& slots, FsmInstance inst) {
  for (auto& s : slots) {
    if (s.matched == inst.matched) {
      s = std::move(inst);
      return;
    }
  }
  slots.push_back(std::move(inst));
}

}  // namespace

void MatcherConfig::validate() const {
  if (action_wait.count() < 0) throw Error("invalid_argument", "action_wait must be >= 0");
  if (max_gap.count() <= 0) throw Error("invalid_argument", "max_gap must be > 0");
  if (cooldown.count() < 0) throw Error("invalid_argument", "cooldown must be >= 0");
}

std::size_t FsmInstance::next_index() const { return static_cast<std::size_t>(std::popcount(matched)); }

std::string recommendation_text(const AssociationRule& rule, const HomeTopology* topology) {
  const auto subject = topology ? topology->subject_name(rule.action.subject_id) : rule.action.subject_id;
  const auto room = topology ? topology->room_name(rule.action.zone_id) : rule.action.zone_id;
  return rule.action.event_name + " (" + subject + ", " + room + ")";
}

Matcher::Matcher(std::string home_id, MatcherConfig cfg, std::shared_ptr<const RuleDB> db,
                 std::shared_ptr<const HomeTopology> topology)
    : home_id_(std::move(home_id)), cfg_(cfg), db_(std::move(db)), topology_(std::move(topology)) {
  cfg_.validate();
  if (!db_) db_ = std::make_shared<const RuleDB>();
  compile({});
}

void Matcher::set_rules(std::shared_ptr<const RuleDB> db) {
  std::map<std::string, std::vector<FsmInstance>> carry;
  for (auto& c : rules_) carry[c.rule->rule_id] = std::move(c.instances);
  std::vector<std::pair<std::string, Pending>> waiting;
  for (auto& p : pending_) waiting.emplace_back(rules_[p.rule].rule->rule_id, std::move(p));
  db_ = db ? std::move(db) : std::make_shared<const RuleDB>();
  compile(carry);
  pending_.clear();
  for (auto& [id, p] : waiting) {
    for (std::size_t i = 0; i < rules_.size(); ++i) {
      if (rules_[i].rule->rule_id == id) {
        p.rule = i;
        pending_.push_back(std::move(p));
        break;
      }
    }
  }
}

void Matcher::compile(const std::map<std::string, std::vector<FsmInstance>>& carry) {
  rules_.clear();
  by_identity_.clear();
  for (const auto& [id, rule] : db_->rules()) {
    if (rule.home_id != home_id_ || !rule.emits() || rule.condition.empty()) continue;
    if (rule.condition.size() > kMaxCondition) throw Error("invalid_argument", "condition too long in " + id);
    Compiled c{&rule, (1u << rule.condition.size()) - 1, {}};
    if (const auto it = carry.find(id); it != carry.end()) c.instances = it->second;
    rules_.push_back(std::move(c));
  }
  for (std::size_t r = 0; r < rules_.size(); ++r) {
    const auto& cond = rules_[r].rule->condition;
    for (std::size_t k = 0; k < cond.size(); ++k) {
      if (std::find(cond.begin(), cond.begin() + static_cast<std::ptrdiff_t>(k), cond[k]) !=
          cond.begin() + static_cast<std::ptrdiff_t>(k)) {
        continue;
      }
      by_identity_[cond[k]].push_back(r);
    }
  }
}

std::optional<std::size_t> Matcher::advance_position(const Compiled& c, std::uint32_t matched,
                                                     const EventIdentity& id) const {
  const auto& cond = c.rule->condition;
  if (!cfg_.order_insensitive) {
    const auto k = static_cast<std::size_t>(std::popcount(matched));
    if (k < cond.size() && cond[k] == id) return k;
    return std::nullopt;
  }
  for (std::size_t k = 0; k < cond.size(); ++k) {
    if (!(matched & (1u << k)) && cond[k] == id) return k;
  }
  return std::nullopt;
}

std::vector<Recommendation> Matcher::on_event(const EventRecord& e) {
  if (e.home_id != home_id_) throw Error("invalid_argument", "event for home " + e.home_id + " sent to " + home_id_);
  const Timestamp t = e.timestamp;
  if (watermark_ && t < *watermark_) {
    throw Error("out_of_order", "event at " + format_timestamp(t) + " is older than " + format_timestamp(*watermark_));
  }
  auto out = emit_timeouts_before(t);
  drop_stale(t);
  ++stats_.events;
  const auto id = event_identity(e);
  const std::int64_t gap = cfg_.max_gap.count();

  std::vector<Candidate> group;
  for (auto& p : pending_) {
    if (rules_[p.rule].rule->action == id) {
      ++stats_.suppressed;
    } else {
      group.push_back({p.rule, std::move(p.instance.matched_events)});
    }
  }
  pending_.clear();

  if (const auto it = by_identity_.find(id); it != by_identity_.end()) {
    for (const auto r : it->second) {
      auto& c = rules_[r];
      std::sort(c.instances.begin(), c.instances.end(), visit_before);
      std::vector<FsmInstance> next;
      next.reserve(c.instances.size() + 1);
      auto land = [&](FsmInstance inst) {
        if (inst.matched == c.full_mask) {
          ++stats_.completions;
          std::erase_if(pending_, [&](const Pending& p) { return p.rule == r; });
          pending_.push_back({r, std::move(inst), t});
        } else {
          put(next, std::move(inst));
        }
      };
      for (auto& inst : c.instances) {
        if ((t - inst.last_at).count() > gap) continue;
        if (const auto k = advance_position(c, inst.matched, id)) {
          inst.matched |= 1u << *k;
          inst.matched_events.push_back(e);
          inst.last_at = t;
          land(std::move(inst));
        } else if (std::none_of(next.begin(), next.end(),
                                [&](const FsmInstance& s) { return s.matched == inst.matched; })) {
          next.push_back(std::move(inst));
        }
      }
      if (const auto k = advance_position(c, 0, id)) {
        FsmInstance fresh{c.rule->rule_id, 1u << *k, {e}, t, t};
        land(std::move(fresh));
      }
      c.instances = std::move(next);
    }
  }

  decide(group, t, out);
  watermark_ = t;
  return out;
}

std::vector<Recommendation> Matcher::emit_timeouts_before(Timestamp now) {
  std::vector<Recommendation> out;
  if (pending_.empty() || now - pending_.front().completed_at <= cfg_.action_wait) return out;
  return emit_timeouts();
}

std::vector<Recommendation> Matcher::emit_timeouts() {
  std::vector<Recommendation> out;
  if (pending_.empty()) return out;
  const Timestamp deadline = pending_.front().completed_at + cfg_.action_wait;
  std::vector<Candidate> group;
  for (auto& p : pending_) group.push_back({p.rule, std::move(p.instance.matched_events)});
  pending_.clear();
  const auto before = out.size();
  decide(group, deadline, out);
  stats_.timeouts += out.size() - before;
  return out;
}

void Matcher::drop_stale(Timestamp now) {
  if (last_sweep_ && now - *last_sweep_ <= cfg_.max_gap) return;
  for (auto& c : rules_) {
    std::erase_if(c.instances, [&](const FsmInstance& i) { return now - i.last_at > cfg_.max_gap; });
  }
  last_sweep_ = now;
}

std::vector<Recommendation> Matcher::expire(Timestamp now) {
  auto out = emit_timeouts_before(now);
  last_sweep_.reset();
  drop_stale(now);
  return out;
}

std::vector<Recommendation> Matcher::flush() {
  auto out = emit_timeouts();
  if (watermark_) {
    last_sweep_.reset();
    drop_stale(*watermark_ + cfg_.max_gap + Seconds{1});
  }
  return out;
}

void Matcher::decide(std::vector<Candidate>& group, Timestamp at, std::vector<Recommendation>& out) {
  const Candidate* best = nullptr;
  std::size_t eligible = 0;
  for (const auto& cand : group) {
    const auto& rule = *rules_[cand.rule].rule;
    if (const auto it = last_emitted_.find(rule.rule_id);
        it != last_emitted_.end() && at - it->second < cfg_.cooldown) {
      ++stats_.dropped_cooldown;
      continue;
    }
    ++eligible;
    if (!best || ranks_before(rule, *rules_[best->rule].rule)) best = &cand;
  }
  if (!best) return;
  stats_.dropped_conflict += eligible - 1;
  const auto& rule = *rules_[best->rule].rule;
  Recommendation rec;
  rec.recommendation_id = home_id_ + "-" + std::to_string(next_seq_++);
  rec.home_id = home_id_;
  rec.rule_id = rule.rule_id;
  rec.action = rule.action;
  rec.action_category = rule.action_category;
  rec.text = recommendation_text(rule, topology_.get());
  rec.trigger_events = best->triggers;
  rec.created_at = at;
  last_emitted_[rule.rule_id] = at;
  ++stats_.emitted;
  out.push_back(std::move(rec));
}

std::size_t Matcher::live_instances() const {
  std::size_t n = pending_.size();
  for (const auto& c : rules_) {
    for (const auto& i : c.instances) {
      if (!watermark_ || *watermark_ - i.last_at <= cfg_.max_gap) ++n;
    }
  }
  return n;
}

void Matcher::restore_cooldown(const std::string& rule_id, Timestamp last_emitted) {
  auto& slot = last_emitted_[rule_id];
  slot = std::max(slot, last_emitted);
}

std::vector<Recommendation> replay(std::span<const EventRecord> events, std::shared_ptr<const RuleDB> db,
                                   const MatcherConfig& cfg, std::shared_ptr<const HomeTopology> topology,
                                   MatcherStats* stats) {
  std::vector<Recommendation> out;
  if (events.empty()) return out;
  Matcher m(events.front().home_id, cfg, std::move(db), std::move(topology));
  for (const auto& e : events) {
    auto recs = m.on_event(e);
    std::move(recs.begin(), recs.end(), std::back_inserter(out));
  }
  auto tail = m.flush();
  std::move(tail.begin(), tail.end(), std::back_inserter(out));
  if (stats) *stats = m.stats();
  return out;
}

nlohmann::json recommendation_to_json(const Recommendation& r) {
  auto triggers = nlohmann::json::array();
  for (const auto& e : r.trigger_events) triggers.push_back(event_to_json(e));
  return {{"recommendation_id", r.recommendation_id},
          {"home_id", r.home_id},
          {"rule_id", r.rule_id},
          {"action", identity_to_json(r.action)},
          {"action_category", std::string(to_string(r.action_category))},
          {"text", r.text},
          {"trigger_events", std::move(triggers)},
          {"created_at", format_timestamp(r.created_at)},
          {"status", std::string(to_string(r.status))}};
}

Recommendation recommendation_from_json(const nlohmann::json& j) {
  Recommendation r;
  r.recommendation_id = j.at("recommendation_id").get<std::string>();
  r.home_id = j.at("home_id").get<std::string>();
  r.rule_id = j.at("rule_id").get<std::string>();
  r.action = identity_from_json(j.at("action"));
  const auto cat = parse_action_category(j.at("action_category").get<std::string>());
  if (!cat) throw Error("parse", "bad action_category in recommendation " + r.recommendation_id);
  r.action_category = *cat;
  r.text = j.value("text", std::string());
  for (const auto& t : j.at("trigger_events")) {
    auto parsed = parse_json_record(t);
    if (auto* err = std::get_if<ParseError>(&parsed)) throw Error("parse", "bad trigger event: " + err->reason);
    r.trigger_events.push_back(std::get<EventRecord>(std::move(parsed)));
  }
  const auto ts = parse_timestamp(j.at("created_at").get<std::string>());
  if (!ts) throw Error("parse", "bad created_at in recommendation " + r.recommendation_id);
  r.created_at = *ts;
  const auto status = parse_recommendation_status(j.at("status").get<std::string>());
  if (!status) throw Error("parse", "bad status in recommendation " + r.recommendation_id);
  r.status = *status;
  return r;
}

}  // namespace ecorec
