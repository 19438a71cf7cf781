#include "oracles.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <map>
#include <optional>

namespace ecorec::oracle {

namespace {

std::int64_t secs(const EventRecord& e) { return to_unix(e.timestamp); }

}  // namespace

std::uint64_t support_count(const std::vector<EventRecord>& log, const std::vector<EventIdentity>& pattern,
                            std::int64_t gap) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (!tuple_ends(log, pattern, i, gap).empty()) ++n;
  }
  return n;
}

std::vector<std::size_t> tuple_ends(const std::vector<EventRecord>& log, const std::vector<EventIdentity>& items,
                                    std::size_t start, std::int64_t gap) {
  std::vector<std::size_t> ends;
  if (items.empty() || event_identity(log[start]) != items[0]) return ends;
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t at, std::size_t depth) {
    if (depth == items.size()) {
      ends.push_back(at);
      return;
    }
    for (std::size_t k = at + 1; k < log.size() && secs(log[k]) - secs(log[at]) <= gap; ++k) {
      if (event_identity(log[k]) == items[depth]) walk(k, depth + 1);
    }
  };
  walk(start, 1);
  return ends;
}

ConfidenceCounts confidence_counts(const std::vector<EventRecord>& log, const AssociationRule& rule, std::int64_t gap) {
  ConfidenceCounts c;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (!tuple_ends(log, rule.source_pattern, i, gap).empty()) ++c.with_action;
    for (const auto end : tuple_ends(log, rule.condition, i, gap)) {
      bool blocked = false;
      for (std::size_t k = i + 1; k < log.size(); ++k) {
        if (event_identity(log[k]) != rule.action) continue;
        if (k < end) blocked = true;
        if (k > end && secs(log[k]) - secs(log[end]) <= gap) blocked = true;
      }
      if (!blocked) {
        ++c.without_action;
        break;
      }
    }
  }
  return c;
}

namespace {

struct Inst {
  std::uint32_t mask = 0;
  std::vector<EventRecord> events;
  std::int64_t last = 0;
};

struct Cand {
  double seq = 0;  // event index, or completing index + 0.5 for a timeout
  std::int64_t at = 0;
  const AssociationRule* rule = nullptr;
  std::vector<EventRecord> triggers;
};

std::optional<std::size_t> next_position(const std::vector<EventIdentity>& cond, std::uint32_t mask,
                                         const EventIdentity& id, bool any_order) {
  for (std::size_t k = 0; k < cond.size(); ++k) {
    if (mask & (1u << k)) continue;
    if (cond[k] == id) return k;
    if (!any_order) return std::nullopt;
  }
  return std::nullopt;
}

void simulate(const std::vector<EventRecord>& events, const AssociationRule& rule, const MatcherConfig& cfg,
              std::vector<Cand>& out) {
  const std::uint32_t full = (1u << rule.condition.size()) - 1;
  const std::int64_t gap = cfg.max_gap.count();
  const std::int64_t wait = cfg.action_wait.count();
  std::vector<Inst> live;
  std::optional<std::pair<Inst, std::size_t>> done;

  for (std::size_t j = 0; j < events.size(); ++j) {
    const auto t = secs(events[j]);
    const auto id = event_identity(events[j]);
    if (done) {
      const auto c = secs(events[done->second]);
      if (t - c <= wait) {
        if (id != rule.action) out.push_back({static_cast<double>(j), t, &rule, done->first.events});
      } else {
        out.push_back({static_cast<double>(done->second) + 0.5, c + wait, &rule, done->first.events});
      }
      done.reset();
    }
    std::erase_if(live, [&](const Inst& i) { return t - i.last > gap; });
    std::sort(live.begin(), live.end(), [](const Inst& a, const Inst& b) {
      if (std::popcount(a.mask) != std::popcount(b.mask)) return std::popcount(a.mask) > std::popcount(b.mask);
      return a.mask < b.mask;
    });

    std::vector<Inst> next;
    auto place = [&](Inst inst) {
      if (inst.mask == full) {
        done = std::make_pair(std::move(inst), j);
        return;
      }
      for (auto& n : next) {
        if (n.mask == inst.mask) {
          n = std::move(inst);
          return;
        }
      }
      next.push_back(std::move(inst));
    };
    for (auto& inst : live) {
      if (const auto k = next_position(rule.condition, inst.mask, id, cfg.order_insensitive)) {
        inst.mask |= 1u << *k;
        inst.events.push_back(events[j]);
        inst.last = t;
        place(std::move(inst));
      } else if (std::none_of(next.begin(), next.end(), [&](const Inst& n) { return n.mask == inst.mask; })) {
        next.push_back(std::move(inst));
      }
    }
    if (const auto k = next_position(rule.condition, 0, id, cfg.order_insensitive)) {
      place(Inst{1u << *k, {events[j]}, t});
    }
    live = std::move(next);
  }
  if (done) {
    out.push_back(
        {static_cast<double>(done->second) + 0.5, secs(events[done->second]) + wait, &rule, done->first.events});
  }
}

}  // namespace

std::vector<Recommendation> replay(const std::vector<EventRecord>& events, const RuleDB& db, const MatcherConfig& cfg,
                                   const HomeTopology* topology) {
  std::vector<Recommendation> recs;
  if (events.empty()) return recs;
  const auto& home = events.front().home_id;
  std::vector<Cand> cands;
  for (const auto& [id, rule] : db.rules()) {
    if (rule.home_id == home && rule.emits() && !rule.condition.empty()) simulate(events, rule, cfg, cands);
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.seq < b.seq; });

  std::map<std::string, std::int64_t> last;
  std::uint64_t seq = 1;
  for (std::size_t i = 0; i < cands.size();) {
    std::size_t j = i;
    const Cand* best = nullptr;
    for (; j < cands.size() && cands[j].seq == cands[i].seq; ++j) {
      const auto& c = cands[j];
      const auto it = last.find(c.rule->rule_id);
      if (it != last.end() && c.at - it->second < cfg.cooldown.count()) continue;
      if (!best || ranks_before(*c.rule, *best->rule)) best = &c;
    }
    if (best) {
      Recommendation r;
      r.recommendation_id = home + "-" + std::to_string(seq++);
      r.home_id = home;
      r.rule_id = best->rule->rule_id;
      r.action = best->rule->action;
      r.action_category = best->rule->action_category;
      r.text = recommendation_text(*best->rule, topology);
      r.trigger_events = best->triggers;
      r.created_at = from_unix(best->at);
      last[r.rule_id] = best->at;
      recs.push_back(std::move(r));
    }
    i = j;
  }
  return recs;
}

}  // namespace ecorec::oracle
