#include "ecorec/pipeline.hpp"

#include <algorithm>
#include <future>

namespace ecorec {

std::map<std::string, std::vector<EventRecord>> split_by_home(std::span<const EventRecord> events) {
  std::map<std::string, std::vector<EventRecord>> homes;
  for (const auto& e : events) homes[e.home_id].push_back(e);
  for (auto& [id, list] : homes) std::stable_sort(list.begin(), list.end(), event_order_less);
  return homes;
}

RuleDB derive_rule_db(const std::map<std::string, std::vector<EventRecord>>& homes, const DeriveSettings& settings) {
  settings.mining.validate();
  std::vector<std::future<std::vector<AssociationRule>>> jobs;
  for (const auto& [id, events] : homes) {
    jobs.push_back(std::async(std::launch::async, [&settings, &events = events] {
      const auto patterns = mine_patterns(events, settings.mining, settings.algorithm, settings.mining_options);
      return build_rules(patterns, events, settings.mining, settings.build);
    }));
  }
  RuleDB db;
  db.weights = settings.weights;
  db.threshold = settings.threshold;
  db.policy = settings.policy;
  for (auto& job : jobs)
    for (auto& rule : job.get()) db.add(std::move(rule));
  db.recompute();
  return db;
}

std::vector<Recommendation> replay_homes(const std::map<std::string, std::vector<EventRecord>>& homes,
                                         std::shared_ptr<const RuleDB> db, const MatcherConfig& cfg,
                                         const TopologyMap* topology, MatcherStats* stats) {
  cfg.validate();
  struct Result {
    std::vector<Recommendation> recs;
    MatcherStats stats;
  };
  std::vector<std::future<Result>> jobs;
  for (const auto& [id, events] : homes) {
    std::shared_ptr<const HomeTopology> topo;
    if (topology) {
      if (const auto it = topology->find(id); it != topology->end()) topo = std::make_shared<HomeTopology>(it->second);
    }
    jobs.push_back(std::async(std::launch::async, [&cfg, db, topo, &events = events] {
      Result r;
      r.recs = replay(events, db, cfg, topo, &r.stats);
      return r;
    }));
  }
  std::vector<Recommendation> out;
  MatcherStats total;
  for (auto& job : jobs) {
    auto r = job.get();
    out.insert(out.end(), std::make_move_iterator(r.recs.begin()), std::make_move_iterator(r.recs.end()));
    total.events += r.stats.events;
    total.completions += r.stats.completions;
    total.suppressed += r.stats.suppressed;
    total.emitted += r.stats.emitted;
    total.dropped_cooldown += r.stats.dropped_cooldown;
    total.dropped_conflict += r.stats.dropped_conflict;
    total.timeouts += r.stats.timeouts;
  }
  std::stable_sort(out.begin(), out.end(), [](const Recommendation& a, const Recommendation& b) {
    if (a.created_at != b.created_at) return a.created_at < b.created_at;
    if (a.home_id != b.home_id) return a.home_id < b.home_id;
    return a.recommendation_id < b.recommendation_id;
  });
  if (stats) *stats = total;
  return out;
}

}  // namespace ecorec
