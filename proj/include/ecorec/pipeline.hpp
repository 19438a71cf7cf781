#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "ecorec/domain.hpp"
#include "ecorec/matcher.hpp"
#include "ecorec/miner.hpp"
#include "ecorec/rules.hpp"
#include "ecorec/topology.hpp"

namespace ecorec {

// Events split by home, each list in storage order.
std::map<std::string, std::vector<EventRecord>> split_by_home(std::span<const EventRecord> events);

struct DeriveSettings {
  MiningConfig mining;
  MiningAlgorithm algorithm = MiningAlgorithm::growth;
  MiningOptions mining_options;
  BuildOptions build;
  RegressionWeights weights;
  double threshold = 0.0;
  RulePolicy policy;
};

// Mines every home and collects the rules into one database with priorities
// and states computed. Homes run in parallel.
RuleDB derive_rule_db(const std::map<std::string, std::vector<EventRecord>>& homes, const DeriveSettings& settings);

// Replays every home through its own matcher, in parallel. The result is
// ordered by (created_at, home_id, recommendation_id).
std::vector<Recommendation> replay_homes(const std::map<std::string, std::vector<EventRecord>>& homes,
                                         std::shared_ptr<const RuleDB> db, const MatcherConfig& cfg,
                                         const TopologyMap* topology = nullptr, MatcherStats* stats = nullptr);

}  // namespace ecorec
