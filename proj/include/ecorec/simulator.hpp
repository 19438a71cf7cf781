#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecorec/domain.hpp"
#include "ecorec/feedback.hpp"
#include "ecorec/topology.hpp"

namespace ecorec {

// A daily habit: some normal events followed by an energy-saving action.
struct RoutineSpec {
  std::size_t condition_events = 2;
  std::optional<ActionCategory> action;  // picked per home when empty
  int times_per_day = 1;
  Seconds jitter{1200};  // start time varies uniformly by +- jitter
};

struct SimConfig {
  std::uint64_t seed = 7;
  int homes = 8;
  int zones_per_home = 5;
  int devices_per_zone = 3;
  int train_days = 21;  // clean period used for mining
  int days = 34;        // evaluation period
  double forget_probability = 0.1;
  double noise_rate = 0.25;  // unrelated events per hour, kept out of routine instances
  int noise_identities = 12;
  std::vector<RoutineSpec> routines;  // same specs for every home; default_routines() when empty
  std::size_t default_routine_count = 5;
  Timestamp start = from_unix(1'414'800'000);  // 2014-11-01

  // Throws Error("invalid_argument") or Error("infeasible").
  void validate() const;
};

// One planted routine occurrence in the evaluation period.
struct RoutineOccurrence {
  Timestamp start{};
  Timestamp last_condition{};
  std::optional<Timestamp> action_at;  // empty when forgotten
  bool forgotten() const { return !action_at.has_value(); }
};

struct RoutineTruth {
  std::string home_id;
  std::string routine_id;
  std::vector<EventIdentity> condition;
  EventIdentity action;
  ActionCategory category = ActionCategory::off;
  std::vector<RoutineOccurrence> occurrences;
};

struct GroundTruth {
  int homes = 0;
  int days = 0;
  double forget_probability = 0.0;
  Timestamp test_start{};
  std::vector<RoutineTruth> routines;

  std::size_t occurrence_count() const;
  std::size_t forgotten_count() const;
};

struct SimOutput {
  std::vector<EventRecord> train;  // forget probability 0
  std::vector<EventRecord> test;   // forget probability p
  GroundTruth truth;
  TopologyMap topology;
};

SimOutput generate(const SimConfig& cfg);

// Exactly `events` events of one simulated home (default routines, denser
// noise), for benchmarks.
std::vector<EventRecord> bench_corpus(std::size_t events, std::uint64_t seed, double noise_rate = 4.0);

// out/train.jsonl, out/test.jsonl, out/truth.jsonl, out/topology.json
void write_corpus(const SimOutput& sim, const std::filesystem::path& dir);
void save_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_truth(const std::filesystem::path& path);

struct Metrics {
  std::size_t recommendations = 0;
  std::size_t true_positives = 0;
  std::size_t forgotten = 0;
  std::size_t detected = 0;
  std::optional<double> recall;     // empty without forgotten occurrences
  std::optional<double> precision;  // empty without recommendations
  double recs_per_day_per_home = 0.0;

  std::string table() const;
  nlohmann::json to_json() const;
};

double recs_per_day_per_home(std::size_t recommendations, int days, int homes);

// A recommendation is a true positive when it names the action of a forgotten
// occurrence in the same home and was created within `window` after that
// occurrence's last condition event. Each occurrence matches at most once.
std::vector<bool> true_positive_flags(std::span<const Recommendation> recs, const GroundTruth& truth,
                                      Seconds window = Seconds{600});

Metrics evaluate(std::span<const Recommendation> recs, const GroundTruth& truth, Seconds window = Seconds{600});

struct InhabitantConfig {
  double answer_probability = 0.46;
  std::uint64_t seed = 1;
  Seconds reply_delay{600};
  Seconds window{600};
};

/// Answers recommendations the way a cooperative inhabitant would: replies
/// with a fixed probability, and says "useful" exactly for true positives.
class ScriptedInhabitant {
 public:
  ScriptedInhabitant(const GroundTruth& truth, InhabitantConfig cfg = {});

  // Verdicts for a batch, in order; empty entries are unanswered.
  std::vector<std::optional<Verdict>> respond(std::span<const Recommendation> recs) const;

  // Adds every recommendation to the ledger, records the answers at
  // created_at + reply_delay, then expires the rest. Returns answered count.
  std::size_t answer(std::span<const Recommendation> recs, FeedbackLedger& ledger) const;

 private:
  const GroundTruth& truth_;
  InhabitantConfig cfg_;
};

}  // namespace ecorec
