#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ecorec/catalog.hpp"
#include "ecorec/domain.hpp"

namespace ecorec {

enum class SupportBase {
  events,  // occurrences / events of the home
  days,    // days with an occurrence / days spanned by the log
};

struct MiningConfig {
  std::size_t min_length = 3;
  std::size_t max_length = 7;
  double min_support = 0.001;
  Seconds max_gap{600};
  bool allow_overlap = true;
  bool wildcards = false;
  SupportBase support_base = SupportBase::events;

  // Throws ecorec::Error("invalid_argument", ...) on out-of-range values.
  void validate() const;
};

enum class MiningAlgorithm {
  growth,     // depth-first prefix projection
  levelwise,  // breadth-first candidate extension over per-symbol position lists
  oracle,     // enumerates every gap-constrained index tuple
};

std::string_view to_string(MiningAlgorithm a);
std::optional<MiningAlgorithm> parse_mining_algorithm(std::string_view s);

using Symbol = std::uint32_t;

// Dense ids for the event identities of one home's log.
class SymbolTable {
 public:
  Symbol intern(const EventIdentity& id);
  std::optional<Symbol> find(const EventIdentity& id) const;
  const EventIdentity& identity(Symbol s) const { return identities_[s]; }
  std::size_t size() const { return identities_.size(); }

 private:
  std::unordered_map<EventIdentity, Symbol, EventIdentityHash> ids_;
  std::vector<EventIdentity> identities_;
};

// A home's events reduced to symbols and unix seconds, in storage order.
struct EncodedLog {
  SymbolTable table;
  std::vector<Symbol> symbols;
  std::vector<std::int64_t> times;
  std::string home_id;

  static EncodedLog from_events(std::span<const EventRecord> events);
  std::size_t size() const { return symbols.size(); }
  std::uint64_t day_span() const;
};

// A mined sequence before it is dressed up as a Pattern.
struct SymbolPattern {
  std::vector<Symbol> items;
  std::uint64_t support_count = 0;
  std::uint64_t measure = 0;  // what min_support was checked against

  friend bool operator==(const SymbolPattern&, const SymbolPattern&) = default;
};

// Smallest support count that satisfies cfg.min_support for this log.
std::uint64_t min_support_count(const EncodedLog& log, const MiningConfig& cfg);

// Count that min_support is compared against: the starts themselves, or the
// distinct days they fall on. `starts` must be ascending.
std::uint64_t support_measure(const EncodedLog& log, std::span<const std::uint32_t> starts, SupportBase base);

// Frequent sequences with min_length <= length <= max_length, sorted by items.
std::vector<SymbolPattern> mine_symbols(const EncodedLog& log, const MiningConfig& cfg, MiningAlgorithm algo);

struct MiningOptions {
  const ActionCatalog* catalog = nullptr;  // defaults() when null
  std::optional<Timestamp> mined_at;       // defaults to the last event of the log
};

std::vector<Pattern> mine_patterns(std::span<const EventRecord> events, const MiningConfig& cfg, MiningAlgorithm algo,
                                   const MiningOptions& options = {});

struct Occurrence {
  std::string home_id;
  std::vector<std::size_t> indices;  // positions in the event sequence
  std::vector<Timestamp> item_timestamps;
};

struct SupportResult {
  std::uint64_t support_count = 0;
  std::vector<Occurrence> occurrences;  // one per counted start, earliest tuple
};

// One occurrence per start event: a start counts when some index tuple
// beginning there matches the pattern with every consecutive gap <= max_gap.
SupportResult count_support(std::span<const EventIdentity> pattern, std::span<const EventRecord> events,
                            const MiningConfig& cfg);

// Keeps patterns of length >= 3 with at least one action and two normal events.
std::vector<Pattern> filter_relevant(std::vector<Pattern> patterns, const ActionCatalog& catalog);

bool is_relevant(const Pattern& p);

// Order-independent digest of a pattern set (items and support counts).
std::uint64_t pattern_set_hash(std::span<const Pattern> patterns);

struct BenchEntry {
  MiningAlgorithm algorithm;
  double seconds = 0.0;  // median of the measured runs
  std::size_t pattern_count = 0;
  std::uint64_t set_hash = 0;
};

struct BenchReport {
  std::size_t events = 0;
  std::vector<BenchEntry> entries;

  std::string table() const;
  nlohmann::json to_json() const;
};

// Runs every algorithm once as warmup, then `repeats` timed runs. Throws
// ecorec::Error("bench_mismatch", ...) with a sample of the difference when
// the algorithms disagree.
BenchReport run_benchmark(std::span<const EventRecord> events, const MiningConfig& cfg,
                          std::span<const MiningAlgorithm> algos, int repeats = 1);

nlohmann::json pattern_to_json(const Pattern& p);
Pattern pattern_from_json(const nlohmann::json& j);
nlohmann::json identity_to_json(const EventIdentity& id);
EventIdentity identity_from_json(const nlohmann::json& j);

}  // namespace ecorec
