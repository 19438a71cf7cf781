#include "ecorec/miner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "ecorec/error.hpp"
#include "ecorec/hash.hpp"

namespace ecorec {

namespace {

constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

std::int64_t day_of(std::int64_t unix_seconds) {
  return unix_seconds >= 0 ? unix_seconds / 86400 : -((-unix_seconds + 86399) / 86400);
}

// ---------------------------------------------------------------------------
// growth: depth-first prefix projection.
//
// A projected entry is one start position plus every position at which some
// gap-valid embedding of the current prefix (beginning at that start) can end.
// All ends are needed: the gap is measured from the previous item, so a later
// end can reach positions an earlier one cannot.

struct Projection {
  std::vector<std::uint32_t> starts;
  std::vector<std::uint32_t> offsets;  // entry i owns ends[offsets[i], offsets[i+1])
  std::vector<std::uint32_t> ends;

  void add(std::uint32_t start, std::uint32_t end) {
    if (starts.empty() || starts.back() != start) {
      starts.push_back(start);
      offsets.push_back(static_cast<std::uint32_t>(ends.size()));
    }
    ends.push_back(end);
  }
  void seal() { offsets.push_back(static_cast<std::uint32_t>(ends.size())); }
};

class GrowthMiner {
 public:
  GrowthMiner(const EncodedLog& log, const MiningConfig& cfg)
      : log_(log), cfg_(cfg), min_count_(min_support_count(log, cfg)), gap_(cfg.max_gap.count()) {}

  std::vector<SymbolPattern> run() {
    const std::size_t alphabet = log_.table.size();
    std::vector<Projection> singles(alphabet);
    for (std::uint32_t i = 0; i < log_.size(); ++i) singles[log_.symbols[i]].add(i, i);
    for (Symbol s = 0; s < alphabet; ++s) {
      auto& proj = singles[s];
      proj.seal();
      const auto measure = support_measure(log_, proj.starts, cfg_.support_base);
      if (measure < min_count_) continue;
      prefix_.assign(1, s);
      emit(proj, measure);
      grow(proj);
    }
    std::sort(out_.begin(), out_.end(), [](const auto& a, const auto& b) { return a.items < b.items; });
    return std::move(out_);
  }

 private:
  void emit(const Projection& proj, std::uint64_t measure) {
    if (prefix_.size() >= cfg_.min_length) out_.push_back({prefix_, proj.starts.size(), measure});
  }

  void grow(const Projection& proj) {
    if (prefix_.size() >= cfg_.max_length) return;

    std::vector<std::uint32_t> slot(log_.table.size(), kNone);
    std::vector<Symbol> touched;
    std::vector<Projection> children;

    const auto& times = log_.times;
    const std::uint32_t n = static_cast<std::uint32_t>(log_.size());
    for (std::size_t e = 0; e + 1 < proj.offsets.size(); ++e) {
      const std::uint32_t* ends = proj.ends.data() + proj.offsets[e];
      const std::size_t count = proj.offsets[e + 1] - proj.offsets[e];
      const std::uint32_t start = proj.starts[e];
      std::size_t p = 0;  // ends[p] is the latest end before k
      for (std::uint32_t k = ends[0] + 1; k < n; ++k) {
        while (p + 1 < count && ends[p + 1] < k) ++p;
        if (times[k] - times[ends[p]] <= gap_) {
          const Symbol s = log_.symbols[k];
          if (slot[s] == kNone) {
            slot[s] = static_cast<std::uint32_t>(children.size());
            children.emplace_back();
            touched.push_back(s);
          }
          children[slot[s]].add(start, k);
        } else if (p + 1 >= count) {
          break;
        } else {
          k = ends[p + 1];  // positions up to the next end are out of reach
        }
      }
    }

    std::sort(touched.begin(), touched.end());
    for (const Symbol s : touched) {
      auto& child = children[slot[s]];
      child.seal();
      const auto measure = support_measure(log_, child.starts, cfg_.support_base);
      if (measure < min_count_) continue;
      prefix_.push_back(s);
      emit(child, measure);
      grow(child);
      prefix_.pop_back();
      child = Projection{};
    }
  }

  const EncodedLog& log_;
  const MiningConfig& cfg_;
  std::uint64_t min_count_;
  std::int64_t gap_;
  std::vector<Symbol> prefix_;
  std::vector<SymbolPattern> out_;
};

// ---------------------------------------------------------------------------
// levelwise: breadth-first. Every frequent pattern of length L is extended by
// every frequent symbol; a candidate's starts are the parent's starts that
// still admit an embedding, checked from scratch on per-symbol position lists.

class LevelwiseMiner {
 public:
  LevelwiseMiner(const EncodedLog& log, const MiningConfig& cfg)
      : log_(log), cfg_(cfg), min_count_(min_support_count(log, cfg)), gap_(cfg.max_gap.count()) {
    positions_.resize(log.table.size());
    for (std::uint32_t i = 0; i < log.size(); ++i) positions_[log.symbols[i]].push_back(i);
  }

  std::vector<SymbolPattern> run() {
    struct Level {
      std::vector<Symbol> items;
      std::vector<std::uint32_t> starts;
    };
    std::vector<Level> frontier;
    std::vector<Symbol> frequent_symbols;
    for (Symbol s = 0; s < positions_.size(); ++s) {
      if (support_measure(log_, positions_[s], cfg_.support_base) >= min_count_) {
        frequent_symbols.push_back(s);
        frontier.push_back({{s}, positions_[s]});
      }
    }

    std::vector<SymbolPattern> out;
    for (std::size_t length = 1; !frontier.empty(); ++length) {
      if (length >= cfg_.min_length) {
        for (const auto& lv : frontier) {
          out.push_back({lv.items, lv.starts.size(), support_measure(log_, lv.starts, cfg_.support_base)});
        }
      }
      if (length >= cfg_.max_length) break;
      std::vector<Level> next;
      for (const auto& lv : frontier) {
        for (const Symbol s : frequent_symbols) {
          Level cand{lv.items, {}};
          cand.items.push_back(s);
          for (const std::uint32_t start : lv.starts) {
            if (embeds(cand.items, 1, start)) cand.starts.push_back(start);
          }
          if (!cand.starts.empty() && support_measure(log_, cand.starts, cfg_.support_base) >= min_count_) {
            next.push_back(std::move(cand));
          }
        }
      }
      frontier = std::move(next);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.items < b.items; });
    return out;
  }

 private:
  // Can items[depth..] be matched after position `at`?
  bool embeds(const std::vector<Symbol>& items, std::size_t depth, std::uint32_t at) const {
    if (depth == items.size()) return true;
    const auto& pos = positions_[items[depth]];
    const std::int64_t limit = log_.times[at] + gap_;
    for (auto it = std::upper_bound(pos.begin(), pos.end(), at); it != pos.end() && log_.times[*it] <= limit; ++it) {
      if (embeds(items, depth + 1, *it)) return true;
    }
    return false;
  }

  const EncodedLog& log_;
  const MiningConfig& cfg_;
  std::uint64_t min_count_;
  std::int64_t gap_;
  std::vector<std::vector<std::uint32_t>> positions_;
};

// ---------------------------------------------------------------------------
// oracle: walk every gap-constrained index tuple from every start, collect the
// distinct symbol sequences seen per start and count starts per sequence.

class OracleMiner {
 public:
  OracleMiner(const EncodedLog& log, const MiningConfig& cfg) : log_(log), cfg_(cfg), gap_(cfg.max_gap.count()) {}

  std::vector<SymbolPattern> run() {
    std::map<std::vector<Symbol>, std::vector<std::uint32_t>> starts_of;
    std::vector<std::vector<Symbol>> seen;
    std::vector<Symbol> tuple;
    for (std::uint32_t i = 0; i < log_.size(); ++i) {
      seen.clear();
      tuple.assign(1, log_.symbols[i]);
      walk(i, tuple, seen);
      std::sort(seen.begin(), seen.end());
      seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
      for (auto& s : seen) starts_of[std::move(s)].push_back(i);
    }
    const auto min_count = min_support_count(log_, cfg_);
    std::vector<SymbolPattern> out;
    for (const auto& [items, starts] : starts_of) {
      const auto measure = support_measure(log_, starts, cfg_.support_base);
      if (measure >= min_count) out.push_back({items, starts.size(), measure});
    }
    return out;
  }

 private:
  void walk(std::uint32_t at, std::vector<Symbol>& tuple, std::vector<std::vector<Symbol>>& seen) const {
    if (tuple.size() >= cfg_.min_length) seen.push_back(tuple);
    if (tuple.size() == cfg_.max_length) return;
    for (std::uint32_t k = at + 1; k < log_.size() && log_.times[k] - log_.times[at] <= gap_; ++k) {
      tuple.push_back(log_.symbols[k]);
      walk(k, tuple, seen);
      tuple.pop_back();
    }
  }

  const EncodedLog& log_;
  const MiningConfig& cfg_;
  std::int64_t gap_;
};

// Lexicographically smallest gap-valid index tuple for items[depth..] after `at`.
bool earliest_tuple(const EncodedLog& log, std::span<const Symbol> items, std::size_t depth, std::uint32_t at,
                    std::int64_t gap, std::vector<std::size_t>& indices) {
  if (depth == items.size()) return true;
  for (std::uint32_t k = at + 1; k < log.size() && log.times[k] - log.times[at] <= gap; ++k) {
    if (log.symbols[k] != items[depth]) continue;
    indices.push_back(k);
    if (earliest_tuple(log, items, depth + 1, k, gap, indices)) return true;
    indices.pop_back();
  }
  return false;
}

}  // namespace

void MiningConfig::validate() const {
  if (min_length < 3) throw Error("invalid_argument", "min_length must be >= 3");
  if (max_length < min_length) throw Error("invalid_argument", "max_length must be >= min_length");
  if (!(min_support > 0.0 && min_support <= 1.0)) throw Error("invalid_argument", "min_support must be in (0, 1]");
  if (max_gap.count() < 0) throw Error("invalid_argument", "max_gap must be non-negative");
  if (wildcards) throw Error("invalid_argument", "wildcard patterns are not supported");
}

std::string_view to_string(MiningAlgorithm a) {
  switch (a) {
    case MiningAlgorithm::growth: return "growth";
    case MiningAlgorithm::levelwise: return "levelwise";
    case MiningAlgorithm::oracle: return "oracle";
  }
  return "?";
}

std::optional<MiningAlgorithm> parse_mining_algorithm(std::string_view s) {
  if (s == "growth") return MiningAlgorithm::growth;
  if (s == "levelwise") return MiningAlgorithm::levelwise;
  if (s == "oracle") return MiningAlgorithm::oracle;
  return std::nullopt;
}

Symbol SymbolTable::intern(const EventIdentity& id) {
  const auto [it, inserted] = ids_.try_emplace(id, static_cast<Symbol>(identities_.size()));
  if (inserted) identities_.push_back(id);
  return it->second;
}

std::optional<Symbol> SymbolTable::find(const EventIdentity& id) const {
  const auto it = ids_.find(id);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

EncodedLog EncodedLog::from_events(std::span<const EventRecord> events) {
  EncodedLog log;
  log.symbols.reserve(events.size());
  log.times.reserve(events.size());
  for (const auto& e : events) {
    if (log.home_id.empty()) log.home_id = e.home_id;
    log.symbols.push_back(log.table.intern(event_identity(e)));
    log.times.push_back(to_unix(e.timestamp));
  }
  if (events.size() > std::numeric_limits<std::uint32_t>::max() - 1) {
    throw Error("invalid_argument", "log too large for one home");
  }
  return log;
}

std::uint64_t EncodedLog::day_span() const {
  if (times.empty()) return 0;
  return static_cast<std::uint64_t>(day_of(times.back()) - day_of(times.front()) + 1);
}

std::uint64_t min_support_count(const EncodedLog& log, const MiningConfig& cfg) {
  const double base = cfg.support_base == SupportBase::events ? static_cast<double>(log.size())
                                                               : static_cast<double>(log.day_span());
  const double needed = std::ceil(cfg.min_support * base - 1e-9);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::max(0.0, needed)));
}

std::uint64_t support_measure(const EncodedLog& log, std::span<const std::uint32_t> starts, SupportBase base) {
  if (base == SupportBase::events) return starts.size();
  std::uint64_t days = 0;
  std::int64_t last = std::numeric_limits<std::int64_t>::min();
  for (const auto s : starts) {
    const auto d = day_of(log.times[s]);
    if (d != last) {
      ++days;
      last = d;
    }
  }
  return days;
}

std::vector<SymbolPattern> mine_symbols(const EncodedLog& log, const MiningConfig& cfg, MiningAlgorithm algo) {
  cfg.validate();
  if (!cfg.allow_overlap) throw Error("unsupported", "mining requires overlapping occurrences (allow_overlap)");
  if (log.size() == 0) return {};
  switch (algo) {
    case MiningAlgorithm::growth: return GrowthMiner(log, cfg).run();
    case MiningAlgorithm::levelwise: return LevelwiseMiner(log, cfg).run();
    case MiningAlgorithm::oracle: return OracleMiner(log, cfg).run();
  }
  return {};
}

std::vector<Pattern> mine_patterns(std::span<const EventRecord> events, const MiningConfig& cfg, MiningAlgorithm algo,
                                   const MiningOptions& options) {
  const auto log = EncodedLog::from_events(events);
  const auto mined = mine_symbols(log, cfg, algo);
  const ActionCatalog& catalog = options.catalog ? *options.catalog : ActionCatalog::defaults();
  const Timestamp mined_at = options.mined_at ? *options.mined_at : (events.empty() ? Timestamp{} : events.back().timestamp);
  const double base = cfg.support_base == SupportBase::events ? static_cast<double>(log.size())
                                                               : static_cast<double>(log.day_span());

  std::vector<Pattern> out;
  out.reserve(mined.size());
  for (const auto& m : mined) {
    Pattern p;
    p.home_id = log.home_id;
    for (const Symbol s : m.items) {
      p.items.push_back(log.table.identity(s));
      p.classes.push_back(catalog.classify(p.items.back().event_name));
    }
    p.support_count = m.support_count;
    p.support = static_cast<double>(m.measure) / base;
    p.first_mined = mined_at;
    out.push_back(std::move(p));
  }
  std::sort(out.begin(), out.end(), [](const Pattern& a, const Pattern& b) { return a.items < b.items; });
  return out;
}

SupportResult count_support(std::span<const EventIdentity> pattern, std::span<const EventRecord> events,
                            const MiningConfig& cfg) {
  SupportResult result;
  if (pattern.empty()) throw Error("invalid_argument", "pattern must not be empty");
  const auto log = EncodedLog::from_events(events);
  std::vector<Symbol> items;
  for (const auto& id : pattern) {
    const auto s = log.table.find(id);
    if (!s) return result;
    items.push_back(*s);
  }
  const std::int64_t gap = cfg.max_gap.count();
  std::size_t last_end = 0;
  bool have_last = false;
  for (std::uint32_t i = 0; i < log.size(); ++i) {
    if (log.symbols[i] != items[0]) continue;
    if (!cfg.allow_overlap && have_last && i <= last_end) continue;
    std::vector<std::size_t> indices{i};
    if (!earliest_tuple(log, items, 1, i, gap, indices)) continue;
    Occurrence occ;
    occ.home_id = log.home_id;
    for (const auto idx : indices) occ.item_timestamps.push_back(from_unix(log.times[idx]));
    last_end = indices.back();
    have_last = true;
    occ.indices = std::move(indices);
    result.occurrences.push_back(std::move(occ));
  }
  result.support_count = result.occurrences.size();
  return result;
}

bool is_relevant(const Pattern& p) { return p.length() >= 3 && p.action_count() >= 1 && p.normal_count() >= 2; }

std::vector<Pattern> filter_relevant(std::vector<Pattern> patterns, const ActionCatalog& catalog) {
  std::vector<Pattern> kept;
  for (auto& p : patterns) {
    p.classes.clear();
    for (const auto& id : p.items) p.classes.push_back(catalog.classify(id.event_name));
    if (is_relevant(p)) kept.push_back(std::move(p));
  }
  return kept;
}

std::uint64_t pattern_set_hash(std::span<const Pattern> patterns) {
  std::vector<std::uint64_t> digests;
  digests.reserve(patterns.size());
  for (const auto& p : patterns) {
    Fnv1a h;
    h.add(p.home_id).sep();
    for (const auto& id : p.items) h.add(id.zone_id).sep().add(id.subject_id).sep().add(id.event_name).sep();
    h.add(p.support_count);
    digests.push_back(h.value());
  }
  std::sort(digests.begin(), digests.end());
  Fnv1a all;
  for (const auto d : digests) all.add(d);
  return all.value();
}

BenchReport run_benchmark(std::span<const EventRecord> events, const MiningConfig& cfg,
                          std::span<const MiningAlgorithm> algos, int repeats) {
  if (algos.size() < 2) throw Error("invalid_argument", "benchmark needs at least two algorithms");
  if (repeats < 1) repeats = 1;
  const auto log = EncodedLog::from_events(events);

  BenchReport report;
  report.events = events.size();
  std::vector<std::vector<SymbolPattern>> results;
  for (const auto algo : algos) {
    auto first = mine_symbols(log, cfg, algo);  // warmup
    std::vector<double> times;
    for (int r = 0; r < repeats; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      auto again = mine_symbols(log, cfg, algo);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (again != first) throw Error("bench_mismatch", std::string(to_string(algo)) + " is not deterministic");
    }
    std::sort(times.begin(), times.end());

    std::vector<Pattern> patterns;
    patterns.reserve(first.size());
    for (const auto& m : first) {
      Pattern p;
      p.home_id = log.home_id;
      for (const Symbol s : m.items) p.items.push_back(log.table.identity(s));
      p.support_count = m.support_count;
      patterns.push_back(std::move(p));
    }
    report.entries.push_back({algo, std::max(times[times.size() / 2], 1e-9), first.size(), pattern_set_hash(patterns)});
    results.push_back(std::move(first));
  }

  for (std::size_t a = 1; a < results.size(); ++a) {
    if (report.entries[a].set_hash == report.entries[0].set_hash && results[a] == results[0]) continue;
    std::ostringstream diff;
    diff << to_string(algos[0]) << " vs " << to_string(algos[a]) << ": " << results[0].size() << " vs "
         << results[a].size() << " patterns";
    std::size_t shown = 0;
    for (const auto& p : results[0]) {
      if (shown >= 3) break;
      if (!std::binary_search(results[a].begin(), results[a].end(), p,
                              [](const auto& x, const auto& y) { return x.items < y.items; })) {
        diff << "; only in " << to_string(algos[0]) << ": <";
        for (std::size_t i = 0; i < p.items.size(); ++i) diff << (i ? "," : "") << describe(log.table.identity(p.items[i]));
        diff << "> x" << p.support_count;
        ++shown;
      }
    }
    throw Error("bench_mismatch", diff.str());
  }
  return report;
}

std::string BenchReport::table() const {
  std::ostringstream os;
  os << "events: " << events << '\n';
  os << std::left << std::setw(12) << "algorithm" << std::right << std::setw(12) << "seconds" << std::setw(10)
     << "patterns" << "  set_hash\n";
  for (const auto& e : entries) {
    os << std::left << std::setw(12) << to_string(e.algorithm) << std::right << std::setw(12) << std::fixed
       << std::setprecision(4) << e.seconds << std::setw(10) << e.pattern_count << "  " << to_hex(e.set_hash) << '\n';
  }
  return os.str();
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json j{{"events", events}};
  auto& arr = j["algorithms"] = nlohmann::json::array();
  for (const auto& e : entries) {
    arr.push_back({{"algorithm", std::string(to_string(e.algorithm))},
                   {"seconds", e.seconds},
                   {"patterns", e.pattern_count},
                   {"set_hash", to_hex(e.set_hash)}});
  }
  return j;
}

nlohmann::json identity_to_json(const EventIdentity& id) {
  return {{"zone_id", id.zone_id}, {"subject_id", id.subject_id}, {"event_name", id.event_name}};
}

EventIdentity identity_from_json(const nlohmann::json& j) {
  return {j.at("zone_id").get<std::string>(), j.at("subject_id").get<std::string>(),
          j.at("event_name").get<std::string>()};
}

nlohmann::json pattern_to_json(const Pattern& p) {
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t i = 0; i < p.items.size(); ++i) {
    auto item = identity_to_json(p.items[i]);
    const auto& cls = i < p.classes.size() ? p.classes[i] : EventClass::normal();
    item["class"] = cls.is_action() ? std::string(to_string(*cls.action)) : std::string("normal");
    items.push_back(std::move(item));
  }
  return {{"home_id", p.home_id},
          {"items", std::move(items)},
          {"support_count", p.support_count},
          {"support", p.support},
          {"first_mined", format_timestamp(p.first_mined)}};
}

Pattern pattern_from_json(const nlohmann::json& j) {
  Pattern p;
  p.home_id = j.at("home_id").get<std::string>();
  for (const auto& item : j.at("items")) {
    p.items.push_back(identity_from_json(item));
    const auto cls = item.value("class", std::string("normal"));
    const auto cat = parse_action_category(cls);
    p.classes.push_back(cat ? EventClass::of(*cat) : EventClass::normal());
  }
  p.support_count = j.at("support_count").get<std::uint64_t>();
  p.support = j.at("support").get<double>();
  const auto ts = parse_timestamp(j.at("first_mined").get<std::string>());
  if (!ts) throw Error("parse", "bad first_mined timestamp in pattern");
  p.first_mined = *ts;
  return p;
}

}  // namespace ecorec
