// ecorec command line: one binary, one subcommand per pipeline step.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ecorec/error.hpp"
#include "ecorec/event_store.hpp"
#include "ecorec/feedback.hpp"
#include "ecorec/ingest.hpp"
#include "ecorec/matcher.hpp"
#include "ecorec/miner.hpp"
#include "ecorec/pipeline.hpp"
#include "ecorec/rules.hpp"
#include "ecorec/service.hpp"
#include "ecorec/simulator.hpp"

namespace fs = std::filesystem;
using namespace ecorec;

namespace {

struct Global {
  bool json = false;
  bool verbose = false;
};

void info(const Global& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << '\n';
}

Seconds duration_arg(const std::string& text, const std::string& what) {
  const auto d = parse_duration(text);
  if (!d || d->count() < 0) throw Error("invalid_argument", what + ": bad duration '" + text + "'");
  return *d;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw Error("not_found", what + " not found: " + p.string());
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + p.string());
  return out;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  require_file(p, "file");
  std::ifstream in(p);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error("parse_error", p.string() + ":" + std::to_string(n) + ": malformed json");
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<Recommendation> read_recommendations(const fs::path& p) {
  std::vector<Recommendation> recs;
  for (const auto& j : read_jsonl(p)) recs.push_back(recommendation_from_json(j));
  return recs;
}

void write_recommendations(const fs::path& p, const std::vector<Recommendation>& recs) {
  auto out = open_out(p);
  for (const auto& r : recs) out << recommendation_to_json(r).dump() << '\n';
}

std::map<std::string, std::vector<EventRecord>> load_homes(const fs::path& store_dir, const std::string& home) {
  require_file(store_dir, "store");
  EventStore store(store_dir);
  std::map<std::string, std::vector<EventRecord>> homes;
  const auto ids = home == "all" ? store.homes() : std::vector<std::string>{home};
  for (const auto& id : ids) {
    const auto events = store.events(id);
    if (!events || events->empty()) {
      if (home != "all") throw Error("not_found", "no events for home " + id);
      continue;
    }
    homes[id] = *events;
  }
  return homes;
}

std::optional<MiningAlgorithm> algo_arg(const std::string& s) { return parse_mining_algorithm(s); }

std::string census_table(const RuleCensus& c) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "rules" << c.total << '\n';
  for (const auto& [state, n] : c.by_state) os << std::left << std::setw(24) << to_string(state) << n << '\n';
  return os.str();
}

nlohmann::json census_json(const RuleCensus& c) {
  nlohmann::json states = nlohmann::json::object();
  for (const auto& [state, n] : c.by_state) states[std::string(to_string(state))] = n;
  return {{"total", c.total}, {"by_state", states}};
}

// --- option groups shared by several subcommands ---

struct MiningArgs {
  double min_support = 0.001;
  std::size_t min_len = 3;
  std::size_t max_len = 7;
  std::string max_gap = "600s";
  std::string support_base = "events";

  void add(CLI::App* app) {
    app->add_option("--min-support", min_support, "Minimum support as a fraction in (0, 1]")->capture_default_str();
    app->add_option("--min-len", min_len, "Shortest pattern length")->capture_default_str();
    app->add_option("--max-len", max_len, "Longest pattern length")->capture_default_str();
    app->add_option("--max-gap", max_gap, "Largest gap between consecutive events (e.g. 600s, 10m)")
        ->capture_default_str();
    app->add_option("--support-base", support_base, "events or days")->capture_default_str();
  }

  MiningConfig config() const {
    MiningConfig cfg;
    cfg.min_support = min_support;
    cfg.min_length = min_len;
    cfg.max_length = max_len;
    cfg.max_gap = duration_arg(max_gap, "--max-gap");
    if (support_base == "events") {
      cfg.support_base = SupportBase::events;
    } else if (support_base == "days") {
      cfg.support_base = SupportBase::days;
    } else {
      throw Error("invalid_argument", "--support-base must be events or days");
    }
    cfg.validate();
    return cfg;
  }
};

struct MatchArgs {
  std::string action_wait = "300s";
  std::string max_gap = "600s";
  std::string cooldown = "3600s";
  bool order_insensitive = false;

  void add(CLI::App* app) {
    app->add_option("--action-wait", action_wait, "How long a completed condition waits for the action")
        ->capture_default_str();
    app->add_option("--match-gap", max_gap, "Largest gap between condition events")->capture_default_str();
    app->add_option("--cooldown", cooldown, "Minimum time between two recommendations of one rule")
        ->capture_default_str();
    app->add_flag("--order-insensitive", order_insensitive, "Match condition events in any order");
  }

  MatcherConfig config() const {
    MatcherConfig cfg;
    cfg.action_wait = duration_arg(action_wait, "--action-wait");
    cfg.max_gap = duration_arg(max_gap, "--match-gap");
    cfg.cooldown = duration_arg(cooldown, "--cooldown");
    cfg.order_insensitive = order_insensitive;
    cfg.validate();
    return cfg;
  }
};

// --- subcommands ---

void cmd_ingest(const Global& g, const fs::path& in, const std::string& format, const fs::path& store_dir,
                const std::optional<fs::path>& topology, const std::string& min_date, const std::string& max_date) {
  const auto fmt = parse_log_format(format);
  if (!fmt) throw Error("invalid_argument", "--format must be jsonl or csv");
  IngestOptions opts;
  if (!min_date.empty()) {
    opts.min_date = parse_timestamp(min_date);
    if (!opts.min_date) throw Error("invalid_argument", "bad --min-date");
  }
  if (!max_date.empty()) {
    opts.max_date = parse_timestamp(max_date);
    if (!opts.max_date) throw Error("invalid_argument", "bad --max-date");
  }
  require_file(in, "input log");
  fs::create_directories(store_dir);
  EventStore store(store_dir);
  if (topology) {
    require_file(*topology, "topology");
    store.set_topology(load_topologies(topology->string()));
  }
  const auto report = load_log(in, *fmt, store, opts);
  if (g.json) {
    std::cout << report.to_json().dump() << '\n';
  } else {
    std::cout << report.summary() << '\n';
    for (const auto& e : report.errors) std::cout << "  line " << e.line_no << ": " << e.reason << '\n';
  }
}

void cmd_mine(const Global& g, const fs::path& store_dir, const std::string& home, const MiningArgs& margs,
              const std::string& algo_name, const fs::path& out_path) {
  const auto cfg = margs.config();
  const auto algo = algo_arg(algo_name);
  if (!algo) throw Error("invalid_argument", "--algo must be growth, levelwise or oracle");
  const auto homes = load_homes(store_dir, home);
  auto out = open_out(out_path);
  std::size_t total = 0;
  std::size_t relevant = 0;
  for (const auto& [id, events] : homes) {
    info(g, "mining " + id + " (" + std::to_string(events.size()) + " events)");
    const auto patterns = mine_patterns(events, cfg, *algo);
    for (const auto& p : patterns) {
      out << pattern_to_json(p).dump() << '\n';
      relevant += is_relevant(p) ? 1 : 0;
    }
    total += patterns.size();
  }
  if (g.json) {
    std::cout << nlohmann::json{{"homes", homes.size()}, {"patterns", total}, {"relevant", relevant},
                                {"out", out_path.string()}}
                     .dump()
              << '\n';
  } else {
    std::cout << "mined " << total << " patterns (" << relevant << " relevant) from " << homes.size()
              << " homes -> " << out_path.string() << '\n';
  }
}

void cmd_rules_derive(const Global& g, const fs::path& store_dir, const fs::path& patterns_path,
                      const MiningArgs& margs, bool keep_other_actions, double threshold, bool exclude_absent,
                      const fs::path& out_path) {
  const auto cfg = margs.config();
  std::map<std::string, std::vector<Pattern>> by_home;
  for (const auto& j : read_jsonl(patterns_path)) {
    auto p = pattern_from_json(j);
    by_home[p.home_id].push_back(std::move(p));
  }
  require_file(store_dir, "store");
  EventStore store(store_dir);
  RuleDB db;
  db.threshold = threshold;
  db.policy.exclude_absent_actions = exclude_absent;
  BuildOptions opts;
  opts.derivation.keep_other_actions = keep_other_actions;
  for (const auto& [home, patterns] : by_home) {
    const auto events = store.events(home);
    if (!events) throw Error("not_found", "no events for home " + home);
    for (auto& r : build_rules(patterns, *events, cfg, opts)) db.add(std::move(r));
  }
  db.recompute();
  db.save(out_path);
  const auto census = db.census();
  if (g.json) {
    std::cout << nlohmann::json{{"census", census_json(census)}, {"out", out_path.string()}}.dump() << '\n';
  } else {
    std::cout << census_table(census);
  }
}

void cmd_rules_list(const Global& g, const fs::path& rules_path, const std::string& state, const std::string& home) {
  require_file(rules_path, "rule database");
  const auto db = RuleDB::load(rules_path);
  std::optional<RuleState> filter;
  if (!state.empty()) {
    filter = parse_rule_state(state);
    if (!filter) throw Error("invalid_argument", "unknown --state " + state);
  }
  auto list = nlohmann::json::array();
  std::ostringstream table;
  table << std::left << std::setw(20) << "rule" << std::setw(22) << "state" << std::setw(10) << "conf"
        << std::setw(10) << "priority" << "condition -> action\n";
  for (const auto* r : db.ranked(home)) {
    if (filter && r->state != *filter) continue;
    list.push_back(rule_to_json(*r));
    std::ostringstream cond;
    for (std::size_t i = 0; i < r->condition.size(); ++i) cond << (i ? ", " : "") << describe(r->condition[i]);
    table << std::left << std::setw(20) << r->rule_id << std::setw(22) << to_string(r->state) << std::setw(10)
          << std::setprecision(4) << r->confidence << std::setw(10) << r->priority << cond.str() << " -> "
          << describe(r->action) << '\n';
  }
  if (g.json) {
    std::cout << list.dump() << '\n';
  } else {
    std::cout << table.str();
  }
}

void cmd_replay(const Global& g, const fs::path& store_dir, const fs::path& rules_path, const std::string& home,
                const MatchArgs& margs, const fs::path& out_path) {
  const auto cfg = margs.config();
  require_file(rules_path, "rule database");
  const auto db = std::make_shared<const RuleDB>(RuleDB::load(rules_path));
  const auto homes = load_homes(store_dir, home);
  const TopologyMap topology = EventStore(store_dir).topology();
  MatcherStats stats;
  const auto recs = replay_homes(homes, db, cfg, topology.empty() ? nullptr : &topology, &stats);
  write_recommendations(out_path, recs);
  const nlohmann::json summary{{"homes", homes.size()},           {"events", stats.events},
                               {"recommendations", recs.size()},  {"completions", stats.completions},
                               {"suppressed", stats.suppressed},  {"dropped_cooldown", stats.dropped_cooldown},
                               {"dropped_conflict", stats.dropped_conflict}, {"timeouts", stats.timeouts}};
  if (g.json) {
    std::cout << summary.dump() << '\n';
  } else {
    std::cout << "replayed " << stats.events << " events in " << homes.size() << " homes: " << recs.size()
              << " recommendations (" << stats.suppressed << " suppressed, " << stats.dropped_conflict
              << " conflicts, " << stats.dropped_cooldown << " in cooldown) -> " << out_path.string() << '\n';
  }
}

std::atomic<Service*> g_service{nullptr};

void on_signal(int) {
  if (auto* s = g_service.load()) s->stop();
}

void cmd_serve(const Global& g, ServiceConfig cfg, const std::vector<std::string>& webhooks, const MatchArgs& margs) {
  cfg.matcher = margs.config();
  for (const auto& w : webhooks) {
    const auto eq = w.find('=');
    if (eq == std::string::npos) throw Error("invalid_argument", "--webhook expects home=url");
    cfg.webhooks[w.substr(0, eq)] = w.substr(eq + 1);
  }
  if (!g.json) cfg.request_log = [](const std::string& line) { std::cerr << line << '\n'; };
  Service svc(std::move(cfg));
  g_service = &svc;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const int port = svc.start();
  std::cout << nlohmann::json{{"listening", port}}.dump() << std::endl;
  svc.run();
  g_service = nullptr;
}

FeedbackLedger open_existing_ledger(const fs::path& journal) {
  require_file(journal, "feedback journal");
  return FeedbackLedger::open(journal);
}

void cmd_feedback_stats(const Global& g, const fs::path& journal, const std::optional<fs::path>& rules_path) {
  auto ledger = open_existing_ledger(journal);
  const auto summary = ledger.summary();
  nlohmann::json out{{"summary", summary.to_json()}};
  std::optional<RuleDB> db;
  if (rules_path) {
    require_file(*rules_path, "rule database");
    db = RuleDB::load(*rules_path);
  }
  auto rules = nlohmann::json::array();
  for (const auto& [id, a] : ledger.aggregates()) {
    nlohmann::json r{{"rule_id", id},        {"recommended", a.recommended}, {"useful", a.useful},
                     {"not_useful", a.not_useful}, {"expired", a.expired},   {"streak", a.streak}};
    if (const auto w = ledger.weighted_feedback(id)) r["weighted_feedback"] = *w;
    if (db) {
      if (const auto* rule = db->find(id)) r["state"] = to_string(rule->state);
    }
    rules.push_back(std::move(r));
  }
  out["rules"] = rules;
  if (db) {
    try {
      out["regression"] = fit_regression(ledger, *db).to_json();
    } catch (const Error& e) {
      out["regression"] = {{"valid", false}, {"note", e.what()}};
    }
  }
  if (g.json) {
    std::cout << out.dump() << '\n';
    return;
  }
  std::cout << "phase                   " << summary.phase << '\n'
            << "recommendations         " << summary.recommendations << '\n'
            << "useful                  " << summary.useful << '\n'
            << "not_useful              " << summary.not_useful << '\n'
            << "expired                 " << summary.expired << '\n'
            << "pending                 " << summary.pending << '\n'
            << "response_rate           " << std::fixed << std::setprecision(4) << summary.response_rate() << '\n'
            << "rules_at_streak         " << summary.rules_at_streak << '\n'
            << "rules_with_feedback     " << ledger.aggregates().size() << '\n';
  if (out.contains("regression")) {
    const auto& r = out["regression"];
    if (r.value("valid", false)) {
      std::cout << "regression              n=" << r["n"] << " intercept=" << r["intercept"]["estimate"]
                << " confidence=" << r["confidence"]["estimate"] << " length=" << r["length"]["estimate"]
                << " r2=" << r["r_squared"] << '\n';
    } else {
      std::cout << "regression              not valid: " << r.value("note", std::string()) << '\n';
    }
  }
}

void cmd_feedback_script(const Global& g, const fs::path& recs_path, const fs::path& truth_path,
                         const fs::path& journal, double q, std::uint64_t seed) {
  const auto recs = read_recommendations(recs_path);
  require_file(truth_path, "truth file");
  const auto truth = load_truth(truth_path);
  InhabitantConfig icfg;
  icfg.answer_probability = q;
  icfg.seed = seed;
  const ScriptedInhabitant inhabitant(truth, icfg);
  if (journal.has_parent_path()) fs::create_directories(journal.parent_path());
  auto ledger = FeedbackLedger::open(journal);
  inhabitant.answer(recs, ledger);
  const auto s = ledger.summary();
  if (g.json) {
    std::cout << s.to_json().dump() << '\n';
  } else {
    std::cout << "answered " << (s.useful + s.not_useful) << " of " << s.recommendations << " (useful " << s.useful
              << ", not_useful " << s.not_useful << ", expired " << s.expired << ") -> " << journal.string() << '\n';
  }
}

void cmd_adapt(const Global& g, const fs::path& in, const fs::path& out_path, const fs::path& journal, bool fit,
               double threshold, bool new_phase) {
  require_file(in, "rule database");
  const auto db = RuleDB::load(in);
  auto ledger = open_existing_ledger(journal);
  RegressionFit regression;  // invalid: default weights
  regression.note = "not fitted";
  if (fit) regression = fit_regression(ledger, db);
  Timestamp at{};
  for (const auto& e : ledger.entries()) at = std::max(at, e.received_at);
  const auto result = adapt_phase2(db, regression, threshold, new_phase ? &ledger : nullptr, at);
  result.db.save(out_path);
  if (g.json) {
    auto j = result.report.to_json();
    j["regression"] = regression.to_json();
    std::cout << j.dump() << '\n';
  } else {
    std::cout << result.report.table();
    if (fit && !regression.valid) std::cout << "regression not used: " << regression.note << '\n';
  }
}

void cmd_bench(const Global& g, const std::string& algos_csv, std::size_t events, const std::optional<fs::path>& in,
               const MiningArgs& margs, std::uint64_t seed, int repeats) {
  const auto cfg = margs.config();
  std::vector<MiningAlgorithm> algos;
  std::stringstream ss(algos_csv);
  for (std::string name; std::getline(ss, name, ',');) {
    const auto a = algo_arg(name);
    if (!a) throw Error("invalid_argument", "unknown algorithm " + name);
    algos.push_back(*a);
  }
  std::vector<EventRecord> log;
  if (in) {
    require_file(*in, "input log");
    for (const auto& j : read_jsonl(*in)) {
      auto r = parse_json_record(j);
      if (const auto* err = std::get_if<ParseError>(&r)) throw Error("parse_error", err->reason);
      log.push_back(std::get<EventRecord>(r));
    }
    std::stable_sort(log.begin(), log.end(), event_order_less);
  } else {
    log = bench_corpus(events, seed);
  }
  const auto report = run_benchmark(log, cfg, algos, repeats);
  std::cout << (g.json ? report.to_json().dump() + "\n" : report.table());
}

void cmd_simulate(const Global& g, SimConfig cfg, const fs::path& out) {
  const auto sim = generate(cfg);
  write_corpus(sim, out);
  const nlohmann::json j{{"train_events", sim.train.size()},
                         {"test_events", sim.test.size()},
                         {"routines", sim.truth.routines.size()},
                         {"occurrences", sim.truth.occurrence_count()},
                         {"forgotten", sim.truth.forgotten_count()},
                         {"out", out.string()}};
  if (g.json) {
    std::cout << j.dump() << '\n';
  } else {
    std::cout << "simulated " << cfg.homes << " homes: " << sim.train.size() << " training events, "
              << sim.test.size() << " test events, " << sim.truth.forgotten_count() << " of "
              << sim.truth.occurrence_count() << " routine instances forgotten -> " << out.string() << '\n';
  }
}

void cmd_evaluate(const Global& g, const fs::path& recs_path, const fs::path& truth_path, const std::string& window) {
  const auto recs = read_recommendations(recs_path);
  require_file(truth_path, "truth file");
  const auto m = evaluate(recs, load_truth(truth_path), duration_arg(window, "--window"));
  std::cout << (g.json ? m.to_json().dump() + "\n" : m.table());
}

int exit_code_for(const std::string& code) {
  if (code == "invalid_argument" || code == "infeasible" || code == "unsupported") return 2;
  return 1;
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ecorec: energy-saving recommendations from smart-home event logs"};
  app.set_config("--config", "", "key=value configuration file; [section] headers address subcommands");
  app.require_subcommand(1);
  Global g;
  app.add_flag("--json", g.json, "Machine-readable output");
  app.add_flag("-v,--verbose", g.verbose, "Progress messages on stderr");

  std::string store_dir = "store";
  std::string rules_path = "rules.jsonl";

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load an event log into the store");
  std::string in_path, format = "jsonl", min_date, max_date;
  std::optional<std::string> topology;
  ingest->add_option("--in", in_path, "Log file")->required();
  ingest->add_option("--format", format, "jsonl or csv")->capture_default_str();
  ingest->add_option("--store", store_dir, "Store directory")->capture_default_str();
  ingest->add_option("--topology", topology, "Topology JSON enabling reference checks");
  ingest->add_option("--min-date", min_date, "Drop events before this timestamp");
  ingest->add_option("--max-date", max_date, "Drop events after this timestamp");

  // mine
  auto* mine = app.add_subcommand("mine", "Mine frequent patterns per home");
  MiningArgs mine_args;
  std::string home = "all", algo = "growth", patterns_out = "patterns.jsonl";
  mine->add_option("--store", store_dir, "Store directory")->capture_default_str();
  mine->add_option("--home", home, "Home id or 'all'")->capture_default_str();
  mine->add_option("--algo", algo, "growth, levelwise or oracle")->capture_default_str();
  mine->add_option("--out", patterns_out, "Pattern file (JSON lines)")->capture_default_str();
  mine_args.add(mine);

  // rules
  auto* rules = app.add_subcommand("rules", "Derive and inspect association rules");
  rules->require_subcommand(1);
  auto* derive = rules->add_subcommand("derive", "Relevant patterns -> rule database");
  MiningArgs derive_args;
  std::string patterns_in = "patterns.jsonl";
  bool keep_other_actions = false;
  bool exclude_absent = false;
  double threshold = 0.0;
  derive->add_option("--store", store_dir, "Store directory")->capture_default_str();
  derive->add_option("--patterns", patterns_in, "Pattern file from mine")->capture_default_str();
  derive->add_option("--out", rules_path, "Rule database to write")->capture_default_str();
  derive->add_option("--threshold", threshold, "Priority threshold for active rules")->capture_default_str();
  derive->add_flag("--keep-other-actions", keep_other_actions, "Keep other actions of a pattern in the condition");
  derive->add_flag("--exclude-absent", exclude_absent, "Exclude rules whose action is an absent action");
  derive_args.add(derive);
  auto* list = rules->add_subcommand("list", "List rules in rank order");
  std::string state_filter, home_filter;
  list->add_option("--rules", rules_path, "Rule database")->capture_default_str();
  list->add_option("--state", state_filter, "Only rules in this state");
  list->add_option("--home", home_filter, "Only rules of this home");

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "Match stored events against the rules");
  MatchArgs replay_args;
  std::string recs_out = "recs.jsonl";
  std::string replay_home = "all";
  replay_cmd->add_option("--store", store_dir, "Store directory")->capture_default_str();
  replay_cmd->add_option("--rules", rules_path, "Rule database")->capture_default_str();
  replay_cmd->add_option("--home", replay_home, "Home id or 'all'")->capture_default_str();
  replay_cmd->add_option("--out", recs_out, "Recommendations (JSON lines)")->capture_default_str();
  replay_args.add(replay_cmd);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->set_config("--config", "", "key=value configuration file");
  ServiceConfig scfg;
  MatchArgs serve_match;
  std::string serve_store = "store", serve_rules = "rules.jsonl", journal_opt, reorder = "60s";
  std::vector<std::string> webhooks;
  serve->add_option("--host", scfg.host, "Listen address")->capture_default_str();
  serve->add_option("--port", scfg.port, "Listen port (0 picks one)")->capture_default_str();
  serve->add_option("--store", serve_store, "Store directory")->capture_default_str();
  serve->add_option("--rules", serve_rules, "Rule database")->capture_default_str();
  serve->add_option("--journal", journal_opt, "Feedback journal (default <store>/feedback.jsonl)");
  serve->add_option("--token", scfg.token, "Bearer token; empty disables auth");
  serve->add_option("--reorder-tolerance", reorder, "How late an event may arrive")->capture_default_str();
  serve->add_option("--webhook", webhooks, "home=url, repeatable");
  serve->add_option("--cors-origin", scfg.cors_origin, "Access-Control-Allow-Origin value")->capture_default_str();
  serve_match.add(serve);

  // feedback
  auto* feedback = app.add_subcommand("feedback", "Inspect or script inhabitant feedback");
  feedback->require_subcommand(1);
  auto* stats = feedback->add_subcommand("stats", "Ledger summary and per-rule aggregates");
  std::string journal = "feedback.jsonl";
  std::optional<std::string> stats_rules;
  stats->add_option("--journal", journal, "Feedback journal")->capture_default_str();
  stats->add_option("--rules", stats_rules, "Rule database (adds states and the regression fit)");
  auto* script = feedback->add_subcommand("script", "Answer recommendations with the scripted inhabitant");
  std::string script_recs = "recs.jsonl", truth_path = "truth.jsonl";
  double answer_probability = 0.46;
  std::uint64_t inhabitant_seed = 1;
  script->add_option("--recs", script_recs, "Recommendations (JSON lines)")->capture_default_str();
  script->add_option("--truth", truth_path, "Simulator ground truth")->capture_default_str();
  script->add_option("--journal", journal, "Feedback journal to append to")->capture_default_str();
  script->add_option("--answer-probability", answer_probability, "Chance that a recommendation is answered")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  script->add_option("--seed", inhabitant_seed, "Seed of the answer draws")->capture_default_str();

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Phase-2 adaptation of a rule database");
  std::string adapt_in = "rules.jsonl", adapt_out = "rules-phase2.jsonl";
  bool do_fit = false;
  bool new_phase = false;
  double adapt_threshold = 0.0;
  adapt->add_option("--in", adapt_in, "Rule database")->capture_default_str();
  adapt->add_option("--out", adapt_out, "Adapted rule database")->capture_default_str();
  adapt->add_option("--journal", journal, "Feedback journal")->capture_default_str();
  adapt->add_option("--threshold", adapt_threshold, "New priority threshold")->capture_default_str();
  adapt->add_flag("--fit", do_fit, "Fit priority weights from the feedback");
  adapt->add_flag("--new-phase", new_phase, "Start a new feedback phase in the journal");

  // bench
  auto* bench = app.add_subcommand("bench", "Compare mining algorithms");
  MiningArgs bench_args;
  std::string algos = "growth,levelwise,oracle";
  std::size_t bench_events = 100000;
  std::optional<std::string> bench_in;
  std::uint64_t bench_seed = 7;
  int repeats = 1;
  bench->add_option("--algos", algos, "Comma-separated algorithms")->capture_default_str();
  bench->add_option("--events", bench_events, "Size of the generated corpus")->capture_default_str();
  bench->add_option("--in", bench_in, "Use this single-home JSON lines log instead");
  bench->add_option("--seed", bench_seed, "Corpus seed")->capture_default_str();
  bench->add_option("--repeats", repeats, "Timed runs per algorithm")->capture_default_str();
  bench_args.add(bench);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic corpus with ground truth");
  SimConfig sim;
  std::string sim_out = "sim";
  simulate->add_option("--seed", sim.seed, "Seed")->capture_default_str();
  simulate->add_option("--homes", sim.homes, "Homes")->capture_default_str();
  simulate->add_option("--days", sim.days, "Evaluated days")->capture_default_str();
  simulate->add_option("--train-days", sim.train_days, "Clean days before the evaluated period")->capture_default_str();
  simulate->add_option("--forget", sim.forget_probability, "Probability that a routine's action is forgotten")
      ->capture_default_str();
  simulate->add_option("--noise-rate", sim.noise_rate, "Unrelated events per hour")->capture_default_str();
  simulate->add_option("--zones", sim.zones_per_home, "Zones per home")->capture_default_str();
  simulate->add_option("--devices", sim.devices_per_zone, "Devices per zone")->capture_default_str();
  simulate->add_option("--routines", sim.default_routine_count, "Routines per home")->capture_default_str();
  simulate->add_option("--out", sim_out, "Output directory")->capture_default_str();

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score recommendations against ground truth");
  std::string eval_recs = "recs.jsonl", eval_truth = "truth.jsonl", window = "600s";
  evaluate_cmd->add_option("--recs", eval_recs, "Recommendations (JSON lines)")->capture_default_str();
  evaluate_cmd->add_option("--truth", eval_truth, "Ground truth")->capture_default_str();
  evaluate_cmd->add_option("--window", window, "Match window after the last condition event")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string message = e.what();
    if (argc > 1 && argv[1][0] != '-' && app.get_subcommands().empty()) {
      message = std::string("unknown subcommand '") + argv[1] + "'";
    }
    print_error("usage", message);
    return 2;
  }

  try {
    if (*ingest) {
      cmd_ingest(g, in_path, format, store_dir, topology ? std::optional<fs::path>(*topology) : std::nullopt, min_date,
                 max_date);
    } else if (*mine) {
      cmd_mine(g, store_dir, home, mine_args, algo, patterns_out);
    } else if (*derive) {
      cmd_rules_derive(g, store_dir, patterns_in, derive_args, keep_other_actions, threshold, exclude_absent,
                       rules_path);
    } else if (*list) {
      cmd_rules_list(g, rules_path, state_filter, home_filter);
    } else if (*replay_cmd) {
      cmd_replay(g, store_dir, rules_path, replay_home, replay_args, recs_out);
    } else if (*serve) {
      scfg.store_dir = serve_store;
      scfg.rules_path = serve_rules;
      if (!journal_opt.empty()) scfg.journal_path = journal_opt;
      scfg.reorder_tolerance = duration_arg(reorder, "--reorder-tolerance");
      cmd_serve(g, std::move(scfg), webhooks, serve_match);
    } else if (*stats) {
      cmd_feedback_stats(g, journal, stats_rules ? std::optional<fs::path>(*stats_rules) : std::nullopt);
    } else if (*script) {
      cmd_feedback_script(g, script_recs, truth_path, journal, answer_probability, inhabitant_seed);
    } else if (*adapt) {
      cmd_adapt(g, adapt_in, adapt_out, journal, do_fit, adapt_threshold, new_phase);
    } else if (*bench) {
      cmd_bench(g, algos, bench_events, bench_in ? std::optional<fs::path>(*bench_in) : std::nullopt, bench_args,
                bench_seed, repeats);
    } else if (*simulate) {
      cmd_simulate(g, sim, sim_out);
    } else if (*evaluate_cmd) {
      cmd_evaluate(g, eval_recs, eval_truth, window);
    }
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
