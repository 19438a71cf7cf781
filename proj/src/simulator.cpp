#include "ecorec/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "ecorec/error.hpp"
#include "ecorec/ingest.hpp"
#include "ecorec/miner.hpp"

namespace ecorec {

namespace {

constexpr std::int64_t kDay = 86400;
constexpr std::int64_t kWindowBegin = 6 * 3600;        // routines run between 06:00
constexpr std::int64_t kWindowEnd = 23 * 3600 + 1800;  // and 23:30
constexpr std::int64_t kMaxConditionGap = 120;
constexpr std::int64_t kMaxActionDelay = 40;
constexpr std::int64_t kSlotMargin = 1200;  // quiet time kept around each slot

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

double unit_from_bits(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

// std distributions differ between standard libraries, so draws are derived
// from the raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return unit_from_bits(engine_()); }

  // Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

  bool chance(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(between(0, i - 1))]);
  }

 private:
  std::mt19937_64 engine_;
};

const std::vector<std::string>& room_names() {
  static const std::vector<std::string> v{"Living room", "Kitchen", "Bedroom", "Bathroom", "Office",
                                          "Hall",        "Dining room", "Kids room", "Garage", "Laundry"};
  return v;
}

const std::vector<std::string>& device_names() {
  static const std::vector<std::string> v{"Ceiling lamp", "Floor lamp", "TV",     "Heater",    "Stereo",
                                          "Coffee maker", "Desk lamp",  "Fan",    "Monitor",   "Kettle"};
  return v;
}

// None of these contain a default catalog keyword.
const std::vector<std::string>& condition_names() {
  static const std::vector<std::string> v{"Turn on light", "Motion detector", "Open shades", "Door opened",
                                          "Play music",    "Bright scene",    "Raise heating", "Start ventilation"};
  return v;
}

const std::vector<std::string>& noise_names() {
  static const std::vector<std::string> v{"Adjust thermostat", "Window contact", "Humidity report", "Door bell",
                                          "Presence ping",     "Blinds moved",   "Volume up",       "Reading light"};
  return v;
}

std::string action_name(ActionCategory c, const std::string& device) {
  switch (c) {
    case ActionCategory::absent:
      return "Leave home";
    case ActionCategory::dim:
      return "Dim " + device;
    case ActionCategory::off:
      return "Turn off " + device;
    case ActionCategory::sleep:
      return "Good night";
    case ActionCategory::standby:
      return device + " standby";
  }
  return "Turn off " + device;
}

std::vector<RoutineSpec> effective_routines(const SimConfig& cfg) {
  if (!cfg.routines.empty()) return cfg.routines;
  static const ActionCategory cycle[] = {ActionCategory::absent, ActionCategory::off, ActionCategory::dim,
                                         ActionCategory::standby, ActionCategory::sleep};
  std::vector<RoutineSpec> out(cfg.default_routine_count);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].action = cycle[i % 5];
  return out;
}

std::int64_t slot_length(const RoutineSpec& r) {
  const auto span = static_cast<std::int64_t>(r.condition_events) * kMaxConditionGap + kMaxActionDelay;
  return 2 * r.jitter.count() + span + 2 * kSlotMargin;
}

std::string two_digits(int i) {
  std::ostringstream os;
  if (i < 10) os << '0';
  os << i;
  return os.str();
}

struct PlannedRoutine {
  RoutineTruth truth;
  RoutineSpec spec;
  std::vector<std::int64_t> slot_centers;  // seconds after midnight
};

struct HomeOutput {
  std::vector<EventRecord> train;
  std::vector<EventRecord> test;
  std::vector<RoutineTruth> routines;
  HomeTopology topology;
};

EventRecord make_event(Timestamp ts, const std::string& home, const EventIdentity& id, EventSource src) {
  return EventRecord{ts, home, id.zone_id, id.subject_id, id.event_name, src};
}

HomeOutput generate_home(const SimConfig& cfg, int index) {
  Rng rng(splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1)));
  HomeOutput out;
  const std::string home = "home-" + two_digits(index + 1);
  auto& topo = out.topology;
  topo.home_id = home;

  std::vector<int> rooms(room_names().size());
  for (std::size_t i = 0; i < rooms.size(); ++i) rooms[i] = static_cast<int>(i);
  rng.shuffle(rooms);
  for (int z = 0; z < cfg.zones_per_home; ++z) {
    const auto zone = home + "-z" + std::to_string(z + 1);
    const auto& room = room_names()[static_cast<std::size_t>(rooms[static_cast<std::size_t>(z) % rooms.size()])];
    topo.zones.push_back({zone, z < static_cast<int>(rooms.size()) ? room : room + " " + std::to_string(z + 1)});
    topo.meters.push_back({zone + "-m", room + " circuit"});
    for (int d = 0; d < cfg.devices_per_zone; ++d) {
      const auto& name = device_names()[static_cast<std::size_t>(rng.between(0, device_names().size() - 1))];
      topo.devices.push_back({zone + "-d" + std::to_string(d + 1), zone, name, zone + "-m"});
    }
  }
  auto zone_of = [&](std::size_t z) { return topo.zones[z % topo.zones.size()]; };
  auto devices_in = [&](const std::string& zone) {
    std::vector<const DeviceInfo*> v;
    for (const auto& d : topo.devices)
      if (d.zone_id == zone) v.push_back(&d);
    return v;
  };

  // Routines, each with its own condition scenes and action subject.
  const auto specs = effective_routines(cfg);
  std::vector<PlannedRoutine> planned;
  for (std::size_t r = 0; r < specs.size(); ++r) {
    PlannedRoutine p;
    p.spec = specs[r];
    auto& t = p.truth;
    t.home_id = home;
    t.routine_id = home + "-r" + std::to_string(r + 1);
    const auto zone = zone_of(static_cast<std::size_t>(rng.between(0, topo.zones.size() - 1)));
    for (std::size_t j = 0; j < p.spec.condition_events; ++j) {
      const auto scene = t.routine_id + "-c" + std::to_string(j + 1);
      const auto& base = condition_names()[(r * 3 + j) % condition_names().size()];
      const auto name = base + " " + zone.room_name + " " + std::to_string(r + 1) + "." + std::to_string(j + 1);
      topo.scenes.push_back({scene, zone.zone_id, name});
      t.condition.push_back({zone.zone_id, scene, name});
    }
    t.category = p.spec.action.value_or(static_cast<ActionCategory>(rng.between(0, 4)));
    const auto devs = devices_in(zone.zone_id);
    const std::string device = devs.empty() ? std::string("Lamp") : devs[r % devs.size()]->name;
    const auto subject = t.routine_id + "-a";
    const auto name = action_name(t.category, device);
    topo.scenes.push_back({subject, zone.zone_id, name});
    t.action = {zone.zone_id, subject, name};
    planned.push_back(std::move(p));
  }

  // Daily slots: the active window is cut into equal segments, one per
  // routine execution, and segments are dealt out in random order.
  std::vector<std::size_t> owners;
  for (std::size_t r = 0; r < planned.size(); ++r)
    for (int k = 0; k < planned[r].spec.times_per_day; ++k) owners.push_back(r);
  if (!owners.empty()) {
    const auto segment = (kWindowEnd - kWindowBegin) / static_cast<std::int64_t>(owners.size());
    rng.shuffle(owners);
    for (std::size_t s = 0; s < owners.size(); ++s) {
      planned[owners[s]].slot_centers.push_back(kWindowBegin + static_cast<std::int64_t>(s) * segment + segment / 2);
    }
    for (auto& p : planned) std::sort(p.slot_centers.begin(), p.slot_centers.end());
  }

  std::vector<EventIdentity> noise;
  for (int k = 0; k < cfg.noise_identities; ++k) {
    const auto zone = zone_of(static_cast<std::size_t>(k));
    const auto subject = home + "-n" + std::to_string(k + 1);
    const auto name = noise_names()[static_cast<std::size_t>(k) % noise_names().size()] + " " + zone.room_name +
                      " " + std::to_string(k + 1);
    topo.devices.push_back({subject, zone.zone_id, name, zone.zone_id + "-m"});
    noise.push_back({zone.zone_id, subject, name});
  }

  auto simulate = [&](Timestamp begin, int days, double forget, std::vector<EventRecord>& events, bool record) {
    const auto t0 = to_unix(begin);
    std::vector<std::pair<std::int64_t, std::int64_t>> spans;  // routine instances, first condition to last event
    for (int day = 0; day < days; ++day) {
      for (auto& p : planned) {
        for (const auto center : p.slot_centers) {
          const auto j = p.spec.jitter.count();
          auto t = t0 + day * kDay + center + rng.between(-j, j);
          RoutineOccurrence occ;
          occ.start = from_unix(t);
          for (std::size_t c = 0; c < p.truth.condition.size(); ++c) {
            if (c > 0) t += rng.between(20, kMaxConditionGap);
            events.push_back(make_event(from_unix(t), home, p.truth.condition[c], EventSource::button_click));
          }
          occ.last_condition = from_unix(t);
          t += rng.between(10, kMaxActionDelay);
          if (!rng.chance(forget)) {
            occ.action_at = from_unix(t);
            events.push_back(make_event(from_unix(t), home, p.truth.action, EventSource::button_click));
          }
          spans.emplace_back(to_unix(occ.start), to_unix(occ.action_at.value_or(occ.last_condition)));
          if (record) p.truth.occurrences.push_back(occ);
        }
      }
    }
    std::sort(spans.begin(), spans.end());
    auto inside_routine = [&](std::int64_t t) {
      auto it = std::upper_bound(spans.begin(), spans.end(), std::pair{t, std::numeric_limits<std::int64_t>::max()});
      return it != spans.begin() && std::prev(it)->second >= t;
    };
    if (cfg.noise_rate > 0 && !noise.empty()) {
      const double rate = cfg.noise_rate / 3600.0;
      const double end = static_cast<double>(days) * kDay;
      for (double at = rng.exponential(rate); at < end; at += rng.exponential(rate)) {
        const auto& id = noise[static_cast<std::size_t>(rng.between(0, noise.size() - 1))];
        const auto t = t0 + static_cast<std::int64_t>(at);
        if (inside_routine(t)) continue;  // routine instances stay uninterrupted
        events.push_back(make_event(from_unix(t), home, id, EventSource::sensor));
      }
    }
    std::sort(events.begin(), events.end(), event_order_less);
  };

  simulate(cfg.start, cfg.train_days, 0.0, out.train, false);
  simulate(cfg.start + Seconds{std::int64_t{cfg.train_days} * kDay}, cfg.days, cfg.forget_probability, out.test,
           true);
  for (auto& p : planned) {
    std::sort(p.truth.occurrences.begin(), p.truth.occurrences.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    out.routines.push_back(std::move(p.truth));
  }
  return out;
}

nlohmann::json optional_time(const std::optional<Timestamp>& t) {
  return t ? nlohmann::json(format_timestamp(*t)) : nlohmann::json(nullptr);
}

Timestamp time_from(const nlohmann::json& j) {
  const auto t = parse_timestamp(j.get<std::string>());
  if (!t) throw Error("parse_error", "bad timestamp in truth file: " + j.get<std::string>());
  return *t;
}

void write_lines(const std::filesystem::path& path, const std::vector<EventRecord>& events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path.string());
  for (const auto& e : events) out << event_to_json(e).dump() << '\n';
  if (!out) throw Error("io", "write failed for " + path.string());
}

bool by_time_then_home(const EventRecord& a, const EventRecord& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  if (a.home_id != b.home_id) return a.home_id < b.home_id;
  return event_order_less(a, b);
}

}  // namespace

void SimConfig::validate() const {
  if (homes < 1) throw Error("invalid_argument", "homes must be >= 1");
  if (zones_per_home < 1) throw Error("invalid_argument", "zones per home must be >= 1");
  if (devices_per_zone < 1) throw Error("invalid_argument", "devices per zone must be >= 1");
  if (days < 1) throw Error("invalid_argument", "days must be >= 1");
  if (train_days < 0) throw Error("invalid_argument", "train days must be >= 0");
  if (!(forget_probability >= 0.0 && forget_probability <= 1.0))
    throw Error("invalid_argument", "forget probability must be in [0, 1]");
  if (!(noise_rate >= 0.0) || !std::isfinite(noise_rate)) throw Error("invalid_argument", "noise rate must be >= 0");
  if (noise_identities < 0) throw Error("invalid_argument", "noise identities must be >= 0");
  std::int64_t needed = 0;
  for (const auto& r : effective_routines(*this)) {
    if (r.condition_events < 2) throw Error("invalid_argument", "a routine needs at least two condition events");
    if (r.times_per_day < 1) throw Error("invalid_argument", "times per day must be >= 1");
    if (r.jitter.count() < 0) throw Error("invalid_argument", "jitter must be >= 0");
    needed = std::max(needed, slot_length(r));
  }
  std::int64_t slots = 0;
  for (const auto& r : effective_routines(*this)) slots += r.times_per_day;
  if (slots > 0 && needed * slots > kWindowEnd - kWindowBegin) {
    throw Error("infeasible", "routines need " + std::to_string(needed * slots) + "s per day but only " +
                                  std::to_string(kWindowEnd - kWindowBegin) + "s are available");
  }
}

std::size_t GroundTruth::occurrence_count() const {
  std::size_t n = 0;
  for (const auto& r : routines) n += r.occurrences.size();
  return n;
}

std::size_t GroundTruth::forgotten_count() const {
  std::size_t n = 0;
  for (const auto& r : routines)
    for (const auto& o : r.occurrences) n += o.forgotten() ? 1 : 0;
  return n;
}

SimOutput generate(const SimConfig& cfg) {
  cfg.validate();
  std::vector<std::future<HomeOutput>> jobs;
  for (int h = 0; h < cfg.homes; ++h) {
    jobs.push_back(std::async(std::launch::async, [&cfg, h] { return generate_home(cfg, h); }));
  }
  SimOutput sim;
  sim.truth.homes = cfg.homes;
  sim.truth.days = cfg.days;
  sim.truth.forget_probability = cfg.forget_probability;
  sim.truth.test_start = cfg.start + Seconds{std::int64_t{cfg.train_days} * kDay};
  for (auto& job : jobs) {
    auto home = job.get();
    sim.train.insert(sim.train.end(), home.train.begin(), home.train.end());
    sim.test.insert(sim.test.end(), home.test.begin(), home.test.end());
    for (auto& r : home.routines) sim.truth.routines.push_back(std::move(r));
    sim.topology.emplace(home.topology.home_id, std::move(home.topology));
  }
  std::sort(sim.train.begin(), sim.train.end(), by_time_then_home);
  std::sort(sim.test.begin(), sim.test.end(), by_time_then_home);
  return sim;
}

std::vector<EventRecord> bench_corpus(std::size_t events, std::uint64_t seed, double noise_rate) {
  SimConfig cfg;
  cfg.seed = seed;
  cfg.homes = 1;
  cfg.train_days = 0;
  cfg.noise_rate = noise_rate;
  cfg.forget_probability = 0.0;
  const double per_day = 15.0 + noise_rate * 24.0;
  cfg.days = std::max(1, static_cast<int>(static_cast<double>(events) / per_day * 1.1) + 2);
  auto sim = generate(cfg);
  while (sim.test.size() < events) {
    cfg.days *= 2;
    sim = generate(cfg);
  }
  sim.test.resize(events);
  return std::move(sim.test);
}

void save_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path.string());
  out << nlohmann::json{{"type", "meta"},
                        {"homes", truth.homes},
                        {"days", truth.days},
                        {"forget_probability", truth.forget_probability},
                        {"test_start", format_timestamp(truth.test_start)}}
             .dump()
      << '\n';
  for (const auto& r : truth.routines) {
    auto cond = nlohmann::json::array();
    for (const auto& c : r.condition) cond.push_back(identity_to_json(c));
    auto occ = nlohmann::json::array();
    for (const auto& o : r.occurrences) {
      occ.push_back({{"start", format_timestamp(o.start)},
                     {"last_condition", format_timestamp(o.last_condition)},
                     {"action_at", optional_time(o.action_at)}});
    }
    out << nlohmann::json{{"type", "routine"},
                          {"home_id", r.home_id},
                          {"routine_id", r.routine_id},
                          {"condition", cond},
                          {"action", identity_to_json(r.action)},
                          {"category", to_string(r.category)},
                          {"occurrences", occ}}
               .dump()
        << '\n';
  }
  if (!out) throw Error("io", "write failed for " + path.string());
}

GroundTruth load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io", "cannot open truth file " + path.string());
  GroundTruth truth;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "meta") {
        truth.homes = j.at("homes").get<int>();
        truth.days = j.at("days").get<int>();
        truth.forget_probability = j.at("forget_probability").get<double>();
        truth.test_start = time_from(j.at("test_start"));
      } else if (type == "routine") {
        RoutineTruth r;
        r.home_id = j.at("home_id").get<std::string>();
        r.routine_id = j.at("routine_id").get<std::string>();
        for (const auto& c : j.at("condition")) r.condition.push_back(identity_from_json(c));
        r.action = identity_from_json(j.at("action"));
        const auto cat = parse_action_category(j.at("category").get<std::string>());
        if (!cat) throw Error("parse_error", "unknown category");
        r.category = *cat;
        for (const auto& o : j.at("occurrences")) {
          RoutineOccurrence occ;
          occ.start = time_from(o.at("start"));
          occ.last_condition = time_from(o.at("last_condition"));
          if (!o.at("action_at").is_null()) occ.action_at = time_from(o.at("action_at"));
          r.occurrences.push_back(occ);
        }
        truth.routines.push_back(std::move(r));
      } else {
        throw Error("parse_error", "unknown record type " + type);
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("parse_error", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return truth;
}

void write_corpus(const SimOutput& sim, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_lines(dir / "train.jsonl", sim.train);
  write_lines(dir / "test.jsonl", sim.test);
  save_truth(sim.truth, dir / "truth.jsonl");
  save_topologies((dir / "topology.json").string(), sim.topology);
}

double recs_per_day_per_home(std::size_t recommendations, int days, int homes) {
  if (days <= 0 || homes <= 0) return 0.0;
  return static_cast<double>(recommendations) / (static_cast<double>(days) * homes);
}

std::vector<bool> true_positive_flags(std::span<const Recommendation> recs, const GroundTruth& truth, Seconds window) {
  struct Slot {
    Timestamp last_condition;
    bool used = false;
  };
  std::map<std::pair<std::string, EventIdentity>, std::vector<Slot>> forgotten;
  for (const auto& r : truth.routines) {
    auto& slots = forgotten[{r.home_id, r.action}];
    for (const auto& o : r.occurrences)
      if (o.forgotten()) slots.push_back({o.last_condition});
  }
  for (auto& [key, slots] : forgotten) {
    std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) { return a.last_condition < b.last_condition; });
  }

  std::vector<std::size_t> order(recs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return recs[a].created_at < recs[b].created_at; });

  std::vector<bool> flags(recs.size(), false);
  for (const auto i : order) {
    const auto& rec = recs[i];
    const auto it = forgotten.find({rec.home_id, rec.action});
    if (it == forgotten.end()) continue;
    for (auto& slot : it->second) {
      if (slot.used || rec.created_at < slot.last_condition) continue;
      if (rec.created_at - slot.last_condition > window) continue;
      slot.used = true;
      flags[i] = true;
      break;
    }
  }
  return flags;
}

Metrics evaluate(std::span<const Recommendation> recs, const GroundTruth& truth, Seconds window) {
  Metrics m;
  m.recommendations = recs.size();
  const auto flags = true_positive_flags(recs, truth, window);
  m.true_positives = static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
  m.detected = m.true_positives;
  m.forgotten = truth.forgotten_count();
  if (m.forgotten > 0) m.recall = static_cast<double>(m.detected) / static_cast<double>(m.forgotten);
  if (m.recommendations > 0)
    m.precision = static_cast<double>(m.true_positives) / static_cast<double>(m.recommendations);
  m.recs_per_day_per_home = recs_per_day_per_home(m.recommendations, truth.days, truth.homes);
  return m;
}

std::string Metrics::table() const {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("null");
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << *v;
    return os.str();
  };
  std::ostringstream os;
  os << "recommendations        " << recommendations << '\n'
     << "true_positives         " << true_positives << '\n'
     << "forgotten              " << forgotten << '\n'
     << "detected               " << detected << '\n'
     << "recall                 " << opt(recall) << '\n'
     << "precision              " << opt(precision) << '\n'
     << "recs_per_day_per_home  " << opt(recs_per_day_per_home) << '\n';
  return os.str();
}

nlohmann::json Metrics::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"recommendations", recommendations},
          {"true_positives", true_positives},
          {"forgotten", forgotten},
          {"detected", detected},
          {"recall", opt(recall)},
          {"precision", opt(precision)},
          {"recs_per_day_per_home", recs_per_day_per_home}};
}

ScriptedInhabitant::ScriptedInhabitant(const GroundTruth& truth, InhabitantConfig cfg) : truth_(truth), cfg_(cfg) {
  if (!(cfg_.answer_probability >= 0.0 && cfg_.answer_probability <= 1.0))
    throw Error("invalid_argument", "answer probability must be in [0, 1]");
}

std::vector<std::optional<Verdict>> ScriptedInhabitant::respond(std::span<const Recommendation> recs) const {
  const auto flags = true_positive_flags(recs, truth_, cfg_.window);
  std::vector<std::optional<Verdict>> out(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto draw = unit_from_bits(splitmix64(cfg_.seed ^ fnv1a(recs[i].recommendation_id)));
    if (draw < cfg_.answer_probability) out[i] = flags[i] ? Verdict::useful : Verdict::not_useful;
  }
  return out;
}

std::size_t ScriptedInhabitant::answer(std::span<const Recommendation> recs, FeedbackLedger& ledger) const {
  const auto verdicts = respond(recs);
  std::vector<std::size_t> order(recs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return recs[a].created_at < recs[b].created_at; });
  std::size_t answered = 0;
  Timestamp last{};
  for (const auto i : order) {
    ledger.add_recommendation(recs[i]);
    last = std::max(last, recs[i].created_at);
  }
  for (const auto i : order) {
    if (!verdicts[i]) continue;
    ledger.record(recs[i].recommendation_id, *verdicts[i], recs[i].created_at + cfg_.reply_delay);
    ++answered;
  }
  if (!recs.empty()) ledger.expire(last + ledger.config().expiry + Seconds{1});
  return answered;
}

}  // namespace ecorec
