#include "ecorec/event_store.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "ecorec/error.hpp"
#include "ecorec/hash.hpp"

namespace ecorec {

namespace fs = std::filesystem;

std::string to_hex(std::uint64_t v, int width) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%0*llx", width, static_cast<unsigned long long>(v));
  return buf;
}

namespace {

void escape_into(std::string& out, std::string_view field) {
  for (const char c : field) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
}

std::string unescape(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] == '\\' && i + 1 < field.size()) {
      const char n = field[++i];
      out.push_back(n == 't' ? '\t' : n == 'n' ? '\n' : n == 'r' ? '\r' : n);
    } else {
      out.push_back(field[i]);
    }
  }
  return out;
}

std::string safe_file_stem(const std::string& home_id) {
  std::string stem;
  for (const char c : home_id) {
    const auto uc = static_cast<unsigned char>(c);
    stem.push_back(std::isalnum(uc) || c == '-' || c == '_' ? c : '_');
  }
  if (stem.size() > 48) stem.resize(48);
  return stem + "-" + to_hex(Fnv1a().add(home_id).value(), 8);
}

void write_atomically(const fs::path& target, const std::string& contents) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io", "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("io", "short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

}  // namespace

std::string encode_store_line(const EventRecord& e) {
  std::string line = std::to_string(to_unix(e.timestamp));
  line.push_back('\t');
  escape_into(line, e.zone_id);
  line.push_back('\t');
  escape_into(line, e.subject_id);
  line.push_back('\t');
  escape_into(line, e.event_name);
  line.push_back('\t');
  line += to_string(e.source);
  return line;
}

std::optional<EventRecord> decode_store_line(std::string_view line, const std::string& home_id) {
  std::string_view fields[5];
  std::size_t n = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size() && n < 5; ++i) {
    if (i == line.size() || line[i] == '\t') {
      fields[n++] = line.substr(start, i - start);
      start = i + 1;
    }
  }
  if (n != 5) return std::nullopt;
  std::int64_t secs = 0;
  auto [ptr, ec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), secs);
  if (ec != std::errc{} || ptr != fields[0].data() + fields[0].size()) return std::nullopt;
  const auto source = parse_event_source(fields[4]);
  if (!source) return std::nullopt;
  EventRecord e;
  e.timestamp = from_unix(secs);
  e.home_id = home_id;
  e.zone_id = unescape(fields[1]);
  e.subject_id = unescape(fields[2]);
  e.event_name = unescape(fields[3]);
  e.source = *source;
  return e;
}

EventStore::EventStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_ / "homes");
  load_index();
  if (fs::exists(dir_ / "topology.json")) topology_ = load_topologies((dir_ / "topology.json").string());
}

void EventStore::load_index() {
  const fs::path path = dir_ / "index.json";
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("io", "corrupt store index " + path.string() + ": " + e.what());
  }
  if (j.value("version", 0) != 1) throw Error("io", "unsupported store index version in " + path.string());
  for (const auto& [home, h] : j.at("homes").items()) {
    HomeEntry entry;
    entry.count = h.at("events").get<std::uint64_t>();
    if (h.contains("watermark")) entry.watermark = from_unix(h.at("watermark").get<std::int64_t>());
    entry.generation = h.at("generation").get<std::uint64_t>();
    entry.bytes = h.at("bytes").get<std::uint64_t>();
    entry.file = h.at("file").get<std::string>();
    index_.emplace(home, std::move(entry));
  }
}

void EventStore::write_index() const {
  nlohmann::json j;
  j["version"] = 1;
  auto& homes = j["homes"] = nlohmann::json::object();
  for (const auto& [home, entry] : index_) {
    nlohmann::json h{{"events", entry.count}, {"generation", entry.generation}, {"bytes", entry.bytes}, {"file", entry.file}};
    if (entry.watermark) h["watermark"] = to_unix(*entry.watermark);
    homes[home] = std::move(h);
  }
  write_atomically(dir_ / "index.json", j.dump(1) + "\n");
}

std::vector<std::string> EventStore::homes() const {
  std::lock_guard lock(index_mutex_);
  std::vector<std::string> out;
  for (const auto& [home, entry] : index_) out.push_back(home);
  return out;
}

std::uint64_t EventStore::event_count(const std::string& home_id) const {
  std::lock_guard lock(index_mutex_);
  const auto it = index_.find(home_id);
  return it == index_.end() ? 0 : it->second.count;
}

std::optional<Timestamp> EventStore::watermark(const std::string& home_id) const {
  std::lock_guard lock(index_mutex_);
  const auto it = index_.find(home_id);
  return it == index_.end() ? std::nullopt : it->second.watermark;
}

std::shared_ptr<const std::vector<EventRecord>> EventStore::read_home(const std::string& home_id,
                                                                      const HomeEntry& entry) const {
  auto events = std::make_shared<std::vector<EventRecord>>();
  events->reserve(entry.count);
  std::ifstream in(dir_ / "homes" / entry.file, std::ios::binary);
  if (!in) throw Error("io", "missing data file for home " + home_id);
  std::string line;
  while (events->size() < entry.count && std::getline(in, line)) {
    auto e = decode_store_line(line, home_id);
    if (!e) throw Error("io", "corrupt data file for home " + home_id);
    events->push_back(std::move(*e));
  }
  if (events->size() != entry.count) throw Error("io", "truncated data file for home " + home_id);
  return events;
}

std::shared_ptr<const std::vector<EventRecord>> EventStore::events(const std::string& home_id) const {
  std::lock_guard lock(index_mutex_);
  const auto it = index_.find(home_id);
  if (it == index_.end()) return std::make_shared<const std::vector<EventRecord>>();
  if (!it->second.cache) it->second.cache = read_home(home_id, it->second);
  return it->second.cache;
}

std::mutex& EventStore::home_mutex(const std::string& home_id) {
  std::lock_guard lock(locks_mutex_);
  auto& slot = home_locks_[home_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

StoreBatchResult EventStore::append(const std::string& home_id, std::span<const EventRecord> batch) {
  std::lock_guard home_lock(home_mutex(home_id));

  std::vector<EventRecord> incoming(batch.begin(), batch.end());
  for (const auto& e : incoming) {
    if (e.home_id != home_id) throw Error("invalid_argument", "event for home " + e.home_id + " in batch for " + home_id);
  }
  std::sort(incoming.begin(), incoming.end(), event_order_less);

  StoreBatchResult result;
  const auto unique_end = std::unique(incoming.begin(), incoming.end());
  result.duplicates += static_cast<std::uint64_t>(incoming.end() - unique_end);
  incoming.erase(unique_end, incoming.end());

  const auto existing = events(home_id);

  // Both sides are sorted by the same total order, so a record already in the
  // store sits exactly where the merge would place it.
  std::vector<EventRecord> fresh;
  fresh.reserve(incoming.size());
  {
    auto it = existing->begin();
    for (auto& e : incoming) {
      it = std::lower_bound(it, existing->end(), e, event_order_less);
      if (it != existing->end() && *it == e) {
        ++result.duplicates;
      } else {
        fresh.push_back(std::move(e));
      }
    }
  }
  result.accepted = fresh.size();
  if (fresh.empty()) return result;

  HomeEntry entry;
  {
    std::lock_guard lock(index_mutex_);
    if (auto it = index_.find(home_id); it != index_.end()) entry = it->second;
  }

  const bool in_order = existing->empty() || !event_order_less(fresh.front(), existing->back());
  auto merged = std::make_shared<std::vector<EventRecord>>();
  merged->reserve(existing->size() + fresh.size());

  std::string payload;
  std::string stale_file;
  if (in_order && !entry.file.empty()) {
    merged->insert(merged->end(), existing->begin(), existing->end());
    merged->insert(merged->end(), fresh.begin(), fresh.end());
    for (const auto& e : fresh) payload += encode_store_line(e) + '\n';
    const fs::path path = dir_ / "homes" / entry.file;
    // Drop any uncommitted tail left by an interrupted append.
    fs::resize_file(path, entry.bytes);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw Error("io", "cannot append to " + path.string());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw Error("io", "short write to " + path.string());
    entry.bytes += payload.size();
  } else {
    std::merge(existing->begin(), existing->end(), fresh.begin(), fresh.end(), std::back_inserter(*merged),
               event_order_less);
    payload.reserve(merged->size() * 48);
    for (const auto& e : *merged) payload += encode_store_line(e) + '\n';
    stale_file = entry.file;
    entry.generation += 1;
    entry.file = safe_file_stem(home_id) + "." + std::to_string(entry.generation) + ".tsv";
    write_atomically(dir_ / "homes" / entry.file, payload);
    entry.bytes = payload.size();
  }

  {
    std::lock_guard lock(index_mutex_);
    entry.count = merged->size();
    entry.watermark = merged->back().timestamp;
    entry.cache = merged;
    index_[home_id] = entry;
    write_index();
  }
  if (!stale_file.empty()) {
    std::error_code ec;
    fs::remove(dir_ / "homes" / stale_file, ec);
  }
  return result;
}

void EventStore::set_topology(TopologyMap topology) {
  save_topologies((dir_ / "topology.json").string(), topology);
  topology_ = std::move(topology);
}

}  // namespace ecorec
