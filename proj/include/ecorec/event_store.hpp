#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecorec/domain.hpp"
#include "ecorec/topology.hpp"

namespace ecorec {

struct StoreBatchResult {
  std::uint64_t accepted = 0;
  std::uint64_t duplicates = 0;
};

/// Local per-home event store.
///
/// Layout under the store directory:
///   index.json            committed event count, watermark and data file per home
///   homes/<home>.<gen>.tsv one canonical line per event, in storage order
///   topology.json         optional home topology used for reference checks
///
/// A batch is committed by writing the data file first and replacing
/// index.json afterwards, so readers that go through the index only ever see
/// complete batches. Exact duplicates (every field equal) are dropped.
class EventStore {
 public:
  explicit EventStore(std::filesystem::path dir);

  EventStore(const EventStore&) = delete;
  EventStore& operator=(const EventStore&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  std::vector<std::string> homes() const;
  std::uint64_t event_count(const std::string& home_id) const;
  std::optional<Timestamp> watermark(const std::string& home_id) const;

  // Immutable snapshot of one home's events in storage order.
  std::shared_ptr<const std::vector<EventRecord>> events(const std::string& home_id) const;

  // Adds events of a single home. Sorts and deduplicates; one writer per home.
  StoreBatchResult append(const std::string& home_id, std::span<const EventRecord> batch);

  const TopologyMap& topology() const { return topology_; }
  bool has_topology() const { return !topology_.empty(); }
  void set_topology(TopologyMap topology);

 private:
  struct HomeEntry {
    std::uint64_t count = 0;
    std::optional<Timestamp> watermark;
    std::uint64_t generation = 0;
    std::uint64_t bytes = 0;  // committed size of the data file
    std::string file;
    mutable std::shared_ptr<const std::vector<EventRecord>> cache;
  };

  void load_index();
  void write_index() const;
  std::shared_ptr<const std::vector<EventRecord>> read_home(const std::string& home_id, const HomeEntry& entry) const;
  std::mutex& home_mutex(const std::string& home_id);

  std::filesystem::path dir_;
  TopologyMap topology_;
  std::map<std::string, HomeEntry> index_;
  mutable std::mutex index_mutex_;
  std::mutex locks_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>> home_locks_;
};

// Tab-separated storage line: unix seconds, zone, subject, name, source.
std::string encode_store_line(const EventRecord& e);
std::optional<EventRecord> decode_store_line(std::string_view line, const std::string& home_id);

}  // namespace ecorec
