#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ecorec/domain.hpp"
#include "ecorec/event_store.hpp"

namespace ecorec {

enum class LogFormat { jsonl, csv };

std::optional<LogFormat> parse_log_format(std::string_view s);

struct ParseError {
  std::size_t line_no = 0;
  std::string reason;
};

using ParseResult = std::variant<EventRecord, ParseError>;

// Column order of a CSV log; the canonical order is used when a file has no
// header row.
struct CsvColumns {
  int timestamp = 0, home_id = 1, zone_id = 2, subject_id = 3, event_name = 4, source = 5;

  // Nullopt when the line is not a header (first field is not a known column).
  static std::optional<CsvColumns> from_header(std::string_view line);
};

ParseResult parse_line(std::string_view line, LogFormat format, std::size_t line_no = 0,
                       const CsvColumns& columns = {});

ParseResult parse_json_record(const nlohmann::json& j, std::size_t line_no = 0);

struct IngestOptions {
  std::optional<Timestamp> min_date;
  std::optional<Timestamp> max_date;
  std::size_t max_error_samples = 20;
};

struct IngestReport {
  std::uint64_t lines = 0;
  std::uint64_t accepted = 0;
  std::uint64_t rejected = 0;
  std::uint64_t duplicates = 0;
  std::map<std::string, std::uint64_t> accepted_per_home;
  std::vector<ParseError> errors;  // first max_error_samples rejections

  std::string summary() const;
  nlohmann::json to_json() const;
};

// Parses, validates and appends one log file to the store. Per-line problems
// are tallied in the report; an unreadable file throws ecorec::Error.
IngestReport load_log(const std::filesystem::path& file, LogFormat format, EventStore& store,
                      const IngestOptions& options = {});

// Same checks as load_log for records that are already parsed (service intake).
IngestReport ingest_records(std::vector<EventRecord> records, EventStore& store, const IngestOptions& options = {});

// Interchange JSON for one event.
nlohmann::json event_to_json(const EventRecord& e);

}  // namespace ecorec
