#include "ecorec/ingest.hpp"

#include <fstream>
#include <sstream>

#include "ecorec/error.hpp"

namespace ecorec {

namespace {

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else if (c != '\r') {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

ParseError error_at(std::size_t line_no, std::string reason) { return ParseError{line_no, std::move(reason)}; }

struct Pending {
  EventRecord record;
  std::size_t line_no;
};

void commit(std::vector<Pending> pending, EventStore& store, const IngestOptions& options, IngestReport& report) {
  auto reject = [&](std::size_t line_no, std::string reason) {
    ++report.rejected;
    if (report.errors.size() < options.max_error_samples) report.errors.push_back({line_no, std::move(reason)});
  };

  std::map<std::string, std::vector<EventRecord>> by_home;
  const auto& topology = store.topology();
  for (auto& p : pending) {
    const auto& e = p.record;
    if (options.min_date && e.timestamp < *options.min_date) {
      reject(p.line_no, "timestamp before min date");
      continue;
    }
    if (options.max_date && e.timestamp > *options.max_date) {
      reject(p.line_no, "timestamp after max date");
      continue;
    }
    if (!topology.empty()) {
      const auto home = topology.find(e.home_id);
      if (home == topology.end()) {
        reject(p.line_no, "unknown home " + e.home_id);
        continue;
      }
      bool zone_known = false;
      for (const auto& z : home->second.zones) zone_known = zone_known || z.zone_id == e.zone_id;
      if (!zone_known) {
        reject(p.line_no, "unknown zone " + e.zone_id);
        continue;
      }
    }
    by_home[e.home_id].push_back(std::move(p.record));
  }

  for (auto& [home, events] : by_home) {
    const auto res = store.append(home, events);
    report.accepted += res.accepted;
    report.duplicates += res.duplicates;
    if (res.accepted > 0) report.accepted_per_home[home] += res.accepted;
  }
}

}  // namespace

std::optional<LogFormat> parse_log_format(std::string_view s) {
  if (s == "jsonl") return LogFormat::jsonl;
  if (s == "csv") return LogFormat::csv;
  return std::nullopt;
}

std::optional<CsvColumns> CsvColumns::from_header(std::string_view line) {
  const auto fields = split_csv(line);
  CsvColumns cols{-1, -1, -1, -1, -1, -1};
  bool any = false;
  for (int i = 0; i < static_cast<int>(fields.size()); ++i) {
    const auto& f = fields[static_cast<std::size_t>(i)];
    int* slot = f == "timestamp"    ? &cols.timestamp
                : f == "home_id"    ? &cols.home_id
                : f == "zone_id"    ? &cols.zone_id
                : f == "subject_id" ? &cols.subject_id
                : f == "event_name" ? &cols.event_name
                : f == "source"     ? &cols.source
                                    : nullptr;
    if (slot) {
      *slot = i;
      any = true;
    }
  }
  if (!any) return std::nullopt;
  return cols;
}

ParseResult parse_json_record(const nlohmann::json& j, std::size_t line_no) {
  if (!j.is_object()) return error_at(line_no, "record is not an object");
  EventRecord e;
  auto field = [&](const char* name, std::string& out) -> std::optional<ParseError> {
    const auto it = j.find(name);
    if (it == j.end() || it->is_null()) return error_at(line_no, std::string("missing ") + name);
    if (!it->is_string()) return error_at(line_no, std::string("bad ") + name);
    out = it->get<std::string>();
    return std::nullopt;
  };
  std::string ts;
  if (auto err = field("timestamp", ts)) return *err;
  const auto parsed = parse_timestamp(ts);
  if (!parsed) return error_at(line_no, "bad timestamp");
  e.timestamp = *parsed;
  if (auto err = field("home_id", e.home_id)) return *err;
  if (auto err = field("zone_id", e.zone_id)) return *err;
  if (auto err = field("subject_id", e.subject_id)) return *err;
  if (auto err = field("event_name", e.event_name)) return *err;
  if (const auto it = j.find("source"); it != j.end() && !it->is_null()) {
    const auto source = it->is_string() ? parse_event_source(it->get<std::string>()) : std::nullopt;
    if (!source) return error_at(line_no, "bad source");
    e.source = *source;
  }
  return e;
}

ParseResult parse_line(std::string_view line, LogFormat format, std::size_t line_no, const CsvColumns& columns) {
  if (format == LogFormat::jsonl) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) return error_at(line_no, "malformed json");
    return parse_json_record(j, line_no);
  }

  const auto fields = split_csv(line);
  auto get = [&](int idx) -> const std::string* {
    if (idx < 0 || static_cast<std::size_t>(idx) >= fields.size()) return nullptr;
    const auto& f = fields[static_cast<std::size_t>(idx)];
    return f.empty() ? nullptr : &f;
  };
  EventRecord e;
  const auto* ts = get(columns.timestamp);
  if (!ts) return error_at(line_no, "missing timestamp");
  const auto parsed = parse_timestamp(*ts);
  if (!parsed) return error_at(line_no, "bad timestamp");
  e.timestamp = *parsed;
  const std::pair<int, std::string*> required[] = {{columns.home_id, &e.home_id},
                                                   {columns.zone_id, &e.zone_id},
                                                   {columns.subject_id, &e.subject_id},
                                                   {columns.event_name, &e.event_name}};
  const char* names[] = {"home_id", "zone_id", "subject_id", "event_name"};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto* v = get(required[i].first);
    if (!v) return error_at(line_no, std::string("missing ") + names[i]);
    *required[i].second = *v;
  }
  if (const auto* src = get(columns.source)) {
    const auto source = parse_event_source(*src);
    if (!source) return error_at(line_no, "bad source");
    e.source = *source;
  }
  return e;
}

IngestReport load_log(const std::filesystem::path& file, LogFormat format, EventStore& store,
                      const IngestOptions& options) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("io", "cannot read log file " + file.string());

  IngestReport report;
  std::vector<Pending> pending;
  CsvColumns columns;
  std::string line;
  std::size_t line_no = 0;
  bool first_record_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (format == LogFormat::csv && first_record_line) {
      first_record_line = false;
      if (auto header = CsvColumns::from_header(line)) {
        columns = *header;
        continue;
      }
    }
    first_record_line = false;
    ++report.lines;
    auto result = parse_line(line, format, line_no, columns);
    if (auto* err = std::get_if<ParseError>(&result)) {
      ++report.rejected;
      if (report.errors.size() < options.max_error_samples) report.errors.push_back(std::move(*err));
      continue;
    }
    pending.push_back({std::move(std::get<EventRecord>(result)), line_no});
  }
  commit(std::move(pending), store, options, report);
  return report;
}

IngestReport ingest_records(std::vector<EventRecord> records, EventStore& store, const IngestOptions& options) {
  IngestReport report;
  report.lines = records.size();
  std::vector<Pending> pending;
  pending.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) pending.push_back({std::move(records[i]), i + 1});
  commit(std::move(pending), store, options, report);
  return report;
}

std::string IngestReport::summary() const {
  std::ostringstream os;
  os << "ingest lines=" << lines << " accepted=" << accepted << " rejected=" << rejected
     << " duplicates=" << duplicates << " homes=" << accepted_per_home.size();
  return os.str();
}

nlohmann::json IngestReport::to_json() const {
  nlohmann::json j{{"lines", lines}, {"accepted", accepted}, {"rejected", rejected}, {"duplicates", duplicates}};
  j["accepted_per_home"] = accepted_per_home;
  auto& errs = j["errors"] = nlohmann::json::array();
  for (const auto& e : errors) errs.push_back({{"line", e.line_no}, {"reason", e.reason}});
  return j;
}

nlohmann::json event_to_json(const EventRecord& e) {
  return {{"timestamp", format_timestamp(e.timestamp)},
          {"home_id", e.home_id},
          {"zone_id", e.zone_id},
          {"subject_id", e.subject_id},
          {"event_name", e.event_name},
          {"source", std::string(to_string(e.source))}};
}

}  // namespace ecorec
