#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace ecorec {

using Timestamp = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

// Accepts "YYYY-MM-DDTHH:MM:SS" or "YYYY-MM-DD HH:MM:SS", optional fractional
// seconds (truncated) and an optional "Z" / "+HH:MM" / "-HHMM" suffix. Values
// without an offset are taken as UTC.
std::optional<Timestamp> parse_timestamp(std::string_view text);

// Canonical form, always "YYYY-MM-DDTHH:MM:SSZ".
std::string format_timestamp(Timestamp ts);

// "600s", "10m", "2h", "1d" or a bare number of seconds.
std::optional<Seconds> parse_duration(std::string_view text);

inline Timestamp from_unix(std::int64_t secs) { return Timestamp{Seconds{secs}}; }
inline std::int64_t to_unix(Timestamp ts) { return ts.time_since_epoch().count(); }

}  // namespace ecorec
