#pragma once

#include <cstdint>
#include <string>

namespace flowmill {

// Timestamps are carried as microseconds since the Unix epoch (UTC).
// 0 means "not set". They are informational only and excluded from every
// determinism check in the engine.
int64_t now_micros();

// Formats as ISO 8601 with microsecond precision: 2026-08-23T10:15:30.123456Z
std::string format_utc(int64_t micros);

// Inverse of format_utc. Returns 0 for an empty or malformed string.
int64_t parse_utc(const std::string& iso);

}  // namespace flowmill
