#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace flowcast {

// Naive local datetime at minute resolution, stored as minutes since
// 1970-01-01 00:00. No timezone handling; all inputs are treated as local.
using Minutes = std::int64_t;

// Accepts "YYYY-MM-DDTHH:MM[:SS]", "YYYY-MM-DD HH:MM[:SS]" and
// "MM/DD/YYYY HH:MM[:SS]". Seconds are parsed and truncated.
std::optional<Minutes> parse_datetime(const std::string& text);

// "YYYY-MM-DDTHH:MM"
std::string format_datetime(Minutes t);

int hour_of_day(Minutes t);     // 0..23
std::int64_t day_index(Minutes t);  // civil day number (floor of t / 1440)

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
std::int64_t days_from_civil(int year, int month, int day);
void civil_from_days(std::int64_t z, int& year, int& month, int& day);

}  // namespace flowcast
