#include "flowcast/time_util.hpp"

#include <cstdio>

namespace flowcast {

// Howard Hinnant's days-from-civil algorithm.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& year, int& month, int& day) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  day = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  month = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  year = static_cast<int>(y + (month <= 2));
}

namespace {

bool read_int(const std::string& s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

bool valid_date(int y, int mo, int d) {
  if (y < 1 || mo < 1 || mo > 12 || d < 1 || d > 31) return false;
  static const int lens[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  int max_d = lens[mo - 1];
  if (mo == 2 && ((y % 4 == 0 && y % 100 != 0) || y % 400 == 0)) max_d = 29;
  return d <= max_d;
}

}  // namespace

std::optional<Minutes> parse_datetime(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  std::size_t time_pos = 0;

  if (text.size() >= 16 && text[4] == '-' && text[7] == '-' &&
      (text[10] == 'T' || text[10] == ' ')) {
    if (!read_int(text, 0, 4, y) || !read_int(text, 5, 2, mo) ||
        !read_int(text, 8, 2, d))
      return std::nullopt;
    time_pos = 11;
  } else if (text.size() >= 16 && text[2] == '/' && text[5] == '/' &&
             text[10] == ' ') {
    if (!read_int(text, 0, 2, mo) || !read_int(text, 3, 2, d) ||
        !read_int(text, 6, 4, y))
      return std::nullopt;
    time_pos = 11;
  } else {
    return std::nullopt;
  }

  if (!read_int(text, time_pos, 2, h) || text.size() < time_pos + 5 ||
      text[time_pos + 2] != ':' || !read_int(text, time_pos + 3, 2, mi))
    return std::nullopt;
  // Optional :SS suffix, truncated.
  if (text.size() > time_pos + 5 && text[time_pos + 5] != ':') return std::nullopt;
  if (text.size() > time_pos + 5) {
    int sec = 0;
    if (!read_int(text, time_pos + 6, 2, sec) || text.size() != time_pos + 8)
      return std::nullopt;
  }

  if (!valid_date(y, mo, d) || h > 23 || mi > 59) return std::nullopt;
  return days_from_civil(y, mo, d) * 1440 + h * 60 + mi;
}

std::string format_datetime(Minutes t) {
  const std::int64_t days = day_index(t);
  const int mod = static_cast<int>(t - days * 1440);
  int y, mo, d;
  civil_from_days(days, y, mo, d);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d", y, mo, d,
                mod / 60, mod % 60);
  return buf;
}

int hour_of_day(Minutes t) {
  const std::int64_t days = day_index(t);
  return static_cast<int>((t - days * 1440) / 60);
}

std::int64_t day_index(Minutes t) {
  return t >= 0 ? t / 1440 : (t - 1439) / 1440;
}

}  // namespace flowcast
