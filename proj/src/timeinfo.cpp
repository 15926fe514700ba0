// SPDX-License-Identifier: Apache-2.0
#include "geomae/timeinfo.hpp"

#include <cstdio>

#include "geomae/error.hpp"

namespace geomae {

std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                       static_cast<unsigned>(d) - 1u;
  const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

CivilTime civil_from_days(std::int64_t z) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  CivilTime t;
  t.year = static_cast<int>(y + (m <= 2));
  t.month = static_cast<int>(m);
  t.day = static_cast<int>(d);
  return t;
}

std::int64_t minutes_from_epoch(const CivilTime& t) {
  return days_from_civil(t.year, t.month, t.day) * 1440 + t.hour * 60 + t.minute;
}

CivilTime civil_from_minutes(std::int64_t minutes) {
  std::int64_t days = minutes / 1440;
  std::int64_t rem = minutes % 1440;
  if (rem < 0) {
    rem += 1440;
    days -= 1;
  }
  CivilTime t = civil_from_days(days);
  t.hour = static_cast<int>(rem / 60);
  t.minute = static_cast<int>(rem % 60);
  return t;
}

bool civil_less(const CivilTime& a, const CivilTime& b) {
  return minutes_from_epoch(a) < minutes_from_epoch(b);
}

int weekday(const CivilTime& t) {
  // 1970-01-01 was a Thursday (index 3 with Monday = 0).
  const std::int64_t days = days_from_civil(t.year, t.month, t.day);
  return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

CivilTime add_minutes(const CivilTime& t, std::int64_t minutes) {
  return civil_from_minutes(minutes_from_epoch(t) + minutes);
}

std::string format_civil(const CivilTime& t) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d %02d:%02d", t.year, t.month, t.day,
                t.hour, t.minute);
  return buf;
}

CivilTime parse_civil(const std::string& s) {
  CivilTime t;
  char sep = ' ';
  int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d", &t.year, &t.month, &t.day, &sep,
                      &t.hour, &t.minute);
  if (n == 3) {
    t.hour = 0;
    t.minute = 0;
  } else if (n != 6 || (sep != ' ' && sep != 'T')) {
    throw ParseError("cannot parse timestamp '" + s + "', expected YYYY-MM-DD[ HH:MM]");
  }
  if (t.month < 1 || t.month > 12 || t.day < 1 || t.day > 31 || t.hour < 0 || t.hour > 23 ||
      t.minute < 0 || t.minute > 59) {
    throw ParseError("timestamp '" + s + "' is out of range");
  }
  return t;
}

}  // namespace geomae
