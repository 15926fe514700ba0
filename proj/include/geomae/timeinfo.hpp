// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geomae {

// Calendar timestamp on an equally spaced grid. Minute resolution is enough
// for sensor feeds.
struct CivilTime {
  int year = 1970;
  int month = 1;  // 1..12
  int day = 1;    // 1..31
  int hour = 0;   // 0..23
  int minute = 0; // 0..59

  friend bool operator==(const CivilTime&, const CivilTime&) = default;
};

// Days since 1970-01-01 (proleptic Gregorian).
std::int64_t days_from_civil(int year, int month, int day);
CivilTime civil_from_days(std::int64_t days);

std::int64_t minutes_from_epoch(const CivilTime& t);
CivilTime civil_from_minutes(std::int64_t minutes);

bool civil_less(const CivilTime& a, const CivilTime& b);

// 0 = Monday ... 6 = Sunday.
int weekday(const CivilTime& t);

CivilTime add_minutes(const CivilTime& t, std::int64_t minutes);

// "YYYY-MM-DD HH:MM"
std::string format_civil(const CivilTime& t);
CivilTime parse_civil(const std::string& s);

// Per-step calendar context for one sample: N_in history steps followed
// immediately by N_out horizon steps at the dataset's sampling interval.
struct TimeStamps {
  std::vector<CivilTime> history;
  std::vector<CivilTime> horizon;
};

}  // namespace geomae
