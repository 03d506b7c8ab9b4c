#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "tspot/error.hpp"

namespace tspot {

/// Seconds since 1970-01-01T00:00:00, local clock time of the station
/// (no time zone handling).
using Timestamp = std::int64_t;

inline constexpr Timestamp kGridSeconds = 15 * 60;
inline constexpr Timestamp kDaySeconds = 24 * 60 * 60;

struct CivilTime {
  int year;
  unsigned month;
  unsigned day;
  int hour;
  int minute;
  int second;
};

inline CivilTime to_civil(Timestamp ts) {
  using namespace std::chrono;
  const auto days = static_cast<int>(
      ts >= 0 ? ts / kDaySeconds : -((-ts + kDaySeconds - 1) / kDaySeconds));
  const Timestamp rem = ts - static_cast<Timestamp>(days) * kDaySeconds;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  return CivilTime{static_cast<int>(ymd.year()),
                   static_cast<unsigned>(ymd.month()),
                   static_cast<unsigned>(ymd.day()),
                   static_cast<int>(rem / 3600),
                   static_cast<int>((rem % 3600) / 60),
                   static_cast<int>(rem % 60)};
}

inline Timestamp from_civil(const CivilTime& c) {
  using namespace std::chrono;
  const year_month_day ymd{year{c.year}, month{c.month}, day{c.day}};
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<Timestamp>(days) * kDaySeconds + c.hour * 3600 +
         c.minute * 60 + c.second;
}

/// Parses `YYYY-MM-DDTHH:MM[:SS]` (a space separator is also accepted).
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    const char* first = s.data() + pos;
    auto [p, ec] = std::from_chars(first, first + len, out);
    return ec == std::errc{} && p == first + len;
  };
  CivilTime c{};
  int month = 0, day = 0;
  if (s.size() < 16 || s[4] != '-' || s[7] != '-' ||
      (s[10] != 'T' && s[10] != ' ') || s[13] != ':') {
    return std::nullopt;
  }
  if (!num(0, 4, c.year) || !num(5, 2, month) || !num(8, 2, day) ||
      !num(11, 2, c.hour) || !num(14, 2, c.minute)) {
    return std::nullopt;
  }
  if (s.size() == 19) {
    if (s[16] != ':' || !num(17, 2, c.second)) return std::nullopt;
  } else if (s.size() != 16) {
    return std::nullopt;
  }
  c.month = static_cast<unsigned>(month);
  c.day = static_cast<unsigned>(day);
  const std::chrono::year_month_day ymd{std::chrono::year{c.year},
                                        std::chrono::month{c.month},
                                        std::chrono::day{c.day}};
  if (!ymd.ok() || c.hour > 23 || c.minute > 59 || c.second > 59 ||
      c.hour < 0 || c.minute < 0 || c.second < 0) {
    return std::nullopt;
  }
  return from_civil(c);
}

inline std::string format_timestamp(Timestamp ts) {
  const CivilTime c = to_civil(ts);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", c.year,
                c.month, c.day, c.hour, c.minute, c.second);
  return buf;
}

enum class Pollutant { no, no2, o3 };

inline constexpr std::array<Pollutant, 3> kAllPollutants{
    Pollutant::no, Pollutant::no2, Pollutant::o3};

inline const char* to_string(Pollutant p) {
  switch (p) {
    case Pollutant::no: return "no";
    case Pollutant::no2: return "no2";
    case Pollutant::o3: return "o3";
  }
  return "?";
}

inline Pollutant parse_pollutant(std::string_view s) {
  if (s == "no") return Pollutant::no;
  if (s == "no2") return Pollutant::no2;
  if (s == "o3") return Pollutant::o3;
  throw Error(ErrorCode::config,
              "unknown pollutant '" + std::string(s) + "' (expected no, no2, o3)");
}

/// One 15-minute row. Every measurement may be missing.
struct ObservationRecord {
  Timestamp timestamp = 0;
  std::optional<double> no, no2, o3;
  std::optional<double> tf_ldv, tf_hgv;
  std::optional<double> ts_ldv, ts_hgv;
  std::optional<double> rh, sr, ws, wd, temp;

  const std::optional<double>& concentration(Pollutant p) const {
    switch (p) {
      case Pollutant::no: return no;
      case Pollutant::no2: return no2;
      case Pollutant::o3: return o3;
    }
    return no;
  }
  std::optional<double>& concentration(Pollutant p) {
    return const_cast<std::optional<double>&>(
        std::as_const(*this).concentration(p));
  }

  friend bool operator==(const ObservationRecord&,
                         const ObservationRecord&) = default;
};

inline constexpr std::array<std::string_view, 13> kCsvColumns{
    "timestamp", "no",     "no2", "o3", "tf_ldv", "tf_hgv", "ts_ldv",
    "ts_hgv",    "rh",     "sr",  "ws", "wd",     "temp"};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double>* field_slot(ObservationRecord& r, std::size_t col) {
  switch (col) {
    case 1: return &r.no;
    case 2: return &r.no2;
    case 3: return &r.o3;
    case 4: return &r.tf_ldv;
    case 5: return &r.tf_hgv;
    case 6: return &r.ts_ldv;
    case 7: return &r.ts_hgv;
    case 8: return &r.rh;
    case 9: return &r.sr;
    case 10: return &r.ws;
    case 11: return &r.wd;
    case 12: return &r.temp;
    default: return nullptr;
  }
}

inline std::string line_error(const std::string& path, std::size_t line,
                              const std::string& msg) {
  std::ostringstream os;
  os << path << ":" << line << ": " << msg;
  return os.str();
}

}  // namespace detail

/*
 * Reads the observation CSV. Columns are matched by header name (any order,
 * unknown columns ignored). Empty cells are missing values. Rows must be
 * strictly increasing in time on the 15-minute grid.
 */
inline std::vector<ObservationRecord> parse_records(std::istream& in,
                                                    const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::schema, source + ": missing header row");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_commas(line);
  std::array<int, kCsvColumns.size()> where{};
  where.fill(-1);
  for (std::size_t i = 0; i < header.size(); ++i) {
    for (std::size_t c = 0; c < kCsvColumns.size(); ++c) {
      if (header[i] == kCsvColumns[c]) where[c] = static_cast<int>(i);
    }
  }
  for (std::size_t c = 0; c < kCsvColumns.size(); ++c) {
    if (where[c] < 0) {
      throw Error(ErrorCode::schema, source + ": header is missing column '" +
                                         std::string(kCsvColumns[c]) + "'");
    }
  }

  std::vector<ObservationRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::parse,
                  detail::line_error(source, line_no, "expected " +
                                                          std::to_string(header.size()) +
                                                          " cells"));
    }
    ObservationRecord rec;
    const auto ts = parse_timestamp(cells[static_cast<std::size_t>(where[0])]);
    if (!ts) {
      throw Error(ErrorCode::parse,
                  detail::line_error(source, line_no, "bad timestamp"));
    }
    rec.timestamp = *ts;
    for (std::size_t c = 1; c < kCsvColumns.size(); ++c) {
      const std::string_view cell = cells[static_cast<std::size_t>(where[c])];
      if (cell.empty()) continue;
      double v = 0.0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v)) {
        throw Error(ErrorCode::parse,
                    detail::line_error(source, line_no,
                                       "bad number in column '" +
                                           std::string(kCsvColumns[c]) + "'"));
      }
      *detail::field_slot(rec, c) = v;
    }
    if (rec.wd && (*rec.wd < 0.0 || *rec.wd >= 360.0)) {
      throw Error(ErrorCode::parse,
                  detail::line_error(source, line_no, "wd outside [0,360)"));
    }
    for (Pollutant p : kAllPollutants) {
      if (rec.concentration(p) && *rec.concentration(p) < 0.0) {
        throw Error(ErrorCode::parse,
                    detail::line_error(source, line_no,
                                       "negative concentration"));
      }
    }
    if (!records.empty()) {
      const Timestamp step = rec.timestamp - records.back().timestamp;
      if (step <= 0) {
        throw Error(ErrorCode::parse,
                    detail::line_error(source, line_no,
                                       step == 0 ? "duplicated timestamp"
                                                 : "timestamp not increasing"));
      }
      if (step % kGridSeconds != 0) {
        throw Error(ErrorCode::parse,
                    detail::line_error(source, line_no,
                                       "timestamp off the 15-minute grid"));
      }
    }
    records.push_back(rec);
  }
  return records;
}

inline std::vector<ObservationRecord> ingest_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read data file '" + path + "'");
  return parse_records(in, path);
}

namespace detail {

inline void append_number(std::string& out, double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, p);
}

}  // namespace detail

inline std::string format_records(const std::vector<ObservationRecord>& records) {
  std::string out;
  for (std::size_t c = 0; c < kCsvColumns.size(); ++c) {
    if (c) out += ',';
    out += kCsvColumns[c];
  }
  out += '\n';
  for (const auto& r : records) {
    out += format_timestamp(r.timestamp);
    ObservationRecord copy = r;
    for (std::size_t c = 1; c < kCsvColumns.size(); ++c) {
      out += ',';
      if (const auto& v = *detail::field_slot(copy, c)) detail::append_number(out, *v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace tspot
