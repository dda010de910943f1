#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tdr/csv.hpp"
#include "tdr/error.hpp"

namespace tdr {

inline constexpr int kMinutesPerDay = 1440;

// Euclidean norm of the three accelerometer axes (vector magnitude).
inline double vector_magnitude(double ml, double ap, double vt) {
  if (!(std::isfinite(ml) && std::isfinite(ap) && std::isfinite(vt)) || ml < 0.0 || ap < 0.0 ||
      vt < 0.0)
    fail(ErrorCategory::domain, "ingest", "vector_magnitude requires finite nonnegative axes");
  return std::sqrt(ml * ml + ap * ap + vt * vt);
}

// One observation day on a dense slot grid. Missing slots are kept and
// flagged, never dropped.
struct DaySeries {
  long day_index = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> observed;
  bool valid = true;

  int observed_count() const {
    int c = 0;
    for (auto o : observed) c += o ? 1 : 0;
    return c;
  }
};

struct SubjectSeries {
  std::string subject_id;
  std::vector<DaySeries> days;
  int slots_per_day = kMinutesPerDay;
  int epoch_width = 1;

  int valid_day_count() const {
    int c = 0;
    for (const auto& d : days) c += d.valid ? 1 : 0;
    return c;
  }
};

struct ActivityPanel {
  std::vector<SubjectSeries> subjects;
  int epoch_width = 1;
  double valid_day_threshold = 0.8;

  int slots_per_day() const { return kMinutesPerDay / epoch_width; }

  const SubjectSeries* find(const std::string& id) const {
    for (const auto& s : subjects)
      if (s.subject_id == id) return &s;
    return nullptr;
  }

  // A day is valid when at least `valid_day_threshold` of its slots are
  // observed; invalid days are excluded from all pooled statistics.
  void refresh_validity() {
    for (auto& s : subjects)
      for (auto& d : s.days)
        d.valid = d.observed_count() >= valid_day_threshold * slots_per_day();
  }
};

struct SubjectRecord {
  std::string subject_id;
  double outcome = 0.0;
  std::vector<double> covariates;
};

struct SubjectData {
  std::vector<SubjectRecord> records;
  std::vector<std::string> covariate_names;
};

// Column mapping for minute-level CSV input. Either `value` is set, or all
// of `ml`, `ap`, `vt` are set and the value is the per-row vector magnitude.
struct LoadSchema {
  std::string subject = "subject_id";
  std::string day = "day_index";
  std::string minute = "minute";
  std::string value = "value";
  std::string ml, ap, vt;
  // honored when present in the header; rows flagged missing carry no value
  std::string missing = "missing";

  bool triaxial() const { return !ml.empty() || !ap.empty() || !vt.empty(); }
};

inline ActivityPanel load_minutes(const std::string& path, const LoadSchema& schema = {},
                                  double valid_day_threshold = 0.8) {
  Table t = read_csv(path);
  const int c_subj = t.require_column(schema.subject);
  const int c_day = t.require_column(schema.day);
  const int c_min = t.require_column(schema.minute);
  int c_val = -1, c_ml = -1, c_ap = -1, c_vt = -1;
  if (schema.triaxial()) {
    if (schema.ml.empty() || schema.ap.empty() || schema.vt.empty())
      fail(ErrorCategory::config, "ingest", "triaxial schema needs all of ml/ap/vt columns");
    c_ml = t.require_column(schema.ml);
    c_ap = t.require_column(schema.ap);
    c_vt = t.require_column(schema.vt);
  } else {
    c_val = t.require_column(schema.value);
  }
  const int c_miss = t.column_index(schema.missing);

  // (subject, day) -> dense day arrays, preserving first-appearance order
  ActivityPanel panel;
  panel.valid_day_threshold = valid_day_threshold;
  std::map<std::string, std::size_t> subject_pos;
  std::map<std::pair<std::string, long>, std::size_t> day_pos;

  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = path + ":" + std::to_string(t.line_numbers[r]);
    const std::string& sid = row[static_cast<std::size_t>(c_subj)];
    long day = parse_long(row[static_cast<std::size_t>(c_day)], where);
    long minute = parse_long(row[static_cast<std::size_t>(c_min)], where);
    if (minute < 0 || minute >= kMinutesPerDay)
      fail(ErrorCategory::parse, "ingest",
           where + ": minute " + std::to_string(minute) + " outside [0,1439]");

    bool missing = false;
    if (c_miss >= 0) missing = parse_long(row[static_cast<std::size_t>(c_miss)], where) != 0;

    double value = 0.0;
    if (!missing) {
      if (schema.triaxial()) {
        double ml = parse_double(row[static_cast<std::size_t>(c_ml)], where);
        double ap = parse_double(row[static_cast<std::size_t>(c_ap)], where);
        double vt = parse_double(row[static_cast<std::size_t>(c_vt)], where);
        if (!(std::isfinite(ml) && std::isfinite(ap) && std::isfinite(vt)) || ml < 0.0 ||
            ap < 0.0 || vt < 0.0)
          fail(ErrorCategory::parse, "ingest", where + ": rejected record (negative or non-finite axis)");
        value = vector_magnitude(ml, ap, vt);
      } else {
        value = parse_double(row[static_cast<std::size_t>(c_val)], where);
        if (!std::isfinite(value) || value < 0.0)
          fail(ErrorCategory::parse, "ingest",
               where + ": rejected record (negative or non-finite value)");
      }
    }

    auto sp = subject_pos.find(sid);
    if (sp == subject_pos.end()) {
      sp = subject_pos.emplace(sid, panel.subjects.size()).first;
      SubjectSeries s;
      s.subject_id = sid;
      panel.subjects.push_back(std::move(s));
    }
    SubjectSeries& subj = panel.subjects[sp->second];

    auto dkey = std::make_pair(sid, day);
    auto dp = day_pos.find(dkey);
    if (dp == day_pos.end()) {
      dp = day_pos.emplace(dkey, subj.days.size()).first;
      DaySeries d;
      d.day_index = day;
      d.values.assign(kMinutesPerDay, 0.0);
      d.observed.assign(kMinutesPerDay, 0);
      subj.days.push_back(std::move(d));
    }
    DaySeries& ds = subj.days[dp->second];
    // -1 marks a slot already claimed by an explicit-missing row (observed
    // values are nonnegative, so the sentinel cannot collide)
    bool seen = ds.observed[static_cast<std::size_t>(minute)] != 0 ||
                ds.values[static_cast<std::size_t>(minute)] == -1.0;
    if (seen)
      fail(ErrorCategory::parse, "ingest",
           where + ": duplicate key (" + sid + ", day " + std::to_string(day) + ", minute " +
               std::to_string(minute) + ")");
    if (missing) {
      ds.values[static_cast<std::size_t>(minute)] = -1.0;
      continue;
    }
    ds.values[static_cast<std::size_t>(minute)] = value;
    ds.observed[static_cast<std::size_t>(minute)] = 1;
  }

  // clear sentinels for explicit-missing slots
  for (auto& s : panel.subjects)
    for (auto& d : s.days)
      for (auto& v : d.values)
        if (v == -1.0) v = 0.0;

  for (auto& s : panel.subjects) {
    if (s.days.empty())
      fail(ErrorCategory::parse, "ingest", "subject " + s.subject_id + " has no days");
    std::sort(s.days.begin(), s.days.end(),
              [](const DaySeries& a, const DaySeries& b) { return a.day_index < b.day_index; });
  }
  panel.refresh_validity();
  return panel;
}

// Aggregate a minute-level panel into epochs of `width` minutes. Epoch value
// is the mean of its observed minutes; an epoch is missing only when every
// constituent minute is missing.
inline ActivityPanel aggregate_epochs(const ActivityPanel& panel, int width) {
  if (width < 1 || kMinutesPerDay % width != 0)
    fail(ErrorCategory::domain, "ingest",
         "epoch width " + std::to_string(width) + " does not divide 1440");
  if (panel.epoch_width != 1)
    fail(ErrorCategory::domain, "ingest", "aggregate_epochs expects a minute-level panel");
  ActivityPanel out;
  out.epoch_width = width;
  out.valid_day_threshold = panel.valid_day_threshold;
  const int slots = kMinutesPerDay / width;
  out.subjects.reserve(panel.subjects.size());
  for (const auto& s : panel.subjects) {
    SubjectSeries os;
    os.subject_id = s.subject_id;
    os.slots_per_day = slots;
    os.epoch_width = width;
    os.days.reserve(s.days.size());
    for (const auto& d : s.days) {
      DaySeries od;
      od.day_index = d.day_index;
      od.values.assign(static_cast<std::size_t>(slots), 0.0);
      od.observed.assign(static_cast<std::size_t>(slots), 0);
      for (int e = 0; e < slots; ++e) {
        double sum = 0.0;
        int cnt = 0;
        for (int m = e * width; m < (e + 1) * width; ++m) {
          if (d.observed[static_cast<std::size_t>(m)]) {
            sum += d.values[static_cast<std::size_t>(m)];
            ++cnt;
          }
        }
        if (cnt > 0) {
          od.values[static_cast<std::size_t>(e)] = sum / cnt;
          od.observed[static_cast<std::size_t>(e)] = 1;
        }
      }
      os.days.push_back(std::move(od));
    }
    out.subjects.push_back(std::move(os));
  }
  out.refresh_validity();
  return out;
}

// Canonical export: subject_id, day_index, minute, value, missing(0/1).
// `minute` is the slot start in minutes since midnight. Loading the file
// back and re-exporting reproduces it byte for byte.
inline void write_panel_csv(const std::string& path, const ActivityPanel& panel,
                            const std::vector<std::string>& provenance = {}) {
  CsvWriter w(path);
  for (const auto& line : provenance) w.comment(line);
  w.row({"subject_id", "day_index", "minute", "value", "missing"});
  for (const auto& s : panel.subjects) {
    for (const auto& d : s.days) {
      for (int slot = 0; slot < static_cast<int>(d.values.size()); ++slot) {
        bool obs = d.observed[static_cast<std::size_t>(slot)] != 0;
        w.row({s.subject_id, std::to_string(d.day_index),
               std::to_string(slot * panel.epoch_width),
               obs ? format_double(d.values[static_cast<std::size_t>(slot)]) : "0",
               obs ? "0" : "1"});
      }
    }
  }
}

// Outcome + covariates table: subject_id, y, then one column per covariate.
inline SubjectData load_subject_records(const std::string& path,
                                        const std::string& outcome_column = "y") {
  Table t = read_csv(path);
  const int c_subj = t.require_column("subject_id");
  const int c_y = t.require_column(outcome_column);
  SubjectData data;
  for (std::size_t c = 0; c < t.columns.size(); ++c)
    if (static_cast<int>(c) != c_subj && static_cast<int>(c) != c_y)
      data.covariate_names.push_back(t.columns[c]);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = path + ":" + std::to_string(t.line_numbers[r]);
    SubjectRecord rec;
    rec.subject_id = t.rows[r][static_cast<std::size_t>(c_subj)];
    rec.outcome = parse_double(t.rows[r][static_cast<std::size_t>(c_y)], where);
    for (std::size_t c = 0; c < t.columns.size(); ++c)
      if (static_cast<int>(c) != c_subj && static_cast<int>(c) != c_y)
        rec.covariates.push_back(parse_double(t.rows[r][c], where));
    data.records.push_back(std::move(rec));
  }
  return data;
}

}  // namespace tdr
