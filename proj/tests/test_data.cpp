// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "geomae/data.hpp"

using namespace geomae;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path);
  os << content;
}

struct TempFiles {
  std::vector<std::string> paths;
  ~TempFiles() {
    for (const auto& p : paths) std::remove(p.c_str());
  }
  std::string add(const std::string& p) {
    paths.push_back(p);
    return p;
  }
};

const char* kSchemaText =
    "version=1\n"
    "features=pm25,temp\n"
    "target=pm25\n"
    "interval_minutes=60\n"
    "station=a,40.0,116.0\n"
    "station=b,40.1,116.2\n";

}  // namespace

TEST_CASE("hourly grid over three years has 26304 timestamps") {
  CHECK(grid_size(CivilTime{2015, 1, 1, 0, 0}, CivilTime{2017, 12, 31, 23, 0}, 60) == 26304);
}

TEST_CASE("calendar round trip and weekday") {
  CivilTime t{2016, 2, 29, 13, 30};
  CHECK(civil_from_minutes(minutes_from_epoch(t)) == t);
  CHECK(parse_civil(format_civil(t)) == t);
  // 2015-01-01 was a Thursday
  CHECK(weekday(CivilTime{2015, 1, 1, 0, 0}) == 3);
  CHECK(weekday(CivilTime{2024, 1, 1, 0, 0}) == 0);  // Monday
  CHECK(add_minutes(CivilTime{2015, 12, 31, 23, 0}, 60) == CivilTime{2016, 1, 1, 0, 0});
}

TEST_CASE("window counts") {
  CHECK(make_windows(26304, 12, 12, 1).size() == 26281);
  CHECK(make_windows(24, 12, 12, 1).size() == 1);  // exactly one window
  auto nonoverlap = make_windows(100, 12, 12, 24);
  for (std::size_t i = 1; i < nonoverlap.size(); ++i) {
    CHECK(nonoverlap[i].start - nonoverlap[i - 1].start == 24);
  }
  CHECK(make_windows(23, 12, 12, 1).empty());
  CHECK_THROWS_AS(make_windows(100, 0, 12, 1), ContractError);
}

TEST_CASE("load_dataset aligns stations to one grid and flags absent rows") {
  TempFiles tmp;
  write_file(tmp.add("t_schema.cfg"), kSchemaText);
  write_file(tmp.add("t_data.csv"),
             "station_id,timestamp,pm25,temp\n"
             "a,2015-01-01 00:00,10,1\n"
             "a,2015-01-01 01:00,,2\n"
             "a,2015-01-01 02:00,30,3\n"
             "b,2015-01-01 00:00,40,4\n"
             "b,2015-01-01 02:00,60,6\n");  // b absent at 01:00
  Dataset ds = load_dataset("t_data.csv", "t_schema.cfg");
  CHECK(ds.n_steps() == 3);
  CHECK(ds.n_nodes() == 2);
  CHECK(ds.stations[0].id == "a");
  CHECK(ds.stations[1].id == "b");
  // a: pm25 missing at 01:00 only
  CHECK(ds.stations[0].missing == std::vector<std::uint8_t>{0, 0, 1, 0, 0, 0});
  // b: fully missing row at 01:00
  CHECK(ds.stations[1].missing == std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0});
  CHECK(ds.stations[1].values[0] == 40.0);
  // graph distances: symmetric, zero diagonal, positive off-diagonal
  CHECK(ds.graph.distance_km[0] == 0.0);
  CHECK(ds.graph.distance_km[3] == 0.0);
  CHECK(ds.graph.distance_km[1] == ds.graph.distance_km[2]);
  CHECK(ds.graph.distance_km[1] > 1.0);

  auto rates = station_missing_rates(ds);
  CHECK(rates[0] == doctest::Approx(1.0 / 6.0));
  CHECK(rates[1] == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("load_dataset reports the offending line") {
  TempFiles tmp;
  write_file(tmp.add("t_schema2.cfg"), kSchemaText);
  write_file(tmp.add("t_bad.csv"),
             "station_id,timestamp,pm25,temp\n"
             "a,2015-01-01 00:00,10,1\n"
             "a,2015-01-01 01:00,not_a_number,2\n");
  try {
    load_dataset("t_bad.csv", "t_schema2.cfg");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("load_dataset rejects off-grid timestamps") {
  TempFiles tmp;
  write_file(tmp.add("t_schema3.cfg"), kSchemaText);
  write_file(tmp.add("t_offgrid.csv"),
             "station_id,timestamp,pm25,temp\n"
             "a,2015-01-01 00:00,10,1\n"
             "a,2015-01-01 01:30,20,2\n"
             "a,2015-01-01 02:00,30,3\n");
  CHECK_THROWS_AS(load_dataset("t_offgrid.csv", "t_schema3.cfg"), ParseError);
}

TEST_CASE("dataset write/read round trip is identity") {
  TempFiles tmp;
  Dataset ds = synth_generate(3, 48, 2, 77);
  // punch a few organic holes so the missing channel is exercised
  ds.stations[1].missing[10] = 1;
  ds.stations[2].missing[33] = 1;
  write_dataset(ds, tmp.add("t_round.csv"), tmp.add("t_round_schema.cfg"));
  Dataset back = load_dataset("t_round.csv", "t_round_schema.cfg");
  REQUIRE(back.n_nodes() == ds.n_nodes());
  REQUIRE(back.n_steps() == ds.n_steps());
  for (int i = 0; i < ds.n_nodes(); ++i) {
    CHECK(back.stations[i].id == ds.stations[i].id);
    CHECK(back.stations[i].missing == ds.stations[i].missing);
    for (std::size_t j = 0; j < ds.stations[i].values.size(); ++j) {
      if (!ds.stations[i].missing[j]) {
        CHECK(back.stations[i].values[j] == ds.stations[i].values[j]);
      }
    }
  }
}

TEST_CASE("split respects boundaries and strides") {
  Dataset ds = synth_generate(2, 300, 2, 5);
  SplitPlan plan = SplitPlan::by_fraction(ds, 0.6, 0.2);
  SplitWindows sw = split(ds, plan, 12, 12, 1, 12);
  REQUIRE(!sw.train.empty());
  REQUIRE(!sw.validation.empty());
  REQUIRE(!sw.test.empty());

  // no window crosses a boundary; ranges are disjoint and chronological
  auto last_ts = [&](const WindowRef& w) {
    return ds.timestamps[static_cast<std::size_t>(w.start + 23)];
  };
  auto first_ts = [&](const WindowRef& w) {
    return ds.timestamps[static_cast<std::size_t>(w.start)];
  };
  for (const auto& w : sw.train) {
    CHECK(plan.train.contains(first_ts(w)));
    CHECK(plan.train.contains(last_ts(w)));
  }
  for (const auto& w : sw.test) {
    CHECK(plan.test.contains(first_ts(w)));
    CHECK(plan.test.contains(last_ts(w)));
  }
  // temporal leakage guard: last train target precedes first test history
  CHECK(civil_less(last_ts(sw.train.back()), first_ts(sw.test.front())));
}

TEST_CASE("overlapping split plans are rejected") {
  Dataset ds = synth_generate(2, 100, 1, 5);
  SplitPlan plan = SplitPlan::by_fraction(ds, 0.6, 0.2);
  plan.validation.begin = plan.train.begin;  // overlap train/val
  CHECK_THROWS_AS(plan.validate(), ContractError);
}

TEST_CASE("training statistics ignore the test range entirely") {
  Dataset ds = synth_generate(3, 200, 2, 11);
  SplitPlan plan = SplitPlan::by_fraction(ds, 0.5, 0.25);
  StandardizationStats before = fit_stats(ds, plan.train);
  // perturb every value in the test range
  for (auto& s : ds.stations) {
    for (std::int64_t t = 0; t < ds.n_steps(); ++t) {
      if (plan.test.contains(ds.timestamps[static_cast<std::size_t>(t)])) {
        for (int f = 0; f < ds.n_features(); ++f) s.values[t * 2 + f] += 1e6;
      }
    }
  }
  StandardizationStats after = fit_stats(ds, plan.train);
  CHECK(before.mean == after.mean);
  CHECK(before.stddev == after.stddev);
}

TEST_CASE("synthetic generator is deterministic and forecastable") {
  Dataset a = synth_generate(4, 500, 2, 99);
  Dataset b = synth_generate(4, 500, 2, 99);
  for (int i = 0; i < 4; ++i) {
    CHECK(a.stations[i].values == b.stations[i].values);
    CHECK(a.stations[i].lat == b.stations[i].lat);
  }

  // identical coordinates -> identical noiseless series
  std::vector<std::pair<double, double>> coords{{40.2, 116.3}, {40.2, 116.3}};
  Dataset twin = synth_generate(2, 200, 2, 7, 0.0, &coords);
  CHECK(twin.stations[0].values == twin.stations[1].values);

  // lag-24 autocorrelation of the noiseless signal exceeds 0.9
  Dataset clean = synth_generate(1, 2000, 1, 13, 0.0);
  const auto& v = clean.stations[0].values;
  const std::int64_t n = 2000 - 24;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= 2000.0;
  double num = 0.0, den = 0.0;
  for (std::int64_t t = 0; t < 2000; ++t) {
    const double c = v[static_cast<std::size_t>(t)] - mean;
    den += c * c;
    if (t < n) num += c * (v[static_cast<std::size_t>(t + 24)] - mean);
  }
  CHECK(num / den > 0.9);
}

TEST_CASE("materialize_window standardizes history and masks targets") {
  Dataset ds = synth_generate(3, 60, 2, 21);
  ds.stations[0].missing[5 * 2 + 0] = 1;        // history hole
  ds.stations[1].missing[(12 + 1) * 2 + 0] = 1; // target hole (pm-like feature 0)
  SplitPlan plan = SplitPlan::by_fraction(ds, 0.9, 0.05);
  StandardizationStats stats = fit_stats(ds, plan.train);
  SampleWindow sw = materialize_window(ds, WindowRef{0}, 12, 12, stats);
  CHECK(sw.window.x.shape() == Shape{3, 12, 2});
  CHECK(sw.target.shape() == Shape{3, 12, 1});
  CHECK(sw.window.m.values()[(0 * 12 + 5) * 2 + 0] == 1.0);
  CHECK(sw.target_missing.values()[1 * 12 + 1] == 1.0);
  CHECK(sw.ts.history.size() == 12);
  CHECK(sw.ts.horizon.size() == 12);
  // horizon strictly follows history on the sampling grid
  CHECK(minutes_from_epoch(sw.ts.horizon[0]) - minutes_from_epoch(sw.ts.history[11]) == 60);
}
