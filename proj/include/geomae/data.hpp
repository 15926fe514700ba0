// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "geomae/preprocess.hpp"
#include "geomae/tensor.hpp"
#include "geomae/timeinfo.hpp"

namespace geomae {

// Dataset schema file: versioned key=value text declaring feature names,
// units, the target feature, the sampling interval, and optional station
// coordinates.
struct Schema {
  int version = 1;
  std::vector<std::string> features;
  std::vector<std::string> units;  // parallel to features, may be empty
  std::string target;
  int interval_minutes = 60;

  struct StationInfo {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
  };
  std::vector<StationInfo> stations;

  int target_index() const;
  void validate() const;
  static Schema load(const std::string& path);
  void save(const std::string& path) const;
};

// One station's readings aligned to the global timestamp grid; gaps are
// missing rows, never absent rows.
struct StationSeries {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  std::vector<double> values;         // [T, D] row-major, 0.0 placeholder when missing
  std::vector<std::uint8_t> missing;  // [T, D], 1 = missing
};

// Static spatial relation: pairwise haversine distances. Carried for data
// exploration; the forecaster itself does not consume it.
struct GraphMeta {
  std::vector<std::string> nodes;
  std::vector<double> distance_km;  // [N, N], symmetric, zero diagonal
};

struct Dataset {
  Schema schema;
  std::vector<CivilTime> timestamps;
  std::vector<StationSeries> stations;
  GraphMeta graph;

  int n_nodes() const { return static_cast<int>(stations.size()); }
  std::int64_t n_steps() const { return static_cast<std::int64_t>(timestamps.size()); }
  int n_features() const { return static_cast<int>(schema.features.size()); }
};

// Number of grid steps between `first` and `last` inclusive.
std::int64_t grid_size(const CivilTime& first, const CivilTime& last, int interval_minutes);

// Delimited text, one row per (station_id, timestamp); empty field = missing.
Dataset load_dataset(const std::string& data_path, const std::string& schema_path);
void write_dataset(const Dataset& ds, const std::string& data_path,
                   const std::string& schema_path);

// Sliding windows: history [start, start+n_in), target [start+n_in,
// start+n_in+n_out). Returns floor((T - n_in - n_out)/stride) + 1 starts, or
// none when the series is too short.
struct WindowRef {
  std::int64_t start = 0;
};
std::vector<WindowRef> make_windows(std::int64_t n_steps, int n_in, int n_out, int stride);

// Half-open timestamp range [begin, end).
struct TimeRange {
  CivilTime begin;
  CivilTime end;
  bool contains(const CivilTime& t) const;
};

// Chronological, disjoint train/validation/test ranges.
struct SplitPlan {
  TimeRange train;
  TimeRange validation;
  TimeRange test;

  void validate() const;
  // Fractional split of the dataset grid (train_frac + val_frac < 1).
  static SplitPlan by_fraction(const Dataset& ds, double train_frac, double val_frac);
};

struct SplitWindows {
  std::vector<WindowRef> train;
  std::vector<WindowRef> validation;
  std::vector<WindowRef> test;
};

// Assigns windows whose full [history + target] span lies inside one range;
// boundary-crossing windows belong to no split.
SplitWindows split(const Dataset& ds, const SplitPlan& plan, int n_in, int n_out,
                   int train_stride, int eval_stride);

// Per-feature statistics from observed entries inside the training range
// only.
StandardizationStats fit_stats(const Dataset& ds, const TimeRange& train_range);

// Model-ready sample: standardized history window with organic mask,
// standardized target with its own missing flags, calendar stamps.
struct SampleWindow {
  ReadingWindow window;   // x, m: [N, n_in, D]
  Tensor target;          // [N, n_out, 1]
  Tensor target_missing;  // [N, n_out, 1], 1 = unscored
  TimeStamps ts;
};

SampleWindow materialize_window(const Dataset& ds, const WindowRef& ref, int n_in,
                                int n_out, const StandardizationStats& stats);

// Synthetic spatio-temporal generator: smooth spatial fields over random
// coordinates, diurnal and slow seasonal harmonics, cross-feature coupling to
// feature 0, plus i.i.d. observation noise. Deterministic given the seed;
// the noiseless component depends on a node only through its coordinates.
// `coords` optionally pins the station layout (lat/lon pairs, one per node).
Dataset synth_generate(int n_nodes, std::int64_t n_steps, int d_in, std::uint64_t seed,
                       double noise_std = 0.1,
                       const std::vector<std::pair<double, double>>* coords = nullptr);

// Fraction of missing entries per station (the dataset exploration summary).
std::vector<double> station_missing_rates(const Dataset& ds);

}  // namespace geomae
