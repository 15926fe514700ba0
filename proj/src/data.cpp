// SPDX-License-Identifier: Apache-2.0
#include "geomae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "geomae/error.hpp"
#include "geomae/rng.hpp"

namespace geomae {

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kRad = 3.14159265358979323846 / 180.0;
  constexpr double kEarthRadiusKm = 6371.0;
  const double dlat = (lat2 - lat1) * kRad;
  const double dlon = (lon2 - lon1) * kRad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

GraphMeta build_graph(const std::vector<StationSeries>& stations) {
  GraphMeta g;
  const int n = static_cast<int>(stations.size());
  g.nodes.reserve(stations.size());
  for (const auto& s : stations) g.nodes.push_back(s.id);
  g.distance_km.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d =
          haversine_km(stations[i].lat, stations[i].lon, stations[j].lat, stations[j].lon);
      g.distance_km[i * n + j] = d;
      g.distance_km[j * n + i] = d;
    }
  }
  return g;
}

}  // namespace

int Schema::target_index() const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i] == target) return static_cast<int>(i);
  }
  throw ContractError("schema: target '" + target + "' is not a declared feature");
}

void Schema::validate() const {
  if (features.empty()) throw ContractError("schema: no features declared");
  if (interval_minutes <= 0) throw ContractError("schema: interval must be positive");
  if (!units.empty() && units.size() != features.size()) {
    throw ContractError("schema: units list does not match feature list");
  }
  target_index();
}

Schema Schema::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("schema: cannot open '" + path + "'");
  Schema s;
  s.units.clear();
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("schema '" + path + "' line " + std::to_string(line_no) +
                       ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "version") {
      s.version = std::stoi(value);
    } else if (key == "features") {
      for (auto& f : split_fields(value, ',')) s.features.push_back(trim(f));
    } else if (key == "units") {
      for (auto& u : split_fields(value, ',')) s.units.push_back(trim(u));
    } else if (key == "target") {
      s.target = value;
    } else if (key == "interval_minutes") {
      s.interval_minutes = std::stoi(value);
    } else if (key == "station") {
      auto parts = split_fields(value, ',');
      if (parts.size() != 3) {
        throw ParseError("schema '" + path + "' line " + std::to_string(line_no) +
                         ": station expects id,lat,lon");
      }
      s.stations.push_back({trim(parts[0]), std::stod(parts[1]), std::stod(parts[2])});
    } else {
      throw ParseError("schema '" + path + "' line " + std::to_string(line_no) +
                       ": unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

void Schema::save(const std::string& path) const {
  validate();
  std::ofstream os(path);
  if (!os) throw IoError("schema: cannot write '" + path + "'");
  os << "version=" << version << "\n";
  os << "features=";
  for (std::size_t i = 0; i < features.size(); ++i) os << (i ? "," : "") << features[i];
  os << "\n";
  if (!units.empty()) {
    os << "units=";
    for (std::size_t i = 0; i < units.size(); ++i) os << (i ? "," : "") << units[i];
    os << "\n";
  }
  os << "target=" << target << "\n";
  os << "interval_minutes=" << interval_minutes << "\n";
  for (const auto& st : stations) {
    os << "station=" << st.id << "," << st.lat << "," << st.lon << "\n";
  }
}

std::int64_t grid_size(const CivilTime& first, const CivilTime& last, int interval_minutes) {
  const std::int64_t span = minutes_from_epoch(last) - minutes_from_epoch(first);
  if (span < 0) throw ContractError("grid_size: last precedes first");
  if (span % interval_minutes != 0) {
    throw ContractError("grid_size: endpoints are not interval-aligned");
  }
  return span / interval_minutes + 1;
}

Dataset load_dataset(const std::string& data_path, const std::string& schema_path) {
  Schema schema = Schema::load(schema_path);
  std::ifstream is(data_path);
  if (!is) throw IoError("dataset: cannot open '" + data_path + "'");

  const int d = static_cast<int>(schema.features.size());
  std::string line;
  int line_no = 0;

  if (!std::getline(is, line)) throw ParseError("dataset '" + data_path + "': empty file");
  ++line_no;
  auto header = split_fields(line, ',');
  if (header.size() != static_cast<std::size_t>(d) + 2 || trim(header[0]) != "station_id" ||
      trim(header[1]) != "timestamp") {
    throw ParseError("dataset '" + data_path + "' line 1: header must be "
                     "station_id,timestamp,<features>");
  }
  for (int f = 0; f < d; ++f) {
    if (trim(header[f + 2]) != schema.features[f]) {
      throw ParseError("dataset '" + data_path + "' line 1: feature column '" +
                       trim(header[f + 2]) + "' does not match schema feature '" +
                       schema.features[f] + "'");
    }
  }

  struct Row {
    std::int64_t minute;
    std::vector<double> values;
    std::vector<std::uint8_t> missing;
  };
  std::map<std::string, std::vector<Row>> by_station;
  std::int64_t min_minute = INT64_MAX, max_minute = INT64_MIN;

  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line, ',');
    if (fields.size() != static_cast<std::size_t>(d) + 2) {
      throw ParseError("dataset '" + data_path + "' line " + std::to_string(line_no) +
                       ": expected " + std::to_string(d + 2) + " fields, got " +
                       std::to_string(fields.size()));
    }
    Row row;
    CivilTime ts;
    try {
      ts = parse_civil(trim(fields[1]));
    } catch (const ParseError& e) {
      throw ParseError("dataset '" + data_path + "' line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    row.minute = minutes_from_epoch(ts);
    row.values.resize(d, 0.0);
    row.missing.resize(d, 0);
    for (int f = 0; f < d; ++f) {
      const std::string v = trim(fields[f + 2]);
      if (v.empty()) {
        row.missing[f] = 1;
      } else {
        try {
          std::size_t pos = 0;
          row.values[f] = std::stod(v, &pos);
          if (pos != v.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
          throw ParseError("dataset '" + data_path + "' line " + std::to_string(line_no) +
                           ": cannot parse value '" + v + "'");
        }
      }
    }
    min_minute = std::min(min_minute, row.minute);
    max_minute = std::max(max_minute, row.minute);
    by_station[trim(fields[0])].push_back(std::move(row));
  }
  if (by_station.empty()) throw ParseError("dataset '" + data_path + "': no data rows");

  Dataset ds;
  ds.schema = schema;
  const std::int64_t interval = schema.interval_minutes;
  const std::int64_t span = max_minute - min_minute;
  if (span % interval != 0) {
    throw ParseError("dataset '" + data_path + "': timestamp span is not a multiple of the "
                     "declared interval");
  }
  const std::int64_t n_steps = span / interval + 1;
  ds.timestamps.reserve(static_cast<std::size_t>(n_steps));
  for (std::int64_t i = 0; i < n_steps; ++i) {
    ds.timestamps.push_back(civil_from_minutes(min_minute + i * interval));
  }

  // std::map iteration gives stations sorted by id
  for (auto& [id, rows] : by_station) {
    StationSeries s;
    s.id = id;
    for (const auto& info : schema.stations) {
      if (info.id == id) {
        s.lat = info.lat;
        s.lon = info.lon;
      }
    }
    s.values.assign(static_cast<std::size_t>(n_steps) * d, 0.0);
    s.missing.assign(static_cast<std::size_t>(n_steps) * d, 1);  // absent rows stay missing
    for (const auto& row : rows) {
      const std::int64_t off = row.minute - min_minute;
      if (off % interval != 0) {
        throw ParseError("dataset '" + data_path + "': station '" + id +
                         "' has a timestamp off the " + std::to_string(interval) +
                         "-minute grid");
      }
      const std::int64_t idx = off / interval;
      for (int f = 0; f < d; ++f) {
        s.values[idx * d + f] = row.values[f];
        s.missing[idx * d + f] = row.missing[f];
      }
    }
    ds.stations.push_back(std::move(s));
  }
  ds.graph = build_graph(ds.stations);
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& data_path,
                   const std::string& schema_path) {
  Schema schema = ds.schema;
  schema.stations.clear();
  for (const auto& s : ds.stations) schema.stations.push_back({s.id, s.lat, s.lon});
  schema.save(schema_path);

  std::ofstream os(data_path);
  if (!os) throw IoError("dataset: cannot write '" + data_path + "'");
  os << "station_id,timestamp";
  for (const auto& f : ds.schema.features) os << "," << f;
  os << "\n";
  os.precision(17);
  const int d = ds.n_features();
  for (const auto& s : ds.stations) {
    for (std::int64_t t = 0; t < ds.n_steps(); ++t) {
      os << s.id << "," << format_civil(ds.timestamps[static_cast<std::size_t>(t)]);
      for (int f = 0; f < d; ++f) {
        os << ",";
        if (!s.missing[t * d + f]) os << s.values[t * d + f];
      }
      os << "\n";
    }
  }
  if (!os) throw IoError("dataset: write failed for '" + data_path + "'");
}

std::vector<WindowRef> make_windows(std::int64_t n_steps, int n_in, int n_out, int stride) {
  if (n_in < 1 || n_out < 1) throw ContractError("make_windows: n_in and n_out must be >= 1");
  if (stride < 1) throw ContractError("make_windows: stride must be >= 1");
  std::vector<WindowRef> out;
  const std::int64_t span = n_in + n_out;
  if (n_steps < span) return out;
  const std::int64_t count = (n_steps - span) / stride + 1;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) out.push_back(WindowRef{i * stride});
  return out;
}

bool TimeRange::contains(const CivilTime& t) const {
  const std::int64_t m = minutes_from_epoch(t);
  return m >= minutes_from_epoch(begin) && m < minutes_from_epoch(end);
}

void SplitPlan::validate() const {
  auto ordered = [](const TimeRange& r) {
    return minutes_from_epoch(r.begin) < minutes_from_epoch(r.end);
  };
  if (!ordered(train) || !ordered(validation) || !ordered(test)) {
    throw ContractError("split plan: each range must be non-empty and ordered");
  }
  if (minutes_from_epoch(train.end) > minutes_from_epoch(validation.begin) ||
      minutes_from_epoch(validation.end) > minutes_from_epoch(test.begin)) {
    throw ContractError("split plan: ranges must be chronological and disjoint");
  }
}

SplitPlan SplitPlan::by_fraction(const Dataset& ds, double train_frac, double val_frac) {
  if (train_frac <= 0 || val_frac <= 0 || train_frac + val_frac >= 1.0) {
    throw ContractError("split plan: fractions must be positive and sum below 1");
  }
  const std::int64_t n = ds.n_steps();
  const std::int64_t t_end = static_cast<std::int64_t>(n * train_frac);
  const std::int64_t v_end = static_cast<std::int64_t>(n * (train_frac + val_frac));
  const std::int64_t interval = ds.schema.interval_minutes;
  auto at = [&](std::int64_t i) { return ds.timestamps[static_cast<std::size_t>(i)]; };
  SplitPlan plan;
  plan.train = {at(0), at(t_end)};
  plan.validation = {at(t_end), at(v_end)};
  plan.test = {at(v_end), add_minutes(at(n - 1), interval)};
  plan.validate();
  return plan;
}

SplitWindows split(const Dataset& ds, const SplitPlan& plan, int n_in, int n_out,
                   int train_stride, int eval_stride) {
  plan.validate();
  SplitWindows out;
  auto assign = [&](const TimeRange& range, int stride, std::vector<WindowRef>& dst) {
    for (const auto& w : make_windows(ds.n_steps(), n_in, n_out, stride)) {
      const CivilTime& first = ds.timestamps[static_cast<std::size_t>(w.start)];
      const CivilTime& last =
          ds.timestamps[static_cast<std::size_t>(w.start + n_in + n_out - 1)];
      if (range.contains(first) && range.contains(last)) dst.push_back(w);
    }
  };
  assign(plan.train, train_stride, out.train);
  assign(plan.validation, eval_stride, out.validation);
  assign(plan.test, eval_stride, out.test);
  return out;
}

StandardizationStats fit_stats(const Dataset& ds, const TimeRange& train_range) {
  const int d = ds.n_features();
  StatsAccumulator acc(d);
  for (const auto& s : ds.stations) {
    for (std::int64_t t = 0; t < ds.n_steps(); ++t) {
      if (!train_range.contains(ds.timestamps[static_cast<std::size_t>(t)])) continue;
      for (int f = 0; f < d; ++f) {
        if (!s.missing[t * d + f]) acc.add(f, s.values[t * d + f]);
      }
    }
  }
  return acc.finalize();
}

SampleWindow materialize_window(const Dataset& ds, const WindowRef& ref, int n_in,
                                int n_out, const StandardizationStats& stats) {
  const int n = ds.n_nodes();
  const int d = ds.n_features();
  const int target_f = ds.schema.target_index();
  if (ref.start < 0 || ref.start + n_in + n_out > ds.n_steps()) {
    throw ContractError("materialize_window: window exceeds the series");
  }

  std::vector<double> xv(static_cast<std::size_t>(n) * n_in * d, 0.0);
  std::vector<double> mv(xv.size(), 0.0);
  std::vector<double> yv(static_cast<std::size_t>(n) * n_out, 0.0);
  std::vector<double> ymv(yv.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const auto& s = ds.stations[static_cast<std::size_t>(i)];
    for (int t = 0; t < n_in; ++t) {
      const std::int64_t src = (ref.start + t) * d;
      for (int f = 0; f < d; ++f) {
        const std::size_t dst = (static_cast<std::size_t>(i) * n_in + t) * d + f;
        if (s.missing[src + f]) {
          mv[dst] = 1.0;
        } else {
          xv[dst] = stats.standardize_value(f, s.values[src + f]);
        }
      }
    }
    for (int t = 0; t < n_out; ++t) {
      const std::int64_t src = (ref.start + n_in + t) * d;
      const std::size_t dst = static_cast<std::size_t>(i) * n_out + t;
      if (s.missing[src + target_f]) {
        ymv[dst] = 1.0;
      } else {
        yv[dst] = stats.standardize_value(target_f, s.values[src + target_f]);
      }
    }
  }

  SampleWindow sw;
  sw.window.x = Tensor({n, n_in, d}, std::move(xv));
  sw.window.m = Tensor({n, n_in, d}, std::move(mv));
  sw.target = Tensor({n, n_out, 1}, std::move(yv));
  sw.target_missing = Tensor({n, n_out, 1}, std::move(ymv));
  sw.ts.history.reserve(static_cast<std::size_t>(n_in));
  sw.ts.horizon.reserve(static_cast<std::size_t>(n_out));
  for (int t = 0; t < n_in; ++t) {
    sw.ts.history.push_back(ds.timestamps[static_cast<std::size_t>(ref.start + t)]);
  }
  for (int t = 0; t < n_out; ++t) {
    sw.ts.horizon.push_back(ds.timestamps[static_cast<std::size_t>(ref.start + n_in + t)]);
  }
  return sw;
}

Dataset synth_generate(int n_nodes, std::int64_t n_steps, int d_in, std::uint64_t seed,
                       double noise_std,
                       const std::vector<std::pair<double, double>>* coords) {
  if (n_nodes < 1 || n_steps < 1 || d_in < 1) {
    throw ContractError("synth_generate: extents must be positive");
  }
  if (coords && coords->size() != static_cast<std::size_t>(n_nodes)) {
    throw ContractError("synth_generate: coords must list one (lat, lon) per node");
  }
  RandomStream rng(derive_seed(seed, 0x5e17));

  // Per-feature harmonic and spatial-field parameters.
  struct FeatureParams {
    double offset;
    double diurnal_amp, diurnal_phase;
    double half_day_amp, half_day_phase;
    double seasonal_amp, seasonal_phase;
    double coupling;  // onto feature 0's signal
    double spatial_amp[3], spatial_phase[3];
  };
  std::vector<FeatureParams> fp(static_cast<std::size_t>(d_in));
  double wave_lat[3], wave_lon[3];
  for (int k = 0; k < 3; ++k) {
    wave_lat[k] = rng.uniform(2.0, 6.0);
    wave_lon[k] = rng.uniform(2.0, 6.0);
  }
  for (int f = 0; f < d_in; ++f) {
    auto& p = fp[static_cast<std::size_t>(f)];
    p.offset = 30.0 + 15.0 * f;
    p.diurnal_amp = rng.uniform(8.0, 16.0);
    p.diurnal_phase = rng.uniform(0.0, 6.28318530717958647692);
    p.half_day_amp = rng.uniform(2.0, 6.0);
    p.half_day_phase = rng.uniform(0.0, 6.28318530717958647692);
    p.seasonal_amp = rng.uniform(4.0, 10.0);
    p.seasonal_phase = rng.uniform(0.0, 6.28318530717958647692);
    p.coupling = f == 0 ? 0.0 : rng.uniform(0.2, 0.6);
    for (int k = 0; k < 3; ++k) {
      p.spatial_amp[k] = rng.uniform(2.0, 7.0);
      p.spatial_phase[k] = rng.uniform(0.0, 6.28318530717958647692);
    }
  }

  Dataset ds;
  ds.schema.version = 1;
  for (int f = 0; f < d_in; ++f) ds.schema.features.push_back("f" + std::to_string(f));
  ds.schema.target = "f0";
  ds.schema.interval_minutes = 60;

  const CivilTime start{2015, 1, 1, 0, 0};
  ds.timestamps.reserve(static_cast<std::size_t>(n_steps));
  for (std::int64_t t = 0; t < n_steps; ++t) ds.timestamps.push_back(add_minutes(start, t * 60));

  const double kTwoPi = 6.28318530717958647692;
  std::vector<double> noiseless0(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_nodes; ++i) {
    StationSeries s;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s%03d", i);
    s.id = buf;
    const double lat_draw = 40.0 + rng.uniform() * 0.5;
    const double lon_draw = 116.0 + rng.uniform() * 0.5;
    s.lat = coords ? (*coords)[static_cast<std::size_t>(i)].first : lat_draw;
    s.lon = coords ? (*coords)[static_cast<std::size_t>(i)].second : lon_draw;
    s.values.assign(static_cast<std::size_t>(n_steps) * d_in, 0.0);
    s.missing.assign(static_cast<std::size_t>(n_steps) * d_in, 0);

    for (int f = 0; f < d_in; ++f) {
      const auto& p = fp[static_cast<std::size_t>(f)];
      double spatial = 0.0;
      for (int k = 0; k < 3; ++k) {
        spatial += p.spatial_amp[k] * std::sin(wave_lat[k] * (s.lat - 40.0) +
                                               wave_lon[k] * (s.lon - 116.0) +
                                               p.spatial_phase[k]);
      }
      for (std::int64_t t = 0; t < n_steps; ++t) {
        const double h = static_cast<double>(t);
        double v = p.offset + spatial +
                   p.diurnal_amp * std::sin(kTwoPi * h / 24.0 + p.diurnal_phase) +
                   p.half_day_amp * std::cos(kTwoPi * h / 12.0 + p.half_day_phase) +
                   p.seasonal_amp * std::sin(kTwoPi * h / 720.0 + p.seasonal_phase);
        if (f == 0) {
          noiseless0[static_cast<std::size_t>(t)] = v;
        } else {
          v += p.coupling * noiseless0[static_cast<std::size_t>(t)];
        }
        s.values[t * d_in + f] = v + (noise_std > 0.0 ? rng.normal(0.0, noise_std) : 0.0);
      }
    }
    ds.stations.push_back(std::move(s));
  }
  ds.graph = build_graph(ds.stations);
  return ds;
}

std::vector<double> station_missing_rates(const Dataset& ds) {
  std::vector<double> out;
  out.reserve(ds.stations.size());
  for (const auto& s : ds.stations) {
    double cnt = 0.0;
    for (auto m : s.missing) cnt += m;
    out.push_back(cnt / static_cast<double>(s.missing.size()));
  }
  return out;
}

}  // namespace geomae
