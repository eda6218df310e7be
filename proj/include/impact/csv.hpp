#pragma once

// Comma-separated file formats for the dataset: roads, intersections,
// sensors, five-minute measurements, and incident records. UTF-8, header
// row required. Measurements may have empty speed/occupancy fields to mark
// missing values; everything else must be fully populated.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "impact/graph.hpp"

namespace impact {

namespace csv {

struct Table {
  std::filesystem::path path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> lines;  // 1-based source line per row

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw std::runtime_error(path.string() + ": missing column '" + name +
                             "'");
  }
  [[noreturn]] void fail(std::size_t row, const std::string& msg) const {
    throw std::runtime_error(path.string() + ":" +
                             std::to_string(lines[row]) + ": " + msg);
  }
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Table t;
  t.path = path;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected " +
                               std::to_string(t.header.size()) +
                               " fields, got " +
                               std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(line_no);
  }
  if (t.header.empty())
    throw std::runtime_error(path.string() + ": missing header row");
  return t;
}

inline double to_double(const Table& t, std::size_t row, int col) {
  const std::string& s = t.rows[row][col];
  try {
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    t.fail(row, "invalid number '" + s + "' in column " + t.header[col]);
  }
}

inline std::int64_t to_int(const Table& t, std::size_t row, int col) {
  const std::string& s = t.rows[row][col];
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    t.fail(row, "invalid integer '" + s + "' in column " + t.header[col]);
  return v;
}

inline std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

}  // namespace csv

// Dense per-sensor time grid over [0, n_bins) five-minute bins.
struct MeasurementGrid {
  int n_sensors = 0;
  std::int64_t n_bins = 0;
  std::vector<double> speed;
  std::vector<double> occupancy;
  std::vector<std::uint8_t> present;

  void resize(int sensors, std::int64_t bins) {
    n_sensors = sensors;
    n_bins = bins;
    const std::size_t n = static_cast<std::size_t>(sensors) * bins;
    speed.assign(n, 0.0);
    occupancy.assign(n, 0.0);
    present.assign(n, 0);
  }
  std::size_t idx(int s, std::int64_t t) const {
    return static_cast<std::size_t>(s) * n_bins + static_cast<std::size_t>(t);
  }
};

inline RoadNetwork read_network(const std::filesystem::path& dir) {
  RoadNetwork net;
  {
    csv::Table t = csv::read(dir / "roads.csv");
    const int c_id = t.column("road_id"), c_len = t.column("length_miles");
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      net.roads.push_back({t.rows[r][c_id], csv::to_double(t, r, c_len)});
  }
  {
    csv::Table t = csv::read(dir / "intersections.csv");
    const int ca = t.column("road_a"), cb = t.column("road_b");
    const int pa = t.column("pos_a_miles"), pb = t.column("pos_b_miles");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      Intersection x{t.rows[r][ca], t.rows[r][cb], csv::to_double(t, r, pa),
                     csv::to_double(t, r, pb)};
      if (net.road_index(x.road_a) < 0 || net.road_index(x.road_b) < 0)
        t.fail(r, "intersection references unknown road '" +
                      (net.road_index(x.road_a) < 0 ? x.road_a : x.road_b) +
                      "'");
      net.intersections.push_back(std::move(x));
    }
  }
  {
    csv::Table t = csv::read(dir / "sensors.csv");
    const int c_id = t.column("sensor_id"), c_rd = t.column("road_id");
    const int c_mp = t.column("milepost_miles");
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      Sensor s{t.rows[r][c_id], t.rows[r][c_rd], csv::to_double(t, r, c_mp)};
      if (net.road_index(s.road_id) < 0)
        t.fail(r, "sensor references unknown road '" + s.road_id + "'");
      net.sensors.push_back(std::move(s));
    }
  }
  return net;
}

inline MeasurementGrid read_measurements(const std::filesystem::path& dir,
                                         const RoadNetwork& net) {
  csv::Table t = csv::read(dir / "measurements.csv");
  const int c_id = t.column("sensor_id"), c_t = t.column("datetime_index");
  const int c_sp = t.column("speed_mph"), c_oc = t.column("occupancy");

  std::map<std::string, int> sensor_idx;
  for (int i = 0; i < net.n_sensors(); ++i)
    sensor_idx[net.sensors[i].sensor_id] = i;

  std::int64_t max_bin = -1;
  std::vector<std::pair<int, std::int64_t>> keys(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    auto it = sensor_idx.find(t.rows[r][c_id]);
    if (it == sensor_idx.end())
      t.fail(r, "measurement references unknown sensor '" + t.rows[r][c_id] +
                    "'");
    const std::int64_t bin = csv::to_int(t, r, c_t);
    if (bin < 0) t.fail(r, "negative datetime_index");
    keys[r] = {it->second, bin};
    max_bin = std::max(max_bin, bin);
  }

  MeasurementGrid grid;
  grid.resize(net.n_sensors(), max_bin + 1);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto [s, bin] = keys[r];
    const std::size_t i = grid.idx(s, bin);
    const bool missing = t.rows[r][c_sp].empty() || t.rows[r][c_oc].empty();
    if (missing) continue;  // cell stays absent
    grid.speed[i] = csv::to_double(t, r, c_sp);
    grid.occupancy[i] = csv::to_double(t, r, c_oc);
    grid.present[i] = 1;
  }
  return grid;
}

struct IncidentRecord {
  IncidentMeta meta;
  double duration_min = 0.0;
  double impact_len_miles = 0.0;
};

inline std::vector<IncidentRecord> read_incidents(
    const std::filesystem::path& dir, const RoadNetwork& net) {
  csv::Table t = csv::read(dir / "incidents.csv");
  const int c_id = t.column("incident_id"), c_rd = t.column("road_id");
  const int c_mp = t.column("milepost_miles");
  const int c_vi = t.column("validation_index");
  const int c_cat = t.column("category");
  const int c_dur = t.column("duration_min");
  const int c_len = t.column("impact_len_miles");
  std::vector<IncidentRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    IncidentRecord rec;
    rec.meta.incident_id = t.rows[r][c_id];
    rec.meta.road_id = t.rows[r][c_rd];
    rec.meta.milepost_miles = csv::to_double(t, r, c_mp);
    rec.meta.validation_index = csv::to_int(t, r, c_vi);
    rec.meta.category = t.rows[r][c_cat];
    rec.duration_min = csv::to_double(t, r, c_dur);
    rec.impact_len_miles = csv::to_double(t, r, c_len);
    if (net.road_index(rec.meta.road_id) < 0)
      t.fail(r, "incident references unknown road '" + rec.meta.road_id + "'");
    out.push_back(std::move(rec));
  }
  return out;
}

// Extracts the T = t_bv + t_av window around each incident's validation
// time. Incidents whose window leaves the measurement span (or whose
// labels violate the sample invariants) are reported, not loaded.
inline std::vector<IncidentSample> build_samples(
    const RoadNetwork& net, const MeasurementGrid& grid,
    const std::vector<IncidentRecord>& records, int t_bv, int t_av,
    std::vector<std::string>* violations = nullptr) {
  std::vector<IncidentSample> out;
  const int ns = net.n_sensors();
  const int t_total = t_bv + t_av;
  for (const auto& rec : records) {
    const std::int64_t start = rec.meta.validation_index - t_bv;
    if (start < 0 || rec.meta.validation_index + t_av > grid.n_bins) {
      if (violations)
        violations->push_back("incident " + rec.meta.incident_id +
                              ": window outside measurement span");
      continue;
    }
    std::vector<double> x(static_cast<std::size_t>(ns) * t_total * 2);
    for (int s = 0; s < ns; ++s)
      for (int t = 0; t < t_total; ++t) {
        const std::size_t cell = grid.idx(s, start + t);
        const std::size_t o =
            (static_cast<std::size_t>(s) * t_total + t) * 2;
        x[o] = grid.speed[cell];
        x[o + 1] = grid.occupancy[cell];
      }
    IncidentSample sample;
    sample.x = Tensor::from({ns, t_total, 2}, std::move(x));
    sample.t_bv = t_bv;
    sample.t_av = t_av;
    sample.y_dur_min = rec.duration_min;
    sample.y_len_miles = rec.impact_len_miles;
    sample.meta = rec.meta;
    auto v = validate_sample(sample, net);
    if (!v.empty()) {
      if (violations)
        for (auto& msg : v)
          violations->push_back("incident " + rec.meta.incident_id + ": " +
                                msg);
      continue;
    }
    out.push_back(std::move(sample));
  }
  return out;
}

struct Dataset {
  RoadNetwork network;
  MeasurementGrid grid;
  std::vector<IncidentRecord> records;
  std::vector<IncidentSample> samples;
  std::vector<std::string> violations;
};

inline Dataset load_dataset(const std::filesystem::path& dir, int t_bv = 6,
                            int t_av = 3) {
  Dataset ds;
  ds.network = read_network(dir);
  auto net_issues = ds.network.validate();
  if (!net_issues.empty())
    throw std::runtime_error(dir.string() + ": invalid network: " +
                             net_issues.front());
  ds.grid = read_measurements(dir, ds.network);
  ds.records = read_incidents(dir, ds.network);
  ds.samples =
      build_samples(ds.network, ds.grid, ds.records, t_bv, t_av,
                    &ds.violations);
  return ds;
}

// ---------------------------------------------------------------------------
// Writers (used by the scenario generator and the labeling pipeline)
// ---------------------------------------------------------------------------

inline void write_network(const std::filesystem::path& dir,
                          const RoadNetwork& net) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "roads.csv");
    out << "road_id,length_miles\n";
    for (const auto& r : net.roads)
      out << r.road_id << "," << csv::fmt(r.length_miles) << "\n";
  }
  {
    std::ofstream out(dir / "intersections.csv");
    out << "road_a,road_b,pos_a_miles,pos_b_miles\n";
    for (const auto& x : net.intersections)
      out << x.road_a << "," << x.road_b << "," << csv::fmt(x.pos_a_miles)
          << "," << csv::fmt(x.pos_b_miles) << "\n";
  }
  {
    std::ofstream out(dir / "sensors.csv");
    out << "sensor_id,road_id,milepost_miles\n";
    for (const auto& s : net.sensors)
      out << s.sensor_id << "," << s.road_id << ","
          << csv::fmt(s.milepost_miles) << "\n";
  }
}

inline void write_measurements(const std::filesystem::path& dir,
                               const RoadNetwork& net,
                               const MeasurementGrid& grid) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "measurements.csv");
  out << "sensor_id,datetime_index,speed_mph,occupancy\n";
  for (int s = 0; s < grid.n_sensors; ++s)
    for (std::int64_t t = 0; t < grid.n_bins; ++t) {
      const std::size_t i = grid.idx(s, t);
      out << net.sensors[s].sensor_id << "," << t << ",";
      if (grid.present[i])
        out << csv::fmt(grid.speed[i]) << "," << csv::fmt(grid.occupancy[i]);
      else
        out << ",";
      out << "\n";
    }
}

inline void write_incidents(const std::filesystem::path& dir,
                            const std::vector<IncidentRecord>& records) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "incidents.csv");
  out << "incident_id,road_id,milepost_miles,validation_index,category,"
         "duration_min,impact_len_miles\n";
  for (const auto& r : records)
    out << r.meta.incident_id << "," << r.meta.road_id << ","
        << csv::fmt(r.meta.milepost_miles) << "," << r.meta.validation_index
        << "," << r.meta.category << "," << csv::fmt(r.duration_min, 1) << ","
        << csv::fmt(r.impact_len_miles) << "\n";
}

}  // namespace impact
