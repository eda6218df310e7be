#pragma once

// Static dual-level traffic graph: roads carrying sensors, road
// intersections, the four-level road adjacency masks, and the per-incident
// sample record. Two directions of one freeway are distinct roads; a
// road's milepost increases in travel direction, so "upstream of p" means
// milepost < p on the same road.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "impact/tensor.hpp"

namespace impact {

struct Road {
  std::string road_id;
  double length_miles = 0.0;
};

struct Intersection {
  std::string road_a, road_b;
  double pos_a_miles = 0.0, pos_b_miles = 0.0;
};

struct Sensor {
  std::string sensor_id;
  std::string road_id;
  double milepost_miles = 0.0;
};

struct RoadNetwork {
  std::vector<Road> roads;
  std::vector<Intersection> intersections;
  std::vector<Sensor> sensors;

  int n_roads() const { return static_cast<int>(roads.size()); }
  int n_sensors() const { return static_cast<int>(sensors.size()); }

  int road_index(const std::string& id) const {
    for (int i = 0; i < n_roads(); ++i)
      if (roads[i].road_id == id) return i;
    return -1;
  }
  int sensor_index(const std::string& id) const {
    for (int i = 0; i < n_sensors(); ++i)
      if (sensors[i].sensor_id == id) return i;
    return -1;
  }

  // Referential and range checks; returns human-readable violations.
  std::vector<std::string> validate() const {
    std::vector<std::string> out;
    std::set<std::string> road_ids;
    for (const auto& r : roads) {
      if (!road_ids.insert(r.road_id).second)
        out.push_back("duplicate road_id " + r.road_id);
      if (r.length_miles <= 0.0)
        out.push_back("road " + r.road_id + " has non-positive length");
    }
    std::set<std::string> sensor_ids;
    for (const auto& s : sensors) {
      if (!sensor_ids.insert(s.sensor_id).second)
        out.push_back("duplicate sensor_id " + s.sensor_id);
      const int r = road_index(s.road_id);
      if (r < 0) {
        out.push_back("sensor " + s.sensor_id + " references unknown road " +
                      s.road_id);
      } else if (s.milepost_miles < 0.0 ||
                 s.milepost_miles > roads[r].length_miles) {
        out.push_back("sensor " + s.sensor_id + " milepost outside road " +
                      s.road_id);
      }
    }
    for (const auto& x : intersections) {
      const int a = road_index(x.road_a), b = road_index(x.road_b);
      if (a < 0 || b < 0) {
        out.push_back("intersection references unknown road " +
                      (a < 0 ? x.road_a : x.road_b));
        continue;
      }
      if (a == b)
        out.push_back("intersection joins road " + x.road_a + " to itself");
      if (x.pos_a_miles < 0.0 || x.pos_a_miles > roads[a].length_miles ||
          x.pos_b_miles < 0.0 || x.pos_b_miles > roads[b].length_miles)
        out.push_back("intersection " + x.road_a + "/" + x.road_b +
                      " position outside road length");
    }
    return out;
  }
};

// Binary attention masks. m_sr is [|S| x |R|] with exactly one 1 per row;
// m_rr_levels holds the four cumulative road-adjacency levels:
// identity, intersecting, shared-neighbor, fully connected.
struct MaskSet {
  Tensor m_sr;
  std::vector<Tensor> m_rr_levels;  // size 4, each [|R| x |R|]

  // Road-to-sensor direction as used by the sensor->road attention stage,
  // where roads are queries over sensor keys.
  Tensor m_rs_transposed() const {
    const int s = m_sr.dim(0), r = m_sr.dim(1);
    std::vector<double> t(static_cast<std::size_t>(s) * r);
    for (int i = 0; i < s; ++i)
      for (int j = 0; j < r; ++j)
        t[static_cast<std::size_t>(j) * s + i] = m_sr.at({i, j});
    return Tensor::from({r, s}, std::move(t));
  }
};

inline MaskSet build_masks(const RoadNetwork& net) {
  const int ns = net.n_sensors();
  const int nr = net.n_roads();
  std::vector<double> sr(static_cast<std::size_t>(ns) * nr, 0.0);
  for (int i = 0; i < ns; ++i) {
    const int r = net.road_index(net.sensors[i].road_id);
    if (r < 0)
      throw std::invalid_argument("build_masks: sensor " +
                                  net.sensors[i].sensor_id +
                                  " references unknown road");
    sr[static_cast<std::size_t>(i) * nr + r] = 1.0;
  }

  std::vector<std::set<int>> adj(nr);
  for (const auto& x : net.intersections) {
    const int a = net.road_index(x.road_a), b = net.road_index(x.road_b);
    if (a < 0 || b < 0)
      throw std::invalid_argument(
          "build_masks: intersection references unknown road");
    if (a == b) continue;
    adj[a].insert(b);
    adj[b].insert(a);
  }

  const std::size_t rr = static_cast<std::size_t>(nr) * nr;
  std::vector<double> l1(rr, 0.0), l2, l3, l4(rr, 1.0);
  for (int i = 0; i < nr; ++i) l1[static_cast<std::size_t>(i) * nr + i] = 1.0;
  l2 = l1;
  for (int i = 0; i < nr; ++i)
    for (int j : adj[i]) l2[static_cast<std::size_t>(i) * nr + j] = 1.0;
  l3 = l2;
  for (int i = 0; i < nr; ++i)
    for (int j = 0; j < nr; ++j) {
      if (l3[static_cast<std::size_t>(i) * nr + j] == 1.0) continue;
      for (int k : adj[i])
        if (adj[j].count(k)) {
          l3[static_cast<std::size_t>(i) * nr + j] = 1.0;
          break;
        }
    }

  MaskSet masks;
  masks.m_sr = Tensor::from({ns, nr}, std::move(sr));
  masks.m_rr_levels.push_back(Tensor::from({nr, nr}, std::move(l1)));
  masks.m_rr_levels.push_back(Tensor::from({nr, nr}, std::move(l2)));
  masks.m_rr_levels.push_back(Tensor::from({nr, nr}, std::move(l3)));
  masks.m_rr_levels.push_back(Tensor::from({nr, nr}, std::move(l4)));
  return masks;
}

struct IncidentMeta {
  std::string incident_id;
  std::string road_id;
  double milepost_miles = 0.0;
  std::int64_t validation_index = 0;  // five-minute bins from epoch start
  std::string category;
};

// One training example: T = t_bv + t_av timestamps of sensor features
// around the validation time, with impact labels in raw units.
struct IncidentSample {
  Tensor x;  // [|S| x T x C_in]
  int t_bv = 0;
  int t_av = 0;
  double y_dur_min = 0.0;
  double y_len_miles = 0.0;
  IncidentMeta meta;
};

inline std::vector<std::string> validate_sample(const IncidentSample& sample,
                                                const RoadNetwork& net) {
  std::vector<std::string> out;
  if (!sample.x.defined() || sample.x.ndim() != 3) {
    out.push_back("x: expected a 3-D tensor [sensors x T x channels]");
    return out;
  }
  if (sample.x.dim(0) != net.n_sensors())
    out.push_back("x: sensor count " + std::to_string(sample.x.dim(0)) +
                  " does not match network (" +
                  std::to_string(net.n_sensors()) + ")");
  if (sample.x.dim(1) != sample.t_bv + sample.t_av)
    out.push_back("T: tensor has " + std::to_string(sample.x.dim(1)) +
                  " timestamps but t_bv + t_av = " +
                  std::to_string(sample.t_bv + sample.t_av));
  if (sample.t_bv <= 0 || sample.t_av <= 0)
    out.push_back("t_bv/t_av: both segments must be non-empty");
  if (sample.y_dur_min < 30.0)
    out.push_back("y_dur: " + std::to_string(sample.y_dur_min) +
                  " min is below the 30-minute filter");
  if (sample.y_len_miles < 0.0)
    out.push_back("y_len: negative impact length");
  if (!all_finite(sample.x)) out.push_back("x: contains NaN/Inf");
  if (net.road_index(sample.meta.road_id) < 0)
    out.push_back("meta: unknown road " + sample.meta.road_id);
  return out;
}

}  // namespace impact
