#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "impact/csv.hpp"
#include "impact/graph.hpp"

using namespace impact;
namespace fs = std::filesystem;

namespace {

RoadNetwork chain_network() {
  // r1 -- r2 -- r3, r1 and r3 disjoint
  RoadNetwork net;
  net.roads = {{"r1", 10.0}, {"r2", 10.0}, {"r3", 10.0}};
  net.intersections = {{"r1", "r2", 5.0, 1.0}, {"r2", "r3", 9.0, 2.0}};
  net.sensors = {{"s1", "r1", 2.0}, {"s2", "r2", 4.0}, {"s3", "r3", 6.0}};
  return net;
}

double mask_ones(const Tensor& m) {
  double n = 0.0;
  for (double v : m.data()) n += v;
  return n;
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("impact_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("single road, single sensor masks") {
  RoadNetwork net;
  net.roads = {{"r1", 5.0}};
  net.sensors = {{"s1", "r1", 2.5}};
  MaskSet m = build_masks(net);
  REQUIRE(m.m_sr.shape() == Shape{1, 1});
  REQUIRE(m.m_sr.at({0, 0}) == 1.0);
  for (const auto& lvl : m.m_rr_levels) {
    REQUIRE(lvl.shape() == Shape{1, 1});
    REQUIRE(lvl.at({0, 0}) == 1.0);
  }
}

TEST_CASE("two intersecting roads: level 2 is all ones") {
  RoadNetwork net;
  net.roads = {{"a", 8.0}, {"b", 8.0}};
  net.intersections = {{"a", "b", 4.0, 4.0}};
  net.sensors = {{"s1", "a", 1.0}};
  MaskSet m = build_masks(net);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      REQUIRE(m.m_rr_levels[1].at({i, j}) == 1.0);
}

TEST_CASE("chain graph: shared neighbor appears at level 3 only") {
  MaskSet m = build_masks(chain_network());
  REQUIRE(m.m_rr_levels[1].at({0, 2}) == 0.0);
  REQUIRE(m.m_rr_levels[1].at({2, 0}) == 0.0);
  REQUIRE(m.m_rr_levels[2].at({0, 2}) == 1.0);
  REQUIRE(m.m_rr_levels[2].at({2, 0}) == 1.0);
}

TEST_CASE("mask levels are cumulative, symmetric, and monotone") {
  std::mt19937_64 rng(42);
  RoadNetwork net;
  const int nr = 9;
  for (int i = 0; i < nr; ++i)
    net.roads.push_back({"r" + std::to_string(i), 10.0});
  std::uniform_int_distribution<int> pick(0, nr - 1);
  for (int e = 0; e < 12; ++e) {
    int a = pick(rng), b = pick(rng);
    if (a == b) continue;
    net.intersections.push_back(
        {net.roads[a].road_id, net.roads[b].road_id, 1.0, 1.0});
  }
  for (int i = 0; i < 20; ++i)
    net.sensors.push_back(
        {"s" + std::to_string(i), net.roads[pick(rng)].road_id, 5.0});

  MaskSet m = build_masks(net);
  double prev = 0.0;
  for (int lvl = 0; lvl < 4; ++lvl) {
    const Tensor& mask = m.m_rr_levels[lvl];
    for (int i = 0; i < nr; ++i)
      for (int j = 0; j < nr; ++j) {
        REQUIRE(mask.at({i, j}) == mask.at({j, i}));
        if (lvl > 0 && m.m_rr_levels[lvl - 1].at({i, j}) == 1.0)
          REQUIRE(mask.at({i, j}) == 1.0);  // superset of previous level
      }
    const double ones = mask_ones(mask);
    REQUIRE(ones >= prev);
    prev = ones;
  }
  REQUIRE(mask_ones(m.m_rr_levels[0]) == nr);
  REQUIRE(mask_ones(m.m_rr_levels[3]) == nr * nr);

  // column j counts the sensors on road j
  for (int j = 0; j < nr; ++j) {
    double col = 0.0;
    for (int i = 0; i < net.n_sensors(); ++i) col += m.m_sr.at({i, j});
    int expected = 0;
    for (const auto& s : net.sensors)
      expected += s.road_id == net.roads[j].road_id;
    REQUIRE(col == expected);
  }
}

TEST_CASE("build_masks is permutation equivariant over roads") {
  RoadNetwork net = chain_network();
  MaskSet m = build_masks(net);

  // relabel roads: new order r3, r1, r2 (permutation p maps old->new)
  RoadNetwork permuted = net;
  permuted.roads = {net.roads[2], net.roads[0], net.roads[1]};
  MaskSet mp = build_masks(permuted);
  const int p[3] = {1, 2, 0};  // old index -> new index
  for (int lvl = 0; lvl < 4; ++lvl)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        REQUIRE(m.m_rr_levels[lvl].at({i, j}) ==
                mp.m_rr_levels[lvl].at({p[i], p[j]}));
  for (int s = 0; s < 3; ++s)
    for (int j = 0; j < 3; ++j)
      REQUIRE(m.m_sr.at({s, j}) == mp.m_sr.at({s, p[j]}));
}

TEST_CASE("table-scale mask counts") {
  RoadNetwork net;
  const int nr = 28, ns = 1150;
  for (int i = 0; i < nr; ++i)
    net.roads.push_back({"r" + std::to_string(i), 50.0});
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> pick(0, nr - 1);
  for (int i = 0; i < ns; ++i)
    net.sensors.push_back(
        {"s" + std::to_string(i), net.roads[pick(rng)].road_id, 10.0});
  MaskSet m = build_masks(net);
  REQUIRE(m.m_sr.shape() == Shape{1150, 28});
  REQUIRE(mask_ones(m.m_sr) == ns);  // one road per sensor
}

TEST_CASE("validate_sample flags the named violations") {
  RoadNetwork net = chain_network();
  IncidentSample s;
  s.x = Tensor::zeros({3, 9, 2});
  s.t_bv = 6;
  s.t_av = 3;
  s.y_dur_min = 45.0;
  s.y_len_miles = 1.0;
  s.meta.road_id = "r1";
  REQUIRE(validate_sample(s, net).empty());

  IncidentSample bad_t = s;
  bad_t.t_bv = 5;
  auto v = validate_sample(bad_t, net);
  REQUIRE_FALSE(v.empty());
  REQUIRE(v.front().find("t_bv + t_av") != std::string::npos);

  IncidentSample short_dur = s;
  short_dur.y_dur_min = 10.0;
  v = validate_sample(short_dur, net);
  REQUIRE(v.size() == 1);
  REQUIRE(v.front().find("30-minute") != std::string::npos);
}

TEST_CASE("dataset round-trips through the CSV formats") {
  fs::path dir = temp_dir("roundtrip");
  RoadNetwork net = chain_network();
  write_network(dir, net);

  MeasurementGrid grid;
  grid.resize(3, 16);
  for (int s = 0; s < 3; ++s)
    for (int t = 0; t < 16; ++t) {
      const auto i = grid.idx(s, t);
      grid.speed[i] = 60.0 + s - 0.25 * t;
      grid.occupancy[i] = 0.1 + 0.01 * s;
      grid.present[i] = 1;
    }
  grid.present[grid.idx(1, 5)] = 0;  // one missing cell
  write_measurements(dir, net, grid);

  std::vector<IncidentRecord> recs;
  IncidentRecord rec;
  rec.meta = {"i1", "r2", 3.0, 8, "collision"};
  rec.duration_min = 45.0;
  rec.impact_len_miles = 1.5;
  recs.push_back(rec);
  write_incidents(dir, recs);

  Dataset ds = load_dataset(dir);
  REQUIRE(ds.network.n_roads() == 3);
  REQUIRE(ds.network.n_sensors() == 3);
  REQUIRE(ds.grid.n_bins == 16);
  REQUIRE(ds.grid.present[ds.grid.idx(1, 5)] == 0);
  REQUIRE(ds.grid.speed[ds.grid.idx(2, 3)] == Catch::Approx(61.25));
  REQUIRE(ds.records.size() == 1);
  REQUIRE(ds.samples.size() == 1);
  REQUIRE(ds.samples[0].x.shape() == Shape{3, 9, 2});
  REQUIRE(ds.samples[0].y_dur_min == 45.0);
  REQUIRE(ds.violations.empty());
  fs::remove_all(dir);
}

TEST_CASE("empty incident file loads an empty sample list") {
  fs::path dir = temp_dir("empty_incidents");
  RoadNetwork net = chain_network();
  write_network(dir, net);
  MeasurementGrid grid;
  grid.resize(3, 4);
  write_measurements(dir, net, grid);
  write_incidents(dir, {});
  Dataset ds = load_dataset(dir);
  REQUIRE(ds.samples.empty());
  REQUIRE(ds.network.n_roads() == 3);
  fs::remove_all(dir);
}

TEST_CASE("referential errors carry file and line") {
  fs::path dir = temp_dir("bad_sensor");
  write_network(dir, chain_network());
  {
    std::ofstream out(dir / "sensors.csv");
    out << "sensor_id,road_id,milepost_miles\n";
    out << "s1,r1,2.0\n";
    out << "s2,nope,1.0\n";
  }
  try {
    read_network(dir);
    FAIL("expected a parse error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("sensors.csv:3") != std::string::npos);
    REQUIRE(msg.find("nope") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("incident windows outside the span are reported") {
  fs::path dir = temp_dir("window");
  RoadNetwork net = chain_network();
  write_network(dir, net);
  MeasurementGrid grid;
  grid.resize(3, 12);
  for (std::size_t i = 0; i < grid.present.size(); ++i) {
    grid.present[i] = 1;
    grid.speed[i] = 60;
    grid.occupancy[i] = 0.1;
  }
  write_measurements(dir, net, grid);
  IncidentRecord early;
  early.meta = {"i_early", "r1", 1.0, 2, "debris"};  // needs bins [-4, 5)
  early.duration_min = 45.0;
  write_incidents(dir, {early});
  Dataset ds = load_dataset(dir);
  REQUIRE(ds.samples.empty());
  REQUIRE(ds.violations.size() == 1);
  REQUIRE(ds.violations.front().find("window") != std::string::npos);
  fs::remove_all(dir);
}
