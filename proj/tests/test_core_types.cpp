#include "nproj/core_types.hpp"
#include "nproj/classical_sim.hpp"
#include "nproj/dataset_io.hpp"
#include "nproj/rng.hpp"

#include <doctest.h>

#include <cstdio>
#include <fstream>

using namespace nproj;

namespace {

SystemState make_state(std::initializer_list<double> xs, std::initializer_list<int> pinned = {}) {
  SystemState s;
  s.dim = 2;
  s.positions.resize(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double v : xs) s.positions[i++] = v;
  s.pin_mask.assign(static_cast<std::size_t>(s.positions.size() / 2), 0);
  for (int p : pinned) s.pin_mask[static_cast<std::size_t>(p)] = 1;
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("state_slice prefix keeps the first scalars") {
  const SystemState s = make_state({0, 1, 2, 3, 4, 5, 6, 7});
  const SystemState sub = state_slice(s, {0, 1});
  REQUIRE(sub.particle_count() == 2);
  for (int i = 0; i < 4; ++i) CHECK(sub.positions[i] == s.positions[i]);
}

TEST_CASE("state_slice with all indices is the identity") {
  const SystemState s = make_state({0, 1, 2, 3, 4, 5, 6, 7}, {2});
  const SystemState sub = state_slice(s, {0, 1, 2, 3});
  CHECK(sub.positions == s.positions);
  CHECK(sub.pin_mask == s.pin_mask);
}

TEST_CASE("state_slice rejects out-of-range and duplicate indices") {
  const SystemState s = make_state({0, 1, 2, 3, 4, 5, 6, 7});
  CHECK_THROWS_AS(state_slice(s, {5}), std::out_of_range);
  CHECK_THROWS_AS(state_slice(s, {1, 1}), std::invalid_argument);
}

TEST_CASE("scatter_add records sums and counts") {
  const SystemState target = make_state({0, 0, 0, 0});
  CorrectionBuffer buf(2, 2);
  VectorXd v(2);
  v << 1, 1;
  buf.scatter_add(target, {0}, v);
  CHECK(buf.count(0) == 1);
  const VectorXd out = buf.finalize();
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 1.0);
  CHECK(out[2] == 0.0);
}

TEST_CASE("two scatters at one particle average on finalize") {
  const SystemState target = make_state({0, 0});
  CorrectionBuffer buf(1, 2);
  VectorXd a(2), b(2);
  a << 2, 0;
  b << 0, 2;
  buf.scatter_add(target, {0}, a);
  buf.scatter_add(target, {0}, b);
  const VectorXd out = buf.finalize();
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 1.0);
}

TEST_CASE("scatter at a pinned particle leaves the buffer unchanged") {
  const SystemState target = make_state({0, 0}, {0});
  CorrectionBuffer buf(1, 2);
  VectorXd v(2);
  v << 3, 3;
  buf.scatter_add(target, {0}, v);
  CHECK(buf.count(0) == 0);
  CHECK(buf.finalize().isZero(0.0));
}

TEST_CASE("scatter_add rejects a length mismatch") {
  const SystemState target = make_state({0, 0, 0, 0});
  CorrectionBuffer buf(2, 2);
  VectorXd v(3);
  v << 1, 2, 3;
  CHECK_THROWS_AS(buf.scatter_add(target, {0}, v), std::invalid_argument);
}

TEST_CASE("slice then scatter reproduces unpinned coordinates exactly") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 3 + static_cast<int>(rng.below(6));
    SystemState s;
    s.dim = 2;
    s.positions.resize(2 * m);
    for (Eigen::Index i = 0; i < s.positions.size(); ++i) s.positions[i] = rng.uniform(-5, 5);
    s.pin_mask.assign(static_cast<std::size_t>(m), 0);
    if (m > 2) s.pin_mask[1] = 1;

    std::vector<int> indices;
    for (int i = 0; i < m; ++i) {
      if (rng.unit() < 0.7) indices.push_back(i);
    }
    if (indices.empty()) indices.push_back(0);

    const SystemState sub = state_slice(s, indices);
    CorrectionBuffer buf(m, 2);
    buf.scatter_add(s, indices, sub.positions);
    const VectorXd out = buf.finalize();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const int p = indices[k];
      if (s.pinned(p)) continue;
      CHECK(out[2 * p] == s.positions[2 * p]);
      CHECK(out[2 * p + 1] == s.positions[2 * p + 1]);
    }
  }
}

TEST_CASE("dataset round trip is bit exact") {
  const ScenarioSpec spec = scenario_preset(Scenario::rope);
  const TrajectoryDataset data = generate_dataset(spec, 3, 5, 17, 1e-3, {});

  const std::string p1 = "roundtrip_a.nprj";
  const std::string p2 = "roundtrip_b.nprj";
  write_dataset(p1, data);
  const TrajectoryDataset back = read_dataset(p1);
  write_dataset(p2, back);

  CHECK(read_file(p1) == read_file(p2));
  CHECK(read_file(sidecar_path(p1)) == read_file(sidecar_path(p2)));
  REQUIRE(back.samples.size() == data.samples.size());
  CHECK(back.observation_indices == data.observation_indices);
  CHECK(back.noise_sigma == data.noise_sigma);
  CHECK(back.seed == data.seed);
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    for (std::size_t f = 0; f < data.samples[s].frames.size(); ++f) {
      CHECK(back.samples[s].frames[f].positions == data.samples[s].frames[f].positions);
    }
  }
  for (const auto* p : {&p1, &p2}) {
    std::remove(p->c_str());
    std::remove(sidecar_path(*p).c_str());
  }
}

TEST_CASE("dataset header layout") {
  const ScenarioSpec spec = scenario_preset(Scenario::rigid1);
  const TrajectoryDataset data = generate_dataset(spec, 2, 3, 5, 0.0, {});
  const std::string path = "header_check.nprj";
  write_dataset(path, data);
  const std::string bytes = read_file(path);

  REQUIRE(bytes.size() >= 41);
  CHECK(bytes.substr(0, 5) == "NPRJ1");
  auto u32_at = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    return v;
  };
  CHECK(u32_at(5) == 2);    // dim
  CHECK(u32_at(9) == 4);    // observed particles
  CHECK(u32_at(13) == 2);   // samples
  CHECK(u32_at(17) == 3);   // frames
  CHECK(u32_at(29) == 0);   // scenario tag rigid1
  CHECK(u32_at(33) == 4);   // pin mask length
  // header 37 + pins 4 + 2 samples * 3 frames * 4 particles * 2 axes * 8 bytes
  CHECK(bytes.size() == 37 + 4 + 2 * 3 * 4 * 2 * 8);
  std::remove(path.c_str());
  std::remove(sidecar_path(path).c_str());
}

TEST_CASE("partition bookkeeping") {
  GroupPartition p = GroupPartition::make({{0, 1, 2}, {2, 3}}, {"a", "b"});
  p.validate(4);
  CHECK(p.shared.at(2) == std::vector<int>{0, 1});
  CHECK(p.shared.at(0) == std::vector<int>{0});

  GroupPartition missing = GroupPartition::make({{0, 1}}, {"a"});
  CHECK_THROWS_AS(missing.validate(3), std::invalid_argument);
  GroupPartition dup = GroupPartition::make({{0, 0, 1}}, {"a"});
  CHECK_THROWS_AS(dup.validate(2), std::invalid_argument);
}

TEST_CASE("projection config validation") {
  ProjectionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.iterations = 5;
  cfg.relaxation = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.relaxation = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("mass model validation") {
  MassModel m = MassModel::uniform(3);
  CHECK_NOTHROW(m.validate());
  m.per_particle_mass[1] = 0.0;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}
