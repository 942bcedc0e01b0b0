// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "sphnet/data.hpp"
#include "sphnet/errors.hpp"
#include "sphnet/oracles.hpp"

using namespace sphnet;

namespace {

std::string tmp_file(const std::string& name) {
  return std::string("/tmp/sphnet_test_") + name;
}

}  // namespace

TEST_CASE("extxyz round trip is exact") {
  Rng rng(101);
  Dataset ds;
  MolecularStructure s;
  for (int i = 0; i < 5; ++i) {
    s.atomic_numbers.push_back(1 + static_cast<int>(rng.index(10)));
    s.positions.push_back(
        {rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)});
  }
  s.energy = rng.normal() * 3.0;
  s.forces.emplace();
  for (int i = 0; i < 5; ++i)
    s.forces->push_back({rng.normal(), rng.normal(), rng.normal()});
  ds.structures.push_back(s);

  std::string path = tmp_file("roundtrip.xyz");
  write_extxyz(ds, path);
  Dataset back = read_extxyz(path);
  REQUIRE(back.size() == 1);
  CHECK(back.has_forces);
  const auto& r = back.structures[0];
  CHECK(r.atomic_numbers == s.atomic_numbers);
  CHECK(*r.energy == *s.energy);  // %.17g round-trips doubles exactly
  for (int i = 0; i < 5; ++i) {
    CHECK(r.positions[static_cast<size_t>(i)].x ==
          s.positions[static_cast<size_t>(i)].x);
    CHECK((*r.forces)[static_cast<size_t>(i)].z ==
          (*s.forces)[static_cast<size_t>(i)].z);
  }
  std::remove(path.c_str());
}

TEST_CASE("extxyz error paths") {
  std::string path = tmp_file("bad.xyz");
  {
    std::ofstream f(path);
    f << "3\nenergy=1.0\nC 0 0 0\nC 0 0 1\n";
  }
  CHECK_THROWS_WITH_AS(read_extxyz(path),
                       doctest::Contains("declared 3 atoms"), DataError);

  {
    std::ofstream f(path);
    f << "1\nnothing=here\nC 0 0 0\n";
  }
  CHECK_THROWS_WITH_AS(read_extxyz(path), doctest::Contains("energy"),
                       DataError);

  {
    std::ofstream f(path);
    f << "1\nenergy=1.0\nQq 0 0 0\n";
  }
  CHECK_THROWS_AS(read_extxyz(path), DataError);

  {
    std::ofstream f(path);
    f << "x\nenergy=1.0\n";
  }
  CHECK_THROWS_WITH_AS(read_extxyz(path), doctest::Contains("count"),
                       DataError);
  std::remove(path.c_str());
}

TEST_CASE("extxyz without forces flags the dataset energy-only") {
  std::string path = tmp_file("noforce.xyz");
  {
    std::ofstream f(path);
    f << "2\nenergy=0.5\nC 0 0 0\nO 0 0 1.2\n";
  }
  Dataset ds = read_extxyz(path);
  CHECK_FALSE(ds.has_forces);
  CHECK_FALSE(ds.structures[0].forces.has_value());
  CHECK(ds.structures[0].atomic_numbers == std::vector<int>{6, 8});
  std::remove(path.c_str());
}

TEST_CASE("rotor chain geometry and reference energies") {
  RotorChainSpec spec;
  spec.n_carbons = 10;
  MolecularStructure s0 = gen_rotor_chain(spec, 0.0);
  CHECK(s0.n_atoms() == 14);  // n_carbons + 4
  CHECK(*s0.energy == doctest::Approx(spec.amplitude));

  MolecularStructure s90 = gen_rotor_chain(spec, std::numbers::pi / 2);
  CHECK(*s90.energy == doctest::Approx(-spec.amplitude));

  // stationary points of cos(2 theta): forces vanish
  for (const auto& f : *s0.forces) {
    CHECK(std::fabs(f.x) < 1e-10);
    CHECK(std::fabs(f.y) < 1e-10);
    CHECK(std::fabs(f.z) < 1e-10);
  }

  RotorChainSpec odd = spec;
  odd.n_carbons = 7;
  CHECK_THROWS_AS(gen_rotor_chain(odd, 0.0), ConfigError);
}

TEST_CASE("rotor forces match central finite differences of the energy") {
  RotorChainSpec spec;
  spec.n_carbons = 6;
  MolecularStructure s = gen_rotor_chain(spec, 0.8);
  const double h = 1e-5;
  for (int a = 0; a < s.n_atoms(); ++a)
    for (int c = 0; c < 3; ++c) {
      auto f = [&](const std::vector<double>& x) {
        MolecularStructure sp = s;
        for (int i = 0; i < sp.n_atoms(); ++i) {
          sp.positions[static_cast<size_t>(i)].x =
              x[static_cast<size_t>(3 * i)];
          sp.positions[static_cast<size_t>(i)].y =
              x[static_cast<size_t>(3 * i + 1)];
          sp.positions[static_cast<size_t>(i)].z =
              x[static_cast<size_t>(3 * i + 2)];
        }
        rotor_energy_forces(sp, spec);
        return *sp.energy;
      };
      std::vector<double> x0;
      for (const auto& p : s.positions) {
        x0.push_back(p.x);
        x0.push_back(p.y);
        x0.push_back(p.z);
      }
      double fd = -oracles::central_diff(f, x0, static_cast<size_t>(3 * a + c),
                                         h);
      const Vec3& fa = (*s.forces)[static_cast<size_t>(a)];
      double an = c == 0 ? fa.x : (c == 1 ? fa.y : fa.z);
      double denom = std::max({std::fabs(fd), std::fabs(an), 1e-3});
      CHECK(std::fabs(an - fd) / denom < 1e-6);
    }
}

TEST_CASE("rotor energy is rigid-motion invariant, forces covariant") {
  RotorChainSpec spec;
  spec.n_carbons = 6;
  Rng rng(33);
  MolecularStructure s = gen_rotor_chain(spec, 1.1);

  Mat3 R = oracles::random_rotation(rng);
  Vec3 t{0.4, -1.2, 2.2};
  MolecularStructure sr = s;
  for (auto& p : sr.positions) p = R.apply(p) + t;
  rotor_energy_forces(sr, spec);
  CHECK(std::fabs(*sr.energy - *s.energy) < 1e-10);
  for (int a = 0; a < s.n_atoms(); ++a) {
    Vec3 rf = R.apply((*s.forces)[static_cast<size_t>(a)]);
    const Vec3& fr = (*sr.forces)[static_cast<size_t>(a)];
    CHECK(std::fabs(rf.x - fr.x) < 1e-10);
    CHECK(std::fabs(rf.y - fr.y) < 1e-10);
    CHECK(std::fabs(rf.z - fr.z) < 1e-10);
  }
}

TEST_CASE("rotor dataset: seeding and theta-only energy dependence") {
  RotorChainSpec spec;
  spec.n_carbons = 6;
  spec.seed = 7;
  Dataset a = gen_rotor_dataset(spec, 8);
  Dataset b = gen_rotor_dataset(spec, 8);
  REQUIRE(a.size() == 8);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(*a.structures[i].energy == *b.structures[i].energy);

  // same theta under different global orientations gives identical energy
  MolecularStructure s1 = gen_rotor_chain(spec, 0.6);
  Rng rng(55);
  MolecularStructure s2 = s1;
  Mat3 R = oracles::random_rotation(rng);
  for (auto& p : s2.positions) p = R.apply(p);
  rotor_energy_forces(s2, spec);
  CHECK(std::fabs(*s1.energy - *s2.energy) < 1e-12);
}

TEST_CASE("splits are a seeded partition") {
  RotorChainSpec spec;
  spec.n_carbons = 4;
  Dataset ds = gen_rotor_dataset(spec, 101);
  auto [train, valid, test] = make_splits(ds, 80, 10, 42);
  CHECK(train.size() == 80);
  CHECK(valid.size() == 10);
  CHECK(test.size() == 11);

  auto [train2, valid2, test2] = make_splits(ds, 80, 10, 42);
  for (size_t i = 0; i < train.size(); ++i)
    CHECK(*train.structures[i].energy == *train2.structures[i].energy);

  // partition: energies (unique with probability 1) cover the dataset
  std::multiset<double> all;
  for (const auto& d : {train, valid, test})
    for (const auto& s : d.structures) all.insert(*s.energy);
  std::multiset<double> orig;
  for (const auto& s : ds.structures) orig.insert(*s.energy);
  CHECK(all == orig);

  CHECK_THROWS_AS(make_splits(ds, 95, 10, 1), ConfigError);
}
