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

#include <algorithm>
#include <cmath>
#include <set>

#include "sphnet/errors.hpp"
#include "sphnet/geometry.hpp"
#include "sphnet/oracles.hpp"
#include "sphnet/rng.hpp"

using namespace sphnet;

namespace {

MolecularStructure two_atoms(double dist) {
  MolecularStructure s;
  s.atomic_numbers = {6, 6};
  s.positions = {{0, 0, 0}, {0, 0, dist}};
  return s;
}

MolecularStructure chain(int n, double spacing) {
  MolecularStructure s;
  for (int i = 0; i < n; ++i) {
    s.atomic_numbers.push_back(6);
    s.positions.push_back({0, 0, spacing * i});
  }
  return s;
}

}  // namespace

TEST_CASE("build_neighbors basics") {
  CHECK(build_neighbors(two_atoms(6.0), 5.0).empty());

  auto pairs = build_neighbors(two_atoms(2.0), 5.0);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].i == 0);
  CHECK(pairs[0].j == 1);
  CHECK(pairs[0].r == doctest::Approx(2.0));
  CHECK(pairs[0].dir.z == doctest::Approx(1.0));
  CHECK(pairs[1].dir.z == doctest::Approx(-1.0));

  CHECK_THROWS_AS(build_neighbors(two_atoms(1e-9), 5.0), DataError);
  CHECK_THROWS_AS(build_neighbors(two_atoms(2.0), 0.0), std::invalid_argument);
}

TEST_CASE("chain neighbor counts agree with direct distance enumeration") {
  const int n = 10;
  const double spacing = 1.28, r_cut = 2.5;
  MolecularStructure s = chain(n, spacing);
  auto pairs = build_neighbors(s, r_cut);

  // oracle: count by direct enumeration of pair distances
  std::vector<int> expected(n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (spacing * std::abs(i - j) <= r_cut) expected[i]++;
    }
  std::vector<int> got(n, 0);
  for (const auto& p : pairs) got[p.i]++;
  CHECK(got == expected);
}

TEST_CASE("cosine cutoff reference points") {
  CHECK(cosine_cutoff(0.0, 5.0) == doctest::Approx(1.0));
  CHECK(cosine_cutoff(5.0, 5.0) == 0.0);
  CHECK(cosine_cutoff(2.5, 5.0) == doctest::Approx(0.5));
  CHECK(cosine_cutoff(7.0, 5.0) == 0.0);
}

TEST_CASE("polynomial cutoff reference points") {
  for (int p : {3, 6, 9}) {
    CHECK(polynomial_cutoff(0.0, p) == doctest::Approx(1.0));
    CHECK(polynomial_cutoff(1.0, p) == 0.0);
    CHECK(polynomial_cutoff(1.5, p) == 0.0);
  }
  // golden value, p = 6, x = 0.5: 1 - 28 x^6 + 48 x^7 - 21 x^8
  CHECK(polynomial_cutoff(0.5, 6) == doctest::Approx(0.85546875).epsilon(1e-14));
  CHECK_THROWS_AS(polynomial_cutoff(-0.1, 6), std::invalid_argument);
}

TEST_CASE("sphc distance matrices") {
  using so3::DegreeRange;
  using so3::IrrepsVector;
  DegreeRange L(1, 2);

  SUBCASE("identical coordinates give a (numerically) zero matrix") {
    std::vector<double> v(8, 0.3);
    std::vector<IrrepsVector> chi(4, IrrepsVector(L, v));
    Tensor X = sphc_distance_matrix(chi);
    for (int i = 0; i < 4; ++i)
      CHECK(X.v[static_cast<size_t>(i * 4 + i)] == 0.0);
    for (double x : X.v) CHECK(x < 1.1e-6);  // safe-norm floor
  }

  SUBCASE("hand-set blocks match direct vector norms and are symmetric") {
    Rng rng(3);
    std::vector<IrrepsVector> chi;
    for (int a = 0; a < 3; ++a) {
      std::vector<double> v(8);
      for (double& x : v) x = rng.normal();
      chi.emplace_back(L, v);
    }
    Tensor X = sphc_distance_matrix(chi);
    auto per = sphc_distance_per_degree(chi);
    REQUIRE(per.size() == 2);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        CHECK(X.v[static_cast<size_t>(i * 3 + j)] ==
              X.v[static_cast<size_t>(j * 3 + i)]);
        if (i == j) continue;
        double s = 0;
        for (int k = 0; k < 8; ++k) {
          double d = chi[static_cast<size_t>(i)].data[static_cast<size_t>(k)] -
                     chi[static_cast<size_t>(j)].data[static_cast<size_t>(k)];
          s += d * d;
        }
        CHECK(X.v[static_cast<size_t>(i * 3 + j)] ==
              doctest::Approx(std::sqrt(s + kSafeNormEps)).epsilon(1e-12));
        // degree-1 block distance
        double s1 = 0;
        for (int k = 0; k < 3; ++k) {
          double d = chi[static_cast<size_t>(i)].data[static_cast<size_t>(k)] -
                     chi[static_cast<size_t>(j)].data[static_cast<size_t>(k)];
          s1 += d * d;
        }
        CHECK(per[0].v[static_cast<size_t>(i * 3 + j)] ==
              doctest::Approx(std::sqrt(s1 + kSafeNormEps)).epsilon(1e-12));
      }
  }
}

TEST_CASE("spherical neighborhoods") {
  SUBCASE("n = 1 gives an empty list") {
    Tensor X = Tensor::zeros({1, 1});
    CHECK(spherical_neighbors(X, 1.0, 6).empty());
  }

  SUBCASE("n = 2 with distinct coordinates is empty (closed-form softmax)") {
    Tensor X = Tensor::zeros({2, 2});
    X.v = {0.0, 0.7, 0.7, 0.0};
    CHECK(spherical_neighbors(X, 1.0, 6).empty());
  }

  SUBCASE("weights lie in (0, 1] and vanish toward the cut") {
    Rng rng(9);
    const int n = 12;
    // random symmetric zero-diagonal matrix
    Tensor X = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) {
        double d = rng.uniform(0.0, 2.0);
        X.v[static_cast<size_t>(i * n + j)] = d;
        X.v[static_cast<size_t>(j * n + i)] = d;
      }
    auto pairs = spherical_neighbors(X, 1.0, 6);
    CHECK(!pairs.empty());
    for (const auto& p : pairs) {
      CHECK(p.weight > 0.0);
      CHECK(p.weight <= 1.0);
      CHECK(p.chi_rescaled < 1.0 / n);
      CHECK(p.i != p.j);
    }
    // rows of the softmax-rescaled matrix sum to 1 (reconstruct one row)
    int i = pairs[0].i;
    const double* xr = X.v.data() + static_cast<size_t>(i) * n;
    double z = 0;
    for (int j = 0; j < n; ++j) z += std::exp(xr[j]);
    double sum = 0;
    for (int j = 0; j < n; ++j) sum += std::exp(xr[j]) / z;
    CHECK(sum == doctest::Approx(1.0));
  }

  SUBCASE("input validation") {
    Tensor bad = Tensor::zeros({2, 2});
    bad.v = {0.0, 0.5, 0.4, 0.0};
    CHECK_THROWS_AS(spherical_neighbors(bad, 1.0, 6), std::invalid_argument);
    Tensor diag = Tensor::zeros({2, 2});
    diag.v = {0.1, 0.5, 0.5, 0.0};
    CHECK_THROWS_AS(spherical_neighbors(diag, 1.0, 6), std::invalid_argument);
  }
}

TEST_CASE("neighbor lists are invariant under rigid motion") {
  Rng rng(15);
  MolecularStructure s;
  for (int i = 0; i < 8; ++i) {
    s.atomic_numbers.push_back(1 + static_cast<int>(rng.index(8)));
    s.positions.push_back(
        {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
  }
  auto base = build_neighbors(s, 3.0);

  Mat3 R = oracles::random_rotation(rng);
  Vec3 t{1.5, -2.0, 0.7};
  MolecularStructure moved = s;
  for (auto& p : moved.positions) p = R.apply(p) + t;
  auto rotated = build_neighbors(moved, 3.0);

  REQUIRE(base.size() == rotated.size());
  for (size_t k = 0; k < base.size(); ++k) {
    CHECK(base[k].i == rotated[k].i);
    CHECK(base[k].j == rotated[k].j);
    CHECK(base[k].r == doctest::Approx(rotated[k].r).epsilon(1e-12));
    // directions rotate covariantly
    Vec3 rd = R.apply(base[k].dir);
    CHECK(rd.x == doctest::Approx(rotated[k].dir.x).epsilon(1e-9));
    CHECK(rd.y == doctest::Approx(rotated[k].dir.y).epsilon(1e-9));
    CHECK(rd.z == doctest::Approx(rotated[k].dir.z).epsilon(1e-9));
  }
}

TEST_CASE("permuting atoms permutes pair lists consistently") {
  Rng rng(25);
  for (int trial = 0; trial < 5; ++trial) {
    MolecularStructure s;
    int n = 5 + static_cast<int>(rng.index(6));
    for (int i = 0; i < n; ++i) {
      s.atomic_numbers.push_back(1 + static_cast<int>(rng.index(8)));
      s.positions.push_back(
          {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)});
    }
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    rng.shuffle(perm);  // perm[new] = old
    MolecularStructure sp;
    sp.atomic_numbers.resize(static_cast<size_t>(n));
    sp.positions.resize(static_cast<size_t>(n));
    std::vector<int> inv(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      sp.atomic_numbers[static_cast<size_t>(i)] =
          s.atomic_numbers[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      sp.positions[static_cast<size_t>(i)] =
          s.positions[static_cast<size_t>(perm[static_cast<size_t>(i)])];
      inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
    }
    auto base = build_neighbors(s, 3.0);
    auto permuted = build_neighbors(sp, 3.0);
    REQUIRE(base.size() == permuted.size());
    std::set<std::pair<int, int>> base_set, perm_set;
    for (const auto& p : base)
      base_set.insert({inv[static_cast<size_t>(p.i)],
                       inv[static_cast<size_t>(p.j)]});
    for (const auto& p : permuted) perm_set.insert({p.i, p.j});
    CHECK(base_set == perm_set);
  }
}
