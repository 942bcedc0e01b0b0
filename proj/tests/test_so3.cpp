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

#include "sphnet/oracles.hpp"
#include "sphnet/rng.hpp"
#include "sphnet/so3.hpp"

using namespace sphnet;
using namespace sphnet::so3;

namespace {

Vec3 random_unit(Rng& rng) {
  while (true) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    double n = v.norm();
    if (n > 1e-6) return v * (1.0 / n);
  }
}

// Independent oracle: real spherical harmonics from the associated Legendre
// recurrence (no Condon-Shortley phase) and trigonometric azimuth factors,
// times the normalization that makes the degree-0 value 1.
double legendre_p(int l, int m, double x) {
  double pmm = 1.0;
  double somx2 = std::sqrt(std::max(0.0, 1.0 - x * x));
  for (int i = 1; i <= m; ++i) pmm *= (2.0 * i - 1.0) * somx2;
  if (l == m) return pmm;
  double pmmp1 = x * (2.0 * m + 1.0) * pmm;
  if (l == m + 1) return pmmp1;
  double pll = 0.0;
  for (int ll = m + 2; ll <= l; ++ll) {
    pll = (x * (2.0 * ll - 1.0) * pmmp1 - (ll + m - 1.0) * pmm) / (ll - m);
    pmm = pmmp1;
    pmmp1 = pll;
  }
  return pll;
}

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

std::vector<double> sph_oracle(int l, const Vec3& n) {
  double ct = n.z;
  double phi = std::atan2(n.y, n.x);
  std::vector<double> out(static_cast<size_t>(2 * l + 1));
  for (int m = -l; m <= l; ++m) {
    int am = std::abs(m);
    double k = std::sqrt(factorial(l - am) / factorial(l + am));
    double p = legendre_p(l, am, ct);
    double v;
    if (m > 0)
      v = std::sqrt(2.0) * k * std::cos(am * phi) * p;
    else if (m == 0)
      v = k * p;
    else
      v = std::sqrt(2.0) * k * std::sin(am * phi) * p;
    out[static_cast<size_t>(m + l)] = v;
  }
  return out;
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("degree range rules") {
  CHECK(DegreeRange::from_lmax(0).l_min == 0);
  CHECK(DegreeRange::from_lmax(3).l_min == 1);
  CHECK(DegreeRange(1, 2).dim() == 8);
  CHECK(DegreeRange(1, 3).offset(3) == 8);
  CHECK_THROWS_AS(DegreeRange(0, 2), std::invalid_argument);
  CHECK_THROWS_AS(DegreeRange(1, 5), std::invalid_argument);
}

TEST_CASE("real_sph reference values") {
  Rng rng(11);
  Vec3 any = random_unit(rng);
  CHECK(real_sph(0, any) == std::vector<double>{1.0});

  auto z = real_sph(1, Vec3{0, 0, 1});
  CHECK(z[0] == doctest::Approx(0.0));
  CHECK(z[1] == doctest::Approx(1.0));
  CHECK(z[2] == doctest::Approx(0.0));

  auto x = real_sph(1, Vec3{1, 0, 0});
  CHECK(x[2] == doctest::Approx(1.0));

  CHECK_THROWS_AS(real_sph(1, Vec3{1, 1, 0}), std::invalid_argument);
}

TEST_CASE("per-degree norm is 1 for every direction") {
  Rng rng(13);
  for (int l = 0; l <= kMaxDegree; ++l)
    for (int t = 0; t < 100; ++t) {
      auto y = real_sph(l, random_unit(rng));
      double n2 = 0;
      for (double v : y) n2 += v * v;
      CHECK(std::fabs(std::sqrt(n2) - 1.0) < 1e-10);
    }
}

TEST_CASE("parity: odd degrees flip under point inversion") {
  Rng rng(17);
  DegreeRange L(1, 4);
  for (int t = 0; t < 20; ++t) {
    Vec3 n = random_unit(rng);
    auto yp = sph_all(L, n);
    auto ym = sph_all(L, n * -1.0);
    for (int l = 1; l <= 4; ++l) {
      double sign = (l % 2) ? -1.0 : 1.0;
      auto bp = yp.block(l);
      auto bm = ym.block(l);
      for (size_t i = 0; i < bp.size(); ++i)
        CHECK(bm[i] == doctest::Approx(sign * bp[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("real_sph matches the Legendre-recurrence oracle") {
  Rng rng(19);
  for (int l = 0; l <= kMaxDegree; ++l)
    for (int t = 0; t < 50; ++t) {
      Vec3 n = random_unit(rng);
      CHECK(max_abs_diff(real_sph(l, n), sph_oracle(l, n)) < 1e-12);
    }
}

TEST_CASE("sph_all layout") {
  auto v = sph_all(DegreeRange(1, 2), Vec3{0, 0, 1});
  CHECK(v.data.size() == 8);
  auto one = sph_all(DegreeRange(1, 1), Vec3{0, 0, 1});
  CHECK(one.data == std::vector<double>{0, 1, 0});
}

TEST_CASE("wigner_d basics") {
  CHECK_THROWS_AS(wigner_d(2, Mat3{{2, 0, 0, 0, 1, 0, 0, 0, 1}}),
                  std::invalid_argument);

  Tensor id2 = wigner_d(2, Mat3::identity());
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(id2.v[static_cast<size_t>(i * 5 + j)] ==
            doctest::Approx(i == j ? 1.0 : 0.0));

  // degree 1 is the rotation expressed in (y, z, x) ordering
  Rng rng(23);
  Mat3 R = oracles::random_rotation(rng);
  Tensor d1 = wigner_d(1, R);
  const int perm[3] = {1, 2, 0};
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      CHECK(d1.v[static_cast<size_t>(3 * a + b)] ==
            doctest::Approx(R.at(perm[a], perm[b])).epsilon(1e-12));
}

TEST_CASE("wigner_d homomorphism and orthogonality") {
  Rng rng(29);
  for (int l = 1; l <= kMaxDegree; ++l)
    for (int t = 0; t < 5; ++t) {
      Mat3 r1 = oracles::random_rotation(rng);
      Mat3 r2 = oracles::random_rotation(rng);
      Tensor d12 = wigner_d(l, r1 * r2);
      Tensor d1 = wigner_d(l, r1);
      Tensor d2 = wigner_d(l, r2);
      int d = 2 * l + 1;
      double err = 0;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double s = 0;
          for (int k = 0; k < d; ++k)
            s += d1.v[static_cast<size_t>(i * d + k)] *
                 d2.v[static_cast<size_t>(k * d + j)];
          err = std::max(err,
                         std::fabs(s - d12.v[static_cast<size_t>(i * d + j)]));
        }
      CHECK(err < 1e-10);

      double orth = 0;
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double s = 0;
          for (int k = 0; k < d; ++k)
            s += d1.v[static_cast<size_t>(i * d + k)] *
                 d1.v[static_cast<size_t>(j * d + k)];
          orth = std::max(orth, std::fabs(s - (i == j ? 1.0 : 0.0)));
        }
      CHECK(orth < 1e-10);
    }
}

TEST_CASE("wigner_d_block structure") {
  Rng rng(31);
  DegreeRange L(1, 2);
  Tensor idb = wigner_d_block(L, Mat3::identity());
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(idb.v[static_cast<size_t>(i * 8 + j)] ==
            doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));

  Mat3 R = oracles::random_rotation(rng);
  Tensor D = wigner_d_block(L, R);
  // off-block entries exactly zero
  for (int i = 0; i < 3; ++i)
    for (int j = 3; j < 8; ++j) {
      CHECK(D.v[static_cast<size_t>(i * 8 + j)] == 0.0);
      CHECK(D.v[static_cast<size_t>(j * 8 + i)] == 0.0);
    }
  // orthogonal
  double err = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0;
      for (int k = 0; k < 8; ++k)
        s += D.v[static_cast<size_t>(i * 8 + k)] *
             D.v[static_cast<size_t>(j * 8 + k)];
      err = std::max(err, std::fabs(s - (i == j ? 1.0 : 0.0)));
    }
  CHECK(err < 1e-10);
}

TEST_CASE("sph equivariance under the production Wigner-D") {
  Rng rng(37);
  DegreeRange L(1, 4);
  double max_err = 0;
  for (int t = 0; t < 200; ++t) {
    Mat3 R = oracles::random_rotation(rng);
    Vec3 n = random_unit(rng);
    IrrepsVector y = sph_all(L, n);
    IrrepsVector yr = sph_all(L, R.apply(n));
    Tensor D = wigner_d_block(L, R);
    int dim = L.dim();
    for (int i = 0; i < dim; ++i) {
      double s = 0;
      for (int j = 0; j < dim; ++j)
        s += D.v[static_cast<size_t>(i * dim + j)] *
             y.data[static_cast<size_t>(j)];
      max_err = std::max(max_err,
                         std::fabs(s - yr.data[static_cast<size_t>(i)]));
    }
  }
  CHECK(max_err < 1e-9);
}

TEST_CASE("wigner_d matches the sampled least-squares oracle") {
  Rng rng(41);
  for (int l = 1; l <= kMaxDegree; ++l) {
    Mat3 R = oracles::random_rotation(rng);
    Tensor prod = wigner_d(l, R);
    Tensor ls = oracles::wigner_from_samples(l, R, rng);
    CHECK(max_abs_diff(prod.v, ls.v) < 1e-9);
  }
}

TEST_CASE("cg_table triangle rule") {
  CHECK_THROWS_AS(cg_table(0, 2, 1), std::invalid_argument);
  CHECK_NOTHROW(cg_table(1, 2, 1));
}

TEST_CASE("cg(1,1,0) contraction is proportional to the dot product") {
  Rng rng(43);
  double c_ref = 0;
  for (int t = 0; t < 10; ++t) {
    std::vector<double> v = {rng.normal(), rng.normal(), rng.normal()};
    std::vector<double> w = {rng.normal(), rng.normal(), rng.normal()};
    double dot = v[0] * w[0] + v[1] * w[1] + v[2] * w[2];
    auto y = contract(v, 1, w, 1, 0);
    if (t == 0) {
      c_ref = y[0] / dot;
      CHECK(std::fabs(c_ref) > 0.1);
    } else {
      CHECK(y[0] == doctest::Approx(c_ref * dot).epsilon(1e-10));
    }
  }
}

TEST_CASE("cg(1,1,1) contraction is proportional to the cross product") {
  Rng rng(47);
  double c_ref = 0;
  for (int t = 0; t < 10; ++t) {
    Vec3 a{rng.normal(), rng.normal(), rng.normal()};
    Vec3 b{rng.normal(), rng.normal(), rng.normal()};
    // blocks in (y, z, x) ordering
    std::vector<double> ab = {a.y, a.z, a.x};
    std::vector<double> bb = {b.y, b.z, b.x};
    Vec3 cx = a.cross(b);
    std::vector<double> expect = {cx.y, cx.z, cx.x};
    auto y = contract(ab, 1, bb, 1, 1);
    // antisymmetry
    auto yswap = contract(bb, 1, ab, 1, 1);
    for (int i = 0; i < 3; ++i)
      CHECK(y[static_cast<size_t>(i)] ==
            doctest::Approx(-yswap[static_cast<size_t>(i)]).epsilon(1e-10));
    // proportional to the cross product with one global constant
    for (int i = 0; i < 3; ++i) {
      if (std::fabs(expect[static_cast<size_t>(i)]) < 1e-8) continue;
      double r = y[static_cast<size_t>(i)] / expect[static_cast<size_t>(i)];
      if (c_ref == 0)
        c_ref = r;
      else
        CHECK(r == doctest::Approx(c_ref).epsilon(1e-8));
    }
  }
}

TEST_CASE("contraction is bilinear") {
  Rng rng(53);
  std::vector<double> a(5), b(7);
  for (double& x : a) x = rng.normal();
  for (double& x : b) x = rng.normal();
  auto y1 = contract(a, 2, b, 3, 2);
  std::vector<double> a2 = a;
  for (double& x : a2) x *= 2.0;
  auto y2 = contract(a2, 2, b, 3, 2);
  for (size_t i = 0; i < y1.size(); ++i)
    CHECK(y2[i] == doctest::Approx(2.0 * y1[i]).epsilon(1e-12));
  CHECK_THROWS_AS(contract(b, 2, a, 3, 2), std::invalid_argument);
}

TEST_CASE("contract(v, v, 0) of a degree-1 harmonic is direction-independent") {
  Rng rng(59);
  double ref = 0;
  for (int t = 0; t < 20; ++t) {
    auto v = real_sph(1, random_unit(rng));
    auto y = contract(v, 1, v, 1, 0);
    if (t == 0)
      ref = y[0];
    else
      CHECK(y[0] == doctest::Approx(ref).epsilon(1e-10));
  }
}

TEST_CASE("every valid contraction is equivariant") {
  Rng rng(61);
  double max_err = 0;
  for (int l1 = 0; l1 <= kMaxDegree; ++l1)
    for (int l2 = 0; l2 <= kMaxDegree; ++l2)
      for (int l3 = std::abs(l1 - l2); l3 <= std::min(l1 + l2, kMaxDegree);
           ++l3) {
        for (int t = 0; t < 3; ++t) {
          Mat3 R = oracles::random_rotation(rng);
          Tensor D1 = wigner_d(l1, R);
          Tensor D2 = wigner_d(l2, R);
          Tensor D3 = wigner_d(l3, R);
          int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
          std::vector<double> a(static_cast<size_t>(d1)),
              b(static_cast<size_t>(d2));
          for (double& x : a) x = rng.normal();
          for (double& x : b) x = rng.normal();
          std::vector<double> ra(static_cast<size_t>(d1), 0.0),
              rb(static_cast<size_t>(d2), 0.0);
          for (int i = 0; i < d1; ++i)
            for (int j = 0; j < d1; ++j)
              ra[static_cast<size_t>(i)] +=
                  D1.v[static_cast<size_t>(i * d1 + j)] *
                  a[static_cast<size_t>(j)];
          for (int i = 0; i < d2; ++i)
            for (int j = 0; j < d2; ++j)
              rb[static_cast<size_t>(i)] +=
                  D2.v[static_cast<size_t>(i * d2 + j)] *
                  b[static_cast<size_t>(j)];
          auto lhs = contract(ra, l1, rb, l2, l3);
          auto y = contract(a, l1, b, l2, l3);
          for (int i = 0; i < d3; ++i) {
            double s = 0;
            for (int j = 0; j < d3; ++j)
              s += D3.v[static_cast<size_t>(i * d3 + j)] *
                   y[static_cast<size_t>(j)];
            max_err =
                std::max(max_err, std::fabs(s - lhs[static_cast<size_t>(i)]));
          }
        }
      }
  CHECK(max_err < 1e-9);
}

TEST_CASE("cg tables match the least-squares equivariant-map oracle") {
  Rng rng(67);
  // spot-check a spread of triples; the acceptance suite covers all of them
  const int triples[][3] = {{1, 1, 0}, {1, 1, 1}, {1, 1, 2}, {1, 2, 3},
                            {2, 2, 2}, {2, 3, 1}, {3, 3, 4}, {1, 3, 4}};
  for (auto& t : triples) {
    auto oracle =
        oracles::equivariant_map_from_rotations(t[0], t[1], t[2], rng);
    const CGTable& table = cg_table(t[0], t[1], t[2]);
    CHECK(oracles::aligned_max_diff(oracle, table.c) < 1e-8);
  }
}

TEST_CASE("a corrupted cg table breaks contraction equivariance") {
  Rng rng(71);
  CGTable bad = cg_table(1, 1, 2);
  bad.c[3] += 0.25;
  double max_err = 0;
  for (int t = 0; t < 5; ++t) {
    Mat3 R = oracles::random_rotation(rng);
    Tensor D1 = wigner_d(1, R);
    Tensor D3 = wigner_d(2, R);
    std::vector<double> a = {rng.normal(), rng.normal(), rng.normal()};
    std::vector<double> b = {rng.normal(), rng.normal(), rng.normal()};
    std::vector<double> ra(3, 0.0), rb(3, 0.0);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        ra[static_cast<size_t>(i)] += D1.v[static_cast<size_t>(i * 3 + j)] *
                                      a[static_cast<size_t>(j)];
        rb[static_cast<size_t>(i)] += D1.v[static_cast<size_t>(i * 3 + j)] *
                                      b[static_cast<size_t>(j)];
      }
    auto lhs = contract(bad, ra, rb);
    auto y = contract(bad, a, b);
    for (int i = 0; i < 5; ++i) {
      double s = 0;
      for (int j = 0; j < 5; ++j)
        s += D3.v[static_cast<size_t>(i * 5 + j)] * y[static_cast<size_t>(j)];
      max_err = std::max(max_err, std::fabs(s - lhs[static_cast<size_t>(i)]));
    }
  }
  CHECK(max_err > 1e-3);  // negative control
}

TEST_CASE("tape-side sph_blocks matches real_sph") {
  Rng rng(73);
  const int m = 16;
  Tensor dirs = Tensor::zeros({m, 3});
  std::vector<Vec3> ns;
  for (int i = 0; i < m; ++i) {
    Vec3 n = random_unit(rng);
    ns.push_back(n);
    dirs.v[static_cast<size_t>(3 * i + 0)] = n.x;
    dirs.v[static_cast<size_t>(3 * i + 1)] = n.y;
    dirs.v[static_cast<size_t>(3 * i + 2)] = n.z;
  }
  for (int lmax = 0; lmax <= kMaxDegree; ++lmax) {
    DegreeRange L = DegreeRange::from_lmax(lmax);
    Var blocks = sph_blocks(Var::constant(dirs), L);
    CHECK(blocks.shape() == Shape{m, L.dim()});
    for (int i = 0; i < m; ++i) {
      IrrepsVector ref = sph_all(L, ns[static_cast<size_t>(i)]);
      for (int j = 0; j < L.dim(); ++j)
        CHECK(blocks.val().v[static_cast<size_t>(i * L.dim() + j)] ==
              doctest::Approx(ref.data[static_cast<size_t>(j)])
                  .epsilon(1e-12));
    }
  }
}

TEST_CASE("tape-side contract_rows matches contract and differentiates") {
  Rng rng(79);
  const int n = 4;
  Tensor a = Tensor::zeros({n, 3}), b = Tensor::zeros({n, 5});
  for (double& x : a.v) x = rng.normal();
  for (double& x : b.v) x = rng.normal();
  Tape tp;
  Var av = tp.leaf(a), bv = tp.leaf(b);
  Var y = contract_rows(av, 1, bv, 2, 2);
  CHECK(y.shape() == Shape{n, 5});
  for (int r = 0; r < n; ++r) {
    std::vector<double> ar(a.v.begin() + 3 * r, a.v.begin() + 3 * r + 3);
    std::vector<double> br(b.v.begin() + 5 * r, b.v.begin() + 5 * r + 5);
    auto ref = contract(ar, 1, br, 2, 2);
    for (int k = 0; k < 5; ++k)
      CHECK(y.val().v[static_cast<size_t>(r * 5 + k)] ==
            doctest::Approx(ref[static_cast<size_t>(k)]).epsilon(1e-12));
  }
  // gradient vs finite differences
  Var loss = sum_all(mul(y, y));
  Var g = grad_one(loss, av);
  auto f = [&](const std::vector<double>& xs) {
    Tape tp2;
    Tensor at = a;
    at.v = xs;
    Var yy = contract_rows(tp2.leaf(at), 1, Var::constant(b), 2, 2);
    return sum_all(mul(yy, yy)).item();
  };
  for (size_t i = 0; i < a.v.size(); ++i) {
    double fd = oracles::central_diff(f, a.v, i, 1e-6);
    CHECK(g.val().v[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}
