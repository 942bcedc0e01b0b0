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

#include "sphnet/oracles.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace sphnet::oracles {

LuFactor LuFactor::factor(const Tensor& A) {
  if (A.rank() != 2 || A.shape[0] != A.shape[1])
    throw std::invalid_argument("lu: square matrix required");
  LuFactor f;
  f.n = static_cast<int>(A.shape[0]);
  f.a = A.v;
  f.piv.resize(static_cast<size_t>(f.n));
  int n = f.n;
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::fabs(f.a[static_cast<size_t>(k * n + k)]);
    for (int i = k + 1; i < n; ++i) {
      double v = std::fabs(f.a[static_cast<size_t>(i * n + k)]);
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (best == 0.0) throw NumericError("lu: singular matrix");
    f.piv[static_cast<size_t>(k)] = p;
    if (p != k)
      for (int j = 0; j < n; ++j)
        std::swap(f.a[static_cast<size_t>(k * n + j)],
                  f.a[static_cast<size_t>(p * n + j)]);
    double pivot = f.a[static_cast<size_t>(k * n + k)];
    for (int i = k + 1; i < n; ++i) {
      double m = f.a[static_cast<size_t>(i * n + k)] / pivot;
      f.a[static_cast<size_t>(i * n + k)] = m;
      for (int j = k + 1; j < n; ++j)
        f.a[static_cast<size_t>(i * n + j)] -=
            m * f.a[static_cast<size_t>(k * n + j)];
    }
  }
  return f;
}

std::vector<double> LuFactor::solve(std::vector<double> b) const {
  if (static_cast<int>(b.size()) != n)
    throw std::invalid_argument("lu: rhs size mismatch");
  for (int k = 0; k < n; ++k) {
    int p = piv[static_cast<size_t>(k)];
    if (p != k) std::swap(b[static_cast<size_t>(k)], b[static_cast<size_t>(p)]);
    for (int i = k + 1; i < n; ++i)
      b[static_cast<size_t>(i)] -=
          a[static_cast<size_t>(i * n + k)] * b[static_cast<size_t>(k)];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[static_cast<size_t>(i)];
    for (int j = i + 1; j < n; ++j)
      s -= a[static_cast<size_t>(i * n + j)] * b[static_cast<size_t>(j)];
    b[static_cast<size_t>(i)] = s / a[static_cast<size_t>(i * n + i)];
  }
  return b;
}

Mat3 random_rotation(Rng& rng) {
  double q[4];
  double nrm = 0.0;
  do {
    nrm = 0.0;
    for (double& x : q) {
      x = rng.normal();
      nrm += x * x;
    }
  } while (nrm < 1e-12);
  nrm = std::sqrt(nrm);
  double w = q[0] / nrm, x = q[1] / nrm, y = q[2] / nrm, z = q[3] / nrm;
  Mat3 R;
  R.at(0, 0) = 1 - 2 * (y * y + z * z);
  R.at(0, 1) = 2 * (x * y - w * z);
  R.at(0, 2) = 2 * (x * z + w * y);
  R.at(1, 0) = 2 * (x * y + w * z);
  R.at(1, 1) = 1 - 2 * (x * x + z * z);
  R.at(1, 2) = 2 * (y * z - w * x);
  R.at(2, 0) = 2 * (x * z - w * y);
  R.at(2, 1) = 2 * (y * z + w * x);
  R.at(2, 2) = 1 - 2 * (x * x + y * y);
  return R;
}

namespace {

Vec3 random_unit(Rng& rng) {
  while (true) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    double n = v.norm();
    if (n > 1e-6) return v * (1.0 / n);
  }
}

}  // namespace

Tensor wigner_from_samples(int l, const Mat3& R, Rng& rng) {
  const int d = 2 * l + 1;
  const int samples = 4 * d;
  // normal equations: D (Y Y^T) = Y' Y^T
  Tensor G = Tensor::zeros({d, d});
  Tensor B = Tensor::zeros({d, d});
  for (int s = 0; s < samples; ++s) {
    Vec3 n = random_unit(rng);
    std::vector<double> y = so3::real_sph(l, n);
    std::vector<double> yr = so3::real_sph(l, R.apply(n));
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        G.v[static_cast<size_t>(i * d + j)] +=
            y[static_cast<size_t>(i)] * y[static_cast<size_t>(j)];
        B.v[static_cast<size_t>(i * d + j)] +=
            yr[static_cast<size_t>(i)] * y[static_cast<size_t>(j)];
      }
  }
  LuFactor lu = LuFactor::factor(G);
  Tensor D = Tensor::zeros({d, d});
  for (int r = 0; r < d; ++r) {
    std::vector<double> rhs(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j)
      rhs[static_cast<size_t>(j)] = B.v[static_cast<size_t>(r * d + j)];
    std::vector<double> row = lu.solve(std::move(rhs));
    for (int j = 0; j < d; ++j)
      D.v[static_cast<size_t>(r * d + j)] = row[static_cast<size_t>(j)];
  }
  return D;
}

std::vector<double> equivariant_map_from_rotations(int l1, int l2, int l3,
                                                   Rng& rng, int n_rot) {
  const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
  const int N = d1 * d2 * d3;
  Tensor A = Tensor::zeros({N, N});
  std::vector<double> row(static_cast<size_t>(N));
  auto unk = [&](int m1, int m2, int m3) { return (m1 * d2 + m2) * d3 + m3; };
  for (int r = 0; r < n_rot; ++r) {
    Mat3 R = random_rotation(rng);
    Tensor D1 = so3::wigner_d(l1, R);
    Tensor D2 = so3::wigner_d(l2, R);
    Tensor D3 = so3::wigner_d(l3, R);
    // constraint rows: Σ_{m1,m2} D1[m1,p] D2[m2,q] B[m1,m2,m3]
    //                  − Σ_{m3'} D3[m3,m3'] B[p,q,m3'] = 0
    for (int p = 0; p < d1; ++p)
      for (int q = 0; q < d2; ++q)
        for (int m3 = 0; m3 < d3; ++m3) {
          std::fill(row.begin(), row.end(), 0.0);
          for (int m1 = 0; m1 < d1; ++m1)
            for (int m2 = 0; m2 < d2; ++m2)
              row[static_cast<size_t>(unk(m1, m2, m3))] +=
                  D1.v[static_cast<size_t>(m1 * d1 + p)] *
                  D2.v[static_cast<size_t>(m2 * d2 + q)];
          for (int m3p = 0; m3p < d3; ++m3p)
            row[static_cast<size_t>(unk(p, q, m3p))] -=
                D3.v[static_cast<size_t>(m3 * d3 + m3p)];
          // accumulate outer product into the normal matrix
          for (int i = 0; i < N; ++i) {
            double ri = row[static_cast<size_t>(i)];
            if (ri == 0.0) continue;
            double* arow = A.v.data() + static_cast<size_t>(i) * N;
            for (int j = 0; j < N; ++j)
              arow[j] += ri * row[static_cast<size_t>(j)];
          }
        }
  }
  // inverse iteration toward the null space
  for (int i = 0; i < N; ++i) A.v[static_cast<size_t>(i * N + i)] += 1e-10;
  LuFactor lu = LuFactor::factor(A);
  std::vector<double> x(static_cast<size_t>(N));
  for (double& v : x) v = rng.normal();
  for (int it = 0; it < 50; ++it) {
    x = lu.solve(std::move(x));
    double nrm = 0.0;
    for (double v : x) nrm += v * v;
    nrm = std::sqrt(nrm);
    for (double& v : x) v /= nrm;
  }
  return x;
}

double aligned_max_diff(const std::vector<double>& a,
                        const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("aligned_max_diff: size mismatch");
  double na = 0, nb = 0;
  for (double v : a) na += v * v;
  for (double v : b) nb += v * v;
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("aligned_max_diff: zero vector");
  // sign from the inner product of the normalized vectors
  double dot = 0;
  for (size_t i = 0; i < a.size(); ++i) dot += (a[i] / na) * (b[i] / nb);
  double sgn = dot >= 0 ? 1.0 : -1.0;
  double md = 0;
  for (size_t i = 0; i < a.size(); ++i)
    md = std::max(md, std::fabs(a[i] / na - sgn * b[i] / nb));
  return md;
}

double central_diff(const std::function<double(const std::vector<double>&)>& f,
                    std::vector<double> x, size_t i, double h) {
  x[i] += h;
  double fp = f(x);
  x[i] -= 2 * h;
  double fm = f(x);
  return (fp - fm) / (2 * h);
}

}  // namespace sphnet::oracles
