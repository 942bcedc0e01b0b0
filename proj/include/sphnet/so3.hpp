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

#pragma once

#include <array>
#include <vector>

#include "sphnet/tensor.hpp"

namespace sphnet {

struct Vec3 {
  double x = 0, y = 0, z = 0;
  double norm() const;
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
};

struct Mat3 {
  // row-major
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double at(int r, int c) const { return m[static_cast<size_t>(3 * r + c)]; }
  double& at(int r, int c) { return m[static_cast<size_t>(3 * r + c)]; }
  Vec3 apply(const Vec3& v) const;
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  static Mat3 identity() { return Mat3{}; }
};

namespace so3 {

constexpr int kMaxDegree = 4;

// Degrees 𝓛 = {l_min, ..., l_max}. Degree 0 is excluded whenever l_max >= 1
// (it evaluates to a constant); the l_max = 0 configuration is the single
// degree {0}.
struct DegreeRange {
  int l_min = 1;
  int l_max = 1;

  DegreeRange() = default;
  DegreeRange(int lmin, int lmax);
  static DegreeRange from_lmax(int lmax);

  int count() const { return l_max - l_min + 1; }
  int dim() const;               // Σ_{l∈𝓛} (2l+1)
  int offset(int l) const;       // start of degree-l block
  int block_dim(int l) const { return 2 * l + 1; }
  bool operator==(const DegreeRange& o) const = default;
};

// Concatenated per-degree blocks; block for degree l has length 2l+1.
struct IrrepsVector {
  DegreeRange degrees;
  std::vector<double> data;

  IrrepsVector() = default;
  IrrepsVector(DegreeRange d, std::vector<double> values);
  std::vector<double> block(int l) const;
};

// Real spherical harmonics of degree l at a unit vector, Racah normalization:
// degree 0 evaluates to [1], degree 1 equals (y, z, x), every block has unit
// Euclidean norm. Order index runs m = -l..l. Rejects non-unit input
// (|norm - 1| > 1e-9).
std::vector<double> real_sph(int l, const Vec3& n);

IrrepsVector sph_all(DegreeRange L, const Vec3& n);

// Real-basis Wigner-D matrix: real_sph(l, R n) = D^l(R) real_sph(l, n).
// Computed by degree-raising from D^1 through the real coupling tables.
// Rejects input that is not a rotation (orthogonality/det within 1e-9).
Tensor wigner_d(int l, const Mat3& R);

// Direct sum over 𝓛, block-diagonal and orthogonal.
Tensor wigner_d_block(DegreeRange L, const Mat3& R);

// Real-basis coupling coefficients for (l1 ⊗ l2) -> l3, dense over
// (m1, m2, m3). Zero outside the m-selection rules; the triple must satisfy
// |l1-l2| <= l3 <= l1+l2 and all degrees <= 4.
struct CGTable {
  int l1 = 0, l2 = 0, l3 = 0;
  std::vector<double> c;  // [(2l1+1) x (2l2+1) x (2l3+1)], m-major

  double at(int m1, int m2, int m3) const {
    int d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
    return c[static_cast<size_t>(((m1 + l1) * d2 + (m2 + l2)) * d3 +
                                 (m3 + l3))];
  }
};

const CGTable& cg_table(int l1, int l2, int l3);

bool cg_triple_valid(int l1, int l2, int l3);

// y[m3] = Σ_{m1,m2} C[m1,m2,m3] a[m1] b[m2]
std::vector<double> contract(const std::vector<double>& a, int l1,
                             const std::vector<double>& b, int l2, int l3);
std::vector<double> contract(const CGTable& table, const std::vector<double>& a,
                             const std::vector<double>& b);

// --- tape-side versions for differentiable model code -------------------------

// Spherical harmonic blocks for a batch of unit direction vectors
// (rows of `unit_dirs`, columns x,y,z), concatenated over 𝓛: (m x dim(L)).
Var sph_blocks(const Var& unit_dirs, DegreeRange L);

// The coupling table reshaped to a [(2l1+1)(2l2+1) x (2l3+1)] matrix.
Tensor contract_matrix(int l1, int l2, int l3);

// Row-wise coupling of two degree blocks: (n x d1), (n x d2) -> (n x d3).
Var contract_rows(const Var& a, int l1, const Var& b, int l2, int l3);

}  // namespace so3
}  // namespace sphnet
