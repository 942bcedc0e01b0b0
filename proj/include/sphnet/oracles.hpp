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

#include <functional>
#include <vector>

#include "sphnet/rng.hpp"
#include "sphnet/so3.hpp"
#include "sphnet/tensor.hpp"

// Reference implementations that are independent of the production code
// paths they are checked against. They back both the unit tests and the
// `verify` command.
namespace sphnet::oracles {

// dense LU with partial pivoting
struct LuFactor {
  int n = 0;
  std::vector<double> a;   // packed LU
  std::vector<int> piv;
  static LuFactor factor(const Tensor& A);
  std::vector<double> solve(std::vector<double> b) const;
};

Mat3 random_rotation(Rng& rng);

// Wigner-D solved from sampled directions: D = argmin Σ‖D·Y(n) − Y(R n)‖².
// Convention-free: it pins D to whatever the spherical harmonics do.
Tensor wigner_from_samples(int l, const Mat3& R, Rng& rng);

// The (unique up to scale) equivariant bilinear map (l1 ⊗ l2) -> l3, found
// as the null vector of stacked rotation constraints via inverse iteration.
// Returned flattened over (m1, m2, m3), normalized to unit Euclidean norm.
std::vector<double> equivariant_map_from_rotations(int l1, int l2, int l3,
                                                   Rng& rng, int n_rot = 3);

// max |a - s b| after the best least-squares scale alignment s, with both
// inputs normalized first
double aligned_max_diff(const std::vector<double>& a,
                        const std::vector<double>& b);

// central finite difference of a scalar function
double central_diff(const std::function<double(const std::vector<double>&)>& f,
                    std::vector<double> x, size_t i, double h);

}  // namespace sphnet::oracles
