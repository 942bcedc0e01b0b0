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

#include <optional>
#include <vector>

#include "sphnet/so3.hpp"
#include "sphnet/tensor.hpp"

namespace sphnet {

// Atomic numbers plus positions in Ångström, with optional reference labels
// (energy in dataset units, forces in dataset units per Å).
struct MolecularStructure {
  std::vector<int> atomic_numbers;
  std::vector<Vec3> positions;
  std::optional<double> energy;
  std::optional<std::vector<Vec3>> forces;

  int n_atoms() const { return static_cast<int>(atomic_numbers.size()); }
  void validate() const;
};

struct EuclideanPair {
  int i = 0;
  int j = 0;
  double r = 0;   // Å
  Vec3 dir;       // (r_j - r_i) / r
};

struct SphericalPair {
  int i = 0;
  int j = 0;
  double chi_rescaled = 0;  // softmax-rescaled SPHC distance
  double weight = 0;        // polynomial cutoff weight, in (0, 1]
};

struct NeighborTable {
  std::vector<EuclideanPair> euclidean;
  std::vector<SphericalPair> spherical;
};

// Symmetric pair list within r_cut (both (i,j) and (j,i)). Rejects coincident
// atoms (r < 1e-8 Å).
std::vector<EuclideanPair> build_neighbors(const MolecularStructure& s,
                                           double r_cut);

// 0.5 (cos(pi r / r_cut) + 1) for r <= r_cut, else 0
double cosine_cutoff(double r, double r_cut);

// 1 - (p+1)(p+2)/2 x^p + p(p+2) x^{p+1} - p(p+1)/2 x^{p+2} for x <= 1, else 0
double polynomial_cutoff(double x, int p);

// Full-vector SPHC distance matrix: entries safe_norm(chi_i - chi_j), the
// diagonal exactly zero.
Tensor sphc_distance_matrix(const std::vector<so3::IrrepsVector>& chi);

// One distance matrix per degree l in 𝓛.
std::vector<Tensor> sphc_distance_per_degree(
    const std::vector<so3::IrrepsVector>& chi);

// Spherical neighborhoods from a distance matrix: softmax along each row,
// then pairs i != j with rescaled entry below kappa/n, weighted by the
// polynomial cutoff. n = 1 gives an empty list.
std::vector<SphericalPair> spherical_neighbors(const Tensor& X, double kappa,
                                               int p);

}  // namespace sphnet
