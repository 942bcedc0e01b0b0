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

#include "sphnet/geometry.hpp"

#include <cmath>
#include <numbers>

#include "sphnet/errors.hpp"

namespace sphnet {

void MolecularStructure::validate() const {
  if (atomic_numbers.empty())
    throw DataError("structure: needs at least one atom");
  if (positions.size() != atomic_numbers.size())
    throw DataError("structure: " + std::to_string(positions.size()) +
                    " positions for " + std::to_string(atomic_numbers.size()) +
                    " atomic numbers");
  if (forces && forces->size() != atomic_numbers.size())
    throw DataError("structure: force row count does not match atom count");
  for (int z : atomic_numbers)
    if (z <= 0) throw DataError("structure: non-positive atomic number");
}

std::vector<EuclideanPair> build_neighbors(const MolecularStructure& s,
                                           double r_cut) {
  if (r_cut <= 0) throw std::invalid_argument("build_neighbors: r_cut <= 0");
  s.validate();
  const int n = s.n_atoms();
  std::vector<EuclideanPair> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      Vec3 d = s.positions[static_cast<size_t>(j)] -
               s.positions[static_cast<size_t>(i)];
      double r = d.norm();
      if (r < 1e-8)
        throw DataError("build_neighbors: atoms " + std::to_string(i) +
                        " and " + std::to_string(j) + " coincide");
      if (r <= r_cut)
        pairs.push_back({i, j, r, d * (1.0 / r)});
    }
  return pairs;
}

double cosine_cutoff(double r, double r_cut) {
  if (r >= r_cut) return 0.0;
  return 0.5 * (std::cos(std::numbers::pi * r / r_cut) + 1.0);
}

double polynomial_cutoff(double x, int p) {
  if (x < 0) throw std::invalid_argument("polynomial_cutoff: x < 0");
  if (x >= 1.0) return 0.0;
  double pp = static_cast<double>(p);
  double xp = std::pow(x, pp);
  return 1.0 - 0.5 * (pp + 1.0) * (pp + 2.0) * xp + pp * (pp + 2.0) * xp * x -
         0.5 * pp * (pp + 1.0) * xp * x * x;
}

namespace {

double safe_dist(const double* a, const double* b, int dim) {
  double s = 0;
  for (int k = 0; k < dim; ++k) {
    double d = a[k] - b[k];
    s += d * d;
  }
  return std::sqrt(s + kSafeNormEps);
}

}  // namespace

Tensor sphc_distance_matrix(const std::vector<so3::IrrepsVector>& chi) {
  const int n = static_cast<int>(chi.size());
  if (n == 0) throw std::invalid_argument("sphc_distance_matrix: empty input");
  const int dim = chi[0].degrees.dim();
  for (const auto& c : chi)
    if (!(c.degrees == chi[0].degrees))
      throw std::invalid_argument("sphc_distance_matrix: mixed degree ranges");
  Tensor X = Tensor::zeros({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;  // diagonal stays exactly zero
      X.v[static_cast<size_t>(i * n + j)] =
          safe_dist(chi[static_cast<size_t>(i)].data.data(),
                    chi[static_cast<size_t>(j)].data.data(), dim);
    }
  return X;
}

std::vector<Tensor> sphc_distance_per_degree(
    const std::vector<so3::IrrepsVector>& chi) {
  const int n = static_cast<int>(chi.size());
  if (n == 0)
    throw std::invalid_argument("sphc_distance_per_degree: empty input");
  const so3::DegreeRange L = chi[0].degrees;
  std::vector<Tensor> out;
  for (int l = L.l_min; l <= L.l_max; ++l) {
    int off = L.offset(l), bd = 2 * l + 1;
    Tensor X = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        X.v[static_cast<size_t>(i * n + j)] =
            safe_dist(chi[static_cast<size_t>(i)].data.data() + off,
                      chi[static_cast<size_t>(j)].data.data() + off, bd);
      }
    out.push_back(std::move(X));
  }
  return out;
}

std::vector<SphericalPair> spherical_neighbors(const Tensor& X, double kappa,
                                               int p) {
  if (X.rank() != 2 || X.shape[0] != X.shape[1])
    throw std::invalid_argument("spherical_neighbors: square matrix required");
  const int n = static_cast<int>(X.shape[0]);
  for (int i = 0; i < n; ++i) {
    if (X.v[static_cast<size_t>(i * n + i)] != 0.0)
      throw std::invalid_argument("spherical_neighbors: nonzero diagonal");
    for (int j = 0; j < i; ++j)
      if (X.v[static_cast<size_t>(i * n + j)] !=
          X.v[static_cast<size_t>(j * n + i)])
        throw std::invalid_argument("spherical_neighbors: asymmetric input");
  }
  std::vector<SphericalPair> pairs;
  if (n == 1) return pairs;
  const double cut = kappa / static_cast<double>(n);
  std::vector<double> row(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* xr = X.v.data() + static_cast<size_t>(i) * n;
    double mx = xr[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0;
    for (int j = 0; j < n; ++j) {
      row[static_cast<size_t>(j)] = std::exp(xr[j] - mx);
      z += row[static_cast<size_t>(j)];
    }
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double xt = row[static_cast<size_t>(j)] / z;
      if (xt < cut)
        pairs.push_back({i, j, xt, polynomial_cutoff(xt / cut, p)});
    }
  }
  return pairs;
}

}  // namespace sphnet
