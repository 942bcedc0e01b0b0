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

#include <string>
#include <vector>

#include "sphnet/model.hpp"
#include "sphnet/rng.hpp"

// Numeric checks of the architecture's structural properties: equivariance,
// gradient consistency, and the SO(3) kit against its oracles.
namespace sphnet::verify {

struct CheckResult {
  std::string name;
  double max_err = 0;
  double tol = 0;
  bool pass() const { return max_err < tol; }
};

MolecularStructure random_structure(Rng& rng, int n_atoms, double box = 3.0,
                                    double min_dist = 0.7);

double sph_norm_error(int samples, uint64_t seed);
double sph_equivariance_error(int samples, uint64_t seed);
double wigner_homomorphism_error(int trials, uint64_t seed);
double wigner_orthogonality_error(int trials, uint64_t seed);
double wigner_ls_oracle_error(uint64_t seed);
double cg_equivariance_error(uint64_t seed);
double cg_equivariance_error(const so3::CGTable& table, uint64_t seed);
double cg_ls_oracle_error(uint64_t seed, bool quick);

struct EquivStats {
  double e_rel_max = 0;    // |E(RX+t) - E(X)| / |E|
  double f_abs_max = 0;    // ‖F(RX) - R F(X)‖∞
  double chi_abs_max = 0;  // per-layer ‖χ(Rℛ) - D(R) χ(ℛ)‖∞
};
EquivStats model_equivariance(const ModelConfig& cfg, const ModelParams& params,
                              int n_structs, int n_motions, uint64_t seed);

double permutation_invariance_error(const ModelConfig& cfg,
                                    const ModelParams& params, int n_structs,
                                    uint64_t seed);

// relative error of analytic forces against central differences
double force_fd_error(const ModelConfig& cfg, const ModelParams& params,
                      const MolecularStructure& s, double step);

// relative error of the parameter gradient of the force loss against
// central differences over randomly probed parameter entries
double param_grad_fd_error(const ModelConfig& cfg, const ModelParams& params,
                           const MolecularStructure& s, int n_probes,
                           double step, uint64_t seed);

// the full suite behind `verify`; params may be empty (fresh random init)
std::vector<CheckResult> run_all(const ModelConfig& cfg,
                                 const ModelParams* params, uint64_t seed,
                                 bool quick);

}  // namespace sphnet::verify
