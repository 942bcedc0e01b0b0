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
#include <utility>
#include <vector>

#include "sphnet/data.hpp"
#include "sphnet/geometry.hpp"
#include "sphnet/so3.hpp"
#include "sphnet/tensor.hpp"

namespace sphnet {

struct ModelConfig {
  int feature_dim = 132;     // F
  int n_layers = 6;
  int l_max = 3;
  double r_cut = 5.0;        // Å
  int n_radial_basis = 32;   // K
  int n_heads = 4;           // feature-branch attention heads
  double kappa = 1.0;        // spherical-neighborhood cut scale
  int p_poly = 6;            // polynomial cutoff exponent
  bool use_nonlocal = false;
  bool use_spherical_filter = true;
  int max_z = 100;           // embedding table rows (z = 1..max_z)

  so3::DegreeRange degrees() const { return so3::DegreeRange::from_lmax(l_max); }
  void validate() const;
};

// Named flat parameter collection in a fixed, config-derived order.
struct ModelParams {
  std::vector<std::pair<std::string, Tensor>> entries;

  int64_t count() const;
  int index(const std::string& name) const;  // -1 if absent
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
};

ModelParams init_params(const ModelConfig& cfg, uint64_t seed);
int64_t param_count(const ModelConfig& cfg);

// Checkpoint: `<prefix>.manifest` (text: config + name/shape/byte-offset per
// parameter) next to `<prefix>.bin` (little-endian float64 blob). Loading
// validates every shape against the config-derived layout.
void save_checkpoint(const ModelConfig& cfg, const ModelParams& params,
                     const std::string& prefix);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& prefix);

struct AttnRecord {
  int layer = 0;
  char branch = 'f';   // 'f' feature branch, 's' SPHC branch
  int head = 0;        // head index or degree index
  int i = 0;
  int j = 0;
  bool nonlocal = false;
  double alpha = 0;
  double cutoff_weight = 0;
};

struct EvalOptions {
  bool forces = true;
  bool diagnostics = false;
};

struct EvalResult {
  double energy = 0;
  std::vector<double> atom_energies;
  std::vector<Vec3> forces;
  std::vector<Tensor> chi_layers;      // (n x dim): init, then one per layer
  std::vector<AttnRecord> attention;
};

EvalResult evaluate(const MolecularStructure& s, const ModelParams& params,
                    const ModelConfig& cfg, const EvalOptions& opt = {});

// Loss graph for one structure on a caller-owned tape:
// (1-beta)(E - E~)^2 + beta/(3n) Σ (F - F~)^2, with F = -dE/dR emitted as
// differentiable tape nodes so parameter gradients see through it.
struct LossGraph {
  Var loss;
  std::vector<Var> param_leaves;  // aligned with params.entries
};
LossGraph build_loss_graph(Tape& tape, const MolecularStructure& s,
                           const ModelParams& params, const ModelConfig& cfg,
                           double beta);

// Two-component PCA by power iteration (200 iterations, tolerance 1e-10).
struct Pca2 {
  Tensor scores;  // (n x 2)
  Tensor basis;   // (d x 2)
  std::vector<double> mean;
};
Pca2 pca2(const Tensor& points);

// Tape-side cosine cutoff on a column of distances, exactly zero at and
// beyond r_cut (the mask is taken from the values; pairs in a neighbor list
// always sit strictly inside).
Var cosine_cutoff_var(const Var& r, double r_cut);

// K Gaussians in exp(-r) space under the cosine cutoff. Centers are equally
// spaced on [exp(-r_cut), 1], gamma = 1/(2 dmu^2).
Var radial_basis_var(const Var& r, double r_cut, int n_basis);

}  // namespace sphnet
